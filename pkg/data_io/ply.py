"""PLY vertex loading and saving (ASCII and binary little-endian)."""

from __future__ import annotations

import logging

import numpy as np

from core.errors import GeometryError, ParameterError, PlyHeaderError, PlyLayoutError, PlyTruncatedError
from geometry.types import PointCloud

logger = logging.getLogger(__name__)

PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
COORDINATES = ("x", "y", "z")
NORMALS = ("nx", "ny", "nz")
FORMATS = ("ascii", "binary_little_endian")
MAX_HEADER_BYTES = 64 * 1024


def _read_header(data: bytes):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0 or end > MAX_HEADER_BYTES:
        raise PlyHeaderError("Not a PLY file: missing 'ply' magic or 'end_header'")
    body_start = data.find(b"\n", end)
    if body_start < 0:
        raise PlyHeaderError("Header is not terminated by a newline")
    try:
        lines = data[:end].decode("ascii").splitlines()
    except UnicodeDecodeError as e:
        raise PlyHeaderError(f"Header is not ASCII: {e}") from e

    fmt = None
    elements = []
    for number, raw in enumerate(lines[1:], start=2):
        words = raw.split()
        if not words or words[0] in ("comment", "obj_info"):
            continue
        try:
            if words[0] == "format":
                fmt = words[1]
                if words[2] != "1.0":
                    raise PlyHeaderError(f"Unsupported PLY version {words[2]}")
            elif words[0] == "element":
                elements.append({"name": words[1], "count": int(words[2]), "properties": []})
                if elements[-1]["count"] < 0:
                    raise PlyHeaderError(f"Negative element count on line {number}")
            elif words[0] == "property":
                if not elements:
                    raise PlyHeaderError(f"Property before any element on line {number}")
                if words[1] == "list":
                    elements[-1]["properties"].append((words[4], "list", words[2], words[3]))
                else:
                    elements[-1]["properties"].append((words[2], words[1]))
            else:
                raise PlyHeaderError(f"Unknown header keyword '{words[0]}' on line {number}")
        except (IndexError, ValueError) as e:
            raise PlyHeaderError(f"Malformed header line {number}: {raw!r}") from e
    if fmt is None:
        raise PlyHeaderError("Header has no format line")
    return fmt, elements, body_start + 1


def _vertex_layout(fmt: str, elements: list):
    if fmt not in FORMATS:
        raise PlyLayoutError(f"Unsupported PLY format '{fmt}', expected one of {FORMATS}")
    names = [e["name"] for e in elements]
    if "vertex" not in names:
        raise PlyLayoutError("No vertex element")
    vertex = elements[names.index("vertex")]
    props = vertex["properties"]
    if len({p[0] for p in props}) != len(props):
        raise PlyLayoutError("Duplicate vertex property names")
    if any(len(p) != 2 for p in props):
        raise PlyLayoutError("List properties on the vertex element are not supported")
    for name, kind in props:
        if kind not in PLY_TYPES:
            raise PlyLayoutError(f"Unknown property type '{kind}' for '{name}'")
    kinds = dict(props)
    for axis in COORDINATES:
        if kinds.get(axis) not in ("float", "float32", "double", "float64"):
            raise PlyLayoutError(f"Vertex coordinate '{axis}' must be float or double")
    if names.index("vertex") != 0:
        raise PlyLayoutError("The vertex element must come first")
    return vertex


def load_ply(path, scale: float) -> PointCloud:
    """Vertices of a PLY file in mm, ``scale`` being mm per file unit (e.g. 1000 for metres)."""
    if not scale > 0:
        raise ParameterError(f"Unit scale must be positive, got {scale}")
    with open(path, "rb") as f:
        data = f.read()
    fmt, elements, offset = _read_header(data)
    vertex = _vertex_layout(fmt, elements)
    count = vertex["count"]
    if count == 0:
        raise PlyLayoutError("The vertex element is empty")
    names = [name for name, _ in vertex["properties"]]

    if fmt == "ascii":
        rows = data[offset:].decode("ascii", errors="replace").splitlines()
        rows = [r for r in rows if r.strip()][:count]
        if len(rows) < count:
            raise PlyTruncatedError(f"Expected {count} vertex rows, found {len(rows)}")
        try:
            table = np.array([[float(w) for w in r.split()[: len(names)]] for r in rows], dtype=np.float64)
        except ValueError as e:
            raise PlyTruncatedError(f"Unreadable vertex row: {e}") from e
        if table.shape != (count, len(names)):
            raise PlyTruncatedError("A vertex row has fewer values than declared properties")
        columns = {name: table[:, i] for i, name in enumerate(names)}
    else:
        dtype = np.dtype([(name, "<" + PLY_TYPES[kind]) for name, kind in vertex["properties"]])
        needed = dtype.itemsize * count
        if len(data) - offset < needed:
            raise PlyTruncatedError(f"Vertex payload needs {needed} bytes, file has {len(data) - offset}")
        records = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
        columns = {name: records[name].astype(np.float64) for name in names}

    points = np.stack([columns[a] for a in COORDINATES], axis=1) * scale
    normals = None
    if all(n in columns for n in NORMALS):
        normals = np.stack([columns[n] for n in NORMALS], axis=1)
    try:
        cloud = PointCloud(points, normals)
    except GeometryError as e:
        raise PlyLayoutError(f"Vertex data is unusable: {e}") from e
    logger.debug(f"Loaded {count} vertices from {path} ({fmt})")
    return cloud


def save_ply(path, cloud: PointCloud, binary: bool = True) -> None:
    """Write vertices (and normals when present) as doubles, in mm."""
    names = list(COORDINATES) + (list(NORMALS) if cloud.normals is not None else [])
    table = cloud.points if cloud.normals is None else np.hstack([cloud.points, cloud.normals])
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0", f"element vertex {len(table)}"]
    header += [f"property double {n}" for n in names]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            f.write(np.ascontiguousarray(table, dtype="<f8").tobytes())
        else:
            for row in table:
                f.write((" ".join(repr(float(v)) for v in row) + "\n").encode("ascii"))
