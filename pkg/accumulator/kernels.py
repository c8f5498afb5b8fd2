"""Numba voxel kernels. All inputs are in voxel coordinates (voxel i spans [i, i+1)).

Kernels release the GIL so shards can vote from worker threads.
"""

import math

import numpy as np
from numba import njit

# Slack, in voxels, added around analytically derived candidate ranges; every
# candidate is still decided by the exact predicate.
CANDIDATE_MARGIN = 2

# Half-width of the per-slice annulus, in voxels.
ANNULUS_HALF_WIDTH = 0.5


@njit(cache=True, nogil=True)
def quantize_radius(radius):
    """Round a voxel-unit radius to the nearest half voxel (ties round up)."""
    return math.floor(2.0 * radius + 0.5) / 2.0


@njit(cache=True, nogil=True)
def slice_annulus(dz, radius, half_width):
    """Squared inner/outer in-plane bounds of the slice ``dz`` from the centre.

    The slice circle has radius sqrt(r^2 - dz^2); the annulus keeps voxel
    centres within ``half_width`` of it. Returns (-1, -1) when the slice
    misses the sphere. The inner bound is clamped at zero so near-pole
    slices keep their centre voxel.
    """
    slice2 = radius * radius - dz * dz
    if slice2 < 0.0:
        return -1.0, -1.0
    slice_radius = math.sqrt(slice2)
    inner = max(slice_radius - half_width, 0.0)
    outer = slice_radius + half_width
    return inner * inner, outer * outer


@njit(cache=True, nogil=True)
def cast_sphere(counts, cx, cy, cz, radius, half_width):
    """Increment every voxel of the sphere's per-slice annulus; returns the increment count.

    The radius is first quantized to half a voxel. Each z-slice through a
    voxel centre cuts the sphere in a circle; a voxel of that slice is hit
    when its centre lies in the half-open annulus
    ``inner^2 <= dx^2 + dy^2 < outer^2`` around the circle. Slices are
    disjoint, so a cast increments each voxel at most once.
    """
    nz, ny, nx = counts.shape
    r = quantize_radius(radius)
    reach = r + half_width
    hits = 0
    k_lo = max(0, int(math.floor(cz - reach)) - CANDIDATE_MARGIN)
    k_hi = min(nz - 1, int(math.ceil(cz + reach)) + CANDIDATE_MARGIN)
    for k in range(k_lo, k_hi + 1):
        dz = k + 0.5 - cz
        inner2, outer2 = slice_annulus(dz, r, half_width)
        if outer2 < 0.0:
            continue
        outer = math.sqrt(outer2)
        j_lo = max(0, int(math.floor(cy - outer)) - CANDIDATE_MARGIN)
        j_hi = min(ny - 1, int(math.ceil(cy + outer)) + CANDIDATE_MARGIN)
        for j in range(j_lo, j_hi + 1):
            dy = j + 0.5 - cy
            dy2 = dy * dy
            if dy2 >= outer2:
                continue
            row_outer = math.sqrt(outer2 - dy2)
            i_lo = max(0, int(math.floor(cx - row_outer)) - CANDIDATE_MARGIN)
            i_hi = min(nx - 1, int(math.ceil(cx + row_outer)) + CANDIDATE_MARGIN)
            skip_from = i_hi + 1
            skip_to = i_hi
            if inner2 - dy2 > 1.0:
                row_inner = math.sqrt(inner2 - dy2)
                # centres more than a voxel inside the inner bound
                skip_from = int(math.floor(cx - row_inner + 0.5)) + 1
                skip_to = int(math.ceil(cx + row_inner - 1.5)) - 1
            i = i_lo
            while i <= i_hi:
                if skip_from <= i <= skip_to:
                    i = skip_to + 1
                    continue
                dx = i + 0.5 - cx
                d2 = dx * dx + dy2
                if inner2 <= d2 < outer2:
                    counts[k, j, i] += 1
                    hits += 1
                i += 1
    return hits


@njit(cache=True, nogil=True)
def cast_spheres(counts, centers, radii, half_width=ANNULUS_HALF_WIDTH):
    hits = np.zeros(len(radii), dtype=np.int64)
    for n in range(len(radii)):
        hits[n] = cast_sphere(counts, centers[n, 0], centers[n, 1], centers[n, 2], radii[n], half_width)
    return hits


@njit(cache=True, nogil=True)
def _clip_half_line(origin, direction, dims):
    """Parameter interval [t0, t1] of the half-line t >= 0 inside the grid box."""
    t0 = 0.0
    t1 = np.inf
    for axis in range(3):
        o = origin[axis]
        d = direction[axis]
        n = float(dims[axis])
        if d == 0.0:
            if o < 0.0 or o > n:
                return 1.0, 0.0
            continue
        ta = (0.0 - o) / d
        tb = (n - o) / d
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
    return t0, t1


@njit(cache=True, nogil=True)
def cast_ray(counts, origin, direction):
    """Amanatides-Woo traversal of the half-line from ``origin``, clipped to the grid.

    Each voxel the ray passes through is incremented once.
    """
    nz, ny, nx = counts.shape
    dims = np.array([nx, ny, nz])
    t0, t1 = _clip_half_line(origin, direction, dims)
    if t0 > t1:
        return 0

    index = np.empty(3, dtype=np.int64)
    step = np.zeros(3, dtype=np.int64)
    t_max = np.full(3, np.inf)
    t_delta = np.full(3, np.inf)
    for axis in range(3):
        p = origin[axis] + t0 * direction[axis]
        c = int(math.floor(p))
        index[axis] = min(max(c, 0), dims[axis] - 1)
        d = direction[axis]
        if d > 0.0:
            step[axis] = 1
            t_max[axis] = (index[axis] + 1.0 - origin[axis]) / d
            t_delta[axis] = 1.0 / d
        elif d < 0.0:
            step[axis] = -1
            t_max[axis] = (index[axis] - origin[axis]) / d
            t_delta[axis] = -1.0 / d

    hits = 0
    while True:
        counts[index[2], index[1], index[0]] += 1
        hits += 1
        axis = 0
        if t_max[1] < t_max[axis]:
            axis = 1
        if t_max[2] < t_max[axis]:
            axis = 2
        if t_max[axis] > t1:
            break
        index[axis] += step[axis]
        if index[axis] < 0 or index[axis] >= dims[axis]:
            break
        t_max[axis] += t_delta[axis]
    return hits


@njit(cache=True, nogil=True)
def cast_rays(counts, origins, directions):
    hits = np.zeros(len(origins), dtype=np.int64)
    for n in range(len(origins)):
        hits[n] = cast_ray(counts, origins[n], directions[n])
    return hits


@njit(cache=True, nogil=True)
def cast_points(counts, targets):
    """Increment the voxel containing each target; 0 for targets outside the grid."""
    nz, ny, nx = counts.shape
    hits = np.zeros(len(targets), dtype=np.int64)
    for n in range(len(targets)):
        x = targets[n, 0]
        y = targets[n, 1]
        z = targets[n, 2]
        if not (0.0 <= x <= nx and 0.0 <= y <= ny and 0.0 <= z <= nz):
            continue
        i = min(int(math.floor(x)), nx - 1)
        j = min(int(math.floor(y)), ny - 1)
        k = min(int(math.floor(z)), nz - 1)
        counts[k, j, i] += 1
        hits[n] = 1
    return hits
