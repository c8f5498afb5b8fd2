"""Exception hierarchy shared by every radvote app.

Each class also derives from the closest builtin so callers can catch
``ValueError`` / ``IOError`` without importing this module.
"""


class RadvoteError(Exception):
    """Base class for all radvote failures."""


class GeometryError(RadvoteError, ValueError):
    pass


class InvalidDepthError(GeometryError):
    pass


class DegeneracyError(GeometryError):
    pass


class RankError(DegeneracyError):
    pass


class SizeError(GeometryError):
    pass


class ParameterError(RadvoteError, ValueError):
    pass


class EmptyRenderError(RadvoteError):
    pass


class EmptyMaskError(RadvoteError, ZeroDivisionError):
    """A masked mean was requested over an empty mask."""


class NoPeakError(RadvoteError):
    pass


class IncompatibleGridError(RadvoteError, ValueError):
    pass


class DataIOError(RadvoteError, IOError):
    pass


class PlyHeaderError(DataIOError):
    pass


class PlyLayoutError(DataIOError):
    pass


class PlyTruncatedError(DataIOError):
    pass


class DepthFormatError(DataIOError):
    pass


class PoseFileError(DataIOError):
    pass


class GridDumpError(DataIOError):
    pass


class ConfigError(RadvoteError, ValueError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
