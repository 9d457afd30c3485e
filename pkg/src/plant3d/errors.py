"""Exception hierarchy.

Every error raised on bad input derives from :class:`Plant3DError`, so callers
(the CLI in particular) can separate data problems from programming bugs.
"""


class Plant3DError(Exception):
    """Base class for all data/usage errors raised by plant3d."""


class NotFoundError(Plant3DError, FileNotFoundError):
    pass


class ParseError(Plant3DError, ValueError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class EmptyCloudError(Plant3DError, ValueError):
    pass


class TooFewPointsError(Plant3DError, ValueError):
    pass


class InvalidKError(Plant3DError, ValueError):
    pass


class InvalidRadiusError(Plant3DError, ValueError):
    pass


class NoNormalsError(Plant3DError, ValueError):
    pass


class BadScaleLadderError(Plant3DError, ValueError):
    pass


class TooFewNeighborsError(Plant3DError, ValueError):
    pass


class UndefinedNormalError(Plant3DError, ValueError):
    pass


class ZeroVectorError(Plant3DError, ValueError):
    pass


class DegenerateNeighborhoodError(Plant3DError, ValueError):
    pass


class TooFewSamplesError(Plant3DError, ValueError):
    pass


class DimensionMismatchError(Plant3DError, ValueError):
    pass


class EmptySetError(Plant3DError, ValueError):
    pass


class SingleClassError(Plant3DError, ValueError):
    pass


class LengthMismatchError(Plant3DError, ValueError):
    pass


class UnknownConditionError(Plant3DError, ValueError):
    pass


class TooFewDaysError(Plant3DError, ValueError):
    pass


class ClassTooSmallError(Plant3DError, ValueError):
    pass


class InvalidSpecError(Plant3DError, ValueError):
    pass


class InvalidParameterError(Plant3DError, ValueError):
    pass


class CellError(Plant3DError):
    """A module error raised while computing one experiment cell."""

    def __init__(self, cell, cloud, cause):
        self.cell = cell
        self.cloud = cloud
        self.cause = cause
        super().__init__(f"cell {cell}, cloud {cloud}: {cause}")
