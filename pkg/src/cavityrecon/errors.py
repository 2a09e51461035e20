"""Exception hierarchy shared by all modules.

Each exception carries an ``exit_code`` so the CLI can map failures to the
documented process exit status without a lookup table.
"""


class ReconError(Exception):
    exit_code = 2


class DataError(ReconError):
    """Malformed or missing input data."""

    exit_code = 2


class NumericalError(ReconError):
    exit_code = 3


class NonPositiveDepth(ReconError, ValueError):
    pass


class NonPositiveScale(ReconError, ValueError):
    pass


class InvalidPose(ReconError, ValueError):
    pass


class ChannelMismatch(DataError, ValueError):
    pass


class OutOfBounds(ReconError, IndexError):
    pass


class NoVisiblePoints(NumericalError):
    pass


class NoValidDepths(DataError):
    pass


class EmptyVolume(ReconError, ValueError):
    pass


class EmptyMesh(ReconError, ValueError):
    pass


class TooFewPoints(ReconError, ValueError):
    pass


class NoIntersection(NumericalError):
    pass


class OpenContour(NumericalError):
    pass


class AllSectionsFailed(NumericalError):
    pass


class InvalidSpec(ReconError, ValueError):
    exit_code = 1


class DegenerateMesh(DataError):
    pass


class NoVisibleSurface(NumericalError):
    pass


class FormatError(DataError):
    """A file could not be parsed; reports the path and byte offset."""

    def __init__(self, path, offset, message):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{self.path}: offset {offset}: {message}")
