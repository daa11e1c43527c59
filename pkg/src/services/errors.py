class ShapeAsPointsError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(ShapeAsPointsError):
    pass


class FormatError(ShapeAsPointsError):
    pass


class ParseError(FormatError):
    """
    Malformed point cloud or mesh file.

    :param message: str: What went wrong.
    :param path: str: The offending file.
    :param line: int | None: 1-based line of a text format.
    """

    def __init__(self, message: str, path: str = "", line: int | None = None):
        location = f" (line {line})" if line is not None else ""
        super().__init__(f"{path}{location}: {message}" if path else f"{message}{location}")
        self.path = path
        self.line = line


class GridFormatError(FormatError):
    pass


class ComputeError(ShapeAsPointsError):
    pass


class RecoverableStepError(ComputeError):
    """A failed iteration the optimization loop may skip."""


class OutOfDomainError(ComputeError):
    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


class NonFiniteInputError(ComputeError):
    pass


class DegenerateScaleError(RecoverableStepError):
    pass


class EmptyMeshError(RecoverableStepError):
    pass


class TapeMismatchError(ComputeError):
    pass


class ResolutionGuardError(ComputeError):
    pass


class NonUnitNormalError(ComputeError):
    pass


class EmptyPointSetError(ComputeError):
    pass


class GridSpecMismatchError(ComputeError):
    pass


class ReconstructionAbortedError(ComputeError):
    pass


class DegenerateInputError(ComputeError):
    pass
