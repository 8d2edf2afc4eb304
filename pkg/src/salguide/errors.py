"""Exception hierarchy shared across the package."""


class SalguideError(Exception):
    """Base class for every error raised by salguide."""


class InvalidShapeError(SalguideError, ValueError):
    pass


class InvalidParameterError(SalguideError, ValueError):
    pass


class ContractError(SalguideError, RuntimeError):
    """A call violated an API precondition (e.g. backward on a non-scalar)."""


class CorruptCheckpointError(SalguideError):
    pass


class ShapeMismatchError(SalguideError):
    pass


class DatasetError(SalguideError):
    pass


class UnsupportedFormatError(DatasetError):
    pass


class TrainingDivergedError(SalguideError):
    pass


class ConfigError(SalguideError):
    pass
