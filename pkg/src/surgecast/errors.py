"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ConfigError(ValueError):
    """A configuration object or file is invalid."""


class ContractError(ValueError):
    """An operation was called outside its stated preconditions."""


class DataError(ValueError):
    """A dataset or model file is missing, truncated or malformed."""


class VersionError(DataError):
    """A file declares a format version this code cannot read."""


class TrainingDivergedError(RuntimeError):
    """The training loss became non-finite."""


class ConditioningError(RuntimeError):
    """A kernel matrix stayed indefinite after jitter escalation."""
