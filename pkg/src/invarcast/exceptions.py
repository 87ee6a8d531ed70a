"""Exception hierarchy shared across the package."""


class InvarcastError(Exception):
    """Base class for every error this package raises on purpose."""


class DimensionError(InvarcastError):
    """Operand shapes are incompatible with the requested operation."""


class NonFiniteError(InvarcastError):
    """A value that must be finite became NaN or infinite."""


class ContractError(InvarcastError):
    """An API was called outside its documented contract."""


class ConfigError(InvarcastError):
    """A configuration value or combination of values is invalid."""


class SingularDesignError(InvarcastError):
    """A least-squares design matrix is rank deficient."""


class IngestError(InvarcastError):
    """A data file is malformed; the message names the offending line."""


class SchemaError(IngestError):
    """A CSV header does not match the expected schema."""


class MissingAttributeError(IngestError):
    """An attribute column contains no usable values at all."""


class DivergenceError(InvarcastError):
    """Training aborted because the loss became non-finite."""
