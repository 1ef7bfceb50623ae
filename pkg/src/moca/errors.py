"""Exception types shared across the package."""


class MocaError(Exception):
    """Base class for all package errors."""


class DimensionError(MocaError, ValueError):
    """Array extents do not line up (shape mismatch, length mismatch)."""


class ConfigError(MocaError, ValueError):
    """Invalid configuration value (temperature, head count, scenario name)."""


class DataError(MocaError, ValueError):
    """Input data violates a contract (non-binary treatment, empty arm)."""


class UsageError(MocaError, ValueError):
    """API called in an unsupported way (non-scalar loss, too few runs)."""


class DomainError(MocaError, ValueError):
    """Numeric input outside its mathematical domain."""


class SchemaError(MocaError, ValueError):
    """A CSV file does not match the expected column schema."""


class NumericError(MocaError, ArithmeticError):
    """A linear system or iteration failed numerically."""
