class ValidationError(ValueError):
    """Input violates a documented precondition (shapes, ranges, normalization)."""


class NumericalValidationError(RuntimeError):
    """A numerical invariant failed at run time (e.g. a value table left its range)."""


class ConfigError(ValueError):
    """Experiment configuration is missing fields or carries invalid values."""
