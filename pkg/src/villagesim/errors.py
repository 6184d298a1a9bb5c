"""Exception hierarchy shared across the engine."""


class VillagesimError(Exception):
    """Base class for all engine-specific failures."""


class ConfigurationError(VillagesimError):
    """A spec, config file, or argument combination is invalid."""


class GenerationError(VillagesimError):
    """Synthetic census generation could not meet its targets."""


class EstimationError(VillagesimError):
    """A model fit failed structurally (rank deficiency, undefined dispersion)."""


class CalibrationError(VillagesimError):
    """Intercept calibration could not bracket or reach the target rate."""


class PoolError(VillagesimError):
    """Allocation pool construction produced no usable allocations."""


class SchemaError(VillagesimError):
    """A persisted file is missing required columns or keys."""
