"""Exception types shared across the package."""


class CfeedbackError(Exception):
    """Base class for all package errors."""


class SpecificationError(CfeedbackError):
    """A caller violated an interface contract (bad shapes, invalid config)."""


class NumericError(CfeedbackError):
    """A computation produced non-finite values."""


class TrainingError(CfeedbackError):
    """A training loop diverged or could not complete."""


class CalibrationError(CfeedbackError):
    """Synthetic data calibration failed to converge."""


class SchemaError(CfeedbackError):
    """An external record does not match the feature schema."""


class ParseError(CfeedbackError):
    """Malformed external input (CSV/JSON)."""


class FormatError(CfeedbackError):
    """A serialized model/schema file is corrupt or has the wrong version."""


class MeasurementError(CfeedbackError):
    """Timing measurement could not be trusted (non-monotonic clock)."""
