"""Counterfactual what-if feedback engine for tabular binary classifiers."""

from .errors import (
    CalibrationError,
    CfeedbackError,
    FormatError,
    MeasurementError,
    NumericError,
    ParseError,
    SchemaError,
    SpecificationError,
    TrainingError,
)
from .numerics import AdamState, MlpParams, MlpSpec, Rand
from .profiles import (
    Dataset,
    FeatureSpec,
    GeneratorConfig,
    ProfileSchema,
    default_schema,
    generate_dataset,
    split,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "CalibrationError",
    "CfeedbackError",
    "Dataset",
    "FeatureSpec",
    "FormatError",
    "GeneratorConfig",
    "MeasurementError",
    "MlpParams",
    "MlpSpec",
    "NumericError",
    "ParseError",
    "ProfileSchema",
    "Rand",
    "SchemaError",
    "SpecificationError",
    "TrainingError",
    "default_schema",
    "generate_dataset",
    "split",
    "__version__",
]
