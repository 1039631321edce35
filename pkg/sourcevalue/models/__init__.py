"""Pydantic models for data, learners, valuation and runs."""

from .dataset import (
    LabeledPoint,
    Dataset,
    SourceSet,
    CorruptionReport,
)

from .learner import (
    LearnerHyperparams,
    LearnerSpec,
    TrainedModel,
    Evaluator,
)

from .valuation import (
    ValuationConfig,
    ValuationResult,
    PermutationRecord,
)

from .workflow import (
    Curve,
    ValueEstimator,
    ExperimentReport,
)

from .run_config import (
    CsvSource,
    SyntheticSource,
    SplitConfig,
    ExperimentConfig,
    RunConfig,
)

__all__ = [
    "LabeledPoint",
    "Dataset",
    "SourceSet",
    "CorruptionReport",
    "LearnerHyperparams",
    "LearnerSpec",
    "TrainedModel",
    "Evaluator",
    "ValuationConfig",
    "ValuationResult",
    "PermutationRecord",
    "Curve",
    "ValueEstimator",
    "ExperimentReport",
    "CsvSource",
    "SyntheticSource",
    "SplitConfig",
    "ExperimentConfig",
    "RunConfig",
]
