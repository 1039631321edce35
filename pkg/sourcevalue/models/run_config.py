"""Pydantic models for the JSON run configuration."""

from pathlib import Path
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .learner import LearnerSpec, Metric
from .valuation import ValuationConfig
from .workflow import EstimatorKind


class CsvSource(BaseModel):
    """Dataset read from a CSV file."""

    model_config = ConfigDict(extra="forbid")

    type: Literal["csv"] = "csv"
    path: str
    label_column: str
    group_column: Optional[str] = None

    @field_validator("path")
    @classmethod
    def _path_exists(cls, value: str) -> str:
        if not Path(value).is_file():
            raise ValueError(f"dataset file not found: {value}")
        return value


class SyntheticSource(BaseModel):
    """Synthetic Gaussian-feature binary task."""

    model_config = ConfigDict(extra="forbid")

    type: Literal["synthetic"] = "synthetic"
    n: int = Field(300, ge=2)
    dim: int = Field(50, ge=1)
    relation: Literal["linear", "poly3"] = "linear"


class SplitConfig(BaseModel):
    """Fractions of the dataset used for training, valuation scoring and held-out reporting."""

    model_config = ConfigDict(extra="forbid")

    train: float = Field(0.5, gt=0.0)
    valuation_eval: float = Field(0.25, gt=0.0)
    heldout: float = Field(0.25, gt=0.0)

    @model_validator(mode="after")
    def _check_sum(self):
        if self.train + self.valuation_eval + self.heldout > 1.0 + 1e-12:
            raise ValueError("split fractions must sum to at most 1")
        return self


class ExperimentConfig(BaseModel):
    """Knobs for the experiment drivers."""

    model_config = ConfigDict(extra="forbid")

    flip_fraction: float = Field(0.1, gt=0.0, lt=1.0)
    noise_fraction: float = Field(0.1, gt=0.0, lt=1.0)
    noise_sigmas: List[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0])
    curve_step: Optional[int] = Field(None, ge=1, description="Defaults to max(1, n // 50)")
    curve_max_fraction: Optional[float] = Field(None, gt=0.0, le=1.0)
    inspection_marks: List[float] = Field(default_factory=lambda: [0.2, 0.3])
    pool_fraction: float = Field(0.5, gt=0.0, lt=1.0, description="Share of train used as acquisition pool")
    estimator: EstimatorKind = "knn_regressor"
    estimator_k: int = Field(5, ge=1)
    estimator_max_depth: int = Field(5, ge=1)
    adapt_shift: float = Field(1.5, ge=0.0)
    adapt_contamination: float = Field(0.3, gt=0.0, lt=1.0)
    num_groups: int = Field(10, ge=2)
    compare_kinds: List[Literal["logistic_regression", "naive_bayes", "knn"]] = Field(
        default_factory=lambda: ["logistic_regression", "naive_bayes", "knn"]
    )
    truncation_fractions: List[float] = Field(default_factory=lambda: [0.1, 0.25, 0.5])

    @field_validator("noise_sigmas")
    @classmethod
    def _positive_sigmas(cls, value: List[float]) -> List[float]:
        if not value or any(s <= 0 for s in value):
            raise ValueError("noise_sigmas must be a nonempty list of positive reals")
        return value


class RunConfig(BaseModel):
    """Everything needed to reproduce one run."""

    model_config = ConfigDict(extra="forbid")

    dataset: Union[CsvSource, SyntheticSource] = Field(default_factory=SyntheticSource, discriminator="type")
    split: SplitConfig = Field(default_factory=SplitConfig)
    learner: LearnerSpec = Field(default_factory=LearnerSpec)
    valuation: ValuationConfig = Field(default_factory=ValuationConfig)
    metric: Metric = "accuracy"
    bootstrap_samples: int = Field(1000, ge=2)
    bootstrap_multiplier: float = Field(1.0, gt=0.0)
    use_bootstrap_tolerance: bool = Field(
        True, description="Set tmc truncation tolerance from the bootstrap when the config leaves it at 0"
    )
    experiment: ExperimentConfig = Field(default_factory=ExperimentConfig)
    seed: int = Field(0, ge=0)
    output_dir: str = "runs/latest"

    @model_validator(mode="after")
    def _pin_valuation_seed(self):
        # one master seed: the valuation stream always follows the run seed
        if self.valuation.seed != self.seed:
            self.valuation = self.valuation.model_copy(update={"seed": self.seed})
        return self

    def with_overrides(self, seed: Optional[int] = None, workers: Optional[int] = None, output_dir: Optional[str] = None) -> "RunConfig":
        """Apply CLI flag overrides and re-validate."""
        data = self.model_dump(mode="json")
        if seed is not None:
            data["seed"] = seed
            data["valuation"]["seed"] = seed
        if workers is not None:
            data["valuation"]["workers"] = workers
        if output_dir is not None:
            data["output_dir"] = output_dir
        return RunConfig.model_validate(data)
