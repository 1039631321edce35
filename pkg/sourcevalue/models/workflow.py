"""Pydantic models for experiment curves and value estimators."""

from typing import Any, Dict, List, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

EstimatorKind = Literal["knn_regressor", "decision_tree"]


class Curve(BaseModel):
    """Score (or recall) as a function of the fraction of sources processed."""

    model_config = ConfigDict(frozen=True)

    xs: List[float]
    ys: List[float]
    label: str
    metadata: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_axes(self):
        if len(self.xs) != len(self.ys):
            raise ValueError("xs and ys must have equal length")
        if any(x < 0.0 or x > 1.0 for x in self.xs):
            raise ValueError("xs must lie in [0, 1]")
        if any(b <= a for a, b in zip(self.xs, self.xs[1:])):
            raise ValueError("xs must be strictly increasing")
        return self

    def y_at(self, x: float) -> float:
        """y at the last sample point not beyond ``x``."""
        idx = int(np.searchsorted(np.asarray(self.xs), x + 1e-12, side="right")) - 1
        return self.ys[max(idx, 0)]


class ValueEstimator(BaseModel):
    """Regressor from (features ⊕ one-hot label) to value."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    kind: EstimatorKind
    regressor: Any
    feature_dim: int = Field(..., ge=1)
    num_classes: int = Field(..., ge=2)

    @property
    def input_dim(self) -> int:
        return self.feature_dim + self.num_classes


class ExperimentReport(BaseModel):
    """What an experiment driver hands back for writing."""

    name: str
    summary: Dict[str, Any] = Field(default_factory=dict)
    curves: List[Curve] = Field(default_factory=list)
    values: Dict[str, List[float]] = Field(default_factory=dict)
