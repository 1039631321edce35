"""Pydantic models for learners, fitted predictors and performance scores."""

import math
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, computed_field, model_validator

from .dataset import Dataset

LearnerKind = Literal["logistic_regression", "naive_bayes", "knn"]
Metric = Literal["accuracy", "neg_cross_entropy"]

DIFFERENTIABLE_KINDS = frozenset({"logistic_regression"})


class LearnerHyperparams(BaseModel):
    """Hyperparameters; names are fixed and shared by all kinds."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha: float = Field(0.1, gt=0.0, description="Gradient-descent learning rate")
    epochs: int = Field(100, ge=1, description="Full-batch epochs")
    l2: float = Field(0.0, ge=0.0, description="L2 penalty strength")
    k: int = Field(5, ge=1, description="Neighbours for knn")
    smoothing: float = Field(1.0, gt=0.0, description="Laplace / prior smoothing for naive Bayes")
    init_scale: float = Field(0.0, ge=0.0, description="Std of fit_seed-driven initialization; 0 means zeros")


class LearnerSpec(BaseModel):
    """The learning algorithm: a kind, its hyperparameters and a fit seed."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: LearnerKind = "logistic_regression"
    hyperparams: LearnerHyperparams = Field(default_factory=LearnerHyperparams)
    fit_seed: int = Field(0, ge=0)

    @property
    def differentiable(self) -> bool:
        return self.kind in DIFFERENTIABLE_KINDS


class TrainedModel(BaseModel):
    """A fitted predictor. Immutable; parameter arrays are read-only."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    kind: LearnerKind
    num_classes: int = Field(..., ge=2)
    feature_dim: int = Field(..., ge=1)
    is_null: bool = False

    # logistic_regression: softmax weights (K, d) and intercepts (K,)
    coef: Optional[np.ndarray] = None
    intercept: Optional[np.ndarray] = None

    # naive_bayes: class log-priors (K,), Gaussian means and variances (K, d)
    class_log_prior: Optional[np.ndarray] = None
    means: Optional[np.ndarray] = None
    variances: Optional[np.ndarray] = None

    # knn: stored exemplars with vote weights
    exemplars: Optional[np.ndarray] = None
    exemplar_labels: Optional[np.ndarray] = None
    exemplar_weights: Optional[np.ndarray] = None
    k: Optional[int] = None

    @model_validator(mode="after")
    def _check_shapes(self):
        K, d = self.num_classes, self.feature_dim
        if self.is_null:
            return self
        if self.kind == "logistic_regression":
            if self.coef is None or self.coef.shape != (K, d):
                raise ValueError(f"coef must have shape ({K}, {d})")
            if self.intercept is None or self.intercept.shape != (K,):
                raise ValueError(f"intercept must have shape ({K},)")
        elif self.kind == "naive_bayes":
            if self.class_log_prior is None or self.class_log_prior.shape != (K,):
                raise ValueError(f"class_log_prior must have shape ({K},)")
            if self.means is None or self.means.shape != (K, d) or self.variances is None or self.variances.shape != (K, d):
                raise ValueError(f"means and variances must have shape ({K}, {d})")
        elif self.kind == "knn":
            if self.exemplars is None or self.exemplars.ndim != 2 or self.exemplars.shape[1] != d:
                raise ValueError(f"exemplars must have shape (m, {d})")
        for name in ("coef", "intercept", "class_log_prior", "means", "variances", "exemplars", "exemplar_labels", "exemplar_weights"):
            arr = getattr(self, name)
            if arr is not None:
                arr.setflags(write=False)
        return self

    @property
    def theta(self) -> np.ndarray:
        """Flattened logistic parameters: [coef.ravel(), intercept]."""
        if self.kind != "logistic_regression" or self.is_null:
            raise AttributeError("theta is only defined for fitted logistic regression models")
        return np.concatenate([self.coef.ravel(), self.intercept])


class Evaluator(BaseModel):
    """Performance score V over a fixed evaluation set."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    eval_set: Dataset
    metric: Metric = "accuracy"
    per_point: bool = False

    @model_validator(mode="after")
    def _check_nonempty(self):
        if self.eval_set.n == 0:
            raise ValueError("eval_set must be nonempty")
        return self

    @computed_field
    @property
    def null_score(self) -> float:
        """Score of the uniform-probability predictor: 1/K or -log K."""
        K = self.eval_set.num_classes
        if self.metric == "accuracy":
            return 1.0 / K
        return -math.log(K)
