"""Pydantic models for labeled data, source sets and corruption reports."""

from typing import Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


class LabeledPoint(BaseModel):
    """A single (features, label) pair."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    features: np.ndarray = Field(..., description="Feature vector")
    label: int = Field(..., ge=0, description="Class index")

    @field_validator("features", mode="before")
    @classmethod
    def _as_vector(cls, value):
        arr = _frozen_array(value, np.float64)
        if arr.ndim != 1:
            raise ValueError("features must be a 1-d vector")
        return arr


class Dataset(BaseModel):
    """Ordered labeled points; row ``i`` is the identity of source ``i``."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    features: np.ndarray = Field(..., description="(n, feature_dim) float matrix")
    labels: np.ndarray = Field(..., description="(n,) class indices")
    num_classes: int = Field(..., ge=2, description="Number of classes K")
    groups: Optional[np.ndarray] = Field(None, description="(n,) group indices")
    metadata: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("features", mode="before")
    @classmethod
    def _as_matrix(cls, value):
        arr = _frozen_array(value, np.float64)
        if arr.ndim != 2:
            raise ValueError("features must be a 2-d matrix")
        if arr.shape[1] < 1:
            raise ValueError("feature_dim must be positive")
        return arr

    @field_validator("labels", mode="before")
    @classmethod
    def _as_labels(cls, value):
        arr = _frozen_array(value, np.int64)
        if arr.ndim != 1:
            raise ValueError("labels must be a 1-d vector")
        return arr

    @field_validator("groups", mode="before")
    @classmethod
    def _as_groups(cls, value):
        if value is None:
            return None
        arr = _frozen_array(value, np.int64)
        if arr.ndim != 1:
            raise ValueError("groups must be a 1-d vector")
        return arr

    @model_validator(mode="after")
    def _check_consistency(self):
        n = self.features.shape[0]
        if self.labels.shape[0] != n:
            raise ValueError(f"labels length {self.labels.shape[0]} != number of rows {n}")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if self.groups is not None:
            if self.groups.shape[0] != n:
                raise ValueError(f"groups length {self.groups.shape[0]} != number of rows {n}")
            if n:
                if self.groups.min() < 0:
                    raise ValueError("group indices must be non-negative")
                present = np.unique(self.groups)
                if present.shape[0] != int(self.groups.max()) + 1:
                    raise ValueError("every group index 0..G-1 must be assigned to at least one point")
        return self

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_groups(self) -> int:
        if self.groups is None or self.n == 0:
            return 0
        return int(self.groups.max()) + 1

    def point(self, index: int) -> LabeledPoint:
        return LabeledPoint(features=self.features[index], label=int(self.labels[index]))

    def points(self) -> List[LabeledPoint]:
        return [self.point(i) for i in range(self.n)]

    def __len__(self) -> int:
        return self.n


class SourceSet(BaseModel):
    """A subset of players, given as strictly increasing indices."""

    model_config = ConfigDict(frozen=True)

    indices: List[int] = Field(default_factory=list)
    universe_size: int = Field(..., ge=0)

    @model_validator(mode="after")
    def _check_indices(self):
        prev = -1
        for idx in self.indices:
            if idx <= prev:
                raise ValueError("indices must be strictly increasing")
            if idx >= self.universe_size:
                raise ValueError(f"index {idx} out of range for universe of size {self.universe_size}")
            prev = idx
        return self

    @classmethod
    def from_indices(cls, indices, universe_size: int) -> "SourceSet":
        return cls(indices=sorted(int(i) for i in set(np.asarray(indices).tolist())), universe_size=universe_size)

    @classmethod
    def full(cls, universe_size: int) -> "SourceSet":
        return cls(indices=list(range(universe_size)), universe_size=universe_size)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=np.int64)

    def mask(self) -> np.ndarray:
        out = np.zeros(self.universe_size, dtype=bool)
        out[self.indices] = True
        return out

    def __len__(self) -> int:
        return len(self.indices)


class CorruptionReport(BaseModel):
    """Which rows a corruption touched and how."""

    model_config = ConfigDict(frozen=True)

    affected: SourceSet
    kind: Literal["label_flip", "feature_noise"]
    noise_sigma: float = Field(0.0, ge=0.0, description="Std of added Gaussian noise, feature units")

    @model_validator(mode="after")
    def _check_sigma(self):
        if (self.noise_sigma == 0.0) != (self.kind == "label_flip"):
            raise ValueError("noise_sigma must be 0 exactly for label_flip and positive for feature_noise")
        return self
