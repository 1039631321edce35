"""Pydantic models for valuation settings, permutation records and results."""

from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

ValuationMethod = Literal["exact", "mc", "tmc", "gshapley", "loo"]


class ValuationConfig(BaseModel):
    """Estimation method plus convergence, truncation and parallelism settings."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    method: ValuationMethod = "tmc"
    max_permutations: int = Field(1000, ge=1, description="T_max")
    convergence_threshold: float = Field(0.05, gt=0.0)
    convergence_window: int = Field(100, ge=1, description="W; convergence is checked every W iterations")
    truncation_tolerance: float = Field(0.0, ge=0.0, description="Absolute score units; 0 disables")
    truncation_fraction: Optional[float] = Field(None, gt=0.0, le=1.0, description="Scan only the first ceil(f*n) positions")
    alpha: Optional[float] = Field(None, gt=0.0, description="G-Shapley step size")
    alpha_grid: List[float] = Field(default_factory=lambda: [0.01, 0.03, 0.1, 0.3, 1.0, 3.0])
    seed: int = Field(0, ge=0)
    workers: int = Field(1, ge=1)
    record_history: bool = True

    @model_validator(mode="after")
    def _check_method_fields(self):
        if self.method == "gshapley" and self.alpha is None:
            raise ValueError("gshapley requires alpha")
        if any(a <= 0 for a in self.alpha_grid):
            raise ValueError("alpha_grid entries must be positive")
        return self


class PermutationRecord(BaseModel):
    """One scanned permutation and its marginal contributions."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    iteration: int = Field(..., ge=1)
    permutation: np.ndarray
    marginals: np.ndarray = Field(..., description="Indexed by scan position")
    truncation_position: int = Field(..., ge=0, description="Positions scanned; n when not truncated")
    start_score: Optional[float] = Field(None, description="Score the scan started from when it is not V(empty)")

    @model_validator(mode="after")
    def _check_truncation(self):
        n = self.permutation.shape[0]
        if self.marginals.shape[0] != n or self.truncation_position > n:
            raise ValueError("marginals and truncation position must match the permutation length")
        if np.any(self.marginals[self.truncation_position:] != 0.0):
            raise ValueError("marginals beyond the truncation position must be exactly 0")
        return self

    def by_source(self) -> np.ndarray:
        """Marginals re-indexed by player instead of scan position."""
        out = np.zeros_like(self.marginals)
        out[self.permutation] = self.marginals
        return out


class ValuationResult(BaseModel):
    """Per-source values with diagnostics."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    method: str
    seed: int = 0
    values: np.ndarray
    permutations_used: int = Field(0, ge=0)
    converged: bool = False
    v_full: float
    v_null: float
    history: Optional[List[np.ndarray]] = None
    history_iterations: Optional[List[int]] = None
    truncation_positions: Optional[List[int]] = None

    @model_validator(mode="after")
    def _check_values(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")
        self.values.setflags(write=False)
        return self

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "n": self.n,
            "values": [float(v) for v in self.values],
            "permutations_used": self.permutations_used,
            "converged": self.converged,
            "v_full": float(self.v_full),
            "v_null": float(self.v_null),
        }
