"""Workflow service: inspection, removal and addition curves, value estimation, reweighting."""

import math
from typing import Literal, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import spearmanr
from sklearn.neighbors import KNeighborsRegressor
from sklearn.tree import DecisionTreeRegressor

from sourcevalue.config import settings
from sourcevalue.exceptions import ConfigError, ValuationError
from sourcevalue.models.dataset import Dataset, SourceSet
from sourcevalue.models.learner import Evaluator, LearnerSpec
from sourcevalue.models.workflow import Curve, EstimatorKind, ValueEstimator
from sourcevalue.services.dataset import dataset_service
from sourcevalue.services.learners import learner_service
from sourcevalue.utils.logger import app_logger, progress_logger
from sourcevalue.utils.rng import substream

Order = Literal["desc", "asc"]


def value_order(values: np.ndarray, order: Order) -> np.ndarray:
    """Source indices sorted by value; ties broken by ascending index."""
    values = np.asarray(values, dtype=np.float64)
    index = np.arange(values.shape[0])
    key = values if order == "asc" else -values
    return np.lexsort((index, key))


def _heldout_score(spec: LearnerSpec, train: Dataset, rows: np.ndarray, heldout: Evaluator) -> float:
    model = learner_service.fit(spec, train, np.sort(rows))
    return learner_service.evaluate(model, heldout)[0]


def _row_keys(ds: Dataset) -> set:
    return {row.tobytes() + int(label).to_bytes(8, "little") for row, label in zip(np.ascontiguousarray(ds.features), ds.labels)}


class WorkflowService:
    """Experiment building blocks that consume values."""

    def __init__(self):
        self.backend = settings.parallel_backend

    # ----------------------------------------------------------- inspection

    def inspection_curve(self, values: np.ndarray, corrupted: SourceSet, label: str = "values") -> Curve:
        """Recall of corrupted sources when inspecting from the least to the most valuable."""
        if len(corrupted) == 0:
            raise ValuationError("inspection curve needs at least one corrupted source")
        values = np.asarray(values, dtype=np.float64)
        n = values.shape[0]
        if corrupted.universe_size != n:
            raise ValuationError(f"corrupted set universe {corrupted.universe_size} != number of values {n}")
        hits = corrupted.mask()[value_order(values, "asc")]
        found = np.concatenate([[0], np.cumsum(hits)]) / len(corrupted)
        xs = np.arange(n + 1) / n
        return Curve(xs=xs.tolist(), ys=found.tolist(), label=label)

    def random_values(self, n: int, seed: int) -> np.ndarray:
        """Seeded random scores; ordering by them is the random baseline."""
        return substream(seed, "workflow.random").random(n)

    # -------------------------------------------------- removal / addition

    def default_step(self, n: int) -> int:
        return max(1, n // 50)

    def removal_curve(
        self,
        train: Dataset,
        values: np.ndarray,
        order: Order,
        spec: LearnerSpec,
        heldout: Evaluator,
        step: Optional[int] = None,
        *,
        max_fraction: Optional[float] = None,
        valuation_eval: Optional[Evaluator] = None,
        workers: int = 1,
        label: Optional[str] = None,
    ) -> Curve:
        """Held-out score after removing sources in value order, ``step`` at a time."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape[0] != train.n:
            raise ValuationError(f"{values.shape[0]} values for {train.n} sources")
        step = self.default_step(train.n) if step is None else step
        if step < 1:
            raise ConfigError(f"step must be >= 1, got {step}")
        max_fraction = settings.curve_max_fraction if max_fraction is None else max_fraction
        ranked = value_order(values, order)
        counts = list(range(0, math.floor(max_fraction * train.n) + 1, step))

        metadata = self._overlap_metadata(heldout, valuation_eval)
        with Parallel(n_jobs=workers, backend=self.backend) as parallel:
            ys = parallel(delayed(_heldout_score)(spec, train, ranked[c:], heldout) for c in counts)
        curve = Curve(xs=[c / train.n for c in counts], ys=ys, label=label or f"remove_{order}", metadata=metadata)
        progress_logger.info(f"[removal {curve.label}] {len(counts)} refits, final score {ys[-1]:.4f}")
        return curve

    def addition_curve(
        self,
        base_train: Dataset,
        pool: Dataset,
        estimated_values: np.ndarray,
        order: Order,
        spec: LearnerSpec,
        heldout: Evaluator,
        step: Optional[int] = None,
        *,
        max_fraction: Optional[float] = None,
        valuation_eval: Optional[Evaluator] = None,
        workers: int = 1,
        label: Optional[str] = None,
    ) -> Curve:
        """Held-out score after adding pool points to the base set in estimated-value order."""
        estimated_values = np.asarray(estimated_values, dtype=np.float64)
        if estimated_values.shape[0] != pool.n:
            raise ValuationError(f"{estimated_values.shape[0]} estimates for a pool of {pool.n}")
        step = self.default_step(pool.n) if step is None else step
        if step < 1:
            raise ConfigError(f"step must be >= 1, got {step}")
        max_fraction = settings.curve_max_fraction if max_fraction is None else max_fraction
        combined = dataset_service.concat(base_train, pool)
        ranked = base_train.n + value_order(estimated_values, order)
        base_rows = np.arange(base_train.n)
        counts = list(range(0, math.floor(max_fraction * pool.n) + 1, step))

        metadata = self._overlap_metadata(heldout, valuation_eval)
        with Parallel(n_jobs=workers, backend=self.backend) as parallel:
            ys = parallel(
                delayed(_heldout_score)(spec, combined, np.concatenate([base_rows, ranked[:c]]), heldout) for c in counts
            )
        curve = Curve(xs=[c / pool.n for c in counts], ys=ys, label=label or f"add_{order}", metadata=metadata)
        progress_logger.info(f"[addition {curve.label}] {len(counts)} refits, final score {ys[-1]:.4f}")
        return curve

    @staticmethod
    def _overlap_metadata(heldout: Evaluator, valuation_eval: Optional[Evaluator]) -> dict:
        if valuation_eval is None:
            return {}
        shared = len(_row_keys(heldout.eval_set) & _row_keys(valuation_eval.eval_set))
        if shared:
            app_logger.warning(f"held-out set shares {shared} rows with the valuation evaluation set")
            return {"warnings": [f"heldout overlaps valuation eval set in {shared} rows"]}
        return {}

    # ----------------------------------------------------- value estimator

    def fit_value_estimator(
        self,
        train: Dataset,
        values: np.ndarray,
        kind: EstimatorKind | str = "knn_regressor",
        k: int = 5,
        max_depth: int = 5,
    ) -> ValueEstimator:
        """Regress value on (features ⊕ one-hot label)."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape[0] != train.n or not np.all(np.isfinite(values)):
            raise ValuationError("values must be finite and one per training point")
        if kind == "knn_regressor":
            regressor = KNeighborsRegressor(n_neighbors=min(k, train.n))
        elif kind == "decision_tree":
            regressor = DecisionTreeRegressor(max_depth=max_depth, random_state=0)
        else:
            raise ConfigError(f"value estimator kind unavailable: {kind}")
        regressor.fit(self._design(train, train.num_classes), values)
        return ValueEstimator(kind=kind, regressor=regressor, feature_dim=train.feature_dim, num_classes=train.num_classes)

    def estimate(self, est: ValueEstimator, pool: Dataset) -> np.ndarray:
        if pool.feature_dim != est.feature_dim:
            raise ValuationError(f"pool feature_dim {pool.feature_dim} != estimator feature_dim {est.feature_dim}")
        return np.asarray(est.regressor.predict(self._design(pool, est.num_classes)), dtype=np.float64)

    @staticmethod
    def _design(ds: Dataset, num_classes: int) -> np.ndarray:
        if ds.n and int(ds.labels.max()) >= num_classes:
            raise ValuationError(f"labels exceed the estimator's {num_classes} classes")
        return np.hstack([ds.features, np.eye(num_classes)[ds.labels]])

    # ------------------------------------------------------------ weights

    def adapt_reweight(self, values: np.ndarray) -> np.ndarray:
        """Zero for non-positive values, otherwise relative value scaled to mean 1 over positive sources."""
        values = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise ValuationError("values must be finite")
        positive = values > 0
        if not positive.any():
            raise ValuationError("no source has positive value")
        weights = np.zeros_like(values)
        weights[positive] = values[positive] / values[positive].sum() * positive.sum()
        return weights

    # -------------------------------------------------------- correlation

    def rank_correlation(self, values_a: Sequence[float], values_b: Sequence[float]) -> float:
        """Spearman rho with average ranks for ties; 0.0 when either side is constant."""
        a = np.asarray(values_a, dtype=np.float64)
        b = np.asarray(values_b, dtype=np.float64)
        if a.shape != b.shape:
            raise ValuationError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
        if a.shape[0] < 3:
            raise ValuationError("rank correlation needs at least 3 values")
        if np.all(a == a[0]) or np.all(b == b[0]):
            app_logger.warning("rank correlation undefined for a constant vector; reporting 0.0")
            return 0.0
        rho = float(spearmanr(a, b)[0])
        return float(np.clip(rho, -1.0, 1.0))


# Global instance
workflow_service = WorkflowService()
