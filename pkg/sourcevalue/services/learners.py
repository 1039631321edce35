"""Learner service: deterministic subset training, gradient steps and scoring."""

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import log_softmax, softmax

from sourcevalue.config import settings
from sourcevalue.exceptions import ConfigError, LearnerError
from sourcevalue.models.dataset import Dataset, LabeledPoint, SourceSet
from sourcevalue.models.learner import Evaluator, LearnerSpec, TrainedModel
from sourcevalue.utils.logger import app_logger
from sourcevalue.utils.rng import substream

PROBA_FLOOR = 1e-15
# Std of the random starting parameters for one-pass gradient training
GSHAPLEY_INIT_SCALE = 0.01


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


class LearnerService:
    """Implements the learning algorithm and the performance score."""

    # ------------------------------------------------------------------ fit

    def fit(
        self,
        spec: LearnerSpec,
        train: Dataset,
        subset: SourceSet | Sequence[int] | np.ndarray | None = None,
        weights: Optional[Sequence[float] | np.ndarray] = None,
    ) -> TrainedModel:
        """Train ``spec`` on ``train`` restricted to ``subset`` (all rows when None).

        Deterministic in its inputs. An empty subset yields the null model,
        which predicts the uniform distribution over classes.
        """
        idx = self._subset_indices(subset, train.n)
        w = self._check_weights(weights, idx.shape[0])
        K, d = train.num_classes, train.feature_dim
        if idx.shape[0] == 0:
            return TrainedModel(kind=spec.kind, num_classes=K, feature_dim=d, is_null=True)

        X = train.features[idx]
        y = train.labels[idx]
        if spec.kind == "logistic_regression":
            return self._fit_logistic(spec, X, y, w, K)
        if spec.kind == "naive_bayes":
            return self._fit_naive_bayes(spec, X, y, w, K)
        if spec.kind == "knn":
            return TrainedModel(
                kind="knn",
                num_classes=K,
                feature_dim=d,
                exemplars=_frozen(X.copy()),
                exemplar_labels=_frozen(y.copy()),
                exemplar_weights=_frozen(w.copy()),
                k=spec.hyperparams.k,
            )
        raise ConfigError(f"unknown learner kind: {spec.kind}")

    @staticmethod
    def _subset_indices(subset, n: int) -> np.ndarray:
        if subset is None:
            return np.arange(n, dtype=np.int64)
        if isinstance(subset, SourceSet):
            if subset.universe_size != n:
                raise LearnerError(f"subset universe {subset.universe_size} != dataset size {n}")
            return subset.as_array()
        return np.asarray(subset, dtype=np.int64)

    @staticmethod
    def _check_weights(weights, m: int) -> np.ndarray:
        if weights is None:
            return np.ones(m, dtype=np.float64)
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (m,):
            raise LearnerError(f"weight vector length {w.shape[0] if w.ndim else 0} != subset size {m}")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise LearnerError("weights must be finite and non-negative")
        if m and not np.any(w > 0):
            raise LearnerError("weights are all zero")
        return w

    def initial_model(
        self,
        spec: LearnerSpec,
        num_classes: int,
        feature_dim: int,
        rng: Optional[np.random.Generator] = None,
        scale: Optional[float] = None,
    ) -> TrainedModel:
        """Logistic starting point: zeros, or N(0, scale^2) drawn from ``rng`` (default: the fit_seed stream)."""
        scale = spec.hyperparams.init_scale if scale is None else scale
        coef = np.zeros((num_classes, feature_dim))
        intercept = np.zeros(num_classes)
        if scale > 0.0:
            rng = rng if rng is not None else substream(spec.fit_seed, "fit.init")
            coef = rng.normal(0.0, scale, size=coef.shape)
            intercept = rng.normal(0.0, scale, size=intercept.shape)
        return TrainedModel(
            kind="logistic_regression",
            num_classes=num_classes,
            feature_dim=feature_dim,
            coef=_frozen(coef),
            intercept=_frozen(intercept),
        )

    def _fit_logistic(self, spec: LearnerSpec, X: np.ndarray, y: np.ndarray, w: np.ndarray, K: int) -> TrainedModel:
        hp = spec.hyperparams
        start = self.initial_model(spec, K, X.shape[1])
        coef = start.coef.copy()
        intercept = start.intercept.copy()
        Y = np.eye(K)[y]
        s = w / w.sum()
        sX = X * s[:, None]
        for _ in range(hp.epochs):
            P = softmax(X @ coef.T + intercept, axis=1)
            R = P - Y
            grad_coef = R.T @ sX + hp.l2 * coef
            grad_intercept = s @ R
            coef -= hp.alpha * grad_coef
            intercept -= hp.alpha * grad_intercept
        return TrainedModel(
            kind="logistic_regression",
            num_classes=K,
            feature_dim=X.shape[1],
            coef=_frozen(coef),
            intercept=_frozen(intercept),
        )

    def _fit_naive_bayes(self, spec: LearnerSpec, X: np.ndarray, y: np.ndarray, w: np.ndarray, K: int) -> TrainedModel:
        # Gaussian class conditionals with a standard-normal pseudo-count prior of weight `smoothing`
        a = spec.hyperparams.smoothing
        d = X.shape[1]
        Y = np.eye(K)[y] * w[:, None]
        counts = Y.sum(axis=0)
        denom = counts + a
        means = (Y.T @ X) / denom[:, None]
        sq = np.zeros((K, d))
        for c in range(K):
            diff = X - means[c]
            sq[c] = Y[:, c] @ (diff * diff)
        variances = (sq + a) / denom[:, None]
        log_prior = np.log(denom / (w.sum() + K * a))
        return TrainedModel(
            kind="naive_bayes",
            num_classes=K,
            feature_dim=d,
            class_log_prior=_frozen(log_prior),
            means=_frozen(means),
            variances=_frozen(variances),
        )

    # ------------------------------------------------------------- predict

    def predict_log_proba(self, model: TrainedModel, features: np.ndarray) -> np.ndarray:
        X = np.asarray(features, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != model.feature_dim:
            raise LearnerError(f"feature dim mismatch: model expects {model.feature_dim}, got {X.shape[1]}")
        K = model.num_classes
        if model.is_null:
            return np.full((X.shape[0], K), -math.log(K))
        if model.kind == "logistic_regression":
            return log_softmax(X @ model.coef.T + model.intercept, axis=1)
        if model.kind == "naive_bayes":
            joint = np.empty((X.shape[0], K))
            for c in range(K):
                var = model.variances[c]
                joint[:, c] = model.class_log_prior[c] - 0.5 * (
                    np.sum(np.log(2.0 * np.pi * var)) + np.sum((X - model.means[c]) ** 2 / var, axis=1)
                )
            return log_softmax(joint, axis=1)
        return np.log(np.clip(self._knn_proba(model, X), PROBA_FLOOR, 1.0))

    def predict_proba(self, model: TrainedModel, features: np.ndarray) -> np.ndarray:
        if model.kind == "knn" and not model.is_null:
            X = np.asarray(features, dtype=np.float64)
            X = X[None, :] if X.ndim == 1 else X
            if X.shape[1] != model.feature_dim:
                raise LearnerError(f"feature dim mismatch: model expects {model.feature_dim}, got {X.shape[1]}")
            return self._knn_proba(model, X)
        return np.exp(self.predict_log_proba(model, features))

    def predict(self, model: TrainedModel, features: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(model, features), axis=1)

    @staticmethod
    def _knn_proba(model: TrainedModel, X: np.ndarray) -> np.ndarray:
        m = model.exemplars.shape[0]
        k = min(model.k, m)
        dist = cdist(X, model.exemplars, metric="sqeuclidean")
        # stable sort: equidistant exemplars are taken in index order
        nbr = np.argsort(dist, axis=1, kind="stable")[:, :k]
        votes = np.zeros((X.shape[0], model.num_classes))
        rows = np.repeat(np.arange(X.shape[0]), k)
        np.add.at(votes, (rows, model.exemplar_labels[nbr].ravel()), model.exemplar_weights[nbr].ravel())
        totals = votes.sum(axis=1, keepdims=True)
        uniform = np.full_like(votes, 1.0 / model.num_classes)
        return np.where(totals > 0, votes / np.where(totals > 0, totals, 1.0), uniform)

    # ------------------------------------------------------------ gradients

    def _require_differentiable(self, model: TrainedModel) -> TrainedModel:
        if model.kind != "logistic_regression":
            raise LearnerError(f"{model.kind} is not differentiable")
        if model.is_null:
            return self.initial_model(LearnerSpec(), model.num_classes, model.feature_dim, scale=0.0)
        return model

    def point_loss(self, model: TrainedModel, point: LabeledPoint) -> float:
        """Cross-entropy of a single point."""
        model = self._require_differentiable(model)
        return float(-self.predict_log_proba(model, point.features)[0, point.label])

    def point_gradient(self, model: TrainedModel, point: LabeledPoint) -> np.ndarray:
        """Gradient of the single-point cross-entropy, laid out like ``model.theta``."""
        model = self._require_differentiable(model)
        p = softmax(model.coef @ point.features + model.intercept)
        r = p.copy()
        r[point.label] -= 1.0
        return np.concatenate([np.outer(r, point.features).ravel(), r])

    def with_theta(self, model: TrainedModel, theta: np.ndarray) -> TrainedModel:
        K, d = model.num_classes, model.feature_dim
        theta = np.asarray(theta, dtype=np.float64)
        return TrainedModel(
            kind="logistic_regression",
            num_classes=K,
            feature_dim=d,
            coef=_frozen(theta[: K * d].reshape(K, d).copy()),
            intercept=_frozen(theta[K * d:].copy()),
        )

    def gradient_step(self, model: TrainedModel, point: LabeledPoint, alpha: float) -> TrainedModel:
        """theta' = theta - alpha * grad L(point; theta); the input model is unchanged."""
        if alpha < 0:
            raise LearnerError(f"alpha must be non-negative, got {alpha}")
        model = self._require_differentiable(model)
        return self.with_theta(model, model.theta - alpha * self.point_gradient(model, point))

    # ------------------------------------------------------------- scoring

    def evaluate(self, model: TrainedModel, ev: Evaluator) -> Tuple[float, Optional[np.ndarray]]:
        """Score ``model`` on the evaluator's set; per-point scores average to the score."""
        score, per_point = self._score(model, ev)
        return score, (per_point if ev.per_point else None)

    def _score(self, model: TrainedModel, ev: Evaluator) -> Tuple[float, np.ndarray]:
        data = ev.eval_set
        if data.feature_dim != model.feature_dim:
            raise LearnerError(f"feature dim mismatch: model {model.feature_dim}, eval set {data.feature_dim}")
        if data.num_classes > model.num_classes:
            raise LearnerError(f"eval set has {data.num_classes} classes, model has {model.num_classes}")
        if model.is_null:
            # analytic uniform-predictor score, no tie-breaking draw
            return ev.null_score, np.full(data.n, ev.null_score)
        if ev.metric == "accuracy":
            per_point = (self.predict(model, data.features) == data.labels).astype(np.float64)
        else:
            log_p = self.predict_log_proba(model, data.features)
            per_point = np.maximum(log_p[np.arange(data.n), data.labels], math.log(PROBA_FLOOR))
        return float(per_point.mean()), per_point

    def bootstrap_tolerance(
        self,
        model: TrainedModel,
        ev: Evaluator,
        B: Optional[int] = None,
        multiplier: Optional[float] = None,
        seed: int = 0,
    ) -> float:
        """multiplier x std of the score over B with-replacement resamples of the eval set."""
        B = settings.bootstrap_samples if B is None else B
        multiplier = settings.bootstrap_multiplier if multiplier is None else multiplier
        if B < 2:
            raise ConfigError(f"bootstrap needs B >= 2, got {B}")
        if multiplier <= 0:
            raise ConfigError(f"bootstrap multiplier must be > 0, got {multiplier}")
        _, per_point = self._score(model, ev)
        m = per_point.shape[0]
        idx = substream(seed, "bootstrap").integers(0, m, size=(B, m))
        scores = per_point[idx].mean(axis=1)
        tolerance = multiplier * float(np.std(scores, ddof=1))
        app_logger.debug(f"Bootstrap tolerance over B={B}: {tolerance:.6f}")
        return tolerance

    # --------------------------------------------------------- alpha search

    def one_pass_score(self, spec: LearnerSpec, train: Dataset, ev: Evaluator, alpha: float, seed: int) -> float:
        """Score after a single pass of single-point gradient steps in a seeded order."""
        model = self.initial_model(
            spec,
            train.num_classes,
            train.feature_dim,
            rng=substream(seed, "gshapley.search.init"),
            scale=spec.hyperparams.init_scale or GSHAPLEY_INIT_SCALE,
        )
        for i in substream(seed, "gshapley.search").permutation(train.n):
            model = self.gradient_step(model, train.point(int(i)), alpha)
        return self._score(model, ev)[0]

    def search_gshapley_alpha(
        self,
        train: Dataset,
        spec: LearnerSpec,
        ev: Evaluator,
        grid: Sequence[float],
        seed: int = 0,
    ) -> Tuple[float, List[float]]:
        """Pick the step size whose one-pass model scores best (first wins ties)."""
        if not spec.differentiable:
            raise LearnerError(f"{spec.kind} is not differentiable")
        if not grid:
            raise ConfigError("alpha grid is empty")
        scores = [self.one_pass_score(spec, train, ev, float(a), seed) for a in grid]
        best = float(grid[int(np.argmax(scores))])
        app_logger.info(f"G-Shapley alpha search: best alpha={best} over grid {list(grid)}")
        return best, scores


# Global instance
learner_service = LearnerService()
