"""Valuation service: exact, Monte Carlo, truncated, gradient and group Shapley values, plus LOO."""

import math
from collections import deque
from typing import Callable, Deque, List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from sourcevalue.config import settings
from sourcevalue.exceptions import ConfigError, LearnerError, ValuationError
from sourcevalue.models.dataset import Dataset
from sourcevalue.models.learner import Evaluator, LearnerSpec
from sourcevalue.models.valuation import PermutationRecord, ValuationConfig, ValuationResult
from sourcevalue.services.learners import GSHAPLEY_INIT_SCALE, learner_service
from sourcevalue.services.utility import ModelUtility, Utility
from sourcevalue.utils.logger import app_logger, progress_logger
from sourcevalue.utils.rng import substream

# Number of work units the 2^n exact subsets are split into, independent of worker count
EXACT_CHUNKS = 64
RELATIVE_EPS = 1e-12


def has_converged(history: Sequence[np.ndarray], threshold: float, window: int) -> bool:
    """True iff the mean relative change of every source over the last ``window`` snapshots is below ``threshold``."""
    if window < 1:
        raise ConfigError(f"convergence window must be >= 1, got {window}")
    if len(history) < window + 1:
        return False
    current = np.asarray(history[-1], dtype=np.float64)
    previous = np.asarray(history[-1 - window], dtype=np.float64)
    change = np.abs(current - previous) / (np.abs(current) + RELATIVE_EPS)
    return bool(np.mean(change) < threshold)


def _scan_permutation(
    utility: Utility,
    iteration: int,
    seed: int,
    tolerance: float,
    fraction: Optional[float],
    v_full: float,
) -> PermutationRecord:
    n = utility.n_players
    permutation = substream(seed, "permutation", iteration).permutation(n)
    limit = n if fraction is None else min(n, math.ceil(fraction * n))
    marginals = np.zeros(n)
    v_prev = utility.null_score
    position = n
    for j in range(n):
        if j >= limit or abs(v_full - v_prev) < tolerance:
            position = j
            break
        v = utility(permutation[: j + 1])
        marginals[j] = v - v_prev
        v_prev = v
    return PermutationRecord(iteration=iteration, permutation=permutation, marginals=marginals, truncation_position=position)


def _gradient_scan(
    train: Dataset,
    spec: LearnerSpec,
    ev: Evaluator,
    iteration: int,
    seed: int,
    alpha: float,
) -> PermutationRecord:
    n = train.n
    rng = substream(seed, "gshapley", iteration)
    permutation = rng.permutation(n)
    model = learner_service.initial_model(
        spec,
        train.num_classes,
        train.feature_dim,
        rng=rng,
        scale=spec.hyperparams.init_scale or GSHAPLEY_INIT_SCALE,
    )
    v_start = v_prev = learner_service.evaluate(model, ev)[0]
    marginals = np.zeros(n)
    for j in range(n):
        model = learner_service.gradient_step(model, train.point(int(permutation[j])), alpha)
        v = learner_service.evaluate(model, ev)[0]
        marginals[j] = v - v_prev
        v_prev = v
    return PermutationRecord(
        iteration=iteration, permutation=permutation, marginals=marginals, truncation_position=n, start_score=v_start
    )


def _score_masks(utility: Utility, masks: np.ndarray) -> np.ndarray:
    bits = np.arange(utility.n_players)
    return np.array([utility(bits[((int(m) >> bits) & 1).astype(bool)]) for m in masks], dtype=np.float64)


def _score_without(utility: Utility, player: int) -> float:
    players = np.arange(utility.n_players)
    return utility(players[players != player])


class ValuationService:
    """Computes per-source values for a training set."""

    def __init__(self):
        self.backend = settings.parallel_backend
        self.exact_max_players = settings.exact_max_players

    def _parallel(self, workers: int) -> Parallel:
        return Parallel(n_jobs=workers, backend=self.backend)

    @staticmethod
    def _utility(train, spec, ev, utility: Optional[Utility], by_group: bool = False) -> Utility:
        if utility is not None:
            return utility
        if train is None or spec is None or ev is None:
            raise ConfigError("train, spec and ev are required when no utility is given")
        return ModelUtility(train, spec, ev, by_group=by_group)

    # ---------------------------------------------------------------- exact

    def exact_shapley(
        self,
        train: Optional[Dataset] = None,
        spec: Optional[LearnerSpec] = None,
        ev: Optional[Evaluator] = None,
        *,
        utility: Optional[Utility] = None,
        workers: int = 1,
        by_group: bool = False,
    ) -> ValuationResult:
        """Enumerate all 2^n coalitions once and apply the permutation-normalized Shapley weights."""
        utility = self._utility(train, spec, ev, utility, by_group)
        n = utility.n_players
        if n > self.exact_max_players:
            raise ConfigError(f"exact Shapley needs n <= {self.exact_max_players} players, got {n}")
        if n < 1:
            raise ConfigError("exact Shapley needs at least one player")

        masks = np.arange(1 << n, dtype=np.int64)
        chunks = [c for c in np.array_split(masks, min(EXACT_CHUNKS, masks.shape[0])) if c.size]
        app_logger.info(f"Exact Shapley over {masks.shape[0]} coalitions ({n} players)")
        with self._parallel(workers) as parallel:
            scores = np.concatenate(parallel(delayed(_score_masks)(utility, c) for c in chunks))

        sizes = np.zeros_like(masks)
        for b in range(n):
            sizes += (masks >> b) & 1
        # weight of a coalition of size s not containing i: 1 / (n * C(n-1, s))
        weight_by_size = np.array([1.0 / (n * math.comb(n - 1, s)) for s in range(n)])

        values = np.zeros(n)
        for i in range(n):
            without = masks[((masks >> i) & 1) == 0]
            diff = scores[without | (1 << i)] - scores[without]
            values[i] = float(np.sum(weight_by_size[sizes[without]] * diff))

        return ValuationResult(
            method="exact",
            values=values,
            converged=True,
            v_full=float(scores[-1]),
            v_null=float(scores[0]),
        )

    # ---------------------------------------------------------- monte carlo

    def mc_shapley(
        self,
        train: Optional[Dataset],
        spec: Optional[LearnerSpec],
        ev: Optional[Evaluator],
        config: ValuationConfig,
        *,
        utility: Optional[Utility] = None,
        by_group: bool = False,
    ) -> ValuationResult:
        """Untruncated permutation sampling."""
        utility = self._utility(train, spec, ev, utility, by_group)
        return self._monte_carlo(utility, config, "mc", tolerance=0.0, fraction=None)

    def tmc_shapley(
        self,
        train: Optional[Dataset],
        spec: Optional[LearnerSpec],
        ev: Optional[Evaluator],
        config: ValuationConfig,
        *,
        utility: Optional[Utility] = None,
        by_group: bool = False,
    ) -> ValuationResult:
        """Permutation sampling that stops scanning once the prefix score is within tolerance of V(D)."""
        utility = self._utility(train, spec, ev, utility, by_group)
        return self._monte_carlo(
            utility,
            config,
            "tmc",
            tolerance=config.truncation_tolerance,
            fraction=config.truncation_fraction,
        )

    def _monte_carlo(
        self,
        utility: Utility,
        config: ValuationConfig,
        method: str,
        tolerance: float,
        fraction: Optional[float],
    ) -> ValuationResult:
        v_full = utility.full_score
        v_null = utility.null_score
        app_logger.info(
            f"{method}: n={utility.n_players}, V(D)={v_full:.6f}, V(empty)={v_null:.6f}, tolerance={tolerance}"
        )

        def scan(t: int):
            return delayed(_scan_permutation)(utility, t, config.seed, tolerance, fraction, v_full)

        result = self._iterate(scan, utility.n_players, config, method, v_full, v_null)
        if tolerance > 0 and not any(result.truncation_positions):
            app_logger.warning(
                f"{method}: every permutation truncated at position 0 (|V(D) - V(empty)| = {abs(v_full - v_null):.6f} "
                f"< tolerance {tolerance}); all values are 0"
            )
        return result

    def _iterate(
        self,
        scan: Callable[[int], object],
        n: int,
        config: ValuationConfig,
        method: str,
        v_full: float,
        v_null: float,
    ) -> ValuationResult:
        """Run permutation work units in windows of W, reducing in ascending iteration order."""
        W = config.convergence_window
        phi = np.zeros(n)
        recent: Deque[np.ndarray] = deque(maxlen=W + 1)
        history: List[np.ndarray] = []
        history_iterations: List[int] = []
        truncations: List[int] = []
        start_scores: List[float] = []
        t = 0
        converged = False

        with self._parallel(config.workers) as parallel:
            while t < config.max_permutations and not converged:
                batch = range(t + 1, min(t + W, config.max_permutations) + 1)
                for record in parallel(scan(it) for it in batch):
                    t = record.iteration
                    phi += (record.by_source() - phi) / t
                    recent.append(phi.copy())
                    truncations.append(record.truncation_position)
                    if record.start_score is not None:
                        start_scores.append(record.start_score)
                if config.record_history:
                    history.append(phi.copy())
                    history_iterations.append(t)
                converged = has_converged(recent, config.convergence_threshold, W)
                progress_logger.info(
                    f"[{method}] iteration {t}/{config.max_permutations} "
                    f"mean scan depth {np.mean(truncations[-len(batch):]):.1f}/{n} converged={converged}"
                )

        if start_scores:
            v_null = float(np.mean(start_scores))

        return ValuationResult(
            method=method,
            seed=config.seed,
            values=phi,
            permutations_used=t,
            converged=converged,
            v_full=v_full,
            v_null=v_null,
            history=history if config.record_history else None,
            history_iterations=history_iterations if config.record_history else None,
            truncation_positions=truncations,
        )

    # ------------------------------------------------------------ gradient

    def g_shapley(self, train: Dataset, spec: LearnerSpec, ev: Evaluator, config: ValuationConfig) -> ValuationResult:
        """One-pass gradient approximation: each prefix model is the previous one plus one point's step.

        ``v_null`` of the result is the mean score of the random initial models the scans start from.
        """
        if not spec.differentiable:
            raise LearnerError(f"G-Shapley needs a differentiable learner, got {spec.kind}")
        if config.alpha is None:
            raise ConfigError("G-Shapley needs alpha; run the alpha grid search first")
        v_full = ModelUtility(train, spec, ev).full_score
        app_logger.info(f"gshapley: n={train.n}, alpha={config.alpha}")

        def scan(t: int):
            return delayed(_gradient_scan)(train, spec, ev, t, config.seed, config.alpha)

        return self._iterate(scan, train.n, config, "gshapley", v_full, ev.null_score)

    # --------------------------------------------------------------- group

    def group_shapley(self, train: Dataset, spec: LearnerSpec, ev: Evaluator, config: ValuationConfig) -> ValuationResult:
        """Shapley values where each player is a whole group of rows."""
        if train.groups is None:
            raise ValuationError("group valuation requires a dataset with groups")
        utility = ModelUtility(train, spec, ev, by_group=True)
        if config.method == "exact":
            result = self.exact_shapley(utility=utility, workers=config.workers)
        elif config.method == "mc":
            result = self.mc_shapley(None, None, None, config, utility=utility)
        elif config.method == "tmc":
            result = self.tmc_shapley(None, None, None, config, utility=utility)
        else:
            raise ConfigError(f"group valuation supports exact, mc and tmc, got {config.method}")
        return result.model_copy(update={"method": f"group_{result.method}", "seed": config.seed})

    # ----------------------------------------------------------------- loo

    def loo_values(
        self,
        train: Optional[Dataset] = None,
        spec: Optional[LearnerSpec] = None,
        ev: Optional[Evaluator] = None,
        *,
        utility: Optional[Utility] = None,
        workers: int = 1,
    ) -> ValuationResult:
        """phi_i = V(D) - V(D - {i}); n + 1 fits."""
        utility = self._utility(train, spec, ev, utility)
        n = utility.n_players
        if n < 2:
            raise ConfigError(f"leave-one-out needs n >= 2, got {n}")
        v_full = utility.full_score
        with self._parallel(workers) as parallel:
            without = np.array(parallel(delayed(_score_without)(utility, i) for i in range(n)))
        return ValuationResult(
            method="loo",
            values=v_full - without,
            converged=True,
            v_full=v_full,
            v_null=utility.null_score,
        )

    # ------------------------------------------------------------- helpers

    def calibrate_tolerance(
        self,
        train: Dataset,
        spec: LearnerSpec,
        ev: Evaluator,
        depth_fraction: float,
        probes: int = 10,
        seed: int = 0,
    ) -> float:
        """Median gap |V(D) - V(prefix)| at a target scan depth over seeded probe permutations."""
        if not 0.0 < depth_fraction <= 1.0:
            raise ConfigError(f"depth_fraction must lie in (0, 1], got {depth_fraction}")
        if probes < 1:
            raise ConfigError(f"probes must be >= 1, got {probes}")
        utility = ModelUtility(train, spec, ev)
        depth = max(1, math.ceil(depth_fraction * train.n))
        gaps = [
            abs(utility.full_score - utility(substream(seed, "calibrate", p).permutation(train.n)[:depth]))
            for p in range(probes)
        ]
        tolerance = float(np.median(gaps))
        app_logger.info(f"Calibrated tolerance {tolerance:.6f} for depth {depth}/{train.n}")
        return tolerance

    def value(self, train: Dataset, spec: LearnerSpec, ev: Evaluator, config: ValuationConfig) -> ValuationResult:
        """Dispatch on ``config.method``."""
        if config.method == "exact":
            result = self.exact_shapley(train, spec, ev, workers=config.workers)
        elif config.method == "mc":
            result = self.mc_shapley(train, spec, ev, config)
        elif config.method == "tmc":
            result = self.tmc_shapley(train, spec, ev, config)
        elif config.method == "gshapley":
            result = self.g_shapley(train, spec, ev, config)
        else:
            result = self.loo_values(train, spec, ev, workers=config.workers)
        return result.model_copy(update={"seed": config.seed})


# Global instance
valuation_service = ValuationService()
