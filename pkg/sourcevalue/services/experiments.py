"""Experiment drivers: label-flip and noise inspection, removal, acquisition, adaptation, comparisons."""

import math
from typing import Callable, Dict, List, Tuple

import numpy as np

from sourcevalue.exceptions import ConfigError, ValuationError
from sourcevalue.models.dataset import Dataset
from sourcevalue.models.learner import Evaluator, LearnerSpec
from sourcevalue.models.run_config import RunConfig, SyntheticSource
from sourcevalue.models.valuation import ValuationConfig, ValuationResult
from sourcevalue.models.workflow import Curve, ExperimentReport
from sourcevalue.services.dataset import dataset_service
from sourcevalue.services.learners import learner_service
from sourcevalue.services.valuation import valuation_service
from sourcevalue.services.workflows import workflow_service
from sourcevalue.utils.logger import app_logger, progress_logger
from sourcevalue.utils.rng import substream

EXPERIMENTS = ("flip", "noise", "removal", "addition", "adapt", "compare", "truncation")
REPORT_FRACTION = 0.2


class RunData:
    """Datasets and evaluators shared by one run."""

    def __init__(self, dataset: Dataset, train: Dataset, valuation_eval: Evaluator, heldout: Evaluator):
        self.dataset = dataset
        self.train = train
        self.valuation_eval = valuation_eval
        self.heldout = heldout

    def digests(self) -> Dict[str, str]:
        return {
            "dataset": dataset_service.dataset_digest(self.dataset),
            "train": dataset_service.dataset_digest(self.train),
            "valuation_eval": dataset_service.dataset_digest(self.valuation_eval.eval_set),
            "heldout": dataset_service.dataset_digest(self.heldout.eval_set),
        }


class ExperimentService:
    """Builds datasets from a run config and drives the experiments."""

    # ---------------------------------------------------------------- setup

    def load_dataset(self, config: RunConfig) -> Dataset:
        source = config.dataset
        if isinstance(source, SyntheticSource):
            return dataset_service.generate_synthetic(source.n, source.dim, source.relation, config.seed)
        return dataset_service.load_csv(source.path, source.label_column, source.group_column)

    def prepare(self, config: RunConfig) -> RunData:
        dataset = self.load_dataset(config)
        split = config.split
        train, val, held = dataset_service.split_dataset(dataset, (split.train, split.valuation_eval, split.heldout), config.seed)
        return RunData(
            dataset,
            train,
            Evaluator(eval_set=val, metric=config.metric),
            Evaluator(eval_set=held, metric=config.metric),
        )

    def valuation_config(self, config: RunConfig, train: Dataset, spec: LearnerSpec, ev: Evaluator, method: str) -> ValuationConfig:
        """The run's valuation settings for ``method``, with a bootstrap tolerance and a searched alpha filled in."""
        vc = config.valuation.model_copy(update={"method": method})
        if method == "tmc" and vc.truncation_tolerance == 0.0 and config.use_bootstrap_tolerance:
            model = learner_service.fit(spec, train)
            tolerance = learner_service.bootstrap_tolerance(
                model, ev, config.bootstrap_samples, config.bootstrap_multiplier, config.seed
            )
            gap = abs(learner_service.evaluate(model, ev)[0] - ev.null_score)
            if gap < tolerance:
                app_logger.warning(
                    f"|V(D) - V(empty)| = {gap:.6f} is below the bootstrap tolerance {tolerance:.6f}; "
                    "running tmc without tolerance truncation"
                )
            else:
                vc = vc.model_copy(update={"truncation_tolerance": tolerance})
        if method == "gshapley" and vc.alpha is None:
            alpha, _ = learner_service.search_gshapley_alpha(train, spec, ev, vc.alpha_grid, config.seed)
            vc = vc.model_copy(update={"alpha": alpha})
        return vc

    def value(self, config: RunConfig, train: Dataset, spec: LearnerSpec, ev: Evaluator, method: str) -> ValuationResult:
        vc = self.valuation_config(config, train, spec, ev, method)
        progress_logger.info(f"Valuing {train.n} sources with {method}")
        return valuation_service.value(train, spec, ev, vc)

    def run(self, which: str, config: RunConfig, data: RunData) -> ExperimentReport:
        drivers: Dict[str, Callable[[RunConfig, RunData], ExperimentReport]] = {
            "flip": self.run_flip,
            "noise": self.run_noise,
            "removal": self.run_removal,
            "addition": self.run_addition,
            "adapt": self.run_adapt,
            "compare": self.run_compare,
            "truncation": self.run_truncation,
        }
        if which not in drivers:
            raise ConfigError(f"unknown experiment '{which}', expected one of {', '.join(EXPERIMENTS)}")
        app_logger.info(f"Running experiment '{which}'")
        return drivers[which](config, data)

    @staticmethod
    def _marks(curve: Curve, marks) -> Dict[str, float]:
        return {f"{m:g}": curve.y_at(m) for m in marks}

    # ------------------------------------------------------- inspection

    def run_flip(self, config: RunConfig, data: RunData) -> ExperimentReport:
        """Flip a fraction of training labels and measure how fast each method surfaces them."""
        exp = config.experiment
        flipped, report = dataset_service.flip_labels(data.train, exp.flip_fraction, config.seed)
        methods = ["tmc", "loo"]
        if config.learner.differentiable:
            methods.insert(1, "gshapley")

        values: Dict[str, np.ndarray] = {m: self.value(config, flipped, config.learner, data.valuation_eval, m).values for m in methods}
        values["random"] = workflow_service.random_values(flipped.n, config.seed)

        curves = [workflow_service.inspection_curve(v, report.affected, label=m) for m, v in values.items()]
        return ExperimentReport(
            name="flip",
            summary={
                "n_train": flipped.n,
                "n_flipped": len(report.affected),
                "detection": {c.label: self._marks(c, exp.inspection_marks) for c in curves},
            },
            curves=curves,
            values={m: v.tolist() for m, v in values.items()},
        )

    def run_noise(self, config: RunConfig, data: RunData) -> ExperimentReport:
        """Add white noise to a fraction of points at several levels; compare noisy and clean mean values."""
        exp = config.experiment
        per_sigma = {}
        curves = []
        gaps = []
        for sigma in exp.noise_sigmas:
            noisy, report = dataset_service.add_feature_noise(data.train, exp.noise_fraction, sigma, config.seed)
            values = self.value(config, noisy, config.learner, data.valuation_eval, "tmc").values
            mask = report.affected.mask()
            gap = float(values[~mask].mean() - values[mask].mean())
            gaps.append(gap)
            per_sigma[f"{sigma:g}"] = {
                "noisy_mean": float(values[mask].mean()),
                "clean_mean": float(values[~mask].mean()),
                "gap": gap,
            }
            curves.append(workflow_service.inspection_curve(values, report.affected, label=f"sigma={sigma:g}"))
        summary = {"per_sigma": per_sigma}
        if len(gaps) >= 3:
            summary["gap_vs_sigma_spearman"] = workflow_service.rank_correlation(exp.noise_sigmas, gaps)
        return ExperimentReport(name="noise", summary=summary, curves=curves)

    # ------------------------------------------------- removal / addition

    def run_removal(self, config: RunConfig, data: RunData) -> ExperimentReport:
        """Remove training points by value and track the held-out score."""
        exp = config.experiment
        tmc = self.value(config, data.train, config.learner, data.valuation_eval, "tmc").values
        loo = self.value(config, data.train, config.learner, data.valuation_eval, "loo").values
        rand = workflow_service.random_values(data.train.n, config.seed)
        plan = [("tmc_desc", tmc, "desc"), ("tmc_asc", tmc, "asc"), ("loo_desc", loo, "desc"), ("random", rand, "desc")]
        curves = [
            workflow_service.removal_curve(
                data.train,
                v,
                order,
                config.learner,
                data.heldout,
                exp.curve_step,
                max_fraction=exp.curve_max_fraction,
                valuation_eval=data.valuation_eval,
                workers=config.valuation.workers,
                label=label,
            )
            for label, v, order in plan
        ]
        return ExperimentReport(
            name="removal",
            summary={
                "baseline_score": curves[0].ys[0],
                f"score_at_{REPORT_FRACTION:g}_removed": {c.label: c.y_at(REPORT_FRACTION) for c in curves},
                "warnings": curves[0].metadata.get("warnings", []),
            },
            curves=curves,
            values={"tmc": tmc.tolist(), "loo": loo.tolist()},
        )

    def run_addition(self, config: RunConfig, data: RunData) -> ExperimentReport:
        """Value a base set, learn a value estimator, then acquire pool points by estimated value."""
        exp = config.experiment
        order = substream(config.seed, "addition.pool").permutation(data.train.n)
        n_pool = int(math.floor(exp.pool_fraction * data.train.n))
        if n_pool < 1 or n_pool >= data.train.n:
            raise ConfigError(f"pool_fraction {exp.pool_fraction} leaves an empty base or pool")
        pool = dataset_service.subset(data.train, order[:n_pool])
        base = dataset_service.subset(data.train, order[n_pool:])

        base_values = self.value(config, base, config.learner, data.valuation_eval, "tmc").values
        estimator = workflow_service.fit_value_estimator(base, base_values, exp.estimator, exp.estimator_k, exp.estimator_max_depth)
        estimates = workflow_service.estimate(estimator, pool)
        rand = workflow_service.random_values(pool.n, config.seed)
        plan = [("add_desc", estimates, "desc"), ("add_asc", estimates, "asc"), ("random", rand, "desc")]
        curves = [
            workflow_service.addition_curve(
                base,
                pool,
                v,
                o,
                config.learner,
                data.heldout,
                exp.curve_step,
                max_fraction=exp.curve_max_fraction,
                valuation_eval=data.valuation_eval,
                workers=config.valuation.workers,
                label=label,
            )
            for label, v, o in plan
        ]
        return ExperimentReport(
            name="addition",
            summary={
                "base_score": curves[0].ys[0],
                "n_base": base.n,
                "n_pool": pool.n,
                f"score_at_{REPORT_FRACTION:g}_added": {c.label: c.y_at(REPORT_FRACTION) for c in curves},
            },
            curves=curves,
            values={"base": base_values.tolist(), "pool_estimates": estimates.tolist()},
        )

    # ---------------------------------------------------------- adaptation

    def adaptation_data(self, config: RunConfig) -> Tuple[Dataset, Evaluator, Evaluator]:
        """Contaminated source for training, clean target split into valuation and held-out evaluators."""
        source_cfg = config.dataset
        if not isinstance(source_cfg, SyntheticSource):
            raise ConfigError("the adapt experiment builds its own covariate-shift pair and needs a synthetic dataset")
        exp = config.experiment
        split = config.split
        n_source = max(2, int(math.floor(split.train * source_cfg.n)))
        n_target = max(4, source_cfg.n - n_source)
        source, target = dataset_service.make_covariate_shift_pair(
            n_source,
            n_target,
            source_cfg.dim,
            source_cfg.relation,
            exp.adapt_shift,
            exp.adapt_contamination,
            config.seed,
        )
        share = split.valuation_eval / (split.valuation_eval + split.heldout)
        n_val = min(max(1, int(math.floor(share * n_target))), n_target - 1)
        val = dataset_service.subset(target, np.arange(n_val))
        held = dataset_service.subset(target, np.arange(n_val, n_target))
        return source, Evaluator(eval_set=val, metric=config.metric), Evaluator(eval_set=held, metric=config.metric)

    def run_adapt(self, config: RunConfig, data: RunData) -> ExperimentReport:
        """Value source points against the target, drop negatives and reweight by relative value."""
        source, target_val, target_held = self.adaptation_data(config)
        spec = config.learner
        values = self.value(config, source, spec, target_val, "tmc").values
        warnings: List[str] = []
        try:
            weights = workflow_service.adapt_reweight(values)
        except ValuationError as exc:
            app_logger.warning(f"[adapt] {exc}; keeping every source at weight 1")
            warnings.append(f"no reweighting applied: {exc}")
            weights = np.ones(source.n)
        keep = np.flatnonzero(weights > 0)

        baseline = learner_service.evaluate(learner_service.fit(spec, source), target_held)[0]
        if warnings:
            dropped = reweighted = baseline
        else:
            dropped = learner_service.evaluate(learner_service.fit(spec, source, keep), target_held)[0]
            reweighted = learner_service.evaluate(learner_service.fit(spec, source, keep, weights[keep]), target_held)[0]
        contaminated = np.asarray(source.metadata.get("contaminated", []), dtype=np.int64)
        progress_logger.info(f"[adapt] baseline {baseline:.4f} -> reweighted {reweighted:.4f}")
        summary = {
            "baseline_score": baseline,
            "dropped_score": dropped,
            "reweighted_score": reweighted,
            "n_source": source.n,
            "n_dropped": int(source.n - keep.shape[0]),
            "contaminated_dropped": int(np.sum(weights[contaminated] == 0)) if contaminated.size else 0,
        }
        if warnings:
            summary["warnings"] = warnings
        return ExperimentReport(
            name="adapt",
            summary=summary,
            values={"tmc": values.tolist(), "weights": weights.tolist()},
        )

    # -------------------------------------------------------- comparisons

    def run_compare(self, config: RunConfig, data: RunData) -> ExperimentReport:
        """Group values under each learner kind and their pairwise Spearman correlations."""
        exp = config.experiment
        train = data.train
        if train.groups is None:
            train = dataset_service.assign_groups(train, exp.num_groups, config.seed)
        method = config.valuation.method if config.valuation.method in ("exact", "mc", "tmc") else "tmc"

        group_values: Dict[str, np.ndarray] = {}
        for kind in exp.compare_kinds:
            spec = config.learner.model_copy(update={"kind": kind})
            vc = self.valuation_config(config, train, spec, data.valuation_eval, method)
            progress_logger.info(f"[compare] valuing {train.num_groups} groups with {kind}")
            group_values[kind] = valuation_service.group_shapley(train, spec, data.valuation_eval, vc).values

        kinds = list(group_values)
        matrix = [[workflow_service.rank_correlation(group_values[a], group_values[b]) for b in kinds] for a in kinds]
        return ExperimentReport(
            name="compare",
            summary={"kinds": kinds, "num_groups": train.num_groups, "method": method, "spearman": matrix},
            values={k: v.tolist() for k, v in group_values.items()},
        )

    def run_truncation(self, config: RunConfig, data: RunData) -> ExperimentReport:
        """Positional truncation levels against untruncated values under a shared seed."""
        exp = config.experiment
        base = config.valuation.model_copy(update={"method": "mc", "truncation_tolerance": 0.0, "truncation_fraction": None})
        full = valuation_service.mc_shapley(data.train, config.learner, data.valuation_eval, base).values
        correlations = {}
        curves = []
        values = {"untruncated": full.tolist()}
        for fraction in exp.truncation_fractions:
            vc = base.model_copy(update={"method": "tmc", "truncation_fraction": fraction})
            truncated = valuation_service.tmc_shapley(data.train, config.learner, data.valuation_eval, vc).values
            correlations[f"{fraction:g}"] = workflow_service.rank_correlation(full, truncated)
            values[f"truncated_{fraction:g}"] = truncated.tolist()
            curves.append(
                workflow_service.removal_curve(
                    data.train,
                    truncated,
                    "desc",
                    config.learner,
                    data.heldout,
                    exp.curve_step,
                    max_fraction=exp.curve_max_fraction,
                    workers=config.valuation.workers,
                    label=f"truncated_{fraction:g}",
                )
            )
        return ExperimentReport(name="truncation", summary={"spearman_vs_untruncated": correlations}, curves=curves, values=values)


# Global instance
experiment_service = ExperimentService()
