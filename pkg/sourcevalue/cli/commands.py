"""Command-line surface: value, experiment and grid-search runs driven by a JSON config."""

import argparse
import sys
from pathlib import Path
from typing import Callable, List, Optional

from pydantic import ValidationError

from sourcevalue import __version__
from sourcevalue.exceptions import ConfigError
from sourcevalue.models.run_config import RunConfig
from sourcevalue.services.experiments import EXPERIMENTS, experiment_service
from sourcevalue.services.learners import learner_service
from sourcevalue.services.valuation import valuation_service
from sourcevalue.utils.logger import app_logger, progress_logger, setup_logger

from .output import write_curves, write_history, write_json, write_manifest, write_values

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def load_config(
    path: Optional[str],
    seed: Optional[int] = None,
    workers: Optional[int] = None,
    output_dir: Optional[str] = None,
) -> RunConfig:
    """Read and validate a run config; flags override file values."""
    if path is None:
        config = RunConfig()
    else:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigError(f"config file not found: {config_path}")
        config = RunConfig.model_validate_json(config_path.read_text(encoding="utf-8"))
    return config.with_overrides(seed=seed, workers=workers, output_dir=output_dir)


def cmd_value(config: RunConfig) -> int:
    """Value every training source; writes values.json, history.csv and manifest.json."""
    out_dir = Path(config.output_dir)
    data = experiment_service.prepare(config)
    method = config.valuation.method
    vc = experiment_service.valuation_config(config, data.train, config.learner, data.valuation_eval, method)
    result = valuation_service.value(data.train, config.learner, data.valuation_eval, vc)

    write_values(out_dir, result)
    write_history(out_dir, result)
    write_manifest(
        out_dir,
        "value",
        config,
        data.digests(),
        extra={"effective_valuation": vc.model_dump(mode="json")},
    )
    progress_logger.info(f"Wrote {result.n} values ({method}) to {out_dir}")
    return EXIT_OK


def cmd_experiment(config: RunConfig, which: str) -> int:
    """Run one experiment driver; writes curves, summary.json and manifest.json."""
    if which not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment '{which}', expected one of {', '.join(EXPERIMENTS)}")
    out_dir = Path(config.output_dir)
    data = experiment_service.prepare(config)
    report = experiment_service.run(which, config, data)

    if report.curves:
        write_curves(out_dir, which, report.curves)
    write_json(out_dir / "summary.json", {"experiment": which, **report.summary})
    if report.values:
        write_json(out_dir / f"{which}_values.json", report.values)
    write_manifest(out_dir, f"experiment {which}", config, data.digests())
    progress_logger.info(f"Experiment '{which}' finished; outputs in {out_dir}")
    return EXIT_OK


def cmd_grid_search(config: RunConfig) -> int:
    """Search the G-Shapley step size over ``valuation.alpha_grid``."""
    out_dir = Path(config.output_dir)
    data = experiment_service.prepare(config)
    grid = config.valuation.alpha_grid
    best, scores = learner_service.search_gshapley_alpha(data.train, config.learner, data.valuation_eval, grid, config.seed)
    write_json(out_dir / "grid_search.json", {"grid": grid, "scores": scores, "best_alpha": best})
    write_manifest(out_dir, "grid-search", config, data.digests())
    progress_logger.info(f"Best one-pass alpha {best}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run config")
    common.add_argument("--workers", type=int, metavar="N", help="worker processes for permutation sampling")
    common.add_argument("--seed", type=int, metavar="S", help="master seed (overrides config)")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides config)")
    common.add_argument("--log-level", metavar="LEVEL", help="loguru level for stderr diagnostics")

    parser = argparse.ArgumentParser(prog="sourcevalue", description="Equitable valuation of training data sources.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("value", parents=[common], help="value every training source")
    experiment = sub.add_parser("experiment", parents=[common], help="run an experiment driver")
    experiment.add_argument("which", choices=EXPERIMENTS)
    sub.add_parser("grid-search", parents=[common], help="search the G-Shapley learning rate")
    return parser


def _guarded(action: Callable[[], int]) -> int:
    try:
        return action()
    except (ConfigError, ValidationError) as e:
        app_logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except Exception as e:
        app_logger.error(f"Run failed: {e}")
        return EXIT_RUNTIME


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level:
        setup_logger(args.log_level)
    if args.workers is not None and args.workers < 1:
        app_logger.error(f"Configuration error: --workers must be >= 1, got {args.workers}")
        return EXIT_CONFIG
    if args.seed is not None and args.seed < 0:
        app_logger.error(f"Configuration error: --seed must be >= 0, got {args.seed}")
        return EXIT_CONFIG

    def run() -> int:
        config = load_config(args.config, args.seed, args.workers, args.out)
        if args.command == "value":
            return cmd_value(config)
        if args.command == "experiment":
            return cmd_experiment(config, args.which)
        return cmd_grid_search(config)

    return _guarded(run)


if __name__ == "__main__":
    sys.exit(main())
