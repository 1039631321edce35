"""Writers for run outputs: values, history, curves, summaries and manifests."""

import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

import pandas as pd

from sourcevalue import __version__
from sourcevalue.models.run_config import RunConfig
from sourcevalue.models.valuation import ValuationResult
from sourcevalue.models.workflow import Curve


def write_json(path: Path, payload: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_values(out_dir: Path, result: ValuationResult) -> Path:
    return write_json(out_dir / "values.json", result.to_json_dict())


def write_history(out_dir: Path, result: ValuationResult) -> Path:
    """Per-window running values as (iteration, source_index, running_value) rows."""
    rows = []
    for iteration, snapshot in zip(result.history_iterations or [], result.history or []):
        rows.extend((iteration, i, float(v)) for i, v in enumerate(snapshot))
    frame = pd.DataFrame(rows, columns=["iteration", "source_index", "running_value"])
    path = out_dir / "history.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return path


def write_curves(out_dir: Path, name: str, curves: Iterable[Curve]) -> None:
    curves = list(curves)
    rows = [(x, y, c.label) for c in curves for x, y in zip(c.xs, c.ys)]
    out_dir.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows, columns=["x", "y", "label"]).to_csv(out_dir / f"{name}_curves.csv", index=False)
    write_json(out_dir / f"{name}_curves.json", [c.model_dump(mode="json") for c in curves])


def config_hash(config: RunConfig) -> str:
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def write_manifest(
    out_dir: Path,
    command: str,
    config: RunConfig,
    digests: Dict[str, str],
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """Everything needed to reproduce the run; the only file carrying a timestamp."""
    manifest = {
        "command": command,
        "config": config.model_dump(mode="json"),
        "config_hash": config_hash(config),
        "seed": config.seed,
        "workers": config.valuation.workers,
        "dataset_digests": digests,
        "version": __version__,
        "created_at": datetime.now(timezone.utc).isoformat(),
    }
    if extra:
        manifest.update(extra)
    return write_json(out_dir / "manifest.json", manifest)
