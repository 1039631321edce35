"""Dataset service: CSV ingestion, synthetic tasks, corruption and splitting."""

import csv
import hashlib
import io
import math
from pathlib import Path
from typing import Callable, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from sourcevalue.exceptions import DatasetError
from sourcevalue.models.dataset import CorruptionReport, Dataset, SourceSet
from sourcevalue.utils.logger import app_logger
from sourcevalue.utils.rng import substream

Relation = Literal["linear", "poly3"]


def round_half_away(x: float) -> int:
    """Round to nearest integer, halves away from zero."""
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _draw_relation(dim: int, relation: Relation, rng: np.random.Generator, signal: float) -> Callable[[np.ndarray], np.ndarray]:
    """Random logit function f over the features, scaled so f(x) has std near ``signal``."""
    scale = signal / math.sqrt(dim)
    if relation == "linear":
        w = rng.standard_normal(dim) * scale

        def linear(x: np.ndarray) -> np.ndarray:
            return x @ w

        return linear

    if relation == "poly3":
        u, v, z = (rng.standard_normal(dim) for _ in range(3))
        c1, c2, c3 = rng.standard_normal(3)
        root_d = math.sqrt(dim)
        v_center = float(v @ v) / dim

        def poly3(x: np.ndarray) -> np.ndarray:
            a = x @ u / root_d
            b = x @ v / root_d
            c = x @ z / root_d
            return signal * (c1 * a + c2 * (b * b - v_center) + c3 * (c ** 3) / math.sqrt(15.0)) / math.sqrt(3.0)

        return poly3

    raise DatasetError(f"unknown relation: {relation}")


class DatasetService:
    """Builds and transforms immutable datasets."""

    def load_csv(self, path: str | Path, label_column: str, group_column: Optional[str] = None) -> Dataset:
        """Read a headered UTF-8 CSV; every non-label, non-group column is a numeric feature.

        All-integer label columns are mapped to 0..K-1 in ascending order,
        other labels by first appearance.
        """
        path = Path(path)
        if not path.is_file():
            raise DatasetError(f"file not found: {path}")
        try:
            text = path.read_text(encoding="utf-8")
        except UnicodeDecodeError as exc:
            raise DatasetError(f"{path} is not valid UTF-8: {exc}") from exc
        self._check_field_counts(text, path)
        try:
            frame = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False, skipinitialspace=True)
        except pd.errors.ParserError as exc:
            raise DatasetError(f"ragged rows in {path}: {exc}") from exc
        except pd.errors.EmptyDataError as exc:
            raise DatasetError(f"empty file: {path}") from exc

        for column in filter(None, (label_column, group_column)):
            if column not in frame.columns:
                raise DatasetError(f"column '{column}' not found in {path}")

        feature_names = [c for c in frame.columns if c not in (label_column, group_column)]
        if not feature_names:
            raise DatasetError(f"no feature columns in {path}")

        features = np.empty((frame.shape[0], len(feature_names)), dtype=np.float64)
        for j, name in enumerate(feature_names):
            column = pd.to_numeric(frame[name].str.strip(), errors="coerce").to_numpy(dtype=np.float64)
            bad = ~np.isfinite(column)
            if bad.any():
                row = int(np.argmax(bad))
                raise DatasetError(
                    f"non-numeric feature cell at row {row + 2}, column '{name}': {frame[name].iloc[row]!r}"
                )
            features[:, j] = column

        raw_labels = self._nonempty_column(frame, label_column, path)
        integer_labels = bool(raw_labels.str.fullmatch(r"\d+").all())
        if integer_labels:
            labels, uniques = pd.factorize(raw_labels.astype(np.int64), sort=True)
            mapping = {str(int(u)): i for i, u in enumerate(uniques)}
        else:
            labels, uniques = pd.factorize(raw_labels, sort=False)
            mapping = {str(u): i for i, u in enumerate(uniques)}
        if len(mapping) < 2:
            raise DatasetError(f"single-class file {path}: label column '{label_column}' needs at least 2 classes")

        groups = None
        group_mapping = None
        if group_column is not None:
            groups, group_uniques = pd.factorize(self._nonempty_column(frame, group_column, path), sort=False)
            group_mapping = {str(u): i for i, u in enumerate(group_uniques)}

        app_logger.info(f"Loaded {frame.shape[0]} rows x {len(feature_names)} features from {path} (K={len(mapping)})")
        return Dataset(
            features=features,
            labels=labels,
            num_classes=len(mapping),
            groups=groups,
            metadata={
                "source": str(path),
                "feature_names": feature_names,
                "label_mapping": mapping,
                "group_mapping": group_mapping,
            },
        )

    @staticmethod
    def _check_field_counts(text: str, path: Path) -> None:
        # pandas pads short rows with empty strings when NA detection is off
        reader = csv.reader(io.StringIO(text), skipinitialspace=True)
        header = next(reader, None)
        if not header:
            raise DatasetError(f"empty file: {path}")
        for row in reader:
            if row and len(row) != len(header):
                raise DatasetError(
                    f"ragged row {reader.line_num} in {path}: expected {len(header)} fields, got {len(row)}"
                )

    @staticmethod
    def _nonempty_column(frame: pd.DataFrame, column: str, path: Path) -> pd.Series:
        values = frame[column].str.strip()
        empty = (values == "").to_numpy()
        if empty.any():
            raise DatasetError(f"empty cell at row {int(np.argmax(empty)) + 2}, column '{column}' in {path}")
        return values

    def generate_synthetic(self, n: int, dim: int, relation: Relation = "linear", seed: int = 0, signal: float = 2.0) -> Dataset:
        """Standard-normal features with Bernoulli labels, P(y=1) = sigmoid(f(x))."""
        if n < 2 or dim < 1:
            raise DatasetError(f"generate_synthetic needs n >= 2 and dim >= 1, got n={n}, dim={dim}")
        f = _draw_relation(dim, relation, substream(seed, "synthetic.coefficients"), signal)
        features = substream(seed, "synthetic.features").standard_normal((n, dim))
        labels = self._sample_labels(f(features), substream(seed, "synthetic.labels"))
        return Dataset(
            features=features,
            labels=labels,
            num_classes=2,
            metadata={"source": "synthetic", "relation": relation, "seed": seed},
        )

    @staticmethod
    def _sample_labels(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return (rng.random(logits.shape[0]) < _sigmoid(logits)).astype(np.int64)

    @staticmethod
    def _corruption_count(n: int, fraction: float) -> int:
        if not 0.0 < fraction < 1.0:
            raise DatasetError(f"fraction must lie in (0, 1), got {fraction}")
        return round_half_away(fraction * n)

    def flip_labels(self, ds: Dataset, fraction: float, seed: int) -> Tuple[Dataset, CorruptionReport]:
        """Flip the labels of round(fraction*n) uniformly chosen points of a binary task."""
        if ds.num_classes != 2:
            raise DatasetError(f"label flipping supports binary tasks only, got K={ds.num_classes}")
        count = self._corruption_count(ds.n, fraction)
        if count == 0 or count == ds.n:
            raise DatasetError(f"fraction {fraction} of n={ds.n} flips {count} points; must be strictly between 0 and n")
        chosen = np.sort(substream(seed, "corrupt.flip").choice(ds.n, size=count, replace=False))
        labels = ds.labels.copy()
        labels[chosen] = 1 - labels[chosen]
        report = CorruptionReport(affected=SourceSet.from_indices(chosen, ds.n), kind="label_flip")
        app_logger.debug(f"Flipped {count} of {ds.n} labels")
        return ds.model_copy(update={"labels": self._freeze(labels)}), report

    def add_feature_noise(self, ds: Dataset, fraction: float, sigma: float, seed: int) -> Tuple[Dataset, CorruptionReport]:
        """Add i.i.d. N(0, sigma^2) to every feature of round(fraction*n) uniformly chosen points."""
        if not sigma > 0.0:
            raise DatasetError(f"sigma must be > 0, got {sigma}; copy the dataset for a no-op")
        count = self._corruption_count(ds.n, fraction)
        if count == 0:
            raise DatasetError(f"fraction {fraction} of n={ds.n} corrupts no points")
        rng = substream(seed, "corrupt.noise")
        chosen = np.sort(rng.choice(ds.n, size=count, replace=False))
        features = ds.features.copy()
        features[chosen] += rng.normal(0.0, sigma, size=(count, ds.feature_dim))
        report = CorruptionReport(affected=SourceSet.from_indices(chosen, ds.n), kind="feature_noise", noise_sigma=sigma)
        app_logger.debug(f"Added sigma={sigma} noise to {count} of {ds.n} points")
        return ds.model_copy(update={"features": self._freeze(features)}), report

    @staticmethod
    def _freeze(arr: np.ndarray) -> np.ndarray:
        arr.setflags(write=False)
        return arr

    def subset(self, ds: Dataset, indices: Sequence[int] | np.ndarray) -> Dataset:
        """Rows ``indices`` in the given order; group ids are re-densified by first appearance."""
        idx = np.asarray(indices, dtype=np.int64)
        groups = None
        metadata = dict(ds.metadata)
        if ds.groups is not None:
            groups, original = pd.factorize(ds.groups[idx], sort=False)
            metadata["group_ids"] = [int(g) for g in original]
        return Dataset(
            features=ds.features[idx],
            labels=ds.labels[idx],
            num_classes=ds.num_classes,
            groups=groups,
            metadata=metadata,
        )

    def concat(self, first: Dataset, second: Dataset) -> Dataset:
        if first.feature_dim != second.feature_dim:
            raise DatasetError(f"feature_dim mismatch: {first.feature_dim} vs {second.feature_dim}")
        return Dataset(
            features=np.vstack([first.features, second.features]),
            labels=np.concatenate([first.labels, second.labels]),
            num_classes=max(first.num_classes, second.num_classes),
            metadata=dict(first.metadata),
        )

    def dataset_digest(self, ds: Dataset) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(ds.features).tobytes())
        h.update(np.ascontiguousarray(ds.labels).tobytes())
        if ds.groups is not None:
            h.update(np.ascontiguousarray(ds.groups).tobytes())
        return h.hexdigest()

    def split_dataset(self, ds: Dataset, fractions: Tuple[float, float, float], seed: int) -> Tuple[Dataset, Dataset, Dataset]:
        """Seeded shuffle, then contiguous train / valuation-eval / heldout slices."""
        if any(f <= 0 for f in fractions) or sum(fractions) > 1.0 + 1e-12:
            raise DatasetError(f"split fractions must be positive and sum to at most 1, got {fractions}")
        sizes = [int(math.floor(f * ds.n)) for f in fractions]
        if min(sizes) < 1:
            raise DatasetError(f"split {fractions} of n={ds.n} leaves an empty part")
        order = substream(seed, "split").permutation(ds.n)
        bounds = np.cumsum([0, *sizes])
        parts = tuple(self.subset(ds, order[bounds[i]:bounds[i + 1]]) for i in range(3))
        app_logger.info(f"Split n={ds.n} into train={sizes[0]}, valuation_eval={sizes[1]}, heldout={sizes[2]}")
        return parts

    def assign_groups(self, ds: Dataset, num_groups: int, seed: int) -> Dataset:
        """Random group assignment with every group non-empty."""
        if not 1 <= num_groups <= ds.n:
            raise DatasetError(f"num_groups must lie in [1, n={ds.n}], got {num_groups}")
        rng = substream(seed, "groups")
        order = rng.permutation(ds.n)
        groups = np.empty(ds.n, dtype=np.int64)
        groups[order[:num_groups]] = np.arange(num_groups)
        groups[order[num_groups:]] = rng.integers(0, num_groups, size=ds.n - num_groups)
        return ds.model_copy(update={"groups": self._freeze(groups)})

    def make_covariate_shift_pair(
        self,
        n_source: int,
        n_target: int,
        dim: int,
        relation: Relation = "linear",
        shift: float = 1.5,
        contamination: float = 0.3,
        seed: int = 0,
        signal: float = 2.0,
    ) -> Tuple[Dataset, Dataset]:
        """Clean target task and a contaminated, partly shifted source task sharing one labeling function.

        The contaminated source rows are drawn from N(shift, I) and carry
        flipped labels; their indices are kept in ``metadata["contaminated"]``.
        """
        if n_source < 2 or n_target < 2 or dim < 1:
            raise DatasetError("make_covariate_shift_pair needs n_source, n_target >= 2 and dim >= 1")
        f = _draw_relation(dim, relation, substream(seed, "shift.coefficients"), signal)

        x_target = substream(seed, "shift.target.features").standard_normal((n_target, dim))
        y_target = self._sample_labels(f(x_target), substream(seed, "shift.target.labels"))
        target = Dataset(
            features=x_target,
            labels=y_target,
            num_classes=2,
            metadata={"source": "shift.target", "seed": seed},
        )

        rng = substream(seed, "shift.source")
        n_bad = self._corruption_count(n_source, contamination)
        x_source = rng.standard_normal((n_source, dim))
        bad = np.sort(rng.choice(n_source, size=n_bad, replace=False))
        x_source[bad] += shift
        y_source = self._sample_labels(f(x_source), rng)
        y_source[bad] = 1 - y_source[bad]
        source = Dataset(
            features=x_source,
            labels=y_source,
            num_classes=2,
            metadata={"source": "shift.source", "seed": seed, "contaminated": [int(i) for i in bad]},
        )
        return source, target


# Global instance
dataset_service = DatasetService()
