"""Dataset representation, synthetic generation, CSV ingestion, and
federated partitioning with controllable sensitive-group heterogeneity.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, ParseError, SchemaError

STD_FLOOR = 1e-12


@dataclass(frozen=True)
class TabularDataset:
    """Feature matrix with a binary label and a binary sensitive attribute."""

    features: np.ndarray
    sensitive: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "sensitive", np.asarray(self.sensitive, dtype=np.int64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if self.features.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        n = self.features.shape[0]
        if n < 1:
            raise DataError("dataset must contain at least one row")
        if self.sensitive.shape != (n,) or self.labels.shape != (n,):
            raise DataError("features, sensitive, and labels must have the same row count")
        if not np.isin(self.sensitive, (0, 1)).all():
            raise DataError("sensitive attribute must contain only 0/1")
        if not np.isin(self.labels, (0, 1)).all():
            raise DataError("labels must contain only 0/1")
        if not np.isfinite(self.features).all():
            raise DataError("features contain non-finite values")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def cell_counts(self) -> dict[tuple[int, int], int]:
        """Count of rows per (sensitive, label) cell."""
        counts = {}
        for a in (0, 1):
            for y in (0, 1):
                counts[(a, y)] = int(np.sum((self.sensitive == a) & (self.labels == y)))
        return counts

    def select(self, indices: np.ndarray) -> "TabularDataset":
        return TabularDataset(self.features[indices], self.sensitive[indices], self.labels[indices])


@dataclass(frozen=True)
class FederatedPartition:
    clients: list[TabularDataset]
    split_spec: np.ndarray

    @property
    def num_clients(self) -> int:
        return len(self.clients)


@dataclass(frozen=True)
class BatchPlan:
    """Seeded mini-batch schedule; the epoch permutation is derived, not stored."""

    batch_size: int
    shuffle_seed: int

    def epoch_order(self, n: int, epoch: int) -> np.ndarray:
        rng = np.random.default_rng([self.shuffle_seed, epoch])
        return rng.permutation(n)


def generate_synthetic(n: int, seed: int) -> TabularDataset:
    """Two-feature Gaussian mixture with a built-in performance/fairness conflict.

    One cluster per (sensitive, label) cell: labels separate the clusters by
    two standard deviations along the first feature, while group a=1 draws
    label 1 with prior 0.7 against 0.3 for group a=0, so an accurate
    classifier necessarily shows a demographic-parity gap.
    """
    if n < 4:
        raise ConfigurationError("synthetic dataset needs n >= 4")
    rng = np.random.default_rng(seed)
    sensitive = rng.integers(0, 2, size=n)
    if sensitive.sum() == 0:
        sensitive[0] = 1
    elif sensitive.sum() == n:
        sensitive[0] = 0
    label_prior = np.where(sensitive == 1, 0.7, 0.3)
    labels = (rng.random(n) < label_prior).astype(np.int64)
    mean1 = 2.0 * labels - 1.0
    mean2 = 0.75 * (2.0 * sensitive - 1.0) + 0.25 * (2.0 * labels - 1.0)
    features = np.stack([mean1, mean2], axis=1) + rng.standard_normal((n, 2))
    return TabularDataset(features, sensitive, labels)


def standardize(ds: TabularDataset) -> TabularDataset:
    """Scale every feature column to zero mean and unit variance.

    Statistics come from the full dataset, before any partitioning, so all
    client models see the same feature scale.
    """
    mean = ds.features.mean(axis=0)
    std = np.maximum(ds.features.std(axis=0), STD_FLOOR)
    return TabularDataset((ds.features - mean) / std, ds.sensitive, ds.labels)


@dataclass(frozen=True)
class CsvSchema:
    feature_prefix: str = "x"
    sensitive_column: str = "sensitive"
    label_column: str = "label"


def load_csv(path, schema: CsvSchema = CsvSchema()) -> TabularDataset:
    """Read a header-first CSV into a standardized dataset.

    Feature columns are those whose name starts with the schema's prefix;
    the sensitive and label columns must hold only 0/1.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected a header row") from None
        for required in (schema.sensitive_column, schema.label_column):
            if required not in header:
                raise SchemaError(f"{path}: missing required column {required!r}")
        sensitive_idx = header.index(schema.sensitive_column)
        label_idx = header.index(schema.label_column)
        feature_idx = [
            i
            for i, name in enumerate(header)
            if i not in (sensitive_idx, label_idx) and name.startswith(schema.feature_prefix)
        ]
        if not feature_idx:
            raise SchemaError(f"{path}: no feature columns with prefix {schema.feature_prefix!r}")

        features, sensitive, labels = [], [], []
        for row_number, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"{path}: row {row_number} has {len(row)} cells, expected {len(header)}")
            sensitive.append(_binary_cell(row[sensitive_idx], schema.sensitive_column, path))
            labels.append(_binary_cell(row[label_idx], schema.label_column, path))
            try:
                features.append([float(row[i]) for i in feature_idx])
            except ValueError:
                bad = next(header[i] for i in feature_idx if not _is_float(row[i]))
                raise ParseError(
                    f"{path}: row {row_number}, column {bad!r}: non-numeric feature cell"
                ) from None
    if not features:
        raise DataError(f"{path}: no data rows")
    ds = TabularDataset(np.array(features), np.array(sensitive), np.array(labels))
    return standardize(ds)


def _is_float(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def _binary_cell(cell: str, column: str, path) -> int:
    try:
        value = float(cell)
    except ValueError:
        raise DataError(f"{path}: column {column!r} must be binary, got {cell!r}") from None
    if value not in (0.0, 1.0):
        raise DataError(f"{path}: column {column!r} must be binary, got {cell!r}")
    return int(value)


def save_csv(ds: TabularDataset, path) -> None:
    """Write a dataset in the same shape load_csv reads (x0..x{f-1}, sensitive, label)."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(ds.num_features)] + ["sensitive", "label"])
        for i in range(ds.n):
            writer.writerow(
                [repr(float(v)) for v in ds.features[i]] + [int(ds.sensitive[i]), int(ds.labels[i])]
            )


def _largest_remainder_counts(fractions: np.ndarray, total: int) -> np.ndarray:
    exact = fractions * total
    counts = np.floor(exact).astype(np.int64)
    remainder = total - counts.sum()
    if remainder > 0:
        # stable argsort on negated fractional parts: ties go to lower index
        order = np.argsort(-(exact - counts), kind="stable")
        counts[order[:remainder]] += 1
    return counts


def partition(ds: TabularDataset, split_spec, seed: int) -> FederatedPartition:
    """Split a dataset across clients with per-sensitive-group fractions.

    ``split_spec`` has one row per sensitive group and one column per
    client. Within each group, rows are shuffled by the seed and assigned
    contiguously; fractional counts are resolved by largest remainder, so
    the client datasets are a disjoint cover of the source.
    """
    spec = np.asarray(split_spec, dtype=np.float64)
    if spec.ndim != 2 or spec.shape[0] != 2:
        raise ConfigurationError("split_spec must have one row per sensitive group (2 rows)")
    if spec.shape[1] < 1:
        raise ConfigurationError("split_spec needs at least one client column")
    if (spec < 0.0).any() or (spec > 1.0).any():
        raise ConfigurationError("split fractions must lie in [0, 1]")
    sums = spec.sum(axis=1)
    if np.abs(sums - 1.0).max() > 1e-9:
        raise ConfigurationError(f"split fractions must sum to 1 per group, got {sums}")

    n_clients = spec.shape[1]
    rng = np.random.default_rng(seed)
    assignments: list[list[np.ndarray]] = [[] for _ in range(n_clients)]
    for group in (0, 1):
        group_rows = np.flatnonzero(ds.sensitive == group)
        shuffled = rng.permutation(group_rows)
        counts = _largest_remainder_counts(spec[group], group_rows.size)
        offset = 0
        for client, count in enumerate(counts):
            assignments[client].append(shuffled[offset : offset + count])
            offset += count
    clients = []
    for pieces in assignments:
        indices = np.sort(np.concatenate(pieces))
        if indices.size == 0:
            raise ConfigurationError("split_spec assigns an empty dataset to a client")
        clients.append(ds.select(indices))
    return FederatedPartition(clients=clients, split_spec=spec)


def batches(ds: TabularDataset, plan: BatchPlan, epoch: int) -> list[np.ndarray]:
    """Row-index slices covering every row exactly once; the last may be short."""
    if plan.batch_size < 1:
        raise ConfigurationError("batch_size must be >= 1")
    if plan.batch_size > ds.n:
        raise ConfigurationError(f"batch_size {plan.batch_size} exceeds dataset size {ds.n}")
    order = plan.epoch_order(ds.n, epoch)
    return [order[i : i + plan.batch_size] for i in range(0, ds.n, plan.batch_size)]
