"""Dataset model, file ingestion, feature scaling, and synthetic generators.

A dataset is a dense feature matrix plus a vector of two-class targets
encoded as {-1, +1}.  The sign encoding matters downstream: the edge
weight scheme only produces symmetric pure-class weights when both pure
classes sit at |tc| = 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataFormatError(ValueError):
    """Raised when an input file does not parse as a two-class dataset."""


@dataclass(frozen=True)
class LabeledPoint:
    """One observation: a real feature vector and a target in {-1, +1}."""

    features: np.ndarray
    target: int


@dataclass
class Dataset:
    """Dense two-class dataset: features (n, d) float64, targets (n,) int."""

    features: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise ValueError("features must be a non-empty (n, d) matrix")
        if self.targets.shape != (self.features.shape[0],):
            raise ValueError("targets must be one label per row")
        bad = set(np.unique(self.targets)) - {-1, 1}
        if bad:
            raise ValueError(f"targets must be in {{-1, +1}}, got {sorted(bad)}")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.n

    def point(self, i: int) -> LabeledPoint:
        return LabeledPoint(self.features[i].copy(), int(self.targets[i]))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.targets[idx])


@dataclass(frozen=True)
class SplitSpec:
    """Deterministic train/test split request."""

    train_fraction: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")


def _remap_labels(raw: list[str], path, what: str) -> np.ndarray:
    """Map up to two distinct raw labels onto {-1, +1}.

    Labels that already are -1/+1 keep their value so that save/load
    round-trips are identity.  Otherwise the ascending original value
    maps to -1, the other to +1.
    """
    distinct = sorted(set(raw))
    if len(distinct) > 2:
        raise DataFormatError(
            f"{path}: {what} has {len(distinct)} distinct labels, only two supported"
        )

    def _as_num(s: str):
        try:
            return float(s)
        except ValueError:
            return None

    nums = [_as_num(s) for s in distinct]
    if all(v is not None for v in nums):
        if set(nums) <= {-1.0, 1.0}:
            mapping = {s: int(v) for s, v in zip(distinct, nums)}
        else:
            order = sorted(distinct, key=lambda s: float(s))
            mapping = {order[0]: -1}
            if len(order) > 1:
                mapping[order[1]] = 1
    else:
        mapping = {distinct[0]: -1}
        if len(distinct) > 1:
            mapping[distinct[1]] = 1
    return np.array([mapping[s] for s in raw], dtype=np.int64)


def _is_numeric_row(fields: list[str]) -> bool:
    try:
        for f in fields:
            float(f)
    except ValueError:
        return False
    return True


def load_csv(path, label_column: int = -1) -> Dataset:
    """Load a comma-separated file with one label column.

    An optional header is detected by a non-numeric first row.  Lines
    starting with '#' are ignored (artifact metadata).  Ragged rows and
    more than two distinct labels are errors.
    """
    path = Path(path)
    rows: list[list[str]] = []
    row_numbers: list[int] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append([f.strip() for f in line.split(",")])
            row_numbers.append(lineno)
    if rows:
        # a header row is one whose feature fields are not all numeric;
        # the label column may legitimately hold non-numeric values
        first = rows[0]
        col0 = label_column if label_column >= 0 else len(first) + label_column
        feature_fields = [f for i, f in enumerate(first) if i != col0]
        if not _is_numeric_row(feature_fields):
            rows = rows[1:]
            row_numbers = row_numbers[1:]
    if not rows:
        raise DataFormatError(f"{path}: no points")

    arity = len(rows[0])
    for row, lineno in zip(rows, row_numbers):
        if len(row) != arity:
            raise DataFormatError(
                f"{path}: row {lineno}: expected {arity} fields, got {len(row)}"
            )
    if arity < 2:
        raise DataFormatError(f"{path}: need at least one feature and one label column")

    col = label_column if label_column >= 0 else arity + label_column
    if not 0 <= col < arity:
        raise DataFormatError(f"{path}: label column {label_column} out of range")

    feats = np.empty((len(rows), arity - 1), dtype=np.float64)
    raw_labels = []
    for r, (row, lineno) in enumerate(zip(rows, row_numbers)):
        raw_labels.append(row[col])
        vals = row[:col] + row[col + 1 :]
        try:
            feats[r] = [float(v) for v in vals]
        except ValueError as exc:
            raise DataFormatError(f"{path}: row {lineno}: {exc}") from exc
    return Dataset(feats, _remap_labels(raw_labels, path, "label column"))


def save_csv(ds: Dataset, path, config: dict | None = None) -> None:
    """Write features then label per row; floats use shortest round-trip form."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        if config is not None:
            fh.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
        for i in range(ds.n):
            fields = [repr(float(v)) for v in ds.features[i]]
            fields.append(str(int(ds.targets[i])))
            fh.write(",".join(fields) + "\n")


def load_libsvm_format(path) -> Dataset:
    """Load sparse "label idx:val ..." lines with 1-based indices.

    The dataset is densified with d equal to the maximum index seen;
    unmentioned indices are zero.  Indices must increase within a line.
    """
    path = Path(path)
    raw_labels: list[str] = []
    entries: list[list[tuple[int, float]]] = []
    max_idx = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            raw_labels.append(parts[0])
            prev = 0
            row: list[tuple[int, float]] = []
            for tok in parts[1:]:
                try:
                    idx_s, val_s = tok.split(":", 1)
                    idx = int(idx_s)
                    val = float(val_s)
                except ValueError as exc:
                    raise DataFormatError(f"{path}: line {lineno}: bad entry {tok!r}") from exc
                if idx <= prev:
                    raise DataFormatError(
                        f"{path}: line {lineno}: non-monotone index {idx} after {prev}"
                    )
                prev = idx
                row.append((idx, val))
                max_idx = max(max_idx, idx)
            entries.append(row)
    if not entries:
        raise DataFormatError(f"{path}: no points")
    feats = np.zeros((len(entries), max_idx), dtype=np.float64)
    for r, row in enumerate(entries):
        for idx, val in row:
            feats[r, idx - 1] = val
    return Dataset(feats, _remap_labels(raw_labels, path, "label field"))


def save_libsvm_format(ds: Dataset, path, config: dict | None = None) -> None:
    """Write dense "label idx:val" lines (all indices kept so d round-trips)."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        if config is not None:
            fh.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
        for i in range(ds.n):
            toks = [str(int(ds.targets[i]))]
            toks += [f"{j + 1}:{repr(float(v))}" for j, v in enumerate(ds.features[i])]
            fh.write(" ".join(toks) + "\n")


def scale_minmax(ds: Dataset) -> Dataset:
    """Map each feature column affinely onto [0, 1]; constant columns go to 0."""
    lo = ds.features.min(axis=0)
    hi = ds.features.max(axis=0)
    span = hi - lo
    out = np.zeros_like(ds.features)
    nz = span > 0
    out[:, nz] = (ds.features[:, nz] - lo[nz]) / span[nz]
    return Dataset(out, ds.targets.copy())


def gen_dataset_one(n: int, d: int, margin: float = 0.05, seed: int = 0) -> Dataset:
    """Near-linearly separable uniform data split by the first coordinate.

    The class is the sign of x0 - 0.5.  Inside a band of total width
    `margin` around the separating hyperplane, labels flip with
    probability 0.1, which is what makes the set "near" separable.
    margin=0 yields an exactly separable set.
    """
    if n < 2 or d < 2:
        raise ValueError("need n >= 2 and d >= 2")
    rng = np.random.default_rng(seed)
    feats = rng.random((n, d))
    targets = np.where(feats[:, 0] > 0.5, 1, -1).astype(np.int64)
    if margin > 0:
        band = np.abs(feats[:, 0] - 0.5) <= margin / 2.0
        flips = rng.random(n) < 0.1
        targets[band & flips] *= -1
    return Dataset(feats, targets)


def gen_dataset_two(n: int, d: int, radius: float = 0.2, seed: int = 0) -> Dataset:
    """Uniform data labeled by a sphere around the hypercube centroid.

    Points strictly inside the sphere are +1, the rest -1.  A thin shell
    around the boundary (one tenth of the radius on each side) carries
    10% label noise.
    """
    if n < 2 or d < 2:
        raise ValueError("need n >= 2 and d >= 2")
    if not 0.0 < radius < 0.5:
        raise ValueError("radius must be in (0, 0.5)")
    rng = np.random.default_rng(seed)
    feats = rng.random((n, d))
    dist = np.linalg.norm(feats - 0.5, axis=1)
    targets = np.where(dist < radius, 1, -1).astype(np.int64)
    shell = np.abs(dist - radius) < 0.1 * radius
    flips = rng.random(n) < 0.1
    targets[shell & flips] *= -1
    return Dataset(feats, targets)


def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Disjoint, exhaustive train/test split, deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(ds.n)
    k = int(round(ds.n * spec.train_fraction))
    k = min(max(k, 1), ds.n - 1)
    train_idx = np.sort(perm[:k])
    test_idx = np.sort(perm[k:])
    return ds.subset(train_idx), ds.subset(test_idx)
