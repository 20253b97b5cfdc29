"""Binary C-SVM trained by sequential minimal optimization, plus the
reduction pipelines that feed it.

The solver picks the maximal violating pair each step and runs without
any shrinking, which keeps it an honest baseline when comparing full
training against the graph-reduced pipelines.  Models persist in the
plain-text format used by common SVM tools so external classifiers can
be swapped in through files.
"""

from __future__ import annotations

import json
import logging
import time
from collections import OrderedDict
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .clubbing import PartitionSet, club
from .clustering import ClusteringResult, cluster
from .data import Dataset
from .knitting import HeuristicParams, knit
from .shedding import relevant_set

log = logging.getLogger(__name__)

_KERNELS = ("linear", "polynomial", "rbf")
_CACHE_BYTES = 256 * 1024 * 1024


@dataclass(frozen=True)
class ClassifierSpec:
    """Configuration of the built-in C-SVM."""

    kind: str = "c_svm"
    kernel: str = "linear"
    degree: int = 3
    coef0: float = 0.0
    gamma: float | None = None  # None resolves to 1/d at fit time
    C: float = 1.0
    tol: float = 1e-3
    max_passes: int = 1_000_000

    def __post_init__(self):
        if self.kind != "c_svm":
            raise ValueError(f"unsupported classifier kind {self.kind!r}")
        if self.kernel not in _KERNELS:
            raise ValueError(f"kernel must be one of {_KERNELS}")
        if self.C <= 0 or self.tol <= 0:
            raise ValueError("C and tol must be positive")

    def resolve_gamma(self, d: int) -> float:
        return self.gamma if self.gamma is not None else 1.0 / d


def _kernel_block(spec: ClassifierSpec, gamma: float, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """K(A, B) as an (|A|, |B|) matrix."""
    if spec.kernel == "linear":
        return A @ B.T
    if spec.kernel == "polynomial":
        return (A @ B.T + spec.coef0) ** spec.degree
    a2 = np.einsum("ij,ij->i", A, A)[:, None]
    b2 = np.einsum("ij,ij->i", B, B)[None, :]
    sq = np.maximum(a2 + b2 - 2.0 * (A @ B.T), 0.0)
    return np.exp(-gamma * sq)


class _RowCache:
    """LRU cache of kernel rows, bounded by memory."""

    def __init__(self, X: np.ndarray, spec: ClassifierSpec, gamma: float):
        self.X = X
        self.spec = spec
        self.gamma = gamma
        self.rows: OrderedDict[int, np.ndarray] = OrderedDict()
        self.max_rows = max(2, _CACHE_BYTES // (8 * X.shape[0]))

    def row(self, i: int) -> np.ndarray:
        got = self.rows.get(i)
        if got is not None:
            self.rows.move_to_end(i)
            return got
        r = _kernel_block(self.spec, self.gamma, self.X[i : i + 1], self.X)[0]
        self.rows[i] = r
        if len(self.rows) > self.max_rows:
            self.rows.popitem(last=False)
        return r


@dataclass
class TrainedModel:
    """Kernel-expansion decision function: sign(sum a_i y_i K(sv_i, x) + bias)."""

    support_vectors: np.ndarray  # (m, d)
    alpha: np.ndarray  # (m,), in (0, C]
    sv_targets: np.ndarray  # (m,), in {-1, +1}
    bias: float
    spec: ClassifierSpec
    gamma: float
    n_features: int
    iterations: int = 0
    converged: bool = True

    @property
    def dual_coef(self) -> np.ndarray:
        return self.alpha * self.sv_targets

    def decision(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.full(X.shape[0], self.bias)
        if self.support_vectors.shape[0] == 0:
            return out  # constant stub accepts any width
        if X.shape[1] != self.n_features:
            raise ValueError("dimensionality mismatch")
        coef = self.dual_coef
        chunk = 8192
        for start in range(0, X.shape[0], chunk):
            K = _kernel_block(self.spec, self.gamma, X[start : start + chunk], self.support_vectors)
            out[start : start + chunk] += K @ coef
        return out

    def predict(self, X) -> np.ndarray:
        # a decision value of exactly 0 goes to +1
        return np.where(self.decision(X) >= 0.0, 1, -1).astype(np.int64)


def train(X, y, spec: ClassifierSpec) -> TrainedModel:
    """Fit a C-SVM by maximal-violating-pair SMO.

    Deterministic for fixed inputs: pair selection breaks ties toward
    the lowest index and there is no sampling anywhere.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (n, d) with one label per row")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("training needs at least one point per class")
    n = X.shape[0]
    gamma = spec.resolve_gamma(X.shape[1])
    cache = _RowCache(X, spec, gamma)
    C = spec.C
    eps = 1e-12 * max(C, 1.0)

    alpha = np.zeros(n)
    grad = -np.ones(n)
    pos = y > 0
    iterations = 0
    converged = False
    m_val = M_val = 0.0
    while iterations < spec.max_passes:
        yg = -y * grad
        up = (pos & (alpha < C - eps)) | (~pos & (alpha > eps))
        low = (pos & (alpha > eps)) | (~pos & (alpha < C - eps))
        if not up.any() or not low.any():
            converged = True
            break
        i = int(np.argmax(np.where(up, yg, -np.inf)))
        j = int(np.argmin(np.where(low, yg, np.inf)))
        m_val, M_val = yg[i], yg[j]
        if m_val - M_val <= spec.tol:
            converged = True
            break
        Ki = cache.row(i)
        Kj = cache.row(j)
        quad = Ki[i] + Kj[j] - 2.0 * Ki[j]
        if quad <= 0.0:
            quad = 1e-12
        step = (m_val - M_val) / quad
        cap_i = (C - alpha[i]) if pos[i] else alpha[i]
        cap_j = alpha[j] if pos[j] else (C - alpha[j])
        step = min(step, cap_i, cap_j)
        alpha[i] += y[i] * step
        alpha[j] -= y[j] * step
        grad += step * y * (Ki - Kj)
        iterations += 1
    if not converged:
        log.warning("SMO hit the iteration cap (%d) before tol", spec.max_passes)

    yg = -y * grad
    free = (alpha > eps) & (alpha < C - eps)
    if free.any():
        bias = float(yg[free].mean())
    else:
        bias = float((m_val + M_val) / 2.0)

    sv = alpha > eps
    return TrainedModel(
        support_vectors=X[sv].copy(),
        alpha=alpha[sv].copy(),
        sv_targets=y[sv].astype(np.int64),
        bias=bias,
        spec=spec,
        gamma=gamma,
        n_features=X.shape[1],
        iterations=iterations,
        converged=converged,
    )


def constant_model(label: int, d: int, spec: ClassifierSpec) -> TrainedModel:
    """Stub predictor for a single-class training set: no SVs, bias = label."""
    return TrainedModel(
        support_vectors=np.empty((0, d)),
        alpha=np.empty(0),
        sv_targets=np.empty(0, dtype=np.int64),
        bias=float(label),
        spec=spec,
        gamma=spec.resolve_gamma(d),
        n_features=d,
    )


def fit_partition(X, y, spec: ClassifierSpec) -> TrainedModel:
    """Train one partition; a one-class partition yields a constant stub."""
    classes = np.unique(y)
    if classes.size < 2:
        label = int(classes[0])
        log.warning("single-class partition (%d points): constant %+d stub", len(y), label)
        return constant_model(label, X.shape[1], spec)
    return train(X, y, spec)


def predict(model: TrainedModel, X) -> np.ndarray:
    return model.predict(X)


def accuracy(model: TrainedModel, X, y) -> float:
    return float(np.mean(model.predict(X) == np.asarray(y)))


# ---------------------------------------------------------------------------
# model file format (plain-text, tool-compatible)

def save_model(model: TrainedModel, path) -> None:
    path = Path(path)
    lines = ["svm_type c_svc", f"kernel_type {model.spec.kernel}"]
    if model.spec.kernel == "polynomial":
        lines.append(f"degree {model.spec.degree}")
    if model.spec.kernel in ("polynomial", "rbf"):
        lines.append(f"gamma {repr(float(model.gamma))}")
    if model.spec.kernel == "polynomial":
        lines.append(f"coef0 {repr(float(model.spec.coef0))}")
    order = np.concatenate(
        [np.flatnonzero(model.sv_targets > 0), np.flatnonzero(model.sv_targets < 0)]
    ).astype(np.int64)
    n_pos = int(np.sum(model.sv_targets > 0))
    n_neg = order.size - n_pos
    lines += [
        "nr_class 2",
        f"total_sv {order.size}",
        f"rho {repr(-float(model.bias))}",
        "label 1 -1",
        f"nr_sv {n_pos} {n_neg}",
        "SV",
    ]
    coef = model.dual_coef
    for i in order:
        toks = [repr(float(coef[i]))]
        toks += [f"{j + 1}:{repr(float(v))}" for j, v in enumerate(model.support_vectors[i])]
        lines.append(" ".join(toks))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path) -> TrainedModel:
    path = Path(path)
    header: dict[str, str] = {}
    sv_rows: list[tuple[float, list[tuple[int, float]]]] = []
    in_sv = False
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        if not in_sv:
            if line == "SV":
                in_sv = True
                continue
            key, _, val = line.partition(" ")
            header[key] = val
        else:
            toks = line.split()
            coef = float(toks[0])
            entries = []
            for tok in toks[1:]:
                idx_s, val_s = tok.split(":", 1)
                entries.append((int(idx_s), float(val_s)))
            sv_rows.append((coef, entries))
    kernel = header.get("kernel_type", "linear")
    spec = ClassifierSpec(
        kernel=kernel,
        degree=int(header.get("degree", 3)),
        coef0=float(header.get("coef0", 0.0)),
        gamma=float(header["gamma"]) if "gamma" in header else None,
    )
    d = max((max(idx for idx, _ in entries) for _, entries in sv_rows if entries), default=1)
    m = len(sv_rows)
    sv = np.zeros((m, d))
    coefs = np.empty(m)
    for r, (coef, entries) in enumerate(sv_rows):
        coefs[r] = coef
        for idx, val in entries:
            sv[r, idx - 1] = val
    targets = np.where(coefs >= 0, 1, -1).astype(np.int64)
    bias = -float(header["rho"])
    gamma = float(header["gamma"]) if "gamma" in header else 1.0 / d
    return TrainedModel(
        support_vectors=sv,
        alpha=np.abs(coefs),
        sv_targets=targets,
        bias=bias,
        spec=spec,
        gamma=gamma,
        n_features=d,
    )


# ---------------------------------------------------------------------------
# pipelines

@dataclass
class ReductionReport:
    pipeline: str
    n_input: int
    n_reduced: int
    per_class_counts: tuple[int, int]
    n_clusters: int
    n_relevant_clusters: int
    n_partitions: int
    partition_sizes: list[int]
    timings: dict[str, float]  # stage -> seconds

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class EnsembleModel:
    """One model per partition plus the geometry needed for routing."""

    models: list[TrainedModel]
    parts: PartitionSet
    clustering: ClusteringResult


def train_gsh(ds: Dataset, params: HeuristicParams, spec: ClassifierSpec):
    """Reduce by shedding, then train one model on the kept points."""
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    clustering = cluster(ds, params.resolve_n_c(ds.n), params.cluster_iters, params.seed)
    timings["cluster"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    g = knit(clustering.clusters, params)
    timings["knit"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    rel = relevant_set(g, clustering, ds.targets, params.gs_edge_cut)
    timings["shed"] = time.perf_counter() - t0
    if rel.point_ids.size == 0:
        raise ValueError(
            f"graph shedding kept nothing at gs_edge_cut={params.gs_edge_cut}; lower the cut"
        )

    t0 = time.perf_counter()
    model = train(ds.features[rel.point_ids], ds.targets[rel.point_ids], spec)
    timings["train"] = time.perf_counter() - t0

    report = ReductionReport(
        pipeline="gsh",
        n_input=ds.n,
        n_reduced=int(rel.point_ids.size),
        per_class_counts=rel.per_class_counts,
        n_clusters=len(clustering.clusters),
        n_relevant_clusters=len(rel.cluster_ids),
        n_partitions=1,
        partition_sizes=[int(rel.point_ids.size)],
        timings=timings,
    )
    return model, report


def train_gch_serial(ds: Dataset, params: HeuristicParams, spec: ClassifierSpec):
    """Reduce, partition, and train every partition sequentially."""
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    clustering = cluster(ds, params.resolve_n_c(ds.n), params.cluster_iters, params.seed)
    timings["cluster"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    g = knit(clustering.clusters, params)
    timings["knit"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    parts = club(g, clustering, params, ds.targets)
    timings["club"] = time.perf_counter() - t0
    if not parts.partitions:
        raise ValueError(
            f"no partitions survive at gs_edge_cut={params.gs_edge_cut}; lower the cut"
        )

    t0 = time.perf_counter()
    models = []
    for p in parts.partitions:
        models.append(fit_partition(ds.features[p.point_ids], ds.targets[p.point_ids], spec))
    timings["train"] = time.perf_counter() - t0

    all_points = np.concatenate([p.point_ids for p in parts.partitions])
    t = ds.targets[all_points]
    report = ReductionReport(
        pipeline="gch_serial",
        n_input=ds.n,
        n_reduced=int(all_points.size),
        per_class_counts=(int(np.sum(t == -1)), int(np.sum(t == 1))),
        n_clusters=len(clustering.clusters),
        n_relevant_clusters=sum(len(p.cluster_ids) for p in parts.partitions),
        n_partitions=len(parts.partitions),
        partition_sizes=[p.size for p in parts.partitions],
        timings=timings,
    )
    return EnsembleModel(models, parts, clustering), report
