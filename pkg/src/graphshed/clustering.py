"""K-means with D^2-weighted seeding and per-cluster class summaries.

Clustering lowers the resolution of the data before any graph work: all
subsequent stages run over cluster centers instead of raw points.  Each
cluster keeps a fractional target class tc, the mean of its members'
{-1,+1} targets, so |tc| = 1 marks a class-pure region and tc near 0 a
mixed one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset

_CHUNK = 4096


@dataclass
class Cluster:
    id: int
    center: np.ndarray
    tc: float
    members: np.ndarray
    size: int


@dataclass
class ClusteringResult:
    clusters: list[Cluster]
    assignment: np.ndarray  # point id -> cluster id
    iterations_run: int

    @property
    def centers(self) -> np.ndarray:
        return np.stack([c.center for c in self.clusters])

    @property
    def tc(self) -> np.ndarray:
        return np.array([c.tc for c in self.clusters])

    @property
    def sizes(self) -> np.ndarray:
        return np.array([c.size for c in self.clusters])


def _assign(feats: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Nearest center per point; exact ties go to the lowest center id."""
    c_norms = np.einsum("ij,ij->i", centers, centers)
    out = np.empty(feats.shape[0], dtype=np.int64)
    for start in range(0, feats.shape[0], _CHUNK):
        block = feats[start : start + _CHUNK]
        # squared distance up to a per-point constant
        scores = c_norms[None, :] - 2.0 * (block @ centers.T)
        out[start : start + _CHUNK] = np.argmin(scores, axis=1)
    return out


def kmeanspp_seed(ds: Dataset, n_c: int, seed: int = 0) -> np.ndarray:
    """Pick n_c distinct initial centers by D^2-weighted sampling."""
    if not 1 <= n_c <= ds.n:
        raise ValueError(f"n_c must be in [1, {ds.n}], got {n_c}")
    rng = np.random.default_rng(seed)
    feats = ds.features
    chosen = np.empty(n_c, dtype=np.int64)
    chosen[0] = rng.integers(ds.n)
    taken = np.zeros(ds.n, dtype=bool)
    taken[chosen[0]] = True
    d2 = np.einsum("ij,ij->i", feats - feats[chosen[0]], feats - feats[chosen[0]])
    for k in range(1, n_c):
        total = d2.sum()
        if total <= 0.0:
            # remaining mass is all duplicates of chosen centers
            idx = int(np.flatnonzero(~taken)[0])
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(d2), r, side="right"))
            idx = min(idx, ds.n - 1)
        chosen[k] = idx
        taken[idx] = True
        diff = feats - feats[idx]
        d2 = np.minimum(d2, np.einsum("ij,ij->i", diff, diff))
        d2[idx] = 0.0
    return feats[chosen].copy()


def cluster(ds: Dataset, n_c: int, iters: int = 5, seed: int = 0) -> ClusteringResult:
    """Lloyd iterations from a D^2-weighted seeding.

    Runs at most `iters` iterations (a handful is enough thanks to the
    seeding); stops early once assignments are stable.  Empty clusters
    are dropped and ids compacted.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    centers = kmeanspp_seed(ds, n_c, seed)
    feats = ds.features
    assignment = None
    iterations_run = 0
    counts = None
    for _ in range(iters):
        new_assignment = _assign(feats, centers)
        iterations_run += 1
        counts = np.bincount(new_assignment, minlength=centers.shape[0])
        keep = counts > 0
        if not keep.all():
            # drop the empties; surviving centers keep their relative order
            remap = np.cumsum(keep) - 1
            centers = centers[keep]
            new_assignment = remap[new_assignment]
            counts = counts[keep]
        # centers become the exact means of the assignment just computed
        centers = np.empty_like(centers)
        for j in range(feats.shape[1]):
            centers[:, j] = np.bincount(new_assignment, weights=feats[:, j], minlength=counts.shape[0])
        centers /= counts[:, None]
        if assignment is not None and assignment.shape == new_assignment.shape and np.array_equal(
            assignment, new_assignment
        ):
            assignment = new_assignment
            break
        assignment = new_assignment

    tsum = np.bincount(assignment, weights=ds.targets.astype(np.float64), minlength=counts.shape[0])
    clusters = []
    for cid in range(centers.shape[0]):
        members = np.flatnonzero(assignment == cid)
        clusters.append(
            Cluster(
                id=cid,
                center=centers[cid].copy(),
                tc=float(tsum[cid] / counts[cid]),
                members=members,
                size=int(counts[cid]),
            )
        )
    return ClusteringResult(clusters, assignment, iterations_run)


def nominal_vc(ds: Dataset, n_c: int) -> float:
    """Granularity of the clustered representation: n over n_c."""
    if n_c < 1:
        raise ValueError("n_c must be >= 1")
    return ds.n / n_c


def inertia(ds: Dataset, res: ClusteringResult) -> float:
    """Within-cluster sum of squared distances."""
    centers = res.centers
    diffs = ds.features - centers[res.assignment]
    return float(np.einsum("ij,ij->", diffs, diffs))


def save_clustering(res: ClusteringResult, path, config: dict | None = None) -> None:
    """One cluster per JSON line, preceded by a meta record."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        meta = {
            "kind": "meta",
            "n": int(res.assignment.shape[0]),
            "n_c": len(res.clusters),
            "iterations_run": res.iterations_run,
        }
        if config is not None:
            meta["config"] = config
        fh.write(json.dumps(meta) + "\n")
        for c in res.clusters:
            rec = {
                "kind": "cluster",
                "id": c.id,
                "center": [float(v) for v in c.center],
                "tc": c.tc,
                "size": c.size,
                "members": [int(m) for m in c.members],
            }
            fh.write(json.dumps(rec) + "\n")


def load_clustering(path) -> ClusteringResult:
    path = Path(path)
    clusters: list[Cluster] = []
    n = 0
    iterations_run = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec["kind"] == "meta":
                n = rec["n"]
                iterations_run = rec.get("iterations_run", 0)
            elif rec["kind"] == "cluster":
                clusters.append(
                    Cluster(
                        id=rec["id"],
                        center=np.array(rec["center"], dtype=np.float64),
                        tc=float(rec["tc"]),
                        members=np.array(rec["members"], dtype=np.int64),
                        size=int(rec["size"]),
                    )
                )
    if not clusters:
        raise ValueError(f"{path}: no clusters")
    if n == 0:
        n = sum(c.size for c in clusters)
    assignment = np.empty(n, dtype=np.int64)
    for c in clusters:
        assignment[c.members] = c.id
    return ClusteringResult(clusters, assignment, iterations_run)
