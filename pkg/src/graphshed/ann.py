"""Nearest-neighbor search with exact and approximate backends.

Exact mode is a vectorized brute-force scan and is what the graph
construction defaults to at its usual scale (hundreds of cluster
centers).  Approximate mode is a seeded randomized kd-tree with a
bounded backtracking budget for larger spaces.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

_QUERY_CHUNK = 2048


@dataclass
class KnnResult:
    indices: np.ndarray  # (q, k) stored-point indices
    dists: np.ndarray  # (q, k) Euclidean distances, non-decreasing per row


class _KdNode:
    __slots__ = ("dim", "split", "left", "right", "points")

    def __init__(self, dim=-1, split=0.0, left=None, right=None, points=None):
        self.dim = dim
        self.split = split
        self.left = left
        self.right = right
        self.points = points  # leaf only


class NNIndex:
    """Immutable point index; query results reference stored indices."""

    def __init__(self, points: np.ndarray, mode: str, seed: int, leaf_size: int, checks: int):
        self.points = points
        self.mode = mode
        self._leaf_size = leaf_size
        self._checks = checks
        self._root = None
        if mode == "approximate":
            rng = np.random.default_rng(seed)
            self._root = self._build_node(np.arange(points.shape[0]), rng)

    def _build_node(self, idx: np.ndarray, rng) -> _KdNode:
        if idx.shape[0] <= self._leaf_size:
            return _KdNode(points=idx)
        pts = self.points[idx]
        var = pts.var(axis=0)
        if var.max() == 0.0:
            return _KdNode(points=idx)  # duplicates only
        top = np.argsort(-var, kind="stable")[: min(5, pts.shape[1])]
        top = top[var[top] > 0]
        dim = int(top[rng.integers(top.shape[0])])
        col = pts[:, dim]
        split = float(np.median(col))
        mask = col < split
        if not mask.any() or mask.all():
            # median landed on a value block; the mean always separates
            split = float(col.mean())
            mask = col < split
            if not mask.any() or mask.all():
                return _KdNode(points=idx)
        return _KdNode(
            dim=dim,
            split=split,
            left=self._build_node(idx[mask], rng),
            right=self._build_node(idx[~mask], rng),
        )

    def query(self, queries: np.ndarray, k: int) -> KnnResult:
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if queries.shape[1] != self.points.shape[1]:
            raise ValueError("query dimensionality does not match stored points")
        if not 1 <= k <= self.points.shape[0]:
            raise ValueError(f"k must be in [1, {self.points.shape[0]}], got {k}")
        if self.mode == "exact":
            return self._query_exact(queries, k)
        return self._query_tree(queries, k)

    def _query_exact(self, queries: np.ndarray, k: int) -> KnnResult:
        n = self.points.shape[0]
        p_norms = np.einsum("ij,ij->i", self.points, self.points)
        indices = np.empty((queries.shape[0], k), dtype=np.int64)
        dists = np.empty((queries.shape[0], k), dtype=np.float64)
        for start in range(0, queries.shape[0], _QUERY_CHUNK):
            block = queries[start : start + _QUERY_CHUNK]
            scores = p_norms[None, :] - 2.0 * (block @ self.points.T)
            if k < n:
                part = np.argpartition(scores, k - 1, axis=1)[:, : max(k, 1)]
            else:
                part = np.broadcast_to(np.arange(n), (block.shape[0], n)).copy()
            for r in range(block.shape[0]):
                cand = part[r]
                diffs = self.points[cand] - block[r]
                true_d = np.sqrt(np.einsum("ij,ij->i", diffs, diffs))
                # true distance order, exact ties toward the lower index
                order = np.lexsort((cand, true_d))[:k]
                indices[start + r] = cand[order]
                dists[start + r] = true_d[order]
        return KnnResult(indices, dists)

    def _query_tree(self, queries: np.ndarray, k: int) -> KnnResult:
        indices = np.empty((queries.shape[0], k), dtype=np.int64)
        dists = np.empty((queries.shape[0], k), dtype=np.float64)
        for r, q in enumerate(queries):
            best: list[tuple[float, int]] = []  # max-heap of (-d2, -idx)
            checks_left = self._checks
            heap = [(0.0, 0, self._root)]
            push_id = 1
            while heap:
                if checks_left <= 0 and len(best) >= k:
                    break
                bound, _, node = heapq.heappop(heap)
                if len(best) == k and bound * bound >= -best[0][0]:
                    break
                while node.points is None:
                    diff = q[node.dim] - node.split
                    near, far = (node.left, node.right) if diff < 0 else (node.right, node.left)
                    heapq.heappush(heap, (max(abs(diff), bound), push_id, far))
                    push_id += 1
                    node = near
                pts = self.points[node.points]
                d2 = np.einsum("ij,ij->i", pts - q, pts - q)
                checks_left -= pts.shape[0]
                for dd, ii in zip(d2, node.points):
                    item = (-float(dd), -int(ii))
                    if len(best) < k:
                        heapq.heappush(best, item)
                    elif item > best[0]:
                        heapq.heapreplace(best, item)
            found = sorted((-nd, -ni) for nd, ni in best)
            indices[r] = [i for _, i in found]
            dists[r] = [np.sqrt(max(dd, 0.0)) for dd, _ in found]
        return KnnResult(indices, dists)


def build(points, mode: str = "exact", seed: int = 0, leaf_size: int = 16, checks: int = 128) -> NNIndex:
    """Build an index over the given points.

    mode "exact" answers true k-nearest queries; "approximate" builds a
    seeded randomized kd-tree whose query budget is `checks` stored
    points per query.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[0] == 0:
        raise ValueError("cannot index zero points")
    if mode not in ("exact", "approximate"):
        raise ValueError(f"unknown mode {mode!r}")
    return NNIndex(points.copy(), mode, seed, leaf_size, checks)


def knn_search(idx: NNIndex, queries, k: int) -> KnnResult:
    return idx.query(queries, k)
