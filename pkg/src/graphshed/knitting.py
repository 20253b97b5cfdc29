"""Class-pattern-weighted graph construction over cluster centers.

The graph is knitted in three stages.  A superficial neighbor search
(SNS) links every node to its nearest neighbors regardless of class,
capping same-class links so slots remain for the opposite class, and
accumulates each node's reach: a scaled sum of its same-class neighbor
distances.  Exclusive neighbor searches (ENS) then extend edges across
the class boundary, but only within a node's reach and only toward
candidates that have not been over-subscribed, which keeps interior
nodes out and the graph near planar.  A space-reduction step drops
over-subscribed nodes from the search spaces between iterations.

Edge weights combine an internal term, penalizing impure endpoint
clusters, with an external term rewarding cross-class contrast:

    w(i, j) = C_I^(1 - |tc_i|) + C_I^(1 - |tc_j|) + C_E^|tc_i - tc_j|

Pure same-class pairs therefore weigh exactly 3 under any constants.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ann
from .clustering import Cluster


@dataclass
class HeuristicParams:
    """Knobs for graph knitting, shedding, and clubbing.

    Defaults are the reference fixture: nn=4, R=1.0, C_I=e, C_E=e^4,
    edge cuts 3.01 (shedding) and 3.20 (clubbing), re-assessment
    constants e^1.5 and 1.
    """

    nn: int = 4
    R: float = 1.0
    max_same_class_neigh: int = 3
    neigh_limit: int = 4
    C_I_init: float = math.e
    C_E_init: float = math.e**4
    C_I_reassess: float = math.e**1.5
    C_E_reassess: float = 1.0
    gs_edge_cut: float = 3.01
    gc_edge_cut: float = 3.20
    max_coarsen_iters: int = 10
    ens_iters: int = 0
    # pipeline plumbing
    n_c: int | None = None  # None: n // 100, the usual data granularity
    cluster_iters: int = 5
    seed: int = 0
    ann_mode: str = "exact"
    kink_theta: float = 0.2
    stop_on_kink: bool = False

    def __post_init__(self):
        if self.nn < 1:
            raise ValueError("nn must be >= 1")
        if not 0 <= self.max_same_class_neigh <= self.nn:
            raise ValueError("max_same_class_neigh must be in [0, nn]")
        if self.neigh_limit < 0:
            raise ValueError("neigh_limit must be >= 0")
        if self.R < 0:
            raise ValueError("R must be >= 0")
        for name in ("C_I_init", "C_E_init", "C_I_reassess", "C_E_reassess"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if not 0.0 < self.kink_theta < 1.0:
            raise ValueError("kink_theta must be in (0, 1)")

    def resolve_n_c(self, n: int) -> int:
        if self.n_c is not None:
            return self.n_c
        return max(2, min(n, n // 100))


class PatternGraph:
    """Weighted graph over clusters plus the knitting bookkeeping.

    During construction `neigh_list` holds directed neighbor ids in
    discovery order; `finalize_edges` folds them into the symmetric
    weighted adjacency `adj` (no self loops, one undirected edge per
    pair).
    """

    def __init__(self, centers: np.ndarray, tc: np.ndarray, sizes: np.ndarray):
        self.centers = np.asarray(centers, dtype=np.float64)
        self.tc = np.asarray(tc, dtype=np.float64)
        self.sizes = np.asarray(sizes, dtype=np.int64)
        k = self.centers.shape[0]
        self.node_ids = list(range(k))
        self.neigh_list: list[list[int]] = [[] for _ in range(k)]
        self.reach = np.zeros(k)
        self.neigh_finished = np.zeros(k, dtype=bool)
        self.no_tot_neigh = np.zeros(k, dtype=np.int64)
        self.no_same_class_neigh = np.zeros(k, dtype=np.int64)
        self.node_neigh = np.zeros(k, dtype=np.int64)
        self.class1_space = [i for i in range(k) if self.node_class(i) > 0]
        self.class2_space = [i for i in range(k) if self.node_class(i) < 0]
        self.adj: dict[int, dict[int, float]] = {i: {} for i in range(k)}

    @property
    def n_nodes(self) -> int:
        return self.centers.shape[0]

    def node_class(self, i: int) -> int:
        return 1 if self.tc[i] >= 0 else -1

    def class_members(self, cls: int) -> list[int]:
        return [i for i in range(self.n_nodes) if self.node_class(i) == cls]

    def finalize_edges(self, C_I: float, C_E: float) -> None:
        self.adj = {i: {} for i in range(self.n_nodes)}
        for i, neighbors in enumerate(self.neigh_list):
            for j in neighbors:
                if i == j:
                    continue
                w = edge_weight(self.tc[i], self.tc[j], C_I, C_E)
                self.adj[i][j] = w
                self.adj[j][i] = w

    def edges(self):
        """Canonical undirected edge list: (i, j, w) with i < j."""
        for i in sorted(self.adj):
            for j in sorted(self.adj[i]):
                if i < j:
                    yield i, j, self.adj[i][j]

    def degree(self, i: int) -> int:
        return len(self.adj[i])


def edge_weight(tc_i: float, tc_j: float, C_I: float, C_E: float) -> float:
    """Two-fold pattern weight of an edge from endpoint target classes."""
    return (
        C_I ** (1.0 - abs(tc_i))
        + C_I ** (1.0 - abs(tc_j))
        + C_E ** abs(tc_i - tc_j)
    )


def compute_reach(dists_to_same_class_neighbors, R: float) -> float:
    """Reach of a node: R times the sum of its same-class neighbor distances."""
    if R < 0:
        raise ValueError("R must be >= 0")
    return R * float(np.sum(dists_to_same_class_neighbors))


def sns(clusters: list[Cluster], params: HeuristicParams, mode: str | None = None) -> PatternGraph:
    """Superficial neighbor search: the class-agnostic k-NN seeding pass.

    Each node asks for its nn nearest neighbors.  Same-class candidates
    are taken only while the same-class cap allows and each accepted one
    extends the node's reach; opposite-class candidates are always
    taken.  Nodes that fill all nn slots are finished and skip the ENS
    passes.
    """
    if len(clusters) < 2:
        raise ValueError("need at least 2 clusters to knit a graph")
    mode = mode or params.ann_mode
    centers = np.stack([c.center for c in clusters])
    tc = np.array([c.tc for c in clusters])
    sizes = np.array([c.size for c in clusters])
    g = PatternGraph(centers, tc, sizes)

    index = ann.build(centers, mode=mode, seed=params.seed)
    k = min(params.nn + 1, g.n_nodes)  # the query point itself comes back too
    res = ann.knn_search(index, centers, k)

    for i in range(g.n_nodes):
        same_class_dists: list[float] = []
        cls_i = g.node_class(i)
        candidates = [
            (int(j), float(d)) for j, d in zip(res.indices[i], res.dists[i]) if int(j) != i
        ][: params.nn]
        for j, dist in candidates:
            same = g.node_class(j) == cls_i
            if same and g.no_same_class_neigh[i] < params.max_same_class_neigh:
                g.neigh_list[i].append(j)
                same_class_dists.append(dist)
                g.no_tot_neigh[i] += 1
                g.no_same_class_neigh[i] += 1
            if not same:
                g.neigh_list[i].append(j)
                g.no_tot_neigh[i] += 1
        g.reach[i] = compute_reach(same_class_dists, params.R)
        if g.no_tot_neigh[i] == params.nn:
            g.neigh_finished[i] = True
    return g


def _ens_pass(g: PatternGraph, query_space: list[int], index_space: list[int], params: HeuristicParams, mode: str) -> None:
    """One directional ENS pass: query_space nodes search index_space only."""
    if not query_space or not index_space:
        return
    active = [
        i
        for i in query_space
        if not g.neigh_finished[i] and params.nn - g.no_tot_neigh[i] > 0
    ]
    if not active:
        return
    remainders = {i: int(params.nn - g.no_tot_neigh[i]) for i in active}
    k = min(max(remainders.values()), len(index_space))
    index = ann.build(g.centers[index_space], mode=mode, seed=params.seed)
    res = ann.knn_search(index, g.centers[active], k)

    for row, i in enumerate(active):
        have = set(g.neigh_list[i])
        for jj, dist in zip(res.indices[row][: remainders[i]], res.dists[row][: remainders[i]]):
            j = index_space[int(jj)]
            if j != i and j not in have:
                if g.node_neigh[j] < params.neigh_limit and g.reach[i] > dist:
                    g.neigh_list[i].append(j)
                    have.add(j)
                    g.no_tot_neigh[i] += 1
                    g.node_neigh[j] += 1
            if dist > g.reach[i]:
                # candidate already beyond reach: node is interior, not hull
                g.neigh_finished[i] = True
    return


def ens_iteration(g: PatternGraph, params: HeuristicParams, mode: str | None = None) -> PatternGraph:
    """One full exclusive-neighbor-search iteration (both directions).

    Over-subscription counts reset at the start of the iteration and
    accumulate across both passes so the space reduction that follows
    sees the whole iteration's traffic.
    """
    mode = mode or params.ann_mode
    g.node_neigh[:] = 0
    _ens_pass(g, g.class1_space, g.class2_space, params, mode)
    _ens_pass(g, g.class2_space, g.class1_space, params, mode)
    return g


def reduce_search_space(nodes: list[int], node_neigh, neigh_limit: int) -> list[int]:
    """Keep exactly the nodes still under the over-subscription limit."""
    return [i for i in nodes if node_neigh[i] < neigh_limit]


def knit(clusters: list[Cluster], params: HeuristicParams, mode: str | None = None) -> PatternGraph:
    """Full graph construction: SNS, ENS iterations, symmetric weighting."""
    mode = mode or params.ann_mode
    g = sns(clusters, params, mode)
    for _ in range(params.ens_iters):
        ens_iteration(g, params, mode)
        g.class1_space = reduce_search_space(g.class1_space, g.node_neigh, params.neigh_limit)
        g.class2_space = reduce_search_space(g.class2_space, g.node_neigh, params.neigh_limit)
    g.finalize_edges(params.C_I_init, params.C_E_init)
    return g


def save_graph(g: PatternGraph, path, config: dict | None = None) -> None:
    """Node records then edge records, one JSON object per line."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        meta = {"kind": "meta", "n_nodes": g.n_nodes}
        if config is not None:
            meta["config"] = config
        fh.write(json.dumps(meta) + "\n")
        for i in range(g.n_nodes):
            fh.write(
                json.dumps(
                    {
                        "kind": "node",
                        "id": i,
                        "center": [float(v) for v in g.centers[i]],
                        "tc": float(g.tc[i]),
                        "size": int(g.sizes[i]),
                        "reach": float(g.reach[i]),
                        "finished": bool(g.neigh_finished[i]),
                    }
                )
                + "\n"
            )
        for i, j, w in g.edges():
            fh.write(json.dumps({"kind": "edge", "i": i, "j": j, "w": w}) + "\n")


def load_graph(path) -> PatternGraph:
    path = Path(path)
    nodes: list[dict] = []
    edges: list[tuple[int, int, float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec["kind"] == "node":
                nodes.append(rec)
            elif rec["kind"] == "edge":
                edges.append((rec["i"], rec["j"], rec["w"]))
    if not nodes:
        raise ValueError(f"{path}: no nodes")
    nodes.sort(key=lambda r: r["id"])
    centers = np.array([r["center"] for r in nodes])
    tc = np.array([r["tc"] for r in nodes])
    sizes = np.array([r["size"] for r in nodes])
    g = PatternGraph(centers, tc, sizes)
    g.reach = np.array([r["reach"] for r in nodes])
    g.neigh_finished = np.array([r["finished"] for r in nodes], dtype=bool)
    for i, j, w in edges:
        g.adj[i][j] = w
        g.adj[j][i] = w
        g.neigh_list[i].append(j)
    return g
