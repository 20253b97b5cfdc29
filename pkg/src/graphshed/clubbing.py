"""Partitioning of the reduced set by iterated matching and coarsening.

Each iteration greedily matches the heaviest above-cut edges (partial
weighted matching) and contracts the matched pairs.  A contracted node
takes the minimum id of its pair, a point-count-weighted target class,
and the sorted union of both adjacencies; edges between contracted
nodes are re-weighted with separate re-assessment constants, which is
what prioritizes original heavy edges over freshly merged ones.  The
above-cut edge weight total (the graph cost) drops steeply while
original edges last, then flattens; the kink in its backward difference
is an optional termination signal besides the iteration cap.

Partitions are the union-find components of all contractions plus a
singleton for every relevant cluster that never matched, so no selected
training data is dropped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clustering import ClusteringResult
from .knitting import HeuristicParams, PatternGraph, edge_weight
from .shedding import expand, shed


@dataclass
class Matching:
    pairs: list[tuple[int, int]]

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass
class Partition:
    id: int
    cluster_ids: list[int]
    point_ids: np.ndarray
    class_counts: tuple[int, int]  # (count of -1, count of +1)

    @property
    def size(self) -> int:
        return int(self.point_ids.size)


@dataclass
class PartitionSet:
    partitions: list[Partition]
    cost_history: list[float] = field(default_factory=list)
    iterations_run: int = 0

    def __len__(self) -> int:
        return len(self.partitions)


class CoarsenState:
    """Mutable coarsening workspace over the relevant subgraph."""

    def __init__(self, g: PatternGraph, node_ids: list[int], point_sizes: dict[int, int]):
        keep = set(node_ids)
        self.adj: dict[int, dict[int, float]] = {
            i: {j: w for j, w in g.adj[i].items() if j in keep} for i in node_ids
        }
        self.tc: dict[int, float] = {i: float(g.tc[i]) for i in node_ids}
        self.sizes: dict[int, int] = {i: point_sizes[i] for i in node_ids}
        self.parent: dict[int, int] = {i: i for i in node_ids}
        self.critical_nodes: set[int] = set()
        self.cost_history: list[float] = []
        # supernode position kept for serialization and plotting only
        self.centroid: dict[int, np.ndarray] = {i: g.centers[i].copy() for i in node_ids}

    def find(self, i: int) -> int:
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    @property
    def alive(self) -> list[int]:
        return sorted(self.adj)


def pwm(g, edge_cut: float) -> Matching:
    """Partial weighted matching: greedy scan of above-cut edges.

    Edges are sorted heaviest first (ties by the lower canonical edge
    id) and matched when both endpoints are still free.
    """
    adj = g.adj
    edge_list = []
    for i in sorted(adj):
        for j in sorted(adj[i]):
            if i < j and adj[i][j] >= edge_cut:
                edge_list.append((-adj[i][j], i, j))
    edge_list.sort()
    visited: set[int] = set()
    pairs: list[tuple[int, int]] = []
    for negw, i, j in edge_list:
        if i not in visited and j not in visited:
            pairs.append((i, j))
            visited.add(i)
            visited.add(j)
    return Matching(pairs)


def graph_cost(g, edge_cut: float) -> float:
    """Sum of edge weights strictly above the cut."""
    adj = g.adj
    total = 0.0
    for i in adj:
        for j, w in adj[i].items():
            if i < j and w > edge_cut:
                total += w
    return total


def kink_detected(prev_cost: float, prev_prev_cost: float, curr_cost: float, theta: float) -> bool:
    """Backward-difference kink: the latest drop shrank below theta of the prior one."""
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must be in (0, 1)")
    return abs(curr_cost - prev_cost) < theta * abs(prev_cost - prev_prev_cost)


def contract(state: CoarsenState, m: Matching, params: HeuristicParams) -> CoarsenState:
    """Contract all matched pairs, then re-assess contracted-pair edges.

    The surviving node id is min(i, j); its target class is the
    point-count-weighted mean, so it equals the mean target of all
    underlying data points.  Parallel edges collapse keeping the larger
    weight; edges between contracted (critical) nodes are then
    re-weighted with the re-assessment constants.
    """
    for i, j in m.pairs:
        if i not in state.adj or j not in state.adj:
            raise ValueError(f"stale matching: pair ({i}, {j}) not in current graph")
    new_critical: list[int] = []
    for i, j in m.pairs:
        a, b = (i, j) if i < j else (j, i)
        sa, sb = state.sizes[a], state.sizes[b]
        state.tc[a] = (sa * state.tc[a] + sb * state.tc[b]) / (sa + sb)
        state.centroid[a] = (sa * state.centroid[a] + sb * state.centroid[b]) / (sa + sb)
        state.sizes[a] = sa + sb
        for nbr, w in state.adj[b].items():
            if nbr == a:
                continue  # the contracted edge becomes a self loop, dropped
            existing = state.adj[a].get(nbr)
            merged = w if existing is None else max(existing, w)
            state.adj[a][nbr] = merged
            state.adj[nbr][a] = merged
            del state.adj[nbr][b]
        state.adj[a].pop(b, None)
        del state.adj[b]
        del state.tc[b], state.sizes[b], state.centroid[b]
        state.parent[b] = a
        state.critical_nodes.discard(b)
        state.critical_nodes.add(a)
        new_critical.append(a)
    for a in new_critical:
        for nbr in sorted(state.adj[a]):
            if nbr in state.critical_nodes:
                w = edge_weight(state.tc[a], state.tc[nbr], params.C_I_reassess, params.C_E_reassess)
                state.adj[a][nbr] = w
                state.adj[nbr][a] = w
    return state


def club(g: PatternGraph, clustering: ClusteringResult, params: HeuristicParams, targets: np.ndarray | None = None) -> PartitionSet:
    """Iterated matching and coarsening over the shedding-relevant nodes.

    Runs up to max_coarsen_iters iterations, recording the graph cost
    after each; when stop_on_kink is set the cost kink terminates early
    (the iteration cap always binds).  Never-matched relevant clusters
    come back as singleton partitions.
    """
    relevant = shed(g, params.gs_edge_cut)
    sizes = {i: int(g.sizes[i]) for i in relevant}
    state = CoarsenState(g, relevant, sizes)
    state.cost_history.append(graph_cost(state, params.gc_edge_cut))
    iterations = 0
    while iterations < params.max_coarsen_iters:
        m = pwm(state, params.gc_edge_cut)
        if not m.pairs:
            break
        contract(state, m, params)
        state.cost_history.append(graph_cost(state, params.gc_edge_cut))
        iterations += 1
        h = state.cost_history
        if params.stop_on_kink and len(h) >= 3 and kink_detected(h[-2], h[-3], h[-1], params.kink_theta):
            break

    groups: dict[int, list[int]] = {}
    for i in relevant:
        groups.setdefault(state.find(i), []).append(i)
    partitions = []
    for pid, root in enumerate(sorted(groups)):
        cluster_ids = sorted(groups[root])
        point_ids = expand(cluster_ids, clustering)
        if targets is not None:
            t = targets[point_ids]
            counts = (int(np.sum(t == -1)), int(np.sum(t == 1)))
        else:
            counts = (0, 0)
        partitions.append(Partition(pid, cluster_ids, point_ids, counts))
    return PartitionSet(partitions, state.cost_history, iterations)


def save_partitions(parts: PartitionSet, path, config: dict | None = None) -> None:
    """One partition per JSON line after a meta record with the cost history."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        meta = {
            "kind": "meta",
            "n_partitions": len(parts),
            "cost_history": parts.cost_history,
            "iterations_run": parts.iterations_run,
        }
        if config is not None:
            meta["config"] = config
        fh.write(json.dumps(meta) + "\n")
        for p in parts.partitions:
            fh.write(
                json.dumps(
                    {
                        "kind": "partition",
                        "id": p.id,
                        "cluster_ids": [int(c) for c in p.cluster_ids],
                        "point_ids": [int(x) for x in p.point_ids],
                        "class_counts": list(p.class_counts),
                    }
                )
                + "\n"
            )


def load_partitions(path) -> PartitionSet:
    path = Path(path)
    partitions: list[Partition] = []
    cost_history: list[float] = []
    iterations_run = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec["kind"] == "meta":
                cost_history = list(rec.get("cost_history", []))
                iterations_run = rec.get("iterations_run", 0)
            elif rec["kind"] == "partition":
                partitions.append(
                    Partition(
                        rec["id"],
                        list(rec["cluster_ids"]),
                        np.array(rec["point_ids"], dtype=np.int64),
                        tuple(rec.get("class_counts", (0, 0))),
                    )
                )
    if not partitions:
        raise ValueError(f"{path}: no partitions")
    return PartitionSet(partitions, cost_history, iterations_run)


def save_cost_history(history, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iteration,cost\n")
        for i, c in enumerate(history):
            fh.write(f"{i},{repr(float(c))}\n")
