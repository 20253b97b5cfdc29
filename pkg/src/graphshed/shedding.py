"""Training-set selection by edge-cut filtering of the pattern graph.

A cluster survives only if at least one of its incident edges carries a
significant weight.  Under the reference constants a pure same-class
edge weighs exactly 3, so a cut of 3.01 sheds all interior regions and
keeps the clusters that face the other class.  Because the kept regions
hug the hypothesis boundary from both sides, the reduced set is far
more balanced across classes than the original.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clustering import ClusteringResult
from .knitting import PatternGraph

log = logging.getLogger(__name__)


@dataclass
class RelevantSet:
    cluster_ids: list[int]
    point_ids: np.ndarray
    per_class_counts: tuple[int, int]  # (count of -1, count of +1)


def shed(g: PatternGraph, edge_cut: float) -> list[int]:
    """Cluster ids with at least one incident edge of weight >= edge_cut."""
    kept = []
    for i in sorted(g.adj):
        if any(w >= edge_cut for w in g.adj[i].values()):
            kept.append(i)
    return kept


def expand(cluster_ids, clustering: ClusteringResult) -> np.ndarray:
    """Union of member point ids of the given clusters, sorted."""
    if len(cluster_ids) == 0:
        return np.empty(0, dtype=np.int64)
    parts = [clustering.clusters[c].members for c in cluster_ids]
    return np.unique(np.concatenate(parts))


def imbalance_sd(counts) -> float:
    """Population standard deviation of the two per-class counts."""
    c1, c2 = counts
    return abs(c1 - c2) / 2.0


def relevant_set(g: PatternGraph, clustering: ClusteringResult, targets: np.ndarray, edge_cut: float) -> RelevantSet:
    """Shed then expand, reporting per-class counts of the reduced set."""
    kept = shed(g, edge_cut)
    points = expand(kept, clustering)
    if points.size == 0:
        log.warning("graph shedding kept no clusters at edge_cut=%g", edge_cut)
        return RelevantSet(kept, points, (0, 0))
    t = targets[points]
    return RelevantSet(kept, points, (int(np.sum(t == -1)), int(np.sum(t == 1))))


def save_relevant(rel: RelevantSet, path, config: dict | None = None) -> None:
    rec = {
        "cluster_ids": [int(c) for c in rel.cluster_ids],
        "point_ids": [int(p) for p in rel.point_ids],
        "per_class_counts": list(rel.per_class_counts),
    }
    if config is not None:
        rec["config"] = config
    Path(path).write_text(json.dumps(rec) + "\n", encoding="utf-8")


def load_relevant(path) -> RelevantSet:
    rec = json.loads(Path(path).read_text(encoding="utf-8"))
    return RelevantSet(
        list(rec["cluster_ids"]),
        np.array(rec["point_ids"], dtype=np.int64),
        tuple(rec["per_class_counts"]),
    )
