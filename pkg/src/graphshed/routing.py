"""Test-phase pre-processor: route each point to a partition classifier.

Every relevant cluster center is indexed under its partition id; a test
point goes to the partition of its nearest center (nearest hypothesis).
The routing pass is cheap next to kernel prediction and its share of
the test phase is reported.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import ann
from .clubbing import PartitionSet
from .clustering import ClusteringResult
from .data import Dataset
from .training import EnsembleModel


@dataclass
class Router:
    index: ann.NNIndex
    center_partition: np.ndarray  # indexed-center row -> partition id
    center_ids: np.ndarray  # indexed-center row -> cluster id


@dataclass
class AccuracyReport:
    n_test: int
    per_partition: list[dict]
    weighted_accuracy: float
    routing_seconds: float
    predict_seconds: float
    preprocess_fraction: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def build_router(parts: PartitionSet, clustering: ClusteringResult, mode: str = "exact") -> Router:
    """Index the centers of every partitioned cluster, tagged by partition."""
    if not parts.partitions:
        raise ValueError("cannot route over an empty partition set")
    rows = []
    for p in parts.partitions:
        for cid in p.cluster_ids:
            rows.append((cid, p.id))
    rows.sort()
    center_ids = np.array([cid for cid, _ in rows], dtype=np.int64)
    center_partition = np.array([pid for _, pid in rows], dtype=np.int64)
    centers = clustering.centers[center_ids]
    return Router(ann.build(centers, mode=mode), center_partition, center_ids)


def route(r: Router, test_points) -> np.ndarray:
    """Partition id of the nearest indexed center, per test point."""
    res = r.index.query(np.asarray(test_points, dtype=np.float64), k=1)
    return r.center_partition[res.indices[:, 0]]


def ensemble_predict(ens: EnsembleModel, r: Router, test: Dataset):
    """Predict every test point with its routed partition model.

    Returns the labels and a report with per-partition accuracy, the
    size-weighted average accuracy, and the share of test-phase time
    spent routing.
    """
    t0 = time.perf_counter()
    pids = route(r, test.features)
    t1 = time.perf_counter()

    labels = np.empty(test.n, dtype=np.int64)
    rows = []
    for p in ens.parts.partitions:
        mask = pids == p.id
        n_routed = int(mask.sum())
        if n_routed == 0:
            rows.append({"partition": p.id, "n_routed": 0, "accuracy": None})
            continue
        pred = ens.models[p.id].predict(test.features[mask])
        labels[mask] = pred
        acc = float(np.mean(pred == test.targets[mask]))
        rows.append({"partition": p.id, "n_routed": n_routed, "accuracy": acc})
    t2 = time.perf_counter()

    routed = [row for row in rows if row["n_routed"] > 0]
    total = sum(row["n_routed"] for row in routed)
    weighted = sum(row["n_routed"] * row["accuracy"] for row in routed) / total
    routing_s = t1 - t0
    predict_s = t2 - t1
    report = AccuracyReport(
        n_test=test.n,
        per_partition=rows,
        weighted_accuracy=float(weighted),
        routing_seconds=routing_s,
        predict_seconds=predict_s,
        preprocess_fraction=routing_s / (routing_s + predict_s),
    )
    return labels, report


def save_report(report: AccuracyReport, path, config: dict | None = None) -> None:
    rec = asdict(report)
    if config is not None:
        rec["config"] = config
    Path(path).write_text(json.dumps(rec, sort_keys=True) + "\n", encoding="utf-8")
