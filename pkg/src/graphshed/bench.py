"""Desk-scale comparison harness: full vs reduced vs partitioned training.

Sweeps run the configured pipelines over a ladder of dataset sizes and
emit one row per (size, pipeline) with stage timings, accuracies, and
reduction stats.  Timings take the median over repetitions; everything
else is identical across repetitions for a fixed seed.  A separate
micro-benchmark compares the two point-messaging protocols on loopback.
"""

from __future__ import annotations

import csv
import json
import socket
import threading
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from statistics import median

import numpy as np

from . import distnet
from .data import Dataset, SplitSpec, gen_dataset_one, gen_dataset_two, split
from .knitting import HeuristicParams
from .routing import build_router, ensemble_predict
from .training import ClassifierSpec, accuracy, train, train_gch_serial, train_gsh

_STAGES = ("cluster", "knit", "shed", "club", "train", "route", "predict")


@dataclass
class SweepSpec:
    generator: str = "one"  # "one" | "two"
    sizes: tuple[int, ...] = (1000,)
    n_c: tuple[int, ...] | None = None  # aligned with sizes; None: size // 100
    pipelines: tuple[str, ...] = ("full", "gsh", "gch_serial")
    classifier: ClassifierSpec = field(default_factory=ClassifierSpec)
    params: HeuristicParams = field(default_factory=HeuristicParams)
    test_ratio: float = 3.0  # test set size as a multiple of the training size
    repetitions: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.sizes:
            raise ValueError("size ladder must be non-empty")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.n_c is not None and len(self.n_c) != len(self.sizes):
            raise ValueError("n_c ladder must align with the size ladder")


@dataclass
class BenchRow:
    pipeline: str
    n_train: int
    n_test: int
    n_c: int
    kernel: str
    seed: int
    timings_ms: dict[str, float]
    accuracy: float | None
    n_partitions: int
    n_reduced: int
    preprocess_fraction: float | None
    error: str = ""

    def total_ms(self) -> float:
        return sum(self.timings_ms.values())


def _make_data(spec: SweepSpec, n_train: int) -> tuple[Dataset, Dataset]:
    n_total = int(n_train * (1 + spec.test_ratio))
    if spec.generator == "one":
        ds = gen_dataset_one(n_total, 2, seed=spec.seed)
    elif spec.generator == "two":
        ds = gen_dataset_two(n_total, 3, seed=spec.seed)
    else:
        raise ValueError(f"unknown generator {spec.generator!r}")
    return split(ds, SplitSpec(train_fraction=n_train / n_total, seed=spec.seed))


def _run_once(spec: SweepSpec, pipeline: str, train_ds: Dataset, test_ds: Dataset, n_c: int) -> BenchRow:
    params = HeuristicParams(**{**asdict(spec.params), "n_c": n_c, "seed": spec.seed})
    timings: dict[str, float] = {}
    acc = None
    n_parts = 1
    n_reduced = train_ds.n
    frac = None
    if pipeline == "full":
        t0 = time.perf_counter()
        model = train(train_ds.features, train_ds.targets, spec.classifier)
        timings["train"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        acc = accuracy(model, test_ds.features, test_ds.targets)
        timings["predict"] = time.perf_counter() - t0
    elif pipeline == "gsh":
        model, report = train_gsh(train_ds, params, spec.classifier)
        timings.update(report.timings)
        n_reduced = report.n_reduced
        t0 = time.perf_counter()
        acc = accuracy(model, test_ds.features, test_ds.targets)
        timings["predict"] = time.perf_counter() - t0
    elif pipeline == "gch_serial":
        ens, report = train_gch_serial(train_ds, params, spec.classifier)
        timings.update(report.timings)
        n_reduced = report.n_reduced
        n_parts = report.n_partitions
        router = build_router(ens.parts, ens.clustering, mode="exact")
        _, acc_report = ensemble_predict(ens, router, test_ds)
        timings["route"] = acc_report.routing_seconds
        timings["predict"] = acc_report.predict_seconds
        acc = acc_report.weighted_accuracy
        frac = acc_report.preprocess_fraction
    else:
        raise ValueError(f"unknown pipeline {pipeline!r}")
    return BenchRow(
        pipeline=pipeline,
        n_train=train_ds.n,
        n_test=test_ds.n,
        n_c=n_c,
        kernel=spec.classifier.kernel,
        seed=spec.seed,
        timings_ms={k: 1000.0 * v for k, v in timings.items()},
        accuracy=acc,
        n_partitions=n_parts,
        n_reduced=n_reduced,
        preprocess_fraction=frac,
    )


def run_sweep(spec: SweepSpec) -> list[BenchRow]:
    """One row per ladder point and pipeline; timings are medians over reps."""
    rows: list[BenchRow] = []
    for step, n_train in enumerate(spec.sizes):
        n_c = spec.n_c[step] if spec.n_c is not None else max(2, n_train // 100)
        train_ds, test_ds = _make_data(spec, n_train)
        for pipeline in spec.pipelines:
            reps: list[BenchRow] = []
            err = ""
            for _ in range(spec.repetitions):
                try:
                    reps.append(_run_once(spec, pipeline, train_ds, test_ds, n_c))
                except Exception as exc:  # recorded in-row, sweep continues
                    err = f"{type(exc).__name__}: {exc}"
                    break
            if not reps:
                rows.append(
                    BenchRow(pipeline, train_ds.n, test_ds.n, n_c, spec.classifier.kernel,
                             spec.seed, {}, None, 0, 0, None, error=err)
                )
                continue
            first = reps[0]
            merged = {
                stage: median(r.timings_ms.get(stage, 0.0) for r in reps)
                for stage in first.timings_ms
            }
            first.timings_ms = merged
            rows.append(first)
    return rows


def run_protocol_bench(d: int, n_points: int, workers: int = 1, host: str = "127.0.0.1") -> dict:
    """Time the transfer of n_points under both messaging protocols.

    The sender streams to `workers` sink connections over loopback; the
    entry-wise protocol sends exactly (d+1) times the point messages of
    the marshaled one.
    """
    if d < 1:
        raise ValueError("cannot send points with empty features")
    rng = np.random.default_rng(0)
    feats = rng.random((n_points, d))
    targets = np.where(rng.random(n_points) < 0.5, 1, -1)
    out: dict = {"d": d, "n_points": n_points, "workers": workers}
    for protocol in (1, 2):
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((host, 0))
        listener.listen(workers)
        port = listener.getsockname()[1]
        received: list[int] = []

        def sink():
            conn, _ = listener.accept()
            decoder = distnet.FrameDecoder()
            got = 0
            expect = None
            while expect is None or got < expect:
                data = conn.recv(1 << 16)
                if not data:
                    break
                for msg in decoder.feed(data):
                    if msg.msg_type == distnet.EventTag.DATA_BEGIN:
                        _, count, dd = distnet._DATA_BEGIN_FMT.unpack(msg.payload)
                        expect = count if protocol == 1 else count * (dd + 1)
                    elif msg.msg_type in (distnet.EventTag.DATA_POINT, distnet.EventTag.DATA_ENTRY):
                        got += 1
            received.append(got)
            conn.close()

        threads = [threading.Thread(target=sink) for _ in range(workers)]
        for t in threads:
            t.start()
        shares = np.array_split(np.arange(n_points), workers)
        sent = 0
        t0 = time.perf_counter()
        for share in shares:
            conn = socket.create_connection((host, port))
            begin = distnet._DATA_BEGIN_FMT.pack(0, len(share), d)
            distnet.send_message(conn, distnet.EventTag.DATA_BEGIN, begin)
            sent += distnet.send_points(conn, feats[share], targets[share], protocol)
            conn.close()
        for t in threads:
            t.join()
        elapsed = time.perf_counter() - t0
        listener.close()
        out[f"p{protocol}_messages"] = sent
        out[f"p{protocol}_seconds"] = elapsed
        if sum(received) != sent:
            raise RuntimeError(f"protocol {protocol}: sent {sent} messages, sank {sum(received)}")
    return out


# ---------------------------------------------------------------------------
# row serialization

_CSV_FIELDS = [
    "pipeline", "n_train", "n_test", "n_c", "kernel", "seed",
    *[f"t_{s}_ms" for s in _STAGES],
    "accuracy", "n_partitions", "n_reduced", "preprocess_fraction", "error",
]


def rows_to_csv(rows: list[BenchRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=_CSV_FIELDS)
        writer.writeheader()
        for r in rows:
            rec = {
                "pipeline": r.pipeline,
                "n_train": r.n_train,
                "n_test": r.n_test,
                "n_c": r.n_c,
                "kernel": r.kernel,
                "seed": r.seed,
                "accuracy": "" if r.accuracy is None else repr(r.accuracy),
                "n_partitions": r.n_partitions,
                "n_reduced": r.n_reduced,
                "preprocess_fraction": "" if r.preprocess_fraction is None else repr(r.preprocess_fraction),
                "error": r.error,
            }
            for s in _STAGES:
                rec[f"t_{s}_ms"] = repr(r.timings_ms[s]) if s in r.timings_ms else ""
            writer.writerow(rec)


def rows_from_csv(path) -> list[BenchRow]:
    rows: list[BenchRow] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            timings = {
                s: float(rec[f"t_{s}_ms"]) for s in _STAGES if rec.get(f"t_{s}_ms", "") != ""
            }
            rows.append(
                BenchRow(
                    pipeline=rec["pipeline"],
                    n_train=int(rec["n_train"]),
                    n_test=int(rec["n_test"]),
                    n_c=int(rec["n_c"]),
                    kernel=rec["kernel"],
                    seed=int(rec["seed"]),
                    timings_ms=timings,
                    accuracy=float(rec["accuracy"]) if rec["accuracy"] != "" else None,
                    n_partitions=int(rec["n_partitions"]),
                    n_reduced=int(rec["n_reduced"]),
                    preprocess_fraction=(
                        float(rec["preprocess_fraction"]) if rec["preprocess_fraction"] != "" else None
                    ),
                    error=rec.get("error", ""),
                )
            )
    return rows


def summary_json(rows: list[BenchRow], path, config: dict | None = None) -> None:
    doc = {"rows": [asdict(r) for r in rows]}
    if config is not None:
        doc["config"] = config
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")
