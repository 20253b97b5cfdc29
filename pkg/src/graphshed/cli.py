"""Command-line pipeline: gen-data, cluster, knit, shed, club, train,
serve, work, predict, bench.

Options layer in precedence order: command-line flags, then environment
variables prefixed GRAPHSHED_, then a `key = value` config file.  The
effective configuration is embedded into every artifact a subcommand
writes, so any run can be reconstructed from its outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import distnet
from .clubbing import club, load_partitions, save_cost_history, save_partitions
from .clustering import cluster, load_clustering, save_clustering
from .data import (
    Dataset,
    gen_dataset_one,
    gen_dataset_two,
    load_csv,
    load_libsvm_format,
    save_csv,
    save_libsvm_format,
)
from .knitting import HeuristicParams, knit, load_graph, save_graph
from .routing import build_router, ensemble_predict, save_report
from .shedding import relevant_set, save_relevant
from .training import (
    ClassifierSpec,
    EnsembleModel,
    accuracy,
    load_model,
    save_model,
    train,
    train_gch_serial,
    train_gsh,
)

ENV_PREFIX = "GRAPHSHED_"

_PARAM_KEYS = {
    "nn": int,
    "r": float,
    "max_same_class_neigh": int,
    "neigh_limit": int,
    "c_i_init": float,
    "c_e_init": float,
    "c_i_reassess": float,
    "c_e_reassess": float,
    "gs_edge_cut": float,
    "gc_edge_cut": float,
    "max_coarsen_iters": int,
    "ens_iters": int,
    "n_c": int,
    "cluster_iters": int,
    "seed": int,
    "ann_mode": str,
    "kink_theta": float,
    "stop_on_kink": bool,
}
_CLASSIFIER_KEYS = {
    "kernel": str,
    "degree": int,
    "coef0": float,
    "gamma": float,
    "c": float,
    "tol": float,
    "max_passes": int,
}
_NET_KEYS = {"host": str, "port": int, "protocol": int}
KNOWN_KEYS = {**_PARAM_KEYS, **_CLASSIFIER_KEYS, **_NET_KEYS}

_DEFAULTS = {
    "r": 1.0,
    "c": 1.0,
    "host": "127.0.0.1",
    "port": 5555,
    "protocol": 1,
    "kernel": "linear",
    "degree": 3,
    "coef0": 0.0,
    "tol": 1e-3,
    "max_passes": 1_000_000,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _coerce(key: str, raw: str):
    typ = KNOWN_KEYS[key]
    if typ is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return typ(raw)
    except ValueError as exc:
        raise UsageError(f"{key}: {exc}") from exc


def _read_config_file(path: str) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, _, raw = line.partition("=")
        key = key.strip().lower()
        if key not in KNOWN_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw.strip())
    return values


def _read_env() -> dict:
    values = {}
    for name, raw in os.environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX) :].lower()
        if key not in KNOWN_KEYS:
            raise UsageError(f"environment variable {name} does not name a known option")
        values[key] = _coerce(key, raw)
    return values


class Config:
    """Layered option values: flags over environment over config file."""

    def __init__(self, args: argparse.Namespace):
        self.values: dict = dict(_DEFAULTS)
        if getattr(args, "config", None):
            self.values.update(_read_config_file(args.config))
        self.values.update(_read_env())
        for key in KNOWN_KEYS:
            flag_val = getattr(args, f"opt_{key}", None)
            if flag_val is not None:
                self.values[key] = flag_val

    def params(self) -> HeuristicParams:
        kw = {}
        for key in _PARAM_KEYS:
            if key in self.values:
                kw["R" if key == "r" else key] = self.values[key]
        return HeuristicParams(**kw)

    def classifier(self) -> ClassifierSpec:
        kw = {}
        for key in _CLASSIFIER_KEYS:
            if key in self.values:
                kw["C" if key == "c" else key] = self.values[key]
        return ClassifierSpec(**kw)

    def echo(self) -> dict:
        return {k: self.values[k] for k in sorted(self.values)}


def _add_option_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    for key, typ in KNOWN_KEYS.items():
        flag = "--" + key.replace("_", "-")
        if typ is bool:
            p.add_argument(flag, dest=f"opt_{key}", action="store_const", const=True)
        else:
            p.add_argument(flag, dest=f"opt_{key}", type=typ, metavar=key.upper())


def _load_dataset(path: str) -> Dataset:
    if str(path).endswith((".libsvm", ".svm", ".txt")):
        return load_libsvm_format(path)
    return load_csv(path)


def _build_parser() -> _Parser:
    parser = _Parser(prog="graphshed", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic two-class dataset")
    p.add_argument("--dataset", choices=("one", "two"), required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--margin", type=float, default=0.05)
    p.add_argument("--radius", type=float, default=0.2)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "libsvm"), default="csv")
    _add_option_flags(p)

    p = sub.add_parser("cluster", help="cluster a dataset and checkpoint the result")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_option_flags(p)

    p = sub.add_parser("knit", help="build the pattern graph over a clustering")
    p.add_argument("--clusters", required=True)
    p.add_argument("--out", required=True)
    _add_option_flags(p)

    p = sub.add_parser("shed", help="select relevant clusters by edge cut")
    p.add_argument("--graph", required=True)
    p.add_argument("--clusters", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_option_flags(p)

    p = sub.add_parser("club", help="partition the relevant clusters")
    p.add_argument("--graph", required=True)
    p.add_argument("--clusters", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cost-history", help="write the per-iteration graph cost CSV here")
    _add_option_flags(p)

    p = sub.add_parser("train", help="train full, shedding-reduced, or partitioned")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--full", action="store_true")
    mode.add_argument("--gsh", action="store_true")
    mode.add_argument("--gch", action="store_true")
    p.add_argument("--data", required=True)
    p.add_argument("--test")
    p.add_argument("--model-out", help="model file (full/gsh) or directory (gch)")
    p.add_argument("--report")
    _add_option_flags(p)

    p = sub.add_parser("serve", help="distribute partitions to workers")
    p.add_argument("--parts", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--workers", type=int, required=True)
    p.add_argument("--timeout", type=float, default=600.0)
    p.add_argument("--log", help="write the acknowledgment log JSON here")
    _add_option_flags(p)

    p = sub.add_parser("work", help="request partitions, train, persist models")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--timeout", type=float, default=600.0)
    _add_option_flags(p)

    p = sub.add_parser("predict", help="evaluate a model or a partition ensemble")
    p.add_argument("--test", required=True)
    p.add_argument("--model")
    p.add_argument("--model-dir")
    p.add_argument("--parts")
    p.add_argument("--clusters")
    p.add_argument("--report")
    _add_option_flags(p)

    p = sub.add_parser("bench", help="timing sweeps and protocol micro-benchmarks")
    p.add_argument("--kind", choices=("sweep", "protocol"), required=True)
    p.add_argument("--sizes", default="1000")
    p.add_argument("--pipelines", default="full,gsh,gch_serial")
    p.add_argument("--generator", choices=("one", "two"), default="one")
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--n-points", type=int, default=10000)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="CSV output path (sweep) or JSON (protocol)")
    p.add_argument("--summary", help="JSON summary path (sweep)")
    _add_option_flags(p)

    return parser


def _cmd_gen_data(args, cfg: Config) -> int:
    seed = cfg.values.get("seed", 0)
    if args.dataset == "one":
        ds = gen_dataset_one(args.n, args.d, margin=args.margin, seed=seed)
    else:
        ds = gen_dataset_two(args.n, args.d, radius=args.radius, seed=seed)
    echo = {**cfg.echo(), "dataset": args.dataset, "n": args.n, "d": args.d,
            "margin": args.margin, "radius": args.radius}
    if args.format == "csv":
        save_csv(ds, args.out, config=echo)
    else:
        save_libsvm_format(ds, args.out, config=echo)
    print(f"wrote {ds.n} points of dimension {ds.d} to {args.out}")
    return 0


def _cmd_cluster(args, cfg: Config) -> int:
    ds = _load_dataset(args.data)
    params = cfg.params()
    res = cluster(ds, params.resolve_n_c(ds.n), params.cluster_iters, params.seed)
    save_clustering(res, args.out, config=cfg.echo())
    print(f"clustered {ds.n} points into {len(res.clusters)} clusters -> {args.out}")
    return 0


def _cmd_knit(args, cfg: Config) -> int:
    clustering = load_clustering(args.clusters)
    g = knit(clustering.clusters, cfg.params())
    save_graph(g, args.out, config=cfg.echo())
    n_edges = sum(1 for _ in g.edges())
    print(f"knitted graph: {g.n_nodes} nodes, {n_edges} edges -> {args.out}")
    return 0


def _cmd_shed(args, cfg: Config) -> int:
    g = load_graph(args.graph)
    clustering = load_clustering(args.clusters)
    ds = _load_dataset(args.data)
    rel = relevant_set(g, clustering, ds.targets, cfg.params().gs_edge_cut)
    if rel.point_ids.size == 0:
        raise RuntimeError("empty reduced set: every cluster shed; lower gs_edge_cut")
    save_relevant(rel, args.out, config=cfg.echo())
    print(
        f"kept {len(rel.cluster_ids)} clusters / {rel.point_ids.size} points "
        f"(class counts {rel.per_class_counts}) -> {args.out}"
    )
    return 0


def _cmd_club(args, cfg: Config) -> int:
    g = load_graph(args.graph)
    clustering = load_clustering(args.clusters)
    ds = _load_dataset(args.data)
    parts = club(g, clustering, cfg.params(), ds.targets)
    if not parts.partitions:
        raise RuntimeError("no partitions: every cluster shed; lower gs_edge_cut")
    save_partitions(parts, args.out, config=cfg.echo())
    if args.cost_history:
        save_cost_history(parts.cost_history, args.cost_history)
    sizes = [p.size for p in parts.partitions]
    print(f"clubbed into {len(parts)} partitions with sizes {sizes} -> {args.out}")
    return 0


def _cmd_train(args, cfg: Config) -> int:
    ds = _load_dataset(args.data)
    spec = cfg.classifier()
    params = cfg.params()
    report = None
    if args.full:
        model = train(ds.features, ds.targets, spec)
        if args.model_out:
            save_model(model, args.model_out)
        eval_ds = _load_dataset(args.test) if args.test else ds
        acc = accuracy(model, eval_ds.features, eval_ds.targets)
    elif args.gsh:
        model, report = train_gsh(ds, params, spec)
        if args.model_out:
            save_model(model, args.model_out)
        eval_ds = _load_dataset(args.test) if args.test else ds
        acc = accuracy(model, eval_ds.features, eval_ds.targets)
    else:
        ens, report = train_gch_serial(ds, params, spec)
        if args.model_out:
            out = Path(args.model_out)
            out.mkdir(parents=True, exist_ok=True)
            for p, model in zip(ens.parts.partitions, ens.models):
                save_model(model, out / f"partition_{p.id:04d}.model")
        eval_ds = _load_dataset(args.test) if args.test else ds
        router = build_router(ens.parts, ens.clustering)
        _, acc_report = ensemble_predict(ens, router, eval_ds)
        acc = acc_report.weighted_accuracy
    print(f"accuracy {acc:.4f}")
    if args.report and report is not None:
        doc = json.loads(report.to_json())
        doc["accuracy"] = acc
        doc["config"] = cfg.echo()
        Path(args.report).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")
    return 0


def _cmd_serve(args, cfg: Config) -> int:
    parts = load_partitions(args.parts)
    ds = _load_dataset(args.data)
    endpoint = (cfg.values["host"], cfg.values["port"])
    table = distnet.connect_phase(endpoint, args.workers, timeout=args.timeout)
    events = distnet.master_serve(parts, table, ds, protocol=cfg.values["protocol"], timeout=args.timeout)
    done = sum(1 for e in events if e["event"] == "done_training")
    print(f"served {len(parts)} partitions, {done} acknowledgments")
    if args.log:
        doc = {"events": events, "config": cfg.echo(),
               "connect_seconds": table.connect_seconds}
        Path(args.log).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")
    return 0


def _cmd_work(args, cfg: Config) -> int:
    endpoint = (cfg.values["host"], cfg.values["port"])
    written = distnet.worker_loop(endpoint, cfg.classifier(), args.model_dir, timeout=args.timeout)
    print(f"trained {len(written)} partitions")
    return 0


def _cmd_predict(args, cfg: Config) -> int:
    test = _load_dataset(args.test)
    if args.model:
        model = load_model(args.model)
        acc = accuracy(model, test.features, test.targets)
        print(f"accuracy {acc:.4f}")
        if args.report:
            doc = {"accuracy": acc, "n_test": test.n, "config": cfg.echo()}
            Path(args.report).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")
        return 0
    if not (args.model_dir and args.parts and args.clusters):
        raise UsageError("predict needs --model or (--model-dir, --parts, --clusters)")
    parts = load_partitions(args.parts)
    clustering = load_clustering(args.clusters)
    models = [load_model(Path(args.model_dir) / f"partition_{p.id:04d}.model") for p in parts.partitions]
    ens = EnsembleModel(models, parts, clustering)
    router = build_router(parts, clustering)
    _, report = ensemble_predict(ens, router, test)
    print(f"accuracy {report.weighted_accuracy:.4f}")
    if args.report:
        save_report(report, args.report, config=cfg.echo())
    return 0


def _cmd_bench(args, cfg: Config) -> int:
    if args.kind == "protocol":
        out = bench_mod.run_protocol_bench(args.d, args.n_points, args.workers)
        out["config"] = cfg.echo()
        text = json.dumps(out, sort_keys=True)
        print(text)
        if args.out:
            Path(args.out).write_text(text + "\n", encoding="utf-8")
        return 0
    sizes = tuple(int(s) for s in args.sizes.split(","))
    spec = bench_mod.SweepSpec(
        generator=args.generator,
        sizes=sizes,
        pipelines=tuple(args.pipelines.split(",")),
        classifier=cfg.classifier(),
        params=cfg.params(),
        repetitions=args.reps,
        seed=cfg.values.get("seed", 0),
    )
    rows = bench_mod.run_sweep(spec)
    for r in rows:
        acc = "-" if r.accuracy is None else f"{r.accuracy:.4f}"
        print(f"{r.pipeline:>10} n={r.n_train:>7} acc={acc} total={r.total_ms():9.1f} ms {r.error}")
    if args.out:
        bench_mod.rows_to_csv(rows, args.out)
    if args.summary:
        bench_mod.summary_json(rows, args.summary, config=cfg.echo())
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "cluster": _cmd_cluster,
    "knit": _cmd_knit,
    "shed": _cmd_shed,
    "club": _cmd_club,
    "train": _cmd_train,
    "serve": _cmd_serve,
    "work": _cmd_work,
    "predict": _cmd_predict,
    "bench": _cmd_bench,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = Config(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
