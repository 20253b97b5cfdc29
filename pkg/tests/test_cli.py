import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from graphshed.cli import main
from graphshed.clubbing import load_partitions
from graphshed.data import load_csv


def run_cli(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


class TestUsage:
    def test_unknown_flag_exits_one(self, capsys):
        code, _, err = run_cli(["gen-data", "--dataset", "one", "--wat", "3"], capsys)
        assert code == 1
        assert "usage" in err.lower()

    def test_unknown_subcommand_exits_one(self, capsys):
        code, _, _ = run_cli(["explode"], capsys)
        assert code == 1

    def test_pipeline_error_exits_two(self, capsys, tmp_path):
        code, _, err = run_cli(["cluster", "--data", str(tmp_path / "nope.csv"),
                                "--out", str(tmp_path / "c.jsonl")], capsys)
        assert code == 2
        assert "error" in err.lower()


class TestGenData:
    def test_writes_csv_with_config_echo(self, capsys, tmp_path):
        out = tmp_path / "ds.csv"
        code, stdout, _ = run_cli(
            ["gen-data", "--dataset", "one", "--n", "500", "--d", "2",
             "--out", str(out), "--seed", "7"],
            capsys,
        )
        assert code == 0
        first = out.read_text().splitlines()[0]
        assert first.startswith("# config:")
        assert '"seed": 7' in first
        ds = load_csv(out)
        assert ds.n == 500 and ds.d == 2

    def test_deterministic_per_seed(self, capsys, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (a, b):
            run_cli(["gen-data", "--dataset", "two", "--n", "200", "--d", "3",
                     "--out", str(out), "--seed", "3"], capsys)
        assert a.read_bytes() == b.read_bytes()


class TestConfigLayering:
    def test_file_env_flag_precedence(self, capsys, tmp_path, monkeypatch):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("seed = 1\nnn = 5\n# comment\n", encoding="utf-8")
        monkeypatch.setenv("GRAPHSHED_SEED", "2")
        out = tmp_path / "ds.csv"
        code, _, _ = run_cli(
            ["gen-data", "--dataset", "one", "--n", "50", "--d", "2",
             "--out", str(out), "--config", str(cfg), "--seed", "3"],
            capsys,
        )
        assert code == 0
        echo = json.loads(out.read_text().splitlines()[0].split("# config: ")[1])
        assert echo["seed"] == 3  # flag beats env beats file
        assert echo["nn"] == 5  # from the file

    def test_env_beats_file(self, capsys, tmp_path, monkeypatch):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("seed = 1\n", encoding="utf-8")
        monkeypatch.setenv("GRAPHSHED_SEED", "2")
        out = tmp_path / "ds.csv"
        run_cli(["gen-data", "--dataset", "one", "--n", "50", "--d", "2",
                 "--out", str(out), "--config", str(cfg)], capsys)
        echo = json.loads(out.read_text().splitlines()[0].split("# config: ")[1])
        assert echo["seed"] == 2

    def test_unknown_config_key_rejected(self, capsys, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("frobnicate = 1\n", encoding="utf-8")
        code, _, err = run_cli(
            ["gen-data", "--dataset", "one", "--n", "10", "--d", "2",
             "--out", str(tmp_path / "x.csv"), "--config", str(cfg)],
            capsys,
        )
        assert code == 1
        assert "unknown key" in err

    def test_unknown_env_key_rejected(self, capsys, tmp_path, monkeypatch):
        monkeypatch.setenv("GRAPHSHED_BOGUS", "1")
        code, _, err = run_cli(
            ["gen-data", "--dataset", "one", "--n", "10", "--d", "2",
             "--out", str(tmp_path / "x.csv")],
            capsys,
        )
        assert code == 1


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """One dataset taken through every file-checkpointed stage."""
    d = tmp_path_factory.mktemp("pipe")
    args = lambda *a: main(list(a)) == 0 or pytest.fail(f"subcommand failed: {a}")
    ds = d / "ds.csv"
    args("gen-data", "--dataset", "one", "--n", "4000", "--d", "2",
         "--out", str(ds), "--seed", "0", "--margin", "0.1")
    args("cluster", "--data", str(ds), "--n-c", "40", "--seed", "0",
         "--out", str(d / "clusters.jsonl"))
    args("knit", "--clusters", str(d / "clusters.jsonl"), "--ens-iters", "1",
         "--r", "2.0", "--out", str(d / "graph.jsonl"))
    args("shed", "--graph", str(d / "graph.jsonl"), "--clusters", str(d / "clusters.jsonl"),
         "--data", str(ds), "--out", str(d / "relevant.json"))
    args("club", "--graph", str(d / "graph.jsonl"), "--clusters", str(d / "clusters.jsonl"),
         "--data", str(ds), "--out", str(d / "parts.jsonl"),
         "--cost-history", str(d / "cost.csv"))
    return d


class TestPipelineCheckpoints:
    def test_all_artifacts_written(self, pipeline_dir):
        for name in ("ds.csv", "clusters.jsonl", "graph.jsonl", "relevant.json",
                     "parts.jsonl", "cost.csv"):
            assert (pipeline_dir / name).exists()

    def test_checkpoint_fidelity_vs_in_process(self, pipeline_dir):
        # composing subcommands through files gives the same partitions
        # as the in-process pipeline
        from graphshed.clubbing import club
        from graphshed.clustering import cluster as cluster_fn
        from graphshed.knitting import HeuristicParams, knit

        ds = load_csv(pipeline_dir / "ds.csv")
        params = HeuristicParams(n_c=40, ens_iters=1, R=2.0, seed=0)
        res = cluster_fn(ds, 40, params.cluster_iters, seed=0)
        g = knit(res.clusters, params)
        want = club(g, res, params, ds.targets)
        got = load_partitions(pipeline_dir / "parts.jsonl")
        assert len(got) == len(want)
        for a, b in zip(want.partitions, got.partitions):
            assert a.cluster_ids == b.cluster_ids
            assert np.array_equal(a.point_ids, b.point_ids)

    def test_shed_with_huge_cut_exits_two(self, pipeline_dir, capsys):
        code, _, err = run_cli(
            ["shed", "--graph", str(pipeline_dir / "graph.jsonl"),
             "--clusters", str(pipeline_dir / "clusters.jsonl"),
             "--data", str(pipeline_dir / "ds.csv"),
             "--out", str(pipeline_dir / "nope.json"),
             "--gs-edge-cut", "1e9"],
            capsys,
        )
        assert code == 2
        assert "empty reduced set" in err

    def test_config_echo_embedded_in_artifacts(self, pipeline_dir):
        first = json.loads((pipeline_dir / "clusters.jsonl").read_text().splitlines()[0])
        assert first["kind"] == "meta" and "config" in first
        rel = json.loads((pipeline_dir / "relevant.json").read_text())
        assert "config" in rel


class TestTrainPredict:
    def test_full_training_prints_high_accuracy(self, capsys, tmp_path):
        ds = tmp_path / "ds.csv"
        run_cli(["gen-data", "--dataset", "one", "--n", "1500", "--d", "2",
                 "--out", str(ds), "--seed", "1"], capsys)
        code, out, _ = run_cli(["train", "--full", "--data", str(ds),
                                "--model-out", str(tmp_path / "m.model")], capsys)
        assert code == 0
        acc = float(out.strip().split()[-1])
        assert acc >= 0.98

    def test_gsh_report_written(self, capsys, tmp_path):
        ds = tmp_path / "ds.csv"
        run_cli(["gen-data", "--dataset", "one", "--n", "3000", "--d", "2",
                 "--out", str(ds), "--seed", "1", "--margin", "0.1"], capsys)
        report = tmp_path / "rep.json"
        code, out, _ = run_cli(
            ["train", "--gsh", "--data", str(ds), "--n-c", "30", "--report", str(report)],
            capsys,
        )
        assert code == 0
        doc = json.loads(report.read_text())
        assert doc["pipeline"] == "gsh" and "config" in doc
        assert doc["n_reduced"] < 3000

    def test_predict_single_model_file(self, capsys, tmp_path):
        ds = tmp_path / "ds.csv"
        run_cli(["gen-data", "--dataset", "one", "--n", "800", "--d", "2",
                 "--out", str(ds), "--seed", "2"], capsys)
        run_cli(["train", "--full", "--data", str(ds),
                 "--model-out", str(tmp_path / "m.model")], capsys)
        code, out, _ = run_cli(["predict", "--test", str(ds),
                                "--model", str(tmp_path / "m.model")], capsys)
        assert code == 0
        assert float(out.strip().split()[-1]) >= 0.95

    def test_gch_then_ensemble_predict(self, capsys, tmp_path):
        ds = tmp_path / "ds.csv"
        run_cli(["gen-data", "--dataset", "one", "--n", "4000", "--d", "2",
                 "--out", str(ds), "--seed", "3", "--margin", "0.1"], capsys)
        run_cli(["cluster", "--data", str(ds), "--n-c", "40", "--seed", "0",
                 "--out", str(tmp_path / "c.jsonl")], capsys)
        run_cli(["knit", "--clusters", str(tmp_path / "c.jsonl"), "--ens-iters", "1",
                 "--r", "2.0", "--out", str(tmp_path / "g.jsonl")], capsys)
        run_cli(["club", "--graph", str(tmp_path / "g.jsonl"),
                 "--clusters", str(tmp_path / "c.jsonl"), "--data", str(ds),
                 "--out", str(tmp_path / "p.jsonl")], capsys)
        code, out, _ = run_cli(
            ["train", "--gch", "--data", str(ds), "--n-c", "40",
             "--ens-iters", "1", "--r", "2.0",
             "--model-out", str(tmp_path / "models")], capsys)
        assert code == 0
        code, out, _ = run_cli(
            ["predict", "--test", str(ds), "--model-dir", str(tmp_path / "models"),
             "--parts", str(tmp_path / "p.jsonl"),
             "--clusters", str(tmp_path / "c.jsonl"),
             "--report", str(tmp_path / "rep.json")],
            capsys,
        )
        assert code == 0
        doc = json.loads((tmp_path / "rep.json").read_text())
        assert doc["weighted_accuracy"] >= 0.9


class TestServeWork:
    def test_distributed_round_trip_subprocesses(self, tmp_path):
        env = dict(os.environ)
        d = tmp_path
        ds = d / "ds.csv"

        def cli(*a, background=False):
            cmd = [sys.executable, "-m", "graphshed", *a]
            if background:
                return subprocess.Popen(cmd, env=env, stdout=subprocess.PIPE,
                                        stderr=subprocess.PIPE, text=True)
            r = subprocess.run(cmd, env=env, capture_output=True, text=True, timeout=300)
            assert r.returncode == 0, r.stderr
            return r

        cli("gen-data", "--dataset", "one", "--n", "3000", "--d", "2",
            "--out", str(ds), "--seed", "0", "--margin", "0.1")
        cli("cluster", "--data", str(ds), "--n-c", "30", "--seed", "0",
            "--out", str(d / "c.jsonl"))
        cli("knit", "--clusters", str(d / "c.jsonl"), "--ens-iters", "1",
            "--r", "2.0", "--out", str(d / "g.jsonl"))
        cli("club", "--graph", str(d / "g.jsonl"), "--clusters", str(d / "c.jsonl"),
            "--data", str(ds), "--out", str(d / "p.jsonl"))

        import socket

        s = socket.socket()
        s.bind(("127.0.0.1", 0))
        port = str(s.getsockname()[1])
        s.close()

        serve = cli("serve", "--parts", str(d / "p.jsonl"), "--data", str(ds),
                    "--workers", "2", "--port", port, "--log", str(d / "log.json"),
                    "--timeout", "120", background=True)
        workers = [
            cli("work", "--model-dir", str(d / f"w{i}"), "--port", port,
                "--timeout", "120", background=True)
            for i in range(2)
        ]
        out, err = serve.communicate(timeout=300)
        assert serve.returncode == 0, err
        for w in workers:
            wout, werr = w.communicate(timeout=300)
            assert w.returncode == 0, werr

        parts = load_partitions(d / "p.jsonl")
        files = sorted(f.name for i in range(2) for f in (d / f"w{i}").glob("*.model"))
        assert len(files) == len(parts)
        log = json.loads((d / "log.json").read_text())
        dones = [e for e in log["events"] if e["event"] == "done_training"]
        assert len(dones) == len(parts)
