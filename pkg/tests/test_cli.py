import csv
import json
import time
from dataclasses import replace

import numpy as np
import pytest

import stcausal.cli as cli
import stcausal.pipeline as pipeline_mod
from stcausal.config import ExperimentConfig, quick_config
from stcausal.dgp import DgpConfig


def tiny_cfg(tmp_path, **overrides):
    base = dict(
        dgp=DgpConfig(n=50, p=5, horizon=3, block_size=5, seed=0),
        replications=1,
        methods=("ipw_only",),
        output_dir=str(tmp_path / "out"),
        mtgcn_epochs=10,
        el_max_outer=30,
        cd_max_sweeps=300,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


class TestSmoke:
    def test_single_method_fast_three_files(self, tmp_path):
        start = time.time()
        cfg = tiny_cfg(tmp_path)
        table = cli.run(cfg, quiet=True)
        elapsed = time.time() - start
        assert elapsed < 5.0
        out = tmp_path / "out"
        names = sorted(p.name for p in out.iterdir())
        assert names == ["manifest.json", "replications.csv", "table.csv"]
        assert len(table.rows) == 1
        assert table.rows[0].method == "ipw_only"

    def test_all_methods_quick(self, tmp_path):
        cfg = quick_config(output_dir=str(tmp_path / "out"), replications=1)
        table = cli.run(cfg, quiet=True)
        methods = [row.method for row in table.rows]
        assert methods == list(cfg.methods)
        mt = {row.method: row for row in table.rows}
        assert mt["mtgcn_only"].bias is None
        assert mt["mtgcn_only"].pe is not None
        assert mt["proposed"].bias is not None


class TestDeterminism:
    def test_same_seed_byte_identical(self, tmp_path):
        cfg_a = tiny_cfg(tmp_path, output_dir=str(tmp_path / "a"),
                         methods=("ipw_only", "outcome_only"), replications=2)
        cfg_b = replace(cfg_a, output_dir=str(tmp_path / "b"))
        cli.run(cfg_a, quiet=True)
        cli.run(cfg_b, quiet=True)
        for name in ("replications.csv", "table.csv"):
            a = read_bytes(str(tmp_path / "a" / name))
            b = read_bytes(str(tmp_path / "b" / name))
            assert a == b, name
        # manifests agree except for the output path itself
        ma = json.loads(read_bytes(str(tmp_path / "a" / "manifest.json")))
        mb = json.loads(read_bytes(str(tmp_path / "b" / "manifest.json")))
        ma["config"].pop("output_dir")
        mb["config"].pop("output_dir")
        assert ma == mb

    def test_worker_count_does_not_change_outputs(self, tmp_path):
        cfg_a = tiny_cfg(tmp_path, output_dir=str(tmp_path / "w1"),
                         replications=2, workers=1)
        cfg_b = replace(cfg_a, output_dir=str(tmp_path / "w2"), workers=2)
        cli.run(cfg_a, quiet=True)
        cli.run(cfg_b, quiet=True)
        assert read_bytes(str(tmp_path / "w1" / "replications.csv")) == read_bytes(
            str(tmp_path / "w2" / "replications.csv")
        )
        assert read_bytes(str(tmp_path / "w1" / "table.csv")) == read_bytes(
            str(tmp_path / "w2" / "table.csv")
        )

    def test_adding_method_preserves_other_rows(self, tmp_path):
        cfg_small = tiny_cfg(tmp_path, output_dir=str(tmp_path / "s"),
                             methods=("ipw_only",))
        cfg_big = replace(cfg_small, output_dir=str(tmp_path / "g"),
                          methods=("ipw_only", "outcome_only"))
        cli.run(cfg_small, quiet=True)
        cli.run(cfg_big, quiet=True)

        def ipw_rows(path):
            with open(path, newline="") as fh:
                return [r for r in csv.DictReader(fh) if r["method"] == "ipw_only"]

        assert ipw_rows(str(tmp_path / "s" / "replications.csv")) == ipw_rows(
            str(tmp_path / "g" / "replications.csv")
        )


class TestFailureIsolation:
    def test_failed_method_recorded_run_continues(self, tmp_path, monkeypatch):
        original = pipeline_mod.ReplicationPipeline.run

        def flaky(self, name):
            if name == "outcome_only":
                raise RuntimeError("synthetic failure")
            return original(self, name)

        monkeypatch.setattr(pipeline_mod.ReplicationPipeline, "run", flaky)
        monkeypatch.setattr(cli, "ReplicationPipeline", pipeline_mod.ReplicationPipeline)
        cfg = tiny_cfg(tmp_path, methods=("ipw_only", "outcome_only"))
        table = cli.run(cfg, quiet=True)
        manifest = json.loads(read_bytes(str(tmp_path / "out" / "manifest.json")))
        assert len(manifest["failures"]) == 1
        assert manifest["failures"][0]["method"] == "outcome_only"
        assert "synthetic failure" in manifest["failures"][0]["error"]
        assert [row.method for row in table.rows] == ["ipw_only"]
        with open(str(tmp_path / "out" / "replications.csv"), newline="") as fh:
            rows = list(csv.DictReader(fh))
        status = {r["method"]: r["status"] for r in rows}
        assert status == {"ipw_only": "ok", "outcome_only": "failed"}


class TestManifest:
    def test_contents(self, tmp_path):
        cfg = tiny_cfg(tmp_path, replications=2)
        cli.run(cfg, quiet=True)
        manifest = json.loads(read_bytes(str(tmp_path / "out" / "manifest.json")))
        assert manifest["config"]["replications"] == 2
        assert manifest["config"]["dgp"]["n"] == 50
        assert set(manifest["data_seeds"]) == {"0", "1"}
        assert "numpy" in manifest["versions"]
        assert manifest["failures"] == []


class TestArgparse:
    def test_quick_flag_and_overrides(self, tmp_path, capsys):
        out = str(tmp_path / "cli_out")
        rc = cli.main([
            "--quick", "--output", out, "--seed", "7",
            "--replications", "1", "--methods", "ipw_only", "--workers", "1",
        ])
        assert rc == 0
        printed = capsys.readouterr().out
        assert "ipw_only" in printed
        manifest = json.loads(read_bytes(f"{out}/manifest.json"))
        assert manifest["config"]["seed"] == 7
        assert manifest["config"]["methods"] == ["ipw_only"]

    def test_config_file_loading(self, tmp_path):
        cfg_file = tmp_path / "exp.cfg"
        cfg_file.write_text(
            "replications = 1\nmethods = ipw_only\n"
            "dgp.n = 40\ndgp.p = 5\ndgp.horizon = 3\ndgp.block_size = 5\n"
        )
        out = str(tmp_path / "cfg_out")
        rc = cli.main(["--config", str(cfg_file), "--output", out])
        assert rc == 0
        manifest = json.loads(read_bytes(f"{out}/manifest.json"))
        assert manifest["config"]["dgp"]["n"] == 40
