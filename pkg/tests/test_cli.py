"""Command-line interface: subcommands, exit codes, file outputs."""

import json
import os

import numpy as np
import pytest

from narrownet.cli import main
from narrownet.gadgets import build_psi
from narrownet.network import load_network, save_network, stats


def run(args):
    return main(args)


class TestBuildCommand:
    def test_build_writes_files_and_stats(self, tmp_path, capsys):
        out = str(tmp_path / "net.json")
        code = run(["build", "--target", "sin_scaled", "--d", "1", "--beta", "2",
                    "--eps", "0.3", "--out", out])
        assert code == 0
        printed = capsys.readouterr().out
        net = load_network(out)
        assert f"W = {stats(net).weight_count}" in printed
        manifest = json.loads(open(str(tmp_path / "net.manifest.json")).read())
        assert manifest["parity_case"] == "One"
        assert manifest["measured_stats"]["weight_count"] == stats(net).weight_count

    def test_eps_out_of_range_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run(["build", "--target", "sin_scaled", "--d", "1", "--beta", "2",
                 "--eps", "1.5", "--out", "x.json"])
        assert exc.value.code == 2
        assert "(0,1)" in capsys.readouterr().err

    def test_even_parity_recorded(self, tmp_path):
        out = str(tmp_path / "pp.json")
        code = run(["build", "--target", "prod_pair", "--d", "2", "--beta", "1",
                    "--eps", "0.4", "--out", out, "--n-override", "3"])
        assert code == 0
        manifest = json.loads(open(str(tmp_path / "pp.manifest.json")).read())
        assert manifest["parity_case"] == "Even"

    def test_no_overwrite_without_force(self, tmp_path):
        out = str(tmp_path / "net.json")
        args = ["build", "--target", "poly_mix", "--d", "1", "--beta", "1",
                "--eps", "0.4", "--out", out, "--n-override", "8"]
        assert run(args) == 0
        assert run(args) == 2
        assert run(args + ["--force"]) == 0

    def test_unknown_target_exits_2(self, tmp_path):
        code = run(["build", "--target", "nope", "--d", "1", "--beta", "1",
                    "--eps", "0.4", "--out", str(tmp_path / "n.json")])
        assert code == 2


class TestEvalCommand:
    def test_psi_value(self, tmp_path, capsys):
        path = str(tmp_path / "psi.json")
        save_network(build_psi(), path)
        code = run(["eval", "--net", path, "--point", "1.5"])
        assert code == 0
        assert capsys.readouterr().out.strip() == "0.5"

    def test_missing_file(self, tmp_path):
        code = run(["eval", "--net", str(tmp_path / "missing.json"),
                    "--point", "0"])
        assert code == 2


class TestVerifyCommand:
    def test_verify_fresh_build_passes(self, tmp_path, capsys):
        out = str(tmp_path / "net.json")
        run(["build", "--target", "sin_scaled", "--d", "1", "--beta", "2",
             "--eps", "0.3", "--out", out])
        code = run(["verify", "--net", out, "--resolution", "512",
                    "--samples", "256", "--seed", "1"])
        assert code == 0
        report = json.loads(open(out + ".report.json").read())
        assert report["pass"] is True
        assert report["sup_error_grid"] <= 0.3
        assert report["oracle_max_dev"] <= 1e-8

    def test_verify_gate_failure_exits_4(self, tmp_path):
        out = str(tmp_path / "net.json")
        run(["build", "--target", "sin_scaled", "--d", "1", "--beta", "2",
             "--eps", "0.3", "--out", out])
        code = run(["verify", "--net", out, "--eps", "1e-9",
                    "--resolution", "128", "--samples", "64"])
        assert code == 4


class TestBoundsCommand:
    def test_series_table(self, tmp_path, capsys):
        series = tmp_path / "series"
        series.mkdir()
        for i, eps in enumerate((0.4, 0.2, 0.1)):
            out = str(series / f"net{i}.json")
            assert run(["build", "--target", "poly_mix", "--d", "1",
                        "--beta", "1", "--eps", str(eps), "--out", out]) == 0
        code = run(["bounds", "--series-dir", str(series)])
        printed = capsys.readouterr().out
        assert code == 0
        assert "width_exponent" in printed

    def test_too_few_manifests(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert run(["bounds", "--series-dir", str(empty)]) == 2


class TestCompositeCommand:
    def test_composite_build(self, tmp_path):
        graph = {"d": 4, "d_star": 2, "vertices": [
            {"id": 5, "parents": [1, 2], "target": "prod_pair"},
            {"id": 6, "parents": [3, 4], "target": "prod_pair"},
            {"id": 7, "parents": [5, 6], "target": "half_sum"},
        ]}
        gpath = tmp_path / "graph.json"
        gpath.write_text(json.dumps(graph))
        out = str(tmp_path / "composite.json")
        code = run(["composite", "--graph", str(gpath), "--beta", "1",
                    "--eps", "0.6", "--out", out, "--width-budget", "600"])
        assert code == 0
        net = load_network(out)
        assert net.input_dim == 4


class TestExperimentCommand:
    def test_tiny_study(self, tmp_path, capsys):
        config = {
            "d": 1, "beta": 2, "target_name": "sin_scaled", "noise_sd": 0.1,
            "n_grid": [64, 128, 256, 512], "n_seeds": 1, "n_test": 2000,
            "trainer": {"steps": 300, "steps_per_sample": 0.0, "restarts": 1},
        }
        cpath = tmp_path / "config.json"
        cpath.write_text(json.dumps(config))
        out_dir = str(tmp_path / "results")
        code = run(["experiment", "--config", str(cpath), "--out-dir", out_dir])
        assert code == 0
        assert os.path.exists(os.path.join(out_dir, "cells.csv"))
        summary = json.loads(open(os.path.join(out_dir, "summary.json")).read())
        assert "slope" in summary


class TestExportInfo:
    def test_metadata(self, capsys):
        assert run(["export-info"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert "prod_pair" in doc["targets"]
        assert doc["exit_codes"]["gate_failure"] == 4


class TestInfeasibleExit:
    def test_width_budget_too_small_exits_3(self, tmp_path):
        code = run(["build", "--target", "prod_pair", "--d", "3", "--beta", "1",
                    "--eps", "0.5", "--out", str(tmp_path / "n.json"),
                    "--width-budget", "5"])
        assert code == 3


class TestVerifyWithoutManifest:
    def test_target_flags_required(self, tmp_path):
        from narrownet.network import save_network
        from narrownet.gadgets import build_psi

        path = str(tmp_path / "psi.json")
        save_network(build_psi(), path)
        assert run(["verify", "--net", path]) == 2
        assert run(["verify", "--net", path, "--target", "const"]) == 2

    def test_explicit_target(self, tmp_path):
        from narrownet.network import save_network
        from narrownet.gadgets import build_psi

        path = str(tmp_path / "psi.json")
        save_network(build_psi(), path)
        # psi is within 1.0 of the constant target everywhere
        code = run(["verify", "--net", path, "--target", "const", "--d", "1",
                    "--beta", "1", "--eps", "0.999", "--resolution", "64",
                    "--samples", "32"])
        assert code == 0
