"""End-to-end command behavior: layering, outputs, exit codes, determinism.

Commands run in-process through main() so the tests stay fast; one subprocess
test at the bottom confirms the installed console script wires up to the same
entry point.
"""

import filecmp
import json
import subprocess
import sys
from argparse import Namespace
from pathlib import Path

import numpy as np
import pytest

from odegate.cli import (DEFAULTS, EXIT_DATA, EXIT_NUMERIC, EXIT_OK,
                         EXIT_USAGE, GENERATE_KEYS, TRAIN_KEYS, _coerce,
                         main, parse_config_file, resolve_settings,
                         write_resolved)
from odegate.data import read_series_csv
from odegate.errors import ParseError, ValidationError

SMALL_TRAIN = ["--window", "4", "--horizon", "3", "--proj-dim", "4",
               "--embed-dim", "2", "--steps", "2", "--batch-size", "16",
               "--epochs", "2", "--quiet"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    code = main(["generate-data", "--out", str(out),
                 "--n-nodes", "4", "--total-t", "140"])
    assert code == EXIT_OK
    return out


@pytest.fixture(scope="module")
def full_run(tmp_path_factory, data_dir):
    out = tmp_path_factory.mktemp("full")
    code = main(["train", "--data", str(data_dir), "--out", str(out)]
                + SMALL_TRAIN)
    assert code == EXIT_OK
    return out


@pytest.fixture(scope="module")
def no_comp_run(tmp_path_factory, data_dir):
    out = tmp_path_factory.mktemp("nocomp")
    code = main(["train", "--data", str(data_dir), "--out", str(out),
                 "--variant", "no_compensation"] + SMALL_TRAIN)
    assert code == EXIT_OK
    return out


class TestCoercion:
    def test_types(self):
        assert _coerce("n_nodes", "7") == 7
        assert _coerce("lr", "1e-3") == 0.001
        assert _coerce("variant", "no_lte") == "no_lte"
        assert _coerce("mask_grad", "true") is True
        assert _coerce("mask_grad", "0") is False
        assert _coerce("sparsity_tau", "none") is None
        assert _coerce("sparsity_tau", "0.2") == 0.2

    def test_bad_values(self):
        with pytest.raises(ValidationError, match="'n_nodes'"):
            _coerce("n_nodes", "four")
        with pytest.raises(ValidationError, match="true/false"):
            _coerce("mask_grad", "maybe")


class TestConfigFile:
    def test_parse_and_layering(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# comment\n\nn_nodes = 5\nseed=3\n")
        values = parse_config_file(cfg, set(GENERATE_KEYS))
        assert values == {"n_nodes": 5, "seed": 3}
        args = Namespace(config=str(cfg), n_nodes="6")
        resolved = resolve_settings(args, GENERATE_KEYS)
        assert resolved["n_nodes"] == 6          # flag beats file
        assert resolved["seed"] == 3             # file beats default
        assert resolved["total_t"] == DEFAULTS["total_t"]

    def test_unknown_key(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("warp=9\n")
        with pytest.raises(ParseError, match="line 1.*unknown key"):
            parse_config_file(cfg, set(GENERATE_KEYS))

    def test_inapplicable_key(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("seed=1\nepochs=3\n")
        with pytest.raises(ParseError, match="line 2.*does not apply"):
            parse_config_file(cfg, set(GENERATE_KEYS))

    def test_missing_equals(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("seed\n")
        with pytest.raises(ParseError, match="key=value"):
            parse_config_file(cfg, set(GENERATE_KEYS))

    def test_write_resolved_sorted(self, tmp_path):
        write_resolved(tmp_path, {"b_key": 0.5, "a_key": None, "c_key": True})
        text = (tmp_path / "resolved_config.txt").read_text()
        assert text == "a_key=none\nb_key=0.5\nc_key=true\n"


class TestGenerateData:
    def test_outputs(self, data_dir, capsys):
        main(["generate-data", "--out", str(data_dir),
              "--n-nodes", "4", "--total-t", "140"])
        out = capsys.readouterr().out
        assert out.count("wrote ") == 4
        for name in ("series.csv", "events.csv", "edges.csv", "meta.json",
                     "resolved_config.txt"):
            assert (data_dir / name).exists()
        meta = json.loads((data_dir / "meta.json").read_text())
        assert meta["n_nodes"] == 4
        assert read_series_csv(data_dir / "series.csv").shape == (140, 4)

    def test_byte_identical_rerun(self, data_dir, tmp_path):
        rerun = tmp_path / "again"
        code = main(["generate-data", "--out", str(rerun),
                     "--n-nodes", "4", "--total-t", "140"])
        assert code == EXIT_OK
        for name in ("series.csv", "events.csv", "edges.csv", "meta.json",
                     "resolved_config.txt"):
            assert filecmp.cmp(data_dir / name, rerun / name, shallow=False), name

    def test_config_file_applies(self, tmp_path):
        cfg = tmp_path / "gen.cfg"
        cfg.write_text("n_nodes=3\ntotal_t=60\n")
        out = tmp_path / "out"
        assert main(["generate-data", "--out", str(out),
                     "--config", str(cfg)]) == EXIT_OK
        assert read_series_csv(out / "series.csv").shape == (60, 3)
        text = (out / "resolved_config.txt").read_text()
        assert "n_nodes=3\n" in text and "total_t=60\n" in text

    def test_bad_flag_value(self, tmp_path, capsys):
        code = main(["generate-data", "--out", str(tmp_path / "x"),
                     "--n-nodes", "four"])
        assert code == EXIT_DATA
        err = capsys.readouterr().err
        assert err.startswith("error[validation]:")
        assert err.count("\n") == 1

    def test_invalid_scenario(self, tmp_path, capsys):
        code = main(["generate-data", "--out", str(tmp_path / "x"),
                     "--shock-rate", "500"])
        assert code == EXIT_DATA
        assert "error[validation]" in capsys.readouterr().err


class TestTrain:
    def test_stdout_and_files(self, data_dir, tmp_path, capsys):
        out = tmp_path / "run"
        code = main(["train", "--data", str(data_dir), "--out", str(out)]
                    + SMALL_TRAIN)
        assert code == EXIT_OK
        text = capsys.readouterr().out
        assert "variant=full" in text
        assert "param_count=" in text and "best_epoch=" in text
        for name in ("checkpoint.json", "history.csv", "resolved_config.txt"):
            assert (out / name).exists()
        header = (out / "history.csv").read_text().splitlines()[0]
        assert header == "epoch,train_loss,val_mae,m_mean,m_std,m_p95"

    def test_byte_identical_rerun(self, data_dir, full_run, tmp_path):
        rerun = tmp_path / "rerun"
        code = main(["train", "--data", str(data_dir), "--out", str(rerun)]
                    + SMALL_TRAIN)
        assert code == EXIT_OK
        for name in ("checkpoint.json", "history.csv", "resolved_config.txt"):
            assert filecmp.cmp(full_run / name, rerun / name,
                               shallow=False), name

    def test_missing_data_dir(self, tmp_path, capsys):
        code = main(["train", "--data", str(tmp_path / "absent"),
                     "--out", str(tmp_path / "o")] + SMALL_TRAIN)
        assert code == EXIT_DATA
        assert capsys.readouterr().err.startswith("error[io]:")

    def test_unknown_variant(self, data_dir, tmp_path, capsys):
        code = main(["train", "--data", str(data_dir),
                     "--out", str(tmp_path / "o"), "--variant", "bogus"]
                    + SMALL_TRAIN)
        assert code == EXIT_DATA
        assert "error[validation]" in capsys.readouterr().err

    def test_lam_on_wrong_variant(self, data_dir, tmp_path, capsys):
        code = main(["train", "--data", str(data_dir),
                     "--out", str(tmp_path / "o"), "--lam", "0.1"]
                    + SMALL_TRAIN)
        assert code == EXIT_DATA
        assert "manifold_penalty" in capsys.readouterr().err

    def test_usage_errors(self, capsys):
        assert main(["train"]) == EXIT_USAGE                  # --data required
        assert main(["no-such-command"]) == EXIT_USAGE
        assert main(["--help"]) == EXIT_OK
        capsys.readouterr()


class TestEvaluate:
    def test_metrics_json_matches_stdout(self, data_dir, full_run, tmp_path,
                                         capsys):
        out = tmp_path / "eval"
        code = main(["evaluate", "--data", str(data_dir),
                     "--checkpoint", str(full_run / "checkpoint.json"),
                     "--out", str(out)])
        assert code == EXIT_OK
        text = capsys.readouterr().out
        payload = json.loads((out / "metrics.json").read_text())
        assert payload["split"] == "test"
        assert f"mae={payload['mae']!r}" in text
        assert f"rmse={payload['rmse']!r}" in text
        assert payload["rmse"] >= payload["mae"] > 0

    def test_split_flag(self, data_dir, full_run, tmp_path):
        out = tmp_path / "eval_val"
        code = main(["evaluate", "--data", str(data_dir),
                     "--checkpoint", str(full_run / "checkpoint.json"),
                     "--out", str(out), "--split", "val"])
        assert code == EXIT_OK
        assert json.loads((out / "metrics.json").read_text())["split"] == "val"

    def test_node_count_mismatch(self, full_run, tmp_path, capsys):
        other = tmp_path / "data5"
        main(["generate-data", "--out", str(other),
              "--n-nodes", "5", "--total-t", "140"])
        capsys.readouterr()
        code = main(["evaluate", "--data", str(other),
                     "--checkpoint", str(full_run / "checkpoint.json"),
                     "--out", str(tmp_path / "o")])
        assert code == EXIT_DATA
        assert "nodes" in capsys.readouterr().err

    def test_corrupt_checkpoint(self, data_dir, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{ not json")
        code = main(["evaluate", "--data", str(data_dir),
                     "--checkpoint", str(bad), "--out", str(tmp_path / "o")])
        assert code == EXIT_DATA
        assert capsys.readouterr().err.startswith("error[parse]:")


class TestMaskStats:
    def test_report(self, data_dir, full_run, tmp_path, capsys):
        out = tmp_path / "stats"
        code = main(["mask-stats", "--data", str(data_dir),
                     "--checkpoint", str(full_run / "checkpoint.json"),
                     "--out", str(out), "--split", "val"])
        assert code == EXIT_OK
        text = capsys.readouterr().out
        payload = json.loads((out / "mask_stats.json").read_text())
        assert 0.5 <= payload["mean"] < 1.0
        assert len(payload["histogram"]) == 20
        assert f"mean={payload['mean']!r}" in text

    def test_gateless_checkpoint_rejected(self, data_dir, no_comp_run,
                                          tmp_path, capsys):
        code = main(["mask-stats", "--data", str(data_dir),
                     "--checkpoint", str(no_comp_run / "checkpoint.json"),
                     "--out", str(tmp_path / "o")])
        assert code == EXIT_NUMERIC
        assert capsys.readouterr().err.startswith("error[contract]:")


class TestNfeReport:
    def test_report(self, tmp_path, capsys):
        out = tmp_path / "nfe"
        code = main(["nfe-report", "--out", str(out), "--n-nodes", "4",
                     "--proj-dim", "4", "--embed-dim", "2",
                     "--window", "4", "--horizon", "3"])
        assert code == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        mode_lines = [l for l in lines if l.startswith("mode=")]
        assert len(mode_lines) == 4
        assert all(l.endswith(" ok") for l in mode_lines)
        assert lines[-1] == "nfe-report ok"
        payload = json.loads((out / "nfe_report.json").read_text())
        assert [e["steps"] for e in payload["flop_sweep"]] == [1, 2, 4, 6, 8]
        totals = [e["total"] for e in payload["flop_sweep"]]
        assert totals == sorted(totals) and len(set(totals)) == 5


class TestIntersectDemo:
    def test_pass_and_trajectories(self, tmp_path, capsys):
        out = tmp_path / "demo"
        code = main(["intersect-demo", "--out", str(out)])
        assert code == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines[-1] == "PASS"
        off = np.loadtxt(out / "trajectory_off.csv", delimiter=",",
                         skiprows=1)
        on = np.loadtxt(out / "trajectory_on.csv", delimiter=",", skiprows=1)
        assert np.array_equal(off[:, 1], off[:, 2])
        d = on[:, 1] - on[:, 2]
        assert d[0] > 0 and (d < 0).any()


def test_console_script_runs():
    proc = subprocess.run([sys.executable, "-m", "odegate.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "generate-data" in proc.stdout
