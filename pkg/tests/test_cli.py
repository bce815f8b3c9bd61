"""Tests for the command-line interface."""

import csv
from pathlib import Path

import numpy as np
import pytest

from robfunc.cli import main, read_config, InputError
from robfunc.diagnostics import mspe
from robfunc.fd import read_csv
from robfunc.model import load_model, prepare

DATA = Path(__file__).parent / "data"
PRED = ",".join(str(DATA / f"X{p}.csv") for p in range(1, 5))
PRED_TEST = ",".join(str(DATA / f"X{p}_test.csv") for p in range(1, 5))

# clean-subject in-sample MSPE of the robust (2, 2) main-effects-{1,2} fit on
# the bundled fixture, frozen when the fixture was generated
GOLDEN_CLEAN_MSPE = 2.2623


def _fit(tmp_path, *extra, name="fit"):
    out = tmp_path / name
    code = main(["fit", "--response", str(DATA / "Y.csv"), "--predictors", PRED,
                 "--out", str(out), "--n-boot", "20", *extra])
    return code, out


class TestFit:
    def test_outputs_and_golden(self, tmp_path, capsys):
        code, out = _fit(tmp_path, "--terms", "1,2", "--ky", "2", "--kx", "2")
        assert code == 0
        for name in ("model.json", "rbic.csv", "terms.csv", "depth.csv"):
            assert (out / name).is_file()
        code = main(["predict", "--model", str(out / "model.json"), "--predictors", PRED,
                     "--out", str(tmp_path / "pred")])
        assert code == 0
        Y = read_csv(DATA / "Y.csv").values
        P = read_csv(tmp_path / "pred" / "prediction.csv").values
        f = load_model(out / "model.json")
        assert (f.K_Y, f.K_X) == (2, 2)
        labels = np.loadtxt(DATA / "labels.csv", skiprows=1).astype(bool)
        assert mspe(Y[~labels], P[~labels]) <= GOLDEN_CLEAN_MSPE * 1.001

    def test_deterministic(self, tmp_path):
        _, a = _fit(tmp_path, "--terms", "1,2", "--ky", "2", "--kx", "2", name="a")
        _, b = _fit(tmp_path, "--terms", "1,2", "--ky", "2", "--kx", "2", name="b")
        for name in ("model.json", "rbic.csv", "depth.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_auto_grid_size(self, tmp_path):
        code, out = _fit(tmp_path, "--method", "classical", "--terms", "main")
        assert code == 0
        prep = prepare(read_csv(DATA / "Y.csv"), [read_csv(p) for p in PRED.split(",")], "classical")
        rows = list(csv.reader(open(out / "rbic.csv")))[1:]
        assert len(rows) == prep.K_Y_max * prep.K_X_max
        assert sum(int(r[-1]) for r in rows) == 1

    def test_selection_trace(self, tmp_path):
        code, out = _fit(tmp_path, "--method", "classical", "--ky", "2", "--kx", "2")
        assert code == 0
        rows = list(csv.reader(open(out / "terms.csv")))
        assert rows[0] == ["stage", "term", "rbic", "accepted"]
        assert rows[-1][0] == "final"

    def test_config_file_with_override(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# fixed truncation\nmethod = classical\nky = 2\nkx = 1\nterms = 1,2\n")
        code, out = _fit(tmp_path, "--config", str(cfg), "--kx", "2")
        assert code == 0
        f = load_model(out / "model.json")
        assert (f.method, f.K_Y, f.K_X) == ("classical", 2, 2)


class TestExitCodes:
    def test_missing_predictor(self, tmp_path):
        code = main(["fit", "--response", str(DATA / "Y.csv"), "--predictors",
                     str(tmp_path / "missing.csv"), "--out", str(tmp_path)])
        assert code == 2

    def test_malformed_csv(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("0,0.5,1\n1,2,3\n1,oops,3\n")
        code = main(["fit", "--response", str(bad), "--predictors", PRED, "--out", str(tmp_path)])
        assert code == 2
        assert "bad.csv:3" in capsys.readouterr().err

    def test_row_count_mismatch(self, tmp_path):
        code = main(["fit", "--response", str(DATA / "Y_test.csv"), "--predictors", PRED,
                     "--out", str(tmp_path)])
        assert code == 2

    def test_bad_alpha(self, tmp_path):
        code, _ = _fit(tmp_path, "--alpha", "1.5")
        assert code == 2

    def test_mixed_auto(self, tmp_path):
        code, _ = _fit(tmp_path, "--ky", "2")
        assert code == 2

    def test_estimation_failure(self, tmp_path, capsys):
        """The robust regression needs n >= 2(rank + K_Y); 20 subjects are too few here."""
        code, _ = _fit(tmp_path, "--terms", "1,2,3,4", "--ky", "2", "--kx", "2")
        assert code == 3
        assert "estimation failed" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("colour = blue\n")
        code, _ = _fit(tmp_path, "--config", str(cfg))
        assert code == 2


class TestPredict:
    def test_reports_mspe(self, tmp_path, capsys):
        _, out = _fit(tmp_path, "--method", "classical", "--terms", "1,2", "--ky", "2", "--kx", "2")
        capsys.readouterr()
        code = main(["predict", "--model", str(out / "model.json"), "--predictors", PRED_TEST,
                     "--response", str(DATA / "Y_test.csv"), "--out", str(tmp_path / "p")])
        assert code == 0
        assert capsys.readouterr().out.startswith("MSPE=")
        assert read_csv(tmp_path / "p" / "prediction.csv").n == 10

    def test_not_an_archive(self, tmp_path):
        junk = tmp_path / "model.json"
        junk.write_text("{}\n")
        code = main(["predict", "--model", str(junk), "--predictors", PRED, "--out", str(tmp_path)])
        assert code == 2


class TestSimulateAndBenchmark:
    def test_simulate_files(self, tmp_path):
        code = main(["simulate", "--n", "30", "--n-test", "5", "--J", "21", "--cl", "0.1",
                     "--out", str(tmp_path)])
        assert code == 0
        assert read_csv(tmp_path / "Y.csv").n == 30
        assert read_csv(tmp_path / "X6_test.csv").n == 5
        assert np.loadtxt(tmp_path / "labels.csv", skiprows=1).sum() == 3

    def test_benchmark_one_rep(self, tmp_path, capsys):
        args = ["benchmark", "--n", "40", "--n-test", "10", "--J", "21", "--reps", "1",
                "--methods", "classical", "--ky", "2", "--kx", "2", "--cl", "0,0.1",
                "--n-boot", "10"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        for name in ("summary.csv", "table.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        rows = list(csv.reader(open(tmp_path / "a" / "summary.csv")))[1:]
        metrics = {(r[3], r[5]) for r in rows}
        assert {("0", "risee"), ("0", "mspe"), ("0.1", "risee"), ("0.1", "mspe"), ("0.1", "auc")} <= metrics

    def test_threads_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ROBFUNC_THREADS", "zero")
        code = main(["benchmark", "--n", "40", "--reps", "1", "--methods", "classical",
                     "--ky", "2", "--kx", "2", "--out", str(tmp_path)])
        assert code == 2


def test_read_config_rejects_lines_without_equals(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("method robust\n")
    with pytest.raises(InputError):
        read_config(cfg)
