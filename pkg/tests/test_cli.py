import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from bihop.cli import main

from helpers import rate_fit

SMALL = '{"n": 30, "p": 20, "density": 0.5, "snr": 5, "seed": 1}'


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def one_d_files(tmp_path):
    train, val = tmp_path / "train.svm", tmp_path / "val.svm"
    train.write_text("2 1:1\n")
    val.write_text("0 1:1\n")
    return str(train), str(val)


def test_hypergrad_one_d_all_engines(one_d_files, tmp_path):
    out = str(tmp_path / "h.csv")
    code = main(["hypergrad", "--data", one_d_files[0], "--val-data",
                 one_d_files[1], "--lam", "0", "--engines", "all",
                 "--out", out])
    assert code == 0
    rows = _rows(out)
    assert [r["engine"] for r in rows] == ["implicit", "forward_pcd",
                                          "forward_pgd", "backward_pcd",
                                          "backward_pgd"]
    for r in rows:
        assert float(r["hypergrad_1"]) == pytest.approx(-2., abs=1e-6)
        assert float(r["abs_err_vs_oracle"]) <= 1e-6
        assert float(r["lambda"]) == 0.
    side = json.load(open(out + ".json"))
    assert side["runspec"]["command"] == "hypergrad"
    assert side["summary"]["oracle"] == [pytest.approx(-2., abs=1e-8)]


def test_hypergrad_all_engines_synthetic(tmp_path):
    out = str(tmp_path / "h.csv")
    code = main(["hypergrad", "--synthetic",
                 '{"n": 50, "p": 100, "density": 0.3, "seed": 0}',
                 "--engines", "all", "--out", out])
    assert code == 0
    rows = _rows(out)
    assert len(rows) == 5
    assert all(float(r["abs_err_vs_oracle"]) <= 1e-4 for r in rows)


def test_hypergrad_enet_columns(tmp_path):
    out = str(tmp_path / "h.csv")
    assert main(["hypergrad", "--model", "enet", "--synthetic", SMALL,
                 "--out", out]) == 0
    row = _rows(out)[0]
    assert {"lambda_1", "lambda_2", "hypergrad_1", "hypergrad_2"} <= row.keys()


def test_unknown_model_exits_2(capsys):
    with pytest.raises(SystemExit) as err:
        main(["hypergrad", "--model", "ridge", "--synthetic", SMALL])
    assert err.value.code == 2


@pytest.mark.parametrize("argv", [
    ["hypergrad"],
    ["hypergrad", "--synthetic", '{"n": 5}'],
    ["hypergrad", "--synthetic", SMALL, "--lam", "0", "1"],
    ["hypergrad", "--data", "/nonexistent/file.svm"],
    ["hypergrad", "--synthetic", SMALL, "--tol", "-1"],
    ["trace", "--synthetic", SMALL, "--engine", "implicit"],
    ["bilevel", "--synthetic", SMALL, "--k-folds", "0"],
    ["bilevel", "--synthetic", SMALL, "--method", "grid", "--grid", "0"],
    ["datagen"],
])
def test_spec_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert "error" in capsys.readouterr().err


def test_parse_error_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.svm"
    bad.write_text("1 3:1 2:1\n")
    assert main(["hypergrad", "--data", str(bad)]) == 2
    assert "line 1" in capsys.readouterr().err


def test_inner_failure_exits_3(capsys):
    code = main(["hypergrad", "--synthetic", SMALL, "--max-iters", "1"])
    assert code == 3
    assert "numerical failure" in capsys.readouterr().err


def test_trace_columns_and_identification(tmp_path):
    out = str(tmp_path / "t.csv")
    code = main(["trace", "--synthetic",
                 '{"n": 50, "p": 100, "density": 1, "seed": 2}',
                 "--lam", "-3.5", "--out", out])
    assert code == 0
    rows = _rows(out)
    assert list(rows[0]) == ["epoch", "beta_err", "jac_err", "support_size",
                             "identified"]
    flags = [r["identified"] == "true" for r in rows]
    first = flags.index(True)
    assert all(flags[first:]) and not any(flags[:first])
    assert float(rows[-1]["beta_err"]) < 1e-12
    epochs = [int(r["epoch"]) for r in rows]
    jac = [float(r["jac_err"]) for r in rows]
    r2, slope, _ = rate_fit(epochs, jac, start=epochs[first], floor=1e-12)
    assert slope < 0 and r2 >= 0.99


def test_bilevel_grid_rows(tmp_path):
    out = str(tmp_path / "g.csv")
    code = main(["bilevel", "--synthetic", SMALL, "--method", "grid",
                 "--grid", "100", "--k-folds", "2", "--out", out])
    assert code == 0
    rows = _rows(out)
    assert len(rows) == 100
    summary = json.load(open(out + ".json"))["summary"]
    assert summary["evaluations"] == 100
    assert summary["best_L"] == min(float(r["L"]) for r in rows)


def test_bilevel_random_is_byte_reproducible(tmp_path):
    paths = [str(tmp_path / f"r{i}.csv") for i in range(2)]
    for path in paths:
        assert main(["bilevel", "--synthetic", SMALL, "--method", "random",
                     "--draws", "8", "--seed", "3", "--no-timing",
                     "--out", path]) == 0
    a, b = (open(p, "rb").read() for p in paths)
    assert a == b
    assert len(_rows(paths[0])) == 8


def test_bilevel_first_order_trace(tmp_path):
    out = str(tmp_path / "f.csv")
    assert main(["bilevel", "--synthetic", SMALL, "--k-folds", "3",
                 "--max-iters", "10", "--out", out]) == 0
    rows = _rows(out)
    assert 1 <= len(rows) <= 10
    assert rows[0]["method"] == "first_order"
    tols = [float(r["inner_tol"]) for r in rows]
    assert tols == sorted(tols, reverse=True)


def test_bilevel_svm_holdout(tmp_path):
    out = str(tmp_path / "s.csv")
    assert main(["bilevel", "--model", "svm", "--synthetic",
                 '{"n": 40, "p": 5, "seed": 0}', "--k-folds", "1",
                 "--max-iters", "5", "--out", out]) == 0
    assert np.isfinite(float(_rows(out)[0]["L"]))


def test_datagen_round_trips_through_hypergrad(tmp_path):
    data = str(tmp_path / "d.svm")
    assert main(["datagen", "--synthetic", SMALL, "--out", data]) == 0
    meta = json.load(open(data + ".json"))["summary"]
    assert (meta["n"], meta["p"]) == (30, 20)
    out = str(tmp_path / "h.csv")
    assert main(["hypergrad", "--data", data, "--out", out]) == 0


def test_stdout_output(capsys):
    assert main(["hypergrad", "--synthetic", SMALL]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("engine,lambda,wall_ms")
    assert len(lines) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "bihop", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "hypergrad" in proc.stdout
