import csv
import json
import math
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from poisson_transform.cli import DEFAULT_SEED, ROWS_HEADER, SUMMARY_HEADER, main

SVG_NS = "{http://www.w3.org/2000/svg}"


def _run(argv):
    try:
        return main(argv)
    except SystemExit as exc:
        return exc.code


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_simulate_rows_and_determinism(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert _run(["simulate", "--n", "3", "--theta1", "0", "--theta2", "0", "--seed", "1", "--out", str(p)]) == 0
    rows = _read_csv(a)
    assert rows[0] == ["t", "y"] and len(rows) == 5
    assert [int(r[0]) for r in rows[1:]] == [0, 1, 2, 3]
    assert all(-1 <= float(r[1]) <= 1 for r in rows[1:])
    assert a.read_bytes() == b.read_bytes()


def test_simulate_unwritable_path(tmp_path):
    assert _run(["simulate", "--n", "3", "--out", str(tmp_path / "missing" / "x.csv")]) == 2


def test_seed_from_environment(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("POISSON_TRANSFORM_SEED", "77")
    assert _run(["fit", "--n", "50"]) == 0
    assert json.loads(capsys.readouterr().out)["seed"] == 77
    monkeypatch.delenv("POISSON_TRANSFORM_SEED")
    assert _run(["fit", "--n", "50"]) == 0
    assert json.loads(capsys.readouterr().out)["seed"] == DEFAULT_SEED


def test_config_file_precedence(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n": 40, "seed": 5, "method": "ncd-ignore", "k": 3}))
    assert _run(["fit", "--config", str(cfg)]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert (rec["seed"], rec["method"], rec["k"]) == (5, "ncd-ignore", 3)
    assert _run(["fit", "--config", str(cfg), "--seed", "6"]) == 0
    assert json.loads(capsys.readouterr().out)["seed"] == 6
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"colour": "red"}))
    assert _run(["fit", "--config", str(bad)]) == 2


def test_fit_ml_within_three_standard_errors(tmp_path, capsys):
    data = tmp_path / "chain.csv"
    assert _run(["simulate", "--n", "4000", "--theta1", "0", "--theta2", "2", "--seed", "3", "--out", str(data)]) == 0
    assert _run(["fit", "--input", str(data), "--method", "ml"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert set(rec) == {"method", "theta_hat", "nu_summary", "covariance", "objective", "converged", "seed"}
    se = np.sqrt(np.diag(rec["covariance"]))
    assert np.all(np.abs(np.array(rec["theta_hat"]) - [0, 2]) <= 3 * se)
    assert rec["converged"] is True


def test_fit_semi_agrees_with_ml(tmp_path, capsys):
    data = tmp_path / "chain.csv"
    assert _run(["simulate", "--n", "2000", "--theta1", "0.5", "--theta2", "5", "--seed", "4", "--out", str(data)]) == 0
    assert _run(["fit", "--input", str(data), "--method", "ml"]) == 0
    ml = json.loads(capsys.readouterr().out)
    assert _run(["fit", "--input", str(data), "--method", "ncd-semi", "--k", "30"]) == 0
    semi = json.loads(capsys.readouterr().out)
    assert np.max(np.abs(np.subtract(semi["theta_hat"], ml["theta_hat"]))) <= 0.2
    assert semi["k"] == 30 and semi["lambda"] > 0
    assert semi["nu_summary"]["kind"] == "kernel"


@pytest.mark.parametrize("method", ["poisson", "ncd-iid", "ncd-param", "ncd-ignore"])
def test_fit_other_methods(method, capsys):
    assert _run(["fit", "--n", "200", "--method", method, "--k", "5"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["method"] == method and len(rec["theta_hat"]) == 2


def test_fit_sga(capsys):
    assert _run(["fit", "--model", "toy-iid", "--n", "200", "--method", "sga", "--steps", "200"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["objective"] is None and all(math.isfinite(v) for v in rec["theta_hat"])
    assert _run(["fit", "--model", "toy", "--n", "200", "--method", "sga"]) == 2


def test_fit_csv_format(capsys):
    assert _run(["fit", "--n", "100", "--format", "csv"]) == 0
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    assert rows[0][:2] == ["method", "theta_hat"]


def test_malformed_csv(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("t,y\n0,0.1\n1,abc\n")
    assert _run(["fit", "--input", str(bad)]) == 2
    assert "line 3" in capsys.readouterr().err
    bad.write_text("t,y\n0,0.1\n1,1.5\n")
    assert _run(["fit", "--input", str(bad)]) == 2
    bad.write_text("x,y\n")
    assert _run(["fit", "--input", str(bad)]) == 2


def test_unknown_method_exit_code():
    assert _run(["fit", "--method", "magic"]) == 2
    assert _run(["benchmark", "--method", "magic", "--reps", "1"]) == 2


def _aggregate(rows):
    groups = {}
    for r in rows:
        groups.setdefault((r["method"], r["n"], r["k"]), []).append(r)
    out = {}
    for key, items in groups.items():
        ok = [r for r in items if r["err1"] != ""]
        e = np.array([[float(r["err1"]), float(r["err2"])] for r in ok])
        out[key] = (len(ok), len(items) - len(ok), e.mean(axis=0), np.sqrt((e ** 2).mean(axis=0)))
    return out


def test_benchmark_outputs(tmp_path):
    out, svg = tmp_path / "rows.csv", tmp_path / "rmse.svg"
    assert _run(["benchmark", "--reps", "2", "--n", "100,200", "--k", "5", "--method", "ml,ncd-ignore",
                 "--jobs", "1", "--seed", "3", "--out", str(out), "--svg", str(svg)]) == 0
    rows = _read_csv(out)
    assert rows[0] == ROWS_HEADER
    body = [dict(zip(rows[0], r)) for r in rows[1:]]
    assert len(body) == 2 * 2 * 2
    summary = _read_csv(tmp_path / "rows.summary.csv")
    assert summary[0] == SUMMARY_HEADER
    agg = _aggregate(body)
    assert len(summary) - 1 == len(agg)
    for s in summary[1:]:
        cnt, fails, bias, rmse = agg[(s[0], s[1], s[2])]
        assert (int(s[3]), int(s[4])) == (cnt, fails)
        np.testing.assert_allclose([float(v) for v in s[5:7]], bias, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose([float(v) for v in s[7:9]], rmse, rtol=1e-12)
    root = ET.parse(svg).getroot()
    for panel in root.iter(SVG_NS + "g"):
        methods = [p.get("data-method") for p in panel.iter(SVG_NS + "polyline")]
        assert sorted(methods) == ["ml", "ncd_ignore"]


def test_benchmark_single_method_rows(tmp_path):
    out = tmp_path / "rows.csv"
    assert _run(["benchmark", "--reps", "2", "--n", "100", "--method", "ml", "--jobs", "1", "--out", str(out)]) == 0
    assert len(_read_csv(out)) == 3


def test_benchmark_is_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert _run(["benchmark", "--reps", "2", "--n", "80", "--k", "3", "--method", "ml,ncd-param",
                     "--jobs", "1", "--out", str(p)]) == 0
    strip = lambda p: [r[:-1] for r in _read_csv(p)]  # noqa: E731  (wall time differs)
    assert strip(a) == strip(b)


def test_check_only_theorem1(capsys):
    assert _run(["check", "--only", "theorem1"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 2 and lines[1].startswith("theorem1") and "PASS" in lines[1]


def test_check_corrupted_gradient_fails(capsys):
    assert _run(["check", "--only", "gradients", "--corrupt-gradient"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_check_unknown_name():
    assert _run(["check", "--only", "nonsense"]) == 2


def test_check_default_seed_all_pass(capsys):
    code = _run(["check"])
    out = capsys.readouterr().out
    assert code == 0, out


def test_console_entry_point(tmp_path):
    out = tmp_path / "s.csv"
    res = subprocess.run([sys.executable, "-m", "poisson_transform", "simulate", "--n", "2", "--out", str(out)],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert len(_read_csv(out)) == 4
