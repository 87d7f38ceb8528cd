"""Command-line interface: ``poisson-transform {simulate,fit,benchmark,check}``.

Settings resolve in the order flags, then ``--config`` (a JSON object keyed
by flag names without dashes), then built-in defaults. The seed default is
``POISSON_TRANSFORM_SEED`` when set, else :data:`DEFAULT_SEED`.

Exit codes: 0 success, 1 failed check, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from pathlib import Path
from typing import Optional
from xml.sax.saxutils import escape

import numpy as np

from .chain import BenchmarkConfig, run_benchmark, sample_chain, sample_iid, summarize
from .checks import CHECKS, run_checks
from .errors import PoissonTransformError
from .kernels import KernelExpansion
from .mc import SgaSchedule, sga_fit
from .model import TOY_DOMAIN, SampleSet, toy_iid_model, toy_model, uniform_reference
from .ncd import (
    build_dataset,
    fit_ncd_ignore,
    fit_ncd_iid,
    fit_ncd_param,
    fit_ncd_semi,
    select_lambda,
)
from .poisson import fit_poisson_chi, fit_poisson_joint
from .quadrature import fit_ml

DEFAULT_SEED = 20240501
SEED_ENV = "POISSON_TRANSFORM_SEED"

METHODS = ("ml", "poisson", "sga", "ncd-iid", "ncd-param", "ncd-semi", "ncd-ignore")
BENCH_METHODS = ("ml", "ncd-param", "ncd-semi", "ncd-ignore")
ROWS_HEADER = ["method", "n", "k", "rep", "theta1_true", "theta2_true",
               "theta1_hat", "theta2_hat", "err1", "err2", "ms"]
SUMMARY_HEADER = ["method", "n", "k", "count", "failures", "bias1", "bias2", "rmse1", "rmse2"]

DEFAULTS = {
    "model": "toy",
    "theta1": 0.0,
    "theta2": 2.0,
    "n": "1000",
    "k": "20",
    "method": "ml",
    "lambda": None,
    "lambda_grid": None,
    "folds": 5,
    "y0": 0.0,
    "reps": 100,
    "out": None,
    "format": None,
    "svg": None,
    "jobs": None,
    "only": None,
    "input": None,
    "steps": 2000,
}

BENCH_DEFAULTS = {"n": "500,2000", "k": "10,30", "method": ",".join(BENCH_METHODS)}


class UsageError(Exception):
    """Bad flags or input; exits with code 2."""


# --------------------------------------------------------------------------
# argument handling


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with default settings")
    common.add_argument("--model", choices=["toy", "toy-iid"], default=argparse.SUPPRESS,
                        help="toy Markov chain, or IID draws at the fixed anchor --y0")
    common.add_argument("--theta1", type=float, default=argparse.SUPPRESS)
    common.add_argument("--theta2", type=float, default=argparse.SUPPRESS)
    common.add_argument("--n", default=argparse.SUPPRESS, help="chain length (comma list for benchmark)")
    common.add_argument("--k", default=argparse.SUPPRESS, help="reference draws per point (comma list for benchmark)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--y0", type=float, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS, help="output path (default stdout)")
    common.add_argument("--format", choices=["csv", "json"], default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="poisson-transform", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[common], help="simulate a chain to CSV")

    fit = sub.add_parser("fit", parents=[common], help="fit one estimator")
    fit.add_argument("--input", default=argparse.SUPPRESS, help="CSV from simulate (else simulate inline)")
    fit.add_argument("--method", choices=METHODS, default=argparse.SUPPRESS)
    fit.add_argument("--lambda", dest="lambda", type=float, default=argparse.SUPPRESS)
    fit.add_argument("--lambda-grid", dest="lambda_grid", default=argparse.SUPPRESS,
                     help="comma-separated penalties for cross-validation")
    fit.add_argument("--folds", type=int, default=argparse.SUPPRESS)
    fit.add_argument("--steps", type=int, default=argparse.SUPPRESS, help="SGA iterations")

    bench = sub.add_parser("benchmark", parents=[common], help="compare estimators over repetitions")
    bench.add_argument("--method", default=argparse.SUPPRESS, help="comma list of " + ",".join(BENCH_METHODS))
    bench.add_argument("--reps", type=int, default=argparse.SUPPRESS)
    bench.add_argument("--lambda-grid", dest="lambda_grid", default=argparse.SUPPRESS)
    bench.add_argument("--folds", type=int, default=argparse.SUPPRESS)
    bench.add_argument("--svg", default=argparse.SUPPRESS, help="write an RMSE chart")
    bench.add_argument("--jobs", type=int, default=argparse.SUPPRESS)
    bench.add_argument("--fixed-theta", dest="fixed_theta", action="store_true", default=argparse.SUPPRESS,
                       help="use --theta1/--theta2 for every repetition")

    check = sub.add_parser("check", parents=[common], help="run the invariant check-suite")
    check.add_argument("--only", action="append", default=argparse.SUPPRESS,
                       help="run only this check (repeatable or comma list): " + ",".join(CHECKS))
    check.add_argument("--corrupt-gradient", dest="corrupt_gradient", action="store_true",
                       default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    return parser


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"{path}: expected a JSON object")
    data = {str(k).replace("-", "_"): v for k, v in data.items()}
    allowed = set(DEFAULTS) | {"seed", "fixed_theta", "corrupt_gradient"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise UsageError(f"{path}: unknown settings {unknown}")
    return data


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return DEFAULT_SEED
    try:
        return int(raw)
    except ValueError as exc:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc


def resolve(args: argparse.Namespace) -> dict:
    """Merge flags over the config file over the defaults."""
    flags = vars(args).copy()
    command = flags.pop("command")
    cfg = _load_config(flags.pop("config", None))
    settings = dict(DEFAULTS)
    if command == "benchmark":
        settings.update(BENCH_DEFAULTS)
    settings["seed"] = _default_seed()
    settings.update(cfg)
    settings.update(flags)
    settings["command"] = command
    return settings


def _int_list(value, name) -> list:
    if isinstance(value, (list, tuple)):
        items = list(value)
    else:
        items = [v for v in str(value).split(",") if v.strip()]
    try:
        out = [int(v) for v in items]
    except (TypeError, ValueError) as exc:
        raise UsageError(f"--{name} expects integers, got {value!r}") from exc
    if not out:
        raise UsageError(f"--{name} is empty")
    return out


def _single_int(value, name) -> int:
    vals = _int_list(value, name)
    if len(vals) != 1:
        raise UsageError(f"--{name} takes a single value here")
    return vals[0]


def _float_list(value, name) -> Optional[list]:
    if value is None:
        return None
    items = value if isinstance(value, (list, tuple)) else [v for v in str(value).split(",") if v.strip()]
    try:
        out = [float(v) for v in items]
    except (TypeError, ValueError) as exc:
        raise UsageError(f"--{name} expects numbers, got {value!r}") from exc
    if not out or any(not (v > 0 and math.isfinite(v)) for v in out):
        raise UsageError(f"--{name} needs positive finite values")
    return out


# --------------------------------------------------------------------------
# output helpers


def _write_text(path: Optional[str], text: str):
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc}") from exc


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def _model(name):
    return toy_iid_model(0.0) if name == "toy-iid" else toy_model()


def _simulate_sample(s) -> SampleSet:
    n = _single_int(s["n"], "n")
    if n < 1:
        raise UsageError("--n must be at least 1")
    y0 = float(s["y0"])
    if not TOY_DOMAIN.contains(y0):
        raise UsageError("--y0 must lie in [-1, 1]")
    theta = (float(s["theta1"]), float(s["theta2"]))
    rng = np.random.default_rng(int(s["seed"]))
    if s["model"] == "toy-iid":
        return sample_iid(theta, n, y0, rng)
    return sample_chain(theta, n, y0, rng)


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(s) -> int:
    sample = _simulate_sample(s)
    ys = np.concatenate([[sample.initial], sample.points])
    if s["format"] == "json":
        text = json.dumps({"t": list(range(ys.size)), "y": [float(v) for v in ys]}) + "\n"
    else:
        text = _csv_text(["t", "y"], [[t, repr(float(y))] for t, y in enumerate(ys)])
    _write_text(s["out"], text)
    return 0


def read_chain_csv(path: str) -> SampleSet:
    """Parse a ``t,y`` file written by ``simulate``; errors name the line."""
    try:
        with open(path, newline="") as fh:
            lines = list(csv.reader(fh))
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    if not lines or [c.strip() for c in lines[0]] != ["t", "y"]:
        raise UsageError(f"{path}: line 1: expected header 't,y'")
    ys = []
    for lineno, row in enumerate(lines[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise UsageError(f"{path}: line {lineno}: expected 2 fields, got {len(row)}")
        try:
            t, y = int(row[0]), float(row[1])
        except ValueError:
            raise UsageError(f"{path}: line {lineno}: cannot parse {row!r}") from None
        if t != len(ys):
            raise UsageError(f"{path}: line {lineno}: expected t={len(ys)}, got {t}")
        if not (math.isfinite(y) and TOY_DOMAIN.contains(y)):
            raise UsageError(f"{path}: line {lineno}: y={y} outside [-1, 1]")
        ys.append(y)
    if len(ys) < 2:
        raise UsageError(f"{path}: need y0 and at least one transition")
    return SampleSet(ys[0], np.array(ys[1:]))


def _nu_summary(nu) -> Optional[dict]:
    if nu is None:
        return None
    if isinstance(nu, KernelExpansion):
        return {"kind": "kernel", "bandwidth": nu.kernel.bandwidth, "centers": int(nu.centers.size),
                "rkhs_norm_sq": nu.rkhs_norm_sq()}
    arr = np.asarray(nu, float)
    if arr.ndim == 0:
        return {"kind": "scalar", "value": float(arr)}
    return {"kind": "per-ancestor", "count": int(arr.size), "mean": float(arr.mean()),
            "min": float(arr.min()), "max": float(arr.max())}


def _finite_or_none(x):
    return float(x) if x is not None and math.isfinite(x) else None


def fit_record(s, sample: SampleSet) -> dict:
    """Run the configured estimator and build the JSON record."""
    method = s["method"]
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    model = _model(s["model"])
    seed = int(s["seed"])
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    record = {"method": method}
    k = lam = None
    cov = None
    if method == "ml":
        res = fit_ml(model, sample)
        theta, nu, obj, conv, cov = res.theta_hat, None, res.objective, res.converged, res.covariance
    elif method == "poisson":
        if model.iid:
            res = fit_poisson_joint(model, sample)
            cov = res.covariance
        else:
            lam = 1e-6 if s["lambda"] is None else float(s["lambda"])
            res = fit_poisson_chi(model, sample, pen=lam)
        theta, nu, obj, conv = res.theta_hat, res.nu_hat, res.objective, res.converged
    elif method == "sga":
        if not model.iid:
            raise UsageError("sga estimates the IID transform; use --model toy-iid")
        schedule = SgaSchedule.default(sample.n, max_steps=int(s["steps"]))
        res = sga_fit(model, sample, uniform_reference(), schedule, 50, rng)
        theta, nu, obj, conv = res.theta_avg, res.nu_avg, float("nan"), res.converged
    else:
        k = _single_int(s["k"], "k")
        if k < 1:
            raise UsageError("--k must be at least 1")
        ds = build_dataset(sample, uniform_reference(), k, rng)
        if method == "ncd-iid":
            res = fit_ncd_iid(model, ds)
        elif method == "ncd-ignore":
            res = fit_ncd_ignore(model, ds)
        elif method == "ncd-param":
            res = fit_ncd_param(model, ds)
        else:
            if s["lambda"] is not None:
                lam = float(s["lambda"])
            else:
                grid = _float_list(s["lambda_grid"], "lambda-grid")
                lam = select_lambda(model, ds, grid=grid, folds=int(s["folds"]), rng=rng)
            res = fit_ncd_semi(model, ds, lambda_pen=lam)
        theta, obj, conv = res.theta_hat, res.loglik, res.converged
        nu = res.nu_vec if res.nu_vec is not None else (res.chi if res.chi is not None else res.nu)
    record["theta_hat"] = [float(v) for v in theta]
    record["nu_summary"] = _nu_summary(nu)
    if method == "ncd-semi":
        record["nu_summary"]["intercept"] = res.nu
    if cov is not None:
        record["covariance"] = np.asarray(cov, float).tolist()
    record["objective"] = _finite_or_none(obj)
    record["converged"] = bool(conv)
    record["seed"] = seed
    if k is not None:
        record["k"] = k
    if lam is not None:
        record["lambda"] = lam
    return record


def cmd_fit(s) -> int:
    sample = read_chain_csv(s["input"]) if s["input"] else _simulate_sample(s)
    record = fit_record(s, sample)
    if s["format"] == "csv":
        keys = list(record)
        text = _csv_text(keys, [[json.dumps(record[k]) for k in keys]])
    else:
        text = json.dumps(record, indent=2) + "\n"
    _write_text(s["out"], text)
    return 0


def _bench_config(s) -> BenchmarkConfig:
    methods = [m.strip() for m in str(s["method"]).split(",") if m.strip()]
    bad = [m for m in methods if m not in BENCH_METHODS]
    if bad or not methods:
        raise UsageError(f"unknown benchmark methods {bad}; choose from {', '.join(BENCH_METHODS)}")
    grid = _float_list(s["lambda_grid"], "lambda-grid")
    theta = (float(s["theta1"]), float(s["theta2"])) if s.get("fixed_theta") else None
    try:
        return BenchmarkConfig(
            n_values=tuple(_int_list(s["n"], "n")),
            k_values=tuple(_int_list(s["k"], "k")),
            repetitions=int(s["reps"]),
            methods=tuple(m.replace("-", "_") for m in methods),
            seed=int(s["seed"]),
            y0=float(s["y0"]),
            theta_true=theta,
            folds=int(s["folds"]),
            lambda_grid=None if grid is None else tuple(grid),
        )
    except PoissonTransformError as exc:
        raise UsageError(str(exc)) from exc


def rows_table(rows) -> list:
    out = []
    for r in rows:
        hat = r.theta_hat or (None, None)
        err = r.error or (None, None)
        out.append([r.method.replace("_", "-"), r.n, r.k, r.repetition,
                    _fmt(r.theta_true[0]), _fmt(r.theta_true[1]),
                    _fmt(hat[0]), _fmt(hat[1]), _fmt(err[0]), _fmt(err[1]),
                    f"{r.wall_time_ms:.1f}"])
    return out


def summary_table(summary) -> list:
    return [[s.method.replace("_", "-"), s.n, s.k, s.count, s.failures,
             _fmt(s.bias[0]), _fmt(s.bias[1]), _fmt(s.rmse[0]), _fmt(s.rmse[1])] for s in summary]


def _summary_path(out: Optional[str], ext: str) -> Optional[str]:
    if out is None or out == "-":
        return None
    p = Path(out)
    return str(p.with_name(p.stem + ".summary" + ext))


def cmd_benchmark(s) -> int:
    cfg = _bench_config(s)
    jobs = s["jobs"] if s["jobs"] is not None else (os.cpu_count() or 1)
    rows = run_benchmark(cfg, jobs=int(jobs))
    summary = summarize(rows)
    if s["format"] == "json":
        _write_text(s["out"], json.dumps({"header": ROWS_HEADER, "rows": rows_table(rows)}) + "\n")
        spath = _summary_path(s["out"], ".json")
        text = json.dumps({"header": SUMMARY_HEADER, "rows": summary_table(summary)}) + "\n"
    else:
        _write_text(s["out"], _csv_text(ROWS_HEADER, rows_table(rows)))
        spath = _summary_path(s["out"], ".csv")
        text = _csv_text(SUMMARY_HEADER, summary_table(summary))
    if spath is None:
        sys.stdout.write("\n")
    _write_text(spath, text)
    if s["svg"]:
        _write_text(s["svg"], render_svg(summary))
    return 0


def cmd_check(s) -> int:
    only = []
    for item in s["only"] or []:
        only.extend(v.strip() for v in str(item).split(",") if v.strip())
    unknown = [o for o in only if o not in CHECKS]
    if unknown:
        raise UsageError(f"unknown checks {unknown}; choose from {', '.join(CHECKS)}")
    results = run_checks(int(s["seed"]), only or None, bool(s.get("corrupt_gradient")))
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  result  detail"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.detail}")
    _write_text(s["out"], "\n".join(lines) + "\n")
    return 0 if all(r.passed for r in results) else 1


# --------------------------------------------------------------------------
# SVG chart

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def render_svg(summary) -> str:
    """RMSE against n, one panel per (k, parameter), one polyline per method.

    The ML rows (k = 0) appear in every panel.
    """
    ks = sorted({r.k for r in summary if r.k > 0}) or [0]
    methods = sorted({r.method for r in summary}, key=lambda m: (m != "ml", m))
    ns = sorted({r.n for r in summary})
    pw, ph, margin = 320, 220, 50
    width = margin + len(ks) * (pw + margin)
    height = margin + 2 * (ph + margin) + 20 * len(methods)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    nmin, nmax = min(ns), max(ns)

    def xpos(n, x0):
        if nmax == nmin:
            return x0 + pw / 2
        return x0 + pw * (math.log(n) - math.log(nmin)) / (math.log(nmax) - math.log(nmin))

    for pi in range(2):
        for ki, k in enumerate(ks):
            x0 = margin + ki * (pw + margin)
            y0 = margin + pi * (ph + margin)
            sel = [r for r in summary if r.k in (k, 0)]
            top = max([r.rmse[pi] for r in sel if math.isfinite(r.rmse[pi])] + [1e-12]) * 1.1
            parts.append(f'<g class="panel" data-k="{k}" data-param="theta{pi + 1}">')
            parts.append(f'<rect x="{x0}" y="{y0}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>')
            parts.append(
                f'<text x="{x0 + pw / 2}" y="{y0 - 8}" text-anchor="middle">'
                f'RMSE theta{pi + 1}, k = {k}</text>'
            )
            parts.append(f'<text x="{x0 - 4}" y="{y0 + 10}" text-anchor="end">{top:.3g}</text>')
            parts.append(f'<text x="{x0 - 4}" y="{y0 + ph}" text-anchor="end">0</text>')
            for n in ns:
                parts.append(f'<text x="{xpos(n, x0):.1f}" y="{y0 + ph + 14}" text-anchor="middle">{n}</text>')
            for mi, m in enumerate(methods):
                pts = sorted((r.n, r.rmse[pi]) for r in sel if r.method == m and math.isfinite(r.rmse[pi]))
                if not pts:
                    continue
                coords = " ".join(f"{xpos(n, x0):.1f},{y0 + ph * (1 - v / top):.1f}" for n, v in pts)
                parts.append(
                    f'<polyline data-method="{escape(m)}" points="{coords}" fill="none" '
                    f'stroke="{PALETTE[mi % len(PALETTE)]}" stroke-width="2"/>'
                )
            parts.append("</g>")
    ly = margin + 2 * (ph + margin)
    for mi, m in enumerate(methods):
        y = ly + 20 * mi
        color = PALETTE[mi % len(PALETTE)]
        parts.append(f'<line x1="{margin}" y1="{y}" x2="{margin + 20}" y2="{y}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{margin + 26}" y="{y + 4}">{escape(m.replace("_", "-"))}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# --------------------------------------------------------------------------


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "benchmark": cmd_benchmark, "check": cmd_check}


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    try:
        settings = resolve(args)
        return COMMANDS[settings["command"]](settings)
    except UsageError as exc:
        print(f"poisson-transform: error: {exc}", file=sys.stderr)
        return 2
    except (PoissonTransformError, ValueError) as exc:
        print(f"poisson-transform: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
