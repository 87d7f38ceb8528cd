"""Exact simulation of the toy chain and the estimator comparison harness."""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _backend
from .errors import DomainError, PoissonTransformError
from .model import TOY_DOMAIN, SampleSet, check_theta, toy_model, uniform_reference
from .ncd import build_dataset, fit_ncd_ignore, fit_ncd_param, fit_ncd_semi, select_lambda
from .quadrature import fit_ml

__all__ = [
    "sample_chain",
    "sample_iid",
    "BenchmarkConfig",
    "BenchmarkRow",
    "run_benchmark",
    "run_repetition",
    "summarize",
    "SummaryRow",
    "repetition_seed",
    "METHODS",
]

METHODS = ("ml", "ncd_param", "ncd_semi", "ncd_ignore")
DEFAULT_CELLS = 400


def sample_chain(theta, n: int, y0: float = 0.0, rng=None, n_cells: int = DEFAULT_CELLS) -> SampleSet:
    """Draw ``y_1..y_n`` of the toy chain started at ``y0`` by inverse CDF.

    Each conditional CDF is tabulated on ``n_cells`` equal cells (401 grid
    nodes for the default) and inverted to a tolerance of ``1e-13`` times
    the total mass by safeguarded Newton steps on the exact cell integral.
    """
    theta = check_theta(theta, 2)
    if int(n) != n or n < 1:
        raise DomainError(f"n must be a positive integer, got {n}")
    TOY_DOMAIN.check(y0, "initial point")
    if n_cells < 1:
        raise DomainError("n_cells must be positive")
    rng = np.random.default_rng() if rng is None else rng
    u = rng.random(int(n))
    y = _backend.sample_toy_chain(theta, float(y0), u, TOY_DOMAIN.lower, TOY_DOMAIN.upper, int(n_cells))
    return SampleSet(float(y0), y)


def sample_iid(theta, n: int, anchor: float = 0.0, rng=None, n_cells: int = DEFAULT_CELLS) -> SampleSet:
    """``n`` independent draws from the toy conditional at a fixed ``anchor``."""
    theta = check_theta(theta, 2)
    if int(n) != n or n < 1:
        raise DomainError(f"n must be a positive integer, got {n}")
    TOY_DOMAIN.check(anchor, "anchor")
    rng = np.random.default_rng() if rng is None else rng
    u = rng.random(int(n))
    y = np.array([
        _backend.sample_toy_chain(theta, float(anchor), u[i:i + 1], TOY_DOMAIN.lower,
                                  TOY_DOMAIN.upper, int(n_cells))[0]
        for i in range(u.size)
    ])
    return SampleSet(float(anchor), y)


# --------------------------------------------------------------------------
# benchmark


@dataclass(frozen=True)
class BenchmarkConfig:
    """Sweep over chain lengths, reference ratios and repetitions.

    ``theta_true`` fixes the generating parameter instead of drawing it from
    the uniform ranges.
    """

    n_values: tuple = (500, 2000)
    k_values: tuple = (10, 30)
    repetitions: int = 100
    theta1_range: tuple = (-1.0, 1.0)
    theta2_range: tuple = (0.1, 10.0)
    methods: tuple = METHODS
    seed: int = 0
    y0: float = 0.0
    theta_true: Optional[tuple] = None
    folds: int = 5
    lambda_grid: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "n_values", tuple(int(v) for v in self.n_values))
        object.__setattr__(self, "k_values", tuple(int(v) for v in self.k_values))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.repetitions < 1:
            raise DomainError("repetitions must be at least 1")
        if not self.n_values or min(self.n_values) < 2:
            raise DomainError("n_values must be integers >= 2")
        if not self.k_values or min(self.k_values) < 1:
            raise DomainError("k_values must be positive integers")
        unknown = set(self.methods) - set(METHODS)
        if unknown or not self.methods:
            raise DomainError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
        for lo, hi in (self.theta1_range, self.theta2_range):
            if not lo < hi:
                raise DomainError("parameter ranges must be increasing")


@dataclass(frozen=True)
class BenchmarkRow:
    method: str
    n: int
    k: int
    repetition: int
    theta_true: tuple
    theta_hat: Optional[tuple]
    error: Optional[tuple]
    wall_time_ms: float = field(default=0.0, compare=False)
    failure: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.failure)


def repetition_seed(seed: int, rep: int, *key: int) -> np.random.SeedSequence:
    """Stream for repetition ``rep`` (and an optional sub-key), independent of order."""
    return np.random.SeedSequence(int(seed), spawn_key=(int(rep),) + tuple(int(k) for k in key))


def _fit(method, model, sample, k, cfg, rng):
    if method == "ml":
        fit = fit_ml(model, sample)
        return fit.theta_hat, fit.converged, fit.diagnostics
    ds = build_dataset(sample, uniform_reference(model.domain), k, rng)
    if method == "ncd_param":
        fit = fit_ncd_param(model, ds)
    elif method == "ncd_ignore":
        fit = fit_ncd_ignore(model, ds)
    else:
        lam = select_lambda(model, ds, grid=cfg.lambda_grid, folds=cfg.folds, rng=rng)
        fit = fit_ncd_semi(model, ds, lambda_pen=lam)
    return fit.theta_hat, fit.converged, fit.diagnostics


def run_repetition(cfg: BenchmarkConfig, rep: int) -> list:
    """All rows of one repetition; depends only on ``(cfg, rep)``."""
    rng = np.random.default_rng(repetition_seed(cfg.seed, rep))
    if cfg.theta_true is None:
        theta = (float(rng.uniform(*cfg.theta1_range)), float(rng.uniform(*cfg.theta2_range)))
    else:
        theta = tuple(float(v) for v in cfg.theta_true)
    chain = sample_chain(theta, max(cfg.n_values), cfg.y0, rng)
    model = toy_model()
    rows = []
    for n in cfg.n_values:
        sample = SampleSet(chain.initial, chain.points[:n])
        for method in cfg.methods:
            for k in ((0,) if method == "ml" else cfg.k_values):
                sub = np.random.default_rng(repetition_seed(cfg.seed, rep, n, k, METHODS.index(method)))
                start = time.perf_counter()
                try:
                    est, converged, diag = _fit(method, model, sample, k, cfg, sub)
                    failure = "" if converged else "not converged: " + "; ".join(diag)
                    if not np.all(np.isfinite(est)):
                        failure = "non-finite estimate"
                except (PoissonTransformError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
                    est, failure = None, f"{type(exc).__name__}: {exc}"
                ms = 1e3 * (time.perf_counter() - start)
                if failure:
                    rows.append(BenchmarkRow(method, n, k, rep, theta, None, None, ms, failure))
                else:
                    hat = tuple(float(v) for v in est)
                    err = tuple(h - t for h, t in zip(hat, theta))
                    rows.append(BenchmarkRow(method, n, k, rep, theta, hat, err, ms))
    return rows


def _run_rep(args):
    return run_repetition(*args)


def run_benchmark(cfg: BenchmarkConfig, jobs: int = 1) -> list:
    """Run every repetition; rows are ordered by repetition, then n, method, k."""
    reps = range(cfg.repetitions)
    if jobs is None or jobs <= 1 or cfg.repetitions == 1:
        chunks = [run_repetition(cfg, r) for r in reps]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_rep, [(cfg, r) for r in reps]))
    return [row for chunk in chunks for row in chunk]


@dataclass(frozen=True)
class SummaryRow:
    method: str
    n: int
    k: int
    count: int
    failures: int
    bias: tuple
    rmse: tuple
    bias_se: tuple


def summarize(rows: Sequence[BenchmarkRow]) -> list:
    """Bias, RMSE and standard error of the bias per ``(method, n, k)``.

    Failed rows are excluded from the statistics and counted. Groups without
    a single successful row are omitted.
    """
    if not rows:
        raise DomainError("no rows to summarise")
    groups: dict = {}
    for row in rows:
        groups.setdefault((row.method, row.n, row.k), []).append(row)
    out = []
    for (method, n, k), items in groups.items():
        errs = np.array([r.error for r in items if not r.failed], float)
        fails = sum(r.failed for r in items)
        if errs.size == 0:
            continue
        cnt = errs.shape[0]
        bias = errs.mean(axis=0)
        rmse = np.sqrt(np.mean(errs ** 2, axis=0))
        se = errs.std(axis=0, ddof=1) / math.sqrt(cnt) if cnt > 1 else np.full(errs.shape[1], np.nan)
        out.append(SummaryRow(method, n, k, cnt, fails, tuple(bias), tuple(rmse), tuple(se)))
    return out
