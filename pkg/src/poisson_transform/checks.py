"""Invariant check-suite run by ``poisson-transform check``.

Each check returns a :class:`CheckResult`; tolerances are module constants
so the report can state them.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .chain import sample_chain, sample_iid
from .kernels import Kernel, KernelExpansion, median_bandwidth
from .model import toy_iid_model, toy_model, uniform_reference
from .ncd import build_dataset, ncd_grad, ncd_objective
from .poisson import (
    check_concavity,
    confidence_from_m,
    fit_poisson_joint,
    lambda_path,
    m_chi_grad,
    m_chi_objective,
    m_grad,
    m_hessian,
    m_objective,
    m_seq_grad,
    m_seq_objective,
    nu_star,
)
from .quadrature import exact_loglik, exact_loglik_grad, exact_loglik_hessian, fit_ml

__all__ = [
    "CheckResult",
    "CHECKS",
    "run_checks",
    "central_difference",
    "relative_error",
    "shifted_ncd_error",
    "chord_violation",
]

IDENTITY_TOL = 1e-9
GRADIENT_TOL = 1e-6
CONFIDENCE_TOL = 1e-6
CONCAVITY_TOL = 1e-8
NCD_LIMIT_FRACTION = 0.05
PLATEAU_SLACK = 1e-8
PLATEAU_GAP = 1e-6
PLATEAU_VALUE_TOL = 1e-4


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def central_difference(fun: Callable, x, rel_step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, float)
    g = np.empty_like(x)
    for i in range(x.size):
        h = rel_step * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def relative_error(analytic, numeric) -> float:
    """``max|a - n| / max(max|n|, 1)``."""
    analytic = np.asarray(analytic, float)
    numeric = np.asarray(numeric, float)
    return float(np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1.0))


def shifted_ncd_error(model, theta, nu, sample, k, rng) -> float:
    """``|R^m + n log(m/n) + sum log q(y_i) - M(theta, nu)|`` for one reference draw."""
    q = uniform_reference(model.domain)
    ds = build_dataset(sample, q, k, rng)
    r = ncd_objective(model, theta, nu, ds)
    shift = sample.n * np.log(ds.m / sample.n) + float(np.sum(q.log_density(sample.points)))
    return abs(r + shift - m_objective(model, theta, nu, sample))


def chord_violation(fun: Callable, a, b, n_interior: int = 9) -> float:
    """Largest amount by which ``fun`` dips below its chord between ``a`` and ``b``."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    fa, fb = fun(a), fun(b)
    worst = -np.inf
    for s in np.linspace(0, 1, n_interior + 2)[1:-1]:
        chord = (1 - s) * fa + s * fb
        worst = max(worst, chord - fun((1 - s) * a + s * b))
    return float(worst)


# --------------------------------------------------------------------------
# individual checks


def check_theorem1(rng, corrupt=False) -> CheckResult:
    model = toy_iid_model()
    sample = sample_iid((0.3, 4.0), 100, 0.0, rng)
    worst = 0.0
    for _ in range(20):
        theta = np.array([rng.uniform(-3, 3), rng.uniform(0, 60)])
        nu = float(nu_star(model, theta, 0.0))
        gap = abs(m_objective(model, theta, nu, sample) - (exact_loglik(model, theta, sample) - sample.n))
        worst = max(worst, gap)
    return CheckResult("theorem1", bool(worst <= IDENTITY_TOL), f"max |M(nu*) - (L - n)| = {worst:.2e} (tol {IDENTITY_TOL:g})")


def check_gradients(rng, corrupt=False) -> CheckResult:
    iid = toy_iid_model()
    chain_model = toy_model()
    s_iid = sample_iid((0.2, 3.0), 50, 0.0, rng)
    s_chain = sample_chain((0.2, 3.0), 30, 0.0, rng)
    kernel = Kernel(median_bandwidth(s_chain.ancestors))
    ds = build_dataset(s_iid, uniform_reference(), 5, rng)
    bump = 1e-3 if corrupt else 0.0
    worst = {}

    def record(name, analytic, numeric):
        worst[name] = max(worst.get(name, 0.0), relative_error(analytic, numeric))

    for _ in range(20):
        theta = np.array([rng.uniform(-2, 2), rng.uniform(0, 20)])
        nu = rng.uniform(-2, 0)
        record("L", exact_loglik_grad(chain_model, theta, s_chain) + bump,
               central_difference(lambda x: exact_loglik(chain_model, x, s_chain), theta))
        x = np.append(theta, nu)
        record("M", m_grad(iid, theta, nu, s_iid),
               central_difference(lambda x: m_objective(iid, x[:2], x[2], s_iid), x))
        nu_vec = rng.uniform(-2, 0, s_chain.n)
        x = np.concatenate([theta, nu_vec])
        record("M_seq", m_seq_grad(chain_model, theta, nu_vec, s_chain),
               central_difference(lambda x: m_seq_objective(chain_model, x[:2], x[2:], s_chain), x))
        alpha = rng.normal(0, 0.3, s_chain.n)
        chi = KernelExpansion(s_chain.ancestors, alpha, kernel)
        x = np.concatenate([theta, alpha])
        record("M_chi", m_chi_grad(chain_model, theta, chi, 0.1, s_chain),
               central_difference(
                   lambda x: m_chi_objective(
                       chain_model, x[:2], KernelExpansion(s_chain.ancestors, x[2:], kernel), 0.1, s_chain
                   ),
                   x,
               ))
        x = np.append(theta, nu)
        record("R", ncd_grad(iid, theta, nu, ds),
               central_difference(lambda x: ncd_objective(iid, x[:2], x[2], ds), x))
    top = max(worst.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f" (tol {GRADIENT_TOL:g})"
    return CheckResult("gradients", bool(top <= GRADIENT_TOL), detail)


def check_confidence(rng, corrupt=False) -> CheckResult:
    model = toy_iid_model()
    worst = 0.0
    for _ in range(3):
        sample = sample_iid((rng.uniform(-1, 1), rng.uniform(0.5, 10)), 1000, 0.0, rng)
        ml = fit_ml(model, sample)
        pj = fit_poisson_joint(model, sample)
        c_l = np.linalg.inv(-exact_loglik_hessian(model, ml.theta_hat, sample))
        c_m = confidence_from_m(m_hessian(model, pj.theta_hat, pj.nu_hat, sample), model.dim)
        worst = max(worst, float(np.max(np.abs(c_m - c_l) / np.abs(c_l))))
    return CheckResult("confidence", bool(worst <= CONFIDENCE_TOL), f"max relative |C_M - C_L| = {worst:.2e} (tol {CONFIDENCE_TOL:g})")


def check_concavity_suite(rng, corrupt=False) -> CheckResult:
    model = toy_iid_model()
    sample = sample_iid((0.0, 2.0), 100, 0.0, rng)
    thetas = np.column_stack([rng.uniform(-3, 3, 50), rng.uniform(0, 60, 50)])
    nus = rng.uniform(-5, 2, 50)
    report = check_concavity(model, thetas, nus, sample, threshold=CONCAVITY_TOL)
    ds = build_dataset(sample, uniform_reference(), 10, rng)
    fun = lambda x: ncd_objective(model, x[:2], x[2], ds)  # noqa: E731
    worst_chord = -np.inf
    for _ in range(50):
        a = np.array([rng.uniform(-3, 3), rng.uniform(0, 60), rng.uniform(-5, 2)])
        b = np.array([rng.uniform(-3, 3), rng.uniform(0, 60), rng.uniform(-5, 2)])
        scale = max(abs(fun(a)), abs(fun(b)), 1.0)
        worst_chord = max(worst_chord, chord_violation(fun, a, b) / scale)
    ok = bool(report.passed and worst_chord <= 1e-12)
    return CheckResult(
        "concavity", ok,
        f"max Hessian eigenvalue {report.max_eigenvalues.max():.2e} (tol {CONCAVITY_TOL:g}); "
        f"max relative chord violation {worst_chord:.1e}",
    )


def check_ncd_limit(rng, corrupt=False, seeds: int = 50) -> CheckResult:
    model = toy_iid_model()
    theta, nu, n = np.array([-1.0, 5.0]), -1.0, 200
    medians = []
    for k in (10, 100, 1000):
        errs = []
        for s in range(seeds):
            sample = sample_iid(theta, n, 0.0, np.random.default_rng([s]))
            errs.append(shifted_ncd_error(model, theta, nu, sample, k, np.random.default_rng([s, k])))
        medians.append(float(np.median(errs)))
    ok = bool(medians[0] > medians[1] > medians[2] and medians[2] <= NCD_LIMIT_FRACTION * n)
    return CheckResult(
        "ncd-limit", ok,
        "median shifted error k=10/100/1000: " + " / ".join(f"{m:.3g}" for m in medians)
        + f" (last <= {NCD_LIMIT_FRACTION * n:g})",
    )


def check_plateau(rng, corrupt=False) -> CheckResult:
    model = toy_model()
    sample = sample_chain((-1.0, 5.0), 200, 0.0, rng)
    path = lambda_path(model, sample)
    values = np.array([v for _, v in path])
    target = exact_loglik(model, fit_ml(model, sample).theta_hat, sample) - sample.n
    drops = float(np.max(values[:-1] - values[1:]))
    gap = abs(values[-1] - values[-2])
    off = abs(values[-1] - target)
    ok = bool(drops <= PLATEAU_SLACK and gap <= PLATEAU_GAP and off <= PLATEAU_VALUE_TOL)
    return CheckResult(
        "plateau", ok,
        f"largest decrease {max(drops, 0.0):.1e} (slack {PLATEAU_SLACK:g}); last gap {gap:.1e} "
        f"(tol {PLATEAU_GAP:g}); |plateau - (L(ml) - n)| {off:.1e} (tol {PLATEAU_VALUE_TOL:g})",
    )


CHECKS = {
    "theorem1": check_theorem1,
    "gradients": check_gradients,
    "confidence": check_confidence,
    "concavity": check_concavity_suite,
    "ncd-limit": check_ncd_limit,
    "plateau": check_plateau,
}


def run_checks(seed: int, only: Optional[list] = None, corrupt_gradient: bool = False) -> list:
    """Run the selected checks, each on its own stream derived from ``seed``."""
    names = list(CHECKS) if not only else list(only)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown checks {unknown}; choose from {list(CHECKS)}")
    out = []
    for name in names:
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(list(CHECKS).index(name),)))
        out.append(CHECKS[name](rng, corrupt=corrupt_gradient))
    return out
