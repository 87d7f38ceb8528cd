"""Poisson-transformed objectives and their maximisers.

Three forms are provided:

* ``M(theta, nu)`` for IID data, one free log-normaliser ``nu``;
* ``M(theta, nu_vec)`` for Markov data, one ``nu`` per ancestor;
* ``M_chi(theta, chi)`` where the per-ancestor normalisers are a kernel
  expansion ``chi`` penalised by its RKHS norm.

Every integral is evaluated on the quadrature rule, so these are exact
objectives (up to quadrature error), suited to checking identities
against the exact log-likelihood.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import CapabilityError, DomainError, NumericalError
from .kernels import Kernel, KernelBasis, KernelExpansion, gram, median_bandwidth
from .model import ConditionalEnergyModel, SampleSet, check_theta
from .quadrature import (
    conditional_moments,
    default_rule,
    exact_loglik,
    log_partition,
    newton_ascent,
)
from .results import FitResult, invert_negative_hessian

__all__ = [
    "PenaltyConfig",
    "ConcavityReport",
    "nu_star",
    "m_objective",
    "m_grad",
    "m_hessian",
    "fit_poisson_joint",
    "m_seq_objective",
    "m_seq_grad",
    "m_chi_objective",
    "m_chi_grad",
    "fit_poisson_chi",
    "lambda_path",
    "confidence_from_m",
    "check_concavity",
]


@dataclass(frozen=True)
class PenaltyConfig:
    """RKHS penalty weight and an optional decreasing grid for path runs."""

    lambda_pen: float = 0.0
    grid: tuple = ()

    def __post_init__(self):
        if not (np.isfinite(self.lambda_pen) and self.lambda_pen >= 0):
            raise DomainError(f"lambda_pen must be >= 0, got {self.lambda_pen}")
        g = tuple(float(x) for x in self.grid)
        if any(x <= 0 for x in g) or any(a <= b for a, b in zip(g, g[1:])):
            raise DomainError(f"grid must be positive and strictly decreasing: {g}")
        object.__setattr__(self, "grid", g)


def _penalty(pen) -> float:
    return pen.lambda_pen if isinstance(pen, PenaltyConfig) else float(pen)


def _rule(model, rule):
    return default_rule(model.domain) if rule is None else rule


# --------------------------------------------------------------------------
# IID form


def nu_star(model, theta, y_prev, rule=None):
    """Optimal log-normaliser ``-log Z(theta, y_prev)``."""
    out = log_partition(model, theta, y_prev, rule)
    return -out


def _iid_parts(model, theta, sample: SampleSet, rule):
    sample.check(model.domain)
    anchor = np.full(sample.n, sample.initial)
    f = model.f(theta, sample.points, anchor)
    g = model.grad(theta, sample.points, anchor)
    h = model.hess(theta, sample.points, anchor)
    log_z, mean, second, mean_hess = conditional_moments(model, theta, sample.initial, rule)
    return f, g, h, log_z[0], mean[0], second[0], mean_hess[0]


def m_objective(model, theta, nu, sample: SampleSet, rule=None) -> float:
    """``sum_i {f(y_i) + nu} - n * integral exp{f + nu}``.

    Every point is conditioned on ``sample.initial`` (IID usage).
    """
    theta = check_theta(theta, model.dim)
    sample.check(model.domain)
    anchor = np.full(sample.n, sample.initial)
    f = model.f(theta, sample.points, anchor)
    log_z = log_partition(model, theta, sample.initial, rule)
    n = sample.n
    return float(np.sum(f) + n * nu - n * np.exp(nu + log_z))


def _m_all(model, x, sample, rule):
    d = model.dim
    theta, nu = x[:d], x[d]
    f, g, h, log_z, mean, second, mean_hess = _iid_parts(model, theta, sample, rule)
    n = sample.n
    mass = np.exp(nu + log_z)
    value = float(np.sum(f) + n * nu - n * mass)
    grad = np.empty(d + 1)
    grad[:d] = g.sum(axis=0) - n * mass * mean
    grad[d] = n - n * mass
    hess = np.empty((d + 1, d + 1))
    hess[:d, :d] = h.sum(axis=0) - n * mass * (mean_hess + second)
    hess[:d, d] = hess[d, :d] = -n * mass * mean
    hess[d, d] = -n * mass
    return value, grad, hess


def m_grad(model, theta, nu, sample: SampleSet, rule=None) -> np.ndarray:
    """Gradient of :func:`m_objective` over the joint vector ``(theta, nu)``."""
    x = np.append(check_theta(theta, model.dim), float(nu))
    return _m_all(model, x, sample, _rule(model, rule))[1]


def m_hessian(model, theta, nu, sample: SampleSet, rule=None) -> np.ndarray:
    x = np.append(check_theta(theta, model.dim), float(nu))
    return _m_all(model, x, sample, _rule(model, rule))[2]


def confidence_from_m(joint_hessian, dim: int) -> np.ndarray:
    """Covariance of theta from the joint Hessian of ``M``.

    The first ``dim`` rows/columns belong to theta; the remaining block is
    profiled out with a Schur complement.
    """
    h = np.asarray(joint_hessian, float)
    h_aa, h_ab = h[:dim, :dim], h[:dim, dim:]
    h_ba, h_bb = h[dim:, :dim], h[dim:, dim:]
    try:
        schur = h_aa - h_ab @ np.linalg.solve(h_bb, h_ba)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular normaliser block in the joint Hessian") from exc
    cov = np.linalg.inv(-schur)
    return 0.5 * (cov + cov.T)


def fit_poisson_joint(model, sample: SampleSet, rule=None, theta_init=None,
                      nu_init: float = 0.0, tol=1e-8, max_iter=200) -> FitResult:
    """Maximise ``M(theta, nu)`` jointly by Newton ascent."""
    rule = _rule(model, rule)
    x0 = np.append(
        np.zeros(model.dim) if theta_init is None else check_theta(theta_init, model.dim),
        float(nu_init),
    )

    def fun(x, need):
        try:
            return _m_all(model, x, sample, rule)
        except (NumericalError, FloatingPointError):
            return -np.inf, None, None

    with np.errstate(over="ignore", invalid="ignore"):
        x, value, grad, hess, it, conv, diag = newton_ascent(fun, x0, tol, max_iter)
    cov = None
    if invert_negative_hessian(hess) is not None:
        cov = confidence_from_m(hess, model.dim)
    else:
        diag.append("joint Hessian not negative definite: covariance omitted")
    return FitResult(
        theta_hat=x[: model.dim],
        nu_hat=float(x[model.dim]),
        covariance=cov,
        objective=value,
        iterations=it,
        converged=conv,
        diagnostics=diag,
    )


# --------------------------------------------------------------------------
# sequential form, one nu per ancestor


def _seq_parts(model, theta, sample, rule, order=2):
    sample.check(model.domain)
    anc = sample.ancestors
    f = model.f(theta, sample.points, anc)
    mom = conditional_moments(model, theta, anc, rule, order)
    return anc, f, mom


def m_seq_objective(model, theta, nu_vec, sample: SampleSet, rule=None) -> float:
    """``sum_t {f(y_t|y_{t-1}) + nu_{t-1}} - sum_t exp(nu_{t-1}) Z_t``."""
    theta = check_theta(theta, model.dim)
    nu_vec = np.asarray(nu_vec, float)
    if nu_vec.shape != (sample.n,):
        raise DomainError(f"nu_vec must have length {sample.n}, got shape {nu_vec.shape}")
    _, f, (log_z, *_) = _seq_parts(model, theta, sample, rule, order=0)
    return float(np.sum(f) + np.sum(nu_vec) - np.sum(np.exp(nu_vec + log_z)))


def m_seq_grad(model, theta, nu_vec, sample: SampleSet, rule=None) -> np.ndarray:
    """Gradient over ``(theta, nu_0..nu_{n-1})``."""
    theta = check_theta(theta, model.dim)
    nu_vec = np.asarray(nu_vec, float)
    if nu_vec.shape != (sample.n,):
        raise DomainError(f"nu_vec must have length {sample.n}, got shape {nu_vec.shape}")
    anc, _, (log_z, mean, _, _) = _seq_parts(model, theta, sample, rule, order=1)
    mass = np.exp(nu_vec + log_z)
    g = model.grad(theta, sample.points, anc).sum(axis=0) - mass @ mean
    return np.concatenate([g, 1.0 - mass])


# --------------------------------------------------------------------------
# semi-parametric form


def _chi_at(chi: KernelExpansion, anc):
    return chi(np.asarray(anc, float))


def m_chi_objective(model, theta, chi: KernelExpansion, pen, sample: SampleSet,
                    rule=None, penalized: bool = True) -> float:
    """Penalised semi-parametric objective.

    ``sum_t {f(y_t|y_{t-1}) + chi(y_{t-1})} - sum_t exp(chi(y_{t-1})) Z_t
    - lambda * alpha^T K alpha``. With ``penalized=False`` the penalty term
    is dropped.
    """
    theta = check_theta(theta, model.dim)
    _, f, (log_z, *_) = _seq_parts(model, theta, sample, rule, order=0)
    c = _chi_at(chi, sample.ancestors)
    value = float(np.sum(f) + np.sum(c) - np.sum(np.exp(c + log_z)))
    lam = _penalty(pen)
    if penalized and lam > 0:
        k = gram(chi.kernel, chi.centers)
        try:
            np.linalg.cholesky(k + 1e-10 * np.trace(k) / k.shape[0] * np.eye(k.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise NumericalError("kernel Gram matrix is not positive definite") from exc
        value -= lam * float(chi.alpha @ k @ chi.alpha)
    return value


def m_chi_grad(model, theta, chi: KernelExpansion, pen, sample: SampleSet,
               rule=None) -> np.ndarray:
    """Gradient of :func:`m_chi_objective` over ``(theta, alpha)``."""
    theta = check_theta(theta, model.dim)
    anc, _, (log_z, mean, _, _) = _seq_parts(model, theta, sample, rule, order=1)
    basis = chi.kernel(anc, chi.centers)
    c = basis @ chi.alpha
    mass = np.exp(c + log_z)
    g_theta = model.grad(theta, sample.points, anc).sum(axis=0) - mass @ mean
    g_alpha = basis.T @ (1.0 - mass)
    lam = _penalty(pen)
    if lam > 0:
        g_alpha -= 2.0 * lam * gram(chi.kernel, chi.centers) @ chi.alpha
    return np.concatenate([g_theta, g_alpha])


def _chi_fun(model, sample, rule, phi, lam):
    """Value/gradient/Hessian of the penalised objective in ``(theta, b)``."""
    d = model.dim
    anc = sample.ancestors
    g_data = None

    def fun(x, need):
        theta, b = x[:d], x[d:]
        try:
            f = model.f(theta, sample.points, anc)
            if need:
                log_z, mean, second, mean_hess = conditional_moments(model, theta, anc, rule)
            else:
                log_z = conditional_moments(model, theta, anc, rule, order=0)[0]
        except (NumericalError, FloatingPointError):
            return -np.inf, None, None
        c = phi @ b
        mass = np.exp(c + log_z)
        value = float(np.sum(f) + np.sum(c) - np.sum(mass) - lam * (b @ b))
        if not need:
            return value, None, None
        g = model.grad(theta, sample.points, anc)
        h = model.hess(theta, sample.points, anc)
        grad = np.concatenate([g.sum(axis=0) - mass @ mean, phi.T @ (1.0 - mass) - 2 * lam * b])
        m = b.size
        hess = np.empty((d + m, d + m))
        hess[:d, :d] = h.sum(axis=0) - np.einsum("t,tde->de", mass, mean_hess + second)
        cross = -(mean * mass[:, None]).T @ phi
        hess[:d, d:] = cross
        hess[d:, :d] = cross.T
        hess[d:, d:] = -(phi.T * mass[None, :]) @ phi - 2 * lam * np.eye(m)
        return value, grad, hess

    return fun


def _unpenalized_chi_value(model, theta, c, sample, rule):
    f = model.f(theta, sample.points, sample.ancestors)
    log_z = conditional_moments(model, theta, sample.ancestors, rule, order=0)[0]
    return float(np.sum(f) + np.sum(c) - np.sum(np.exp(c + log_z)))


def fit_poisson_chi(model, sample: SampleSet, rule=None, kernel: Optional[Kernel] = None,
                    pen=1e-6, theta_init=None, b_init=None, tol=1e-9,
                    max_iter=200) -> FitResult:
    """Maximise the penalised semi-parametric objective by joint Newton ascent.

    The centers of the kernel expansion are the ancestors ``y_0..y_{n-1}``.
    ``nu_hat`` of the result is the fitted :class:`KernelExpansion`;
    ``objective`` is the penalised value; ``extras`` holds the unpenalised
    value (``"unpenalized"``) and the whitened coefficients (``"coef"``).
    """
    rule = _rule(model, rule)
    sample.check(model.domain)
    anc = sample.ancestors
    if kernel is None:
        kernel = Kernel(median_bandwidth(anc) if np.ptp(anc) > 0 else 1.0)
    lam = _penalty(pen)
    basis = KernelBasis(kernel, anc)
    phi = basis.features(anc)
    x0 = np.concatenate([
        np.zeros(model.dim) if theta_init is None else check_theta(theta_init, model.dim),
        np.zeros(basis.size) if b_init is None else np.asarray(b_init, float),
    ])
    fun = _chi_fun(model, sample, rule, phi, lam)
    with np.errstate(over="ignore", invalid="ignore"):
        x, value, grad, hess, it, conv, diag = newton_ascent(fun, x0, tol, max_iter)
    theta = x[: model.dim]
    b = x[model.dim:]
    result = FitResult(
        theta_hat=theta,
        nu_hat=basis.expansion(b),
        covariance=None,
        objective=value,
        iterations=it,
        converged=conv,
        diagnostics=diag,
    )
    result.extras["unpenalized"] = _unpenalized_chi_value(model, theta, phi @ b, sample, rule)
    result.extras["coef"] = b
    return result


def lambda_path(model, sample: SampleSet, rule=None, kernel: Optional[Kernel] = None,
                grid: Sequence[float] = (10, 1, 0.1, 0.01, 1e-4, 1e-6)):
    """Unpenalised optimum value of ``M_chi`` along a decreasing penalty grid.

    Each fit is warm-started from the previous one. Returns a list of
    ``(lambda, value)`` pairs.
    """
    grid = PenaltyConfig(0.0, tuple(grid)).grid
    if not grid:
        raise DomainError("empty penalty grid")
    out = []
    theta = b = None
    for lam in grid:
        res = fit_poisson_chi(model, sample, rule, kernel, lam, theta_init=theta, b_init=b)
        theta, b = res.theta_hat, res.extras["coef"]
        out.append((lam, res.extras["unpenalized"]))
    return out


# --------------------------------------------------------------------------
# concavity


@dataclass
class ConcavityReport:
    max_eigenvalues: np.ndarray
    threshold: float = 1e-8
    points: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(np.all(self.max_eigenvalues <= self.threshold))


def check_concavity(model, theta_samples, nu_samples, sample: SampleSet, rule=None,
                    threshold: float = 1e-8) -> ConcavityReport:
    """Largest eigenvalue of the joint Hessian of ``M`` at each ``(theta, nu)``."""
    if not model.exponential_family:
        raise CapabilityError(
            f"concavity is only guaranteed for exponential families; {model.name!r} is not one"
        )
    rule = _rule(model, rule)
    eig = []
    pts = []
    for theta, nu in zip(theta_samples, nu_samples):
        h = m_hessian(model, theta, nu, sample, rule)
        eig.append(np.linalg.eigvalsh(h).max())
        pts.append((np.asarray(theta, float), float(nu)))
    return ConcavityReport(np.asarray(eig), threshold, pts)
