"""Gauss-Legendre integration and the exact (quadrature) log-likelihood.

The log-likelihood of a conditional energy model is

    L(theta) = sum_t f(y_t | y_{t-1}) - log Z(theta, y_{t-1}),

with every ``Z`` computed on a fixed Gauss-Legendre rule. This is the
oracle that every approximate estimator in the package is checked against.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, NumericalError
from .model import ConditionalEnergyModel, Domain, SampleSet, check_theta
from .results import FitResult, invert_negative_hessian

__all__ = [
    "QuadratureRule",
    "gauss_legendre",
    "default_rule",
    "conditional_moments",
    "log_partition",
    "exact_loglik",
    "exact_loglik_grad",
    "exact_loglik_hessian",
    "fit_ml",
    "newton_ascent",
]

DEFAULT_NODES = 401


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    domain: Domain

    def integrate(self, values) -> np.ndarray:
        """Integrate samples taken at ``nodes`` (last axis)."""
        return np.asarray(values) @ self.weights


def gauss_legendre(n_nodes: int, domain: Domain = Domain()) -> QuadratureRule:
    """``n_nodes``-point Gauss-Legendre rule mapped onto ``domain``."""
    if int(n_nodes) != n_nodes or n_nodes < 1:
        raise DomainError(f"number of nodes must be a positive integer, got {n_nodes}")
    x, w = np.polynomial.legendre.leggauss(int(n_nodes))
    half = 0.5 * domain.width
    nodes = domain.lower + half * (x + 1.0)
    weights = half * w
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes, weights, domain)


_RULE_CACHE: dict = {}


def default_rule(domain: Domain = Domain()) -> QuadratureRule:
    key = (domain.lower, domain.upper)
    if key not in _RULE_CACHE:
        _RULE_CACHE[key] = gauss_legendre(DEFAULT_NODES, domain)
    return _RULE_CACHE[key]


def _rule(model: ConditionalEnergyModel, rule: Optional[QuadratureRule]) -> QuadratureRule:
    return default_rule(model.domain) if rule is None else rule


def conditional_moments(model, theta, ancestors, rule=None, order: int = 2):
    """Log-partition and moments of ``grad f`` under each conditional.

    Returns ``(log_z, mean, second, mean_hess)``; ``second`` is the raw
    second moment ``E[g g^T]`` and ``mean_hess`` is ``E[d2f/dtheta2]``.
    Arrays are indexed by ancestor. Entries beyond ``order`` are None.
    """
    rule = _rule(model, rule)
    theta = check_theta(theta, model.dim)
    anc = np.atleast_1d(np.asarray(ancestors, float))
    n = anc.size
    if model.iid and n > 1:
        out = conditional_moments(model, theta, anc[:1], rule, order)
        return tuple(None if a is None else np.repeat(a, n, axis=0) for a in out)

    if model.moments is not None and model.exponential_family and order <= 2:
        log_z, mean, second = model.moments(theta, anc, rule.nodes, rule.weights)
        if not np.all(np.isfinite(log_z)):
            raise NumericalError("non-finite log-partition")
        zero_h = np.zeros((n, model.dim, model.dim)) if order >= 2 else None
        return log_z, mean, (second if order >= 2 else None), zero_h

    e = model.energy(theta, rule.nodes[None, :], anc[:, None])
    e = np.broadcast_to(e, (n, rule.nodes.size))
    if not np.all(np.isfinite(e)):
        raise NumericalError("non-finite energy at a quadrature node")
    mx = e.max(axis=1, keepdims=True)
    g = rule.weights[None, :] * np.exp(e - mx)
    z = g.sum(axis=1)
    log_z = mx[:, 0] + np.log(z)
    if order == 0:
        return log_z, None, None, None
    p = g / z[:, None]
    grads = model.grad_theta(theta, rule.nodes[None, :], anc[:, None])
    grads = np.broadcast_to(grads, (n, rule.nodes.size, model.dim))
    mean = np.einsum("tj,tjd->td", p, grads)
    if order == 1:
        return log_z, mean, None, None
    second = np.einsum("tj,tjd,tje->tde", p, grads, grads)
    hess = model.hess(theta, rule.nodes[None, :], anc[:, None])
    hess = np.broadcast_to(hess, (n, rule.nodes.size, model.dim, model.dim))
    mean_hess = np.einsum("tj,tjde->tde", p, hess)
    return log_z, mean, second, mean_hess


def log_partition(model, theta, y_prev, rule=None):
    """``log sum_i w_i exp f(node_i | y_prev)`` with max-subtraction."""
    model.domain.check(y_prev, "y_prev")
    log_z = conditional_moments(model, theta, y_prev, rule, order=0)[0]
    return float(log_z[0]) if np.ndim(y_prev) == 0 else log_z


def _data_terms(model, theta, sample: SampleSet):
    sample.check(model.domain)
    anc = sample.ancestors
    f = model.f(theta, sample.points, anc)
    if not np.all(np.isfinite(f)):
        raise NumericalError("non-finite energy at a data point")
    return anc, f


def exact_loglik(model, theta, sample: SampleSet, rule=None) -> float:
    theta = check_theta(theta, model.dim)
    anc, f = _data_terms(model, theta, sample)
    log_z = conditional_moments(model, theta, anc, rule, order=0)[0]
    return float(np.sum(f) - np.sum(log_z))


def exact_loglik_grad(model, theta, sample: SampleSet, rule=None) -> np.ndarray:
    theta = check_theta(theta, model.dim)
    anc = sample.check(model.domain).ancestors
    _, mean, _, _ = conditional_moments(model, theta, anc, rule, order=1)
    g_data = model.grad(theta, sample.points, anc)
    return g_data.sum(axis=0) - mean.sum(axis=0)


def exact_loglik_hessian(model, theta, sample: SampleSet, rule=None) -> np.ndarray:
    theta = check_theta(theta, model.dim)
    anc = sample.check(model.domain).ancestors
    _, mean, second, mean_hess = conditional_moments(model, theta, anc, rule)
    h_data = model.hess(theta, sample.points, anc).sum(axis=0)
    cov = second - np.einsum("td,te->tde", mean, mean)
    h = h_data - (mean_hess + cov).sum(axis=0)
    return 0.5 * (h + h.T)


def _loglik_all(model, theta, sample, rule):
    """Value, gradient and Hessian in one pass over the quadrature grid."""
    anc, f = _data_terms(model, theta, sample)
    log_z, mean, second, mean_hess = conditional_moments(model, theta, anc, rule)
    value = float(np.sum(f) - np.sum(log_z))
    grad = model.grad(theta, sample.points, anc).sum(axis=0) - mean.sum(axis=0)
    cov = second - np.einsum("td,te->tde", mean, mean)
    hess = model.hess(theta, sample.points, anc).sum(axis=0) - (mean_hess + cov).sum(axis=0)
    return value, grad, 0.5 * (hess + hess.T)


def newton_ascent(fun, x0, tol=1e-8, max_iter=200, armijo=1e-4, shrink=0.5,
                  max_norm=1e6, max_backtracks=60):
    """Maximise ``fun`` by damped Newton steps with Armijo backtracking.

    ``fun(x, need_derivatives)`` returns ``(value, grad, hess)``; the last
    two may be None when ``need_derivatives`` is False. Returns
    ``(x, value, grad, hess, iterations, converged, diagnostics)``.
    """
    x = np.array(x0, dtype=float)
    value, grad, hess = fun(x, True)
    diagnostics = []
    if not np.isfinite(value):
        raise NumericalError("objective is not finite at the starting point")
    it = 0
    converged = bool(np.max(np.abs(grad)) <= tol)
    while not converged and it < max_iter:
        it += 1
        step = None
        neg = -0.5 * (hess + hess.T)
        try:
            chol = np.linalg.cholesky(neg)
            step = np.linalg.solve(chol.T, np.linalg.solve(chol, grad))
        except np.linalg.LinAlgError:
            # not concave here: fall back to a regularised step
            lam = max(1e-8, -np.linalg.eigvalsh(neg).min() + 1e-6 * max(1.0, np.abs(neg).max()))
            step = np.linalg.solve(neg + lam * np.eye(x.size), grad)
        slope = float(grad @ step)
        a = 1.0
        accepted = False
        for _ in range(max_backtracks):
            x_new = x + a * step
            v_new = fun(x_new, False)[0]
            if np.isfinite(v_new) and v_new >= value + armijo * a * slope:
                accepted = True
                break
            # near the optimum the Armijo test drowns in rounding error
            if a == 1.0 and np.isfinite(v_new) and v_new >= value - 1e-12 * max(1.0, abs(value)):
                accepted = True
                break
            a *= shrink
        if not accepted:
            diagnostics.append(f"line search stalled at iteration {it}")
            break
        x = x_new
        value, grad, hess = fun(x, True)
        if np.max(np.abs(x)) > max_norm:
            diagnostics.append(f"iterate norm exceeded {max_norm:g}: estimate at the boundary")
            break
        converged = bool(np.max(np.abs(grad)) <= tol)
    if not converged and it >= max_iter:
        diagnostics.append(f"no convergence after {max_iter} iterations")
    return x, value, grad, hess, it, converged, diagnostics


def fit_ml(model, sample: SampleSet, rule=None, theta_init=None, tol=1e-8,
           max_iter=200) -> FitResult:
    """Exact maximum likelihood by Newton ascent on the quadrature log-likelihood.

    The covariance is ``(-H)^{-1}`` at the optimum; it is omitted (with a
    diagnostic) when the Hessian is not negative definite.
    """
    rule = _rule(model, rule)
    x0 = np.zeros(model.dim) if theta_init is None else check_theta(theta_init, model.dim)

    def fun(theta, need):
        try:
            if need:
                return _loglik_all(model, theta, sample, rule)
            return exact_loglik(model, theta, sample, rule), None, None
        except (NumericalError, FloatingPointError):
            return -np.inf, None, None

    with np.errstate(over="ignore", invalid="ignore"):
        theta, value, grad, hess, it, conv, diag = newton_ascent(fun, x0, tol, max_iter)
    cov = invert_negative_hessian(hess)
    if cov is None:
        diag.append("Hessian not negative definite: covariance omitted")
    return FitResult(
        theta_hat=theta,
        nu_hat=None,
        covariance=cov,
        objective=value,
        iterations=it,
        converged=conv,
        diagnostics=diag,
    )
