"""Monte Carlo gradients of the Poisson transform and stochastic gradient ascent.

The integral terms of the gradient of ``M(theta, nu)`` are replaced by
importance-sampling averages over ``m`` draws from a reference density, so
neither the likelihood nor the normaliser is ever evaluated.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import DomainError, NumericalError
from .model import ConditionalEnergyModel, ReferenceDensity, SampleSet, check_theta, uniform_reference
from .results import FitResult

__all__ = ["McGradient", "SgaSchedule", "mc_gradient", "sga_fit"]

MAX_LOG_WEIGHT = 700.0


class McGradient(NamedTuple):
    grad_theta: np.ndarray
    grad_nu: float
    m_used: int

    @property
    def vector(self) -> np.ndarray:
        return np.append(self.grad_theta, self.grad_nu)


@dataclass(frozen=True)
class SgaSchedule:
    """Robbins-Monro steps ``step0 * t**(-gamma)``, ``t = 1..max_steps``."""

    step0: float
    gamma: float = 0.7
    max_steps: int = 1000

    def __post_init__(self):
        if not (np.isfinite(self.step0) and self.step0 > 0):
            raise DomainError("step0 must be positive")
        if not 0.5 < self.gamma <= 1.0:
            raise DomainError("gamma must lie in (0.5, 1]")
        if int(self.max_steps) != self.max_steps or self.max_steps < 0:
            raise DomainError("max_steps must be a non-negative integer")

    @classmethod
    def default(cls, n: int, max_steps: int = 1000) -> "SgaSchedule":
        return cls(step0=0.5 / n, gamma=0.7, max_steps=max_steps)

    def step(self, t: int) -> float:
        return self.step0 * float(t) ** (-self.gamma)


def mc_gradient(model: ConditionalEnergyModel, theta, nu, sample: SampleSet,
                q: Optional[ReferenceDensity] = None, m: int = 100, rng=None) -> McGradient:
    """Unbiased estimate of the gradient of ``M(theta, nu)`` (IID form).

    With ``r_j ~ q`` and ``w_j = exp{f(r_j) + nu - log q(r_j)}``::

        grad_theta = sum_i df(y_i) - (n/m) sum_j df(r_j) w_j
        grad_nu    = n - (n/m) sum_j w_j
    """
    if int(m) != m or m < 1:
        raise DomainError(f"m must be a positive integer, got {m}")
    m = int(m)
    theta = check_theta(theta, model.dim)
    q = uniform_reference(model.domain) if q is None else q
    rng = np.random.default_rng() if rng is None else rng
    n = sample.n
    anchor = sample.initial
    data_grad = model.grad(theta, sample.points, np.full(n, anchor)).sum(axis=0)
    r = np.asarray(q.sampler(np.asarray(anchor), rng, m), float).reshape(m)
    log_w = model.f(theta, r, np.full(m, anchor)) + float(nu) - np.asarray(q.log_density(r, anchor))
    if np.max(log_w) > MAX_LOG_WEIGHT:
        raise NumericalError(
            f"importance weight overflow (max log weight {np.max(log_w):.1f}); "
            "start from a smaller nu offset"
        )
    w = np.exp(log_w)
    ref_grad = w @ model.grad(theta, r, np.full(m, anchor))
    grad_theta = data_grad - (n / m) * ref_grad
    grad_nu = n - (n / m) * float(w.sum())
    if not (np.all(np.isfinite(grad_theta)) and np.isfinite(grad_nu)):
        raise NumericalError("non-finite Monte Carlo gradient")
    return McGradient(grad_theta, float(grad_nu), m)


def sga_fit(model: ConditionalEnergyModel, sample: SampleSet, q: Optional[ReferenceDensity] = None,
            schedule: Optional[SgaSchedule] = None, m_per_step: int = 50, rng=None,
            theta_init=None, nu_init: Optional[float] = None,
            grad_fn: Optional[Callable] = None, max_norm: float = 1e6) -> FitResult:
    """Stochastic gradient ascent on ``M(theta, nu)``.

    Returns the last iterate and the average over the last quarter of the
    iterates (``theta_avg``, ``nu_avg``). ``nu_init`` defaults to the MC
    estimate of ``-log Z`` at ``theta_init``. ``grad_fn(theta, nu)`` replaces
    the Monte Carlo gradient when given.
    """
    q = uniform_reference(model.domain) if q is None else q
    schedule = SgaSchedule.default(sample.n) if schedule is None else schedule
    rng = np.random.default_rng() if rng is None else rng
    theta = np.zeros(model.dim) if theta_init is None else check_theta(theta_init, model.dim).copy()
    if nu_init is None:
        r = np.asarray(q.sampler(np.asarray(sample.initial), rng, 1000), float).reshape(-1)
        log_w = model.f(theta, r, np.full(r.size, sample.initial)) - np.asarray(q.log_density(r, sample.initial))
        top = np.max(log_w)
        nu = -float(top + np.log(np.mean(np.exp(log_w - top))))
    else:
        nu = float(nu_init)
    x = np.append(theta, nu)

    if grad_fn is None:
        def grad_fn(th, v):
            return mc_gradient(model, th, v, sample, q, m_per_step, rng).vector

    steps = int(schedule.max_steps)
    tail_start = steps - max(1, steps // 4) + 1
    tail_sum = np.zeros_like(x)
    tail_count = 0
    diagnostics = []
    converged = True
    done = 0
    for t in range(1, steps + 1):
        try:
            g = np.asarray(grad_fn(x[:-1], x[-1]), float)
        except NumericalError as exc:
            diagnostics.append(f"aborted at step {t}: {exc}")
            converged = False
            break
        x = x + schedule.step(t) * g
        done = t
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > max_norm:
            diagnostics.append(f"iterates diverged at step {t} (norm > {max_norm:g})")
            converged = False
            break
        if t >= tail_start:
            tail_sum += x
            tail_count += 1
    avg = tail_sum / tail_count if tail_count else x.copy()
    return FitResult(
        theta_hat=x[:-1].copy(),
        nu_hat=float(x[-1]),
        covariance=None,
        objective=float("nan"),
        iterations=done,
        converged=converged,
        diagnostics=diagnostics,
        theta_avg=avg[:-1],
        nu_avg=float(avg[-1]),
    )
