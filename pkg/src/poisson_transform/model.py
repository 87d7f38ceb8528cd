"""Energy models, domains, sample containers and reference densities.

Models are conditional: ``f(theta, y, y_prev)``. IID models simply ignore
``y_prev``, so a single abstraction covers both the independent and the
Markov case. Every callable is vectorised and broadcasts over ``y`` and
``y_prev``; gradients append a trailing axis of length ``dim``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _backend
from .errors import CapabilityError, DomainError

__all__ = [
    "Domain",
    "ConditionalEnergyModel",
    "SampleSet",
    "ReferenceDensity",
    "check_theta",
    "toy_energy",
    "toy_grad",
    "toy_suff_stats",
    "toy_model",
    "toy_iid_model",
    "freeze",
    "uniform_reference",
]


def check_theta(theta, dim: Optional[int] = None) -> np.ndarray:
    """Return ``theta`` as a finite 1-D float array, validating its length."""
    arr = np.atleast_1d(np.asarray(theta, dtype=float))
    if arr.ndim != 1 or arr.size < 1:
        raise DomainError(f"theta must be a non-empty vector, got shape {arr.shape}")
    if dim is not None and arr.size != dim:
        raise DomainError(f"theta has length {arr.size}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"theta has non-finite entries: {arr}")
    return arr


@dataclass(frozen=True)
class Domain:
    """A bounded interval ``[lower, upper]``."""

    lower: float = -1.0
    upper: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.lower) and np.isfinite(self.upper)):
            raise DomainError("domain bounds must be finite")
        if not self.lower < self.upper:
            raise DomainError(f"empty domain [{self.lower}, {self.upper}]")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, y) -> bool:
        y = np.asarray(y, dtype=float)
        return bool(np.all((y >= self.lower) & (y <= self.upper)))

    def check(self, y, what: str = "point"):
        y = np.asarray(y, dtype=float)
        if not self.contains(y):
            bad = y[(y < self.lower) | (y > self.upper) | ~np.isfinite(y)]
            raise DomainError(
                f"{what} outside [{self.lower}, {self.upper}]: {np.ravel(bad)[:5]}"
            )
        return y


@dataclass(frozen=True)
class ConditionalEnergyModel:
    """Unnormalised conditional log-density ``f_theta(y | y_prev)``.

    Parameters
    ----------
    name : str
    dim : int
        Length of the parameter vector.
    domain : Domain
    energy, grad_theta : callable
        ``(theta, y, y_prev) -> array``; the gradient carries a trailing
        axis of length ``dim``.
    suff_stats : callable, optional
        ``(y, y_prev) -> array (..., dim)``. When given the model is an
        exponential family, ``f = base_energy + theta @ suff_stats``.
    base_energy : callable, optional
        The theta-free part of an exponential-family energy (zero if None).
    hess_theta : callable, optional
        Second derivative in theta. Exponential families have zero Hessian.
    iid : bool
        True when the energy does not depend on ``y_prev``.
    moments : callable, optional
        Fast path ``(theta, ancestors, nodes, weights)`` returning the
        per-ancestor log-partition, mean statistic and second moment.
    """

    name: str
    dim: int
    domain: Domain
    energy: Callable
    grad_theta: Callable
    suff_stats: Optional[Callable] = None
    base_energy: Optional[Callable] = None
    hess_theta: Optional[Callable] = None
    iid: bool = False
    moments: Optional[Callable] = field(default=None, compare=False)

    @property
    def exponential_family(self) -> bool:
        return self.suff_stats is not None

    def f(self, theta, y, y_prev):
        """Energy with domain validation."""
        theta = check_theta(theta, self.dim)
        self.domain.check(y, "y")
        self.domain.check(y_prev, "y_prev")
        return self.energy(theta, np.asarray(y, float), np.asarray(y_prev, float))

    def grad(self, theta, y, y_prev):
        theta = check_theta(theta, self.dim)
        self.domain.check(y, "y")
        self.domain.check(y_prev, "y_prev")
        return self.grad_theta(theta, np.asarray(y, float), np.asarray(y_prev, float))

    def hess(self, theta, y, y_prev):
        """Second derivative of the energy in theta, shape ``(..., dim, dim)``."""
        y = np.asarray(y, float)
        y_prev = np.asarray(y_prev, float)
        if self.hess_theta is not None:
            return self.hess_theta(check_theta(theta, self.dim), y, y_prev)
        shape = np.broadcast(y, y_prev).shape
        if self.exponential_family:
            return np.zeros(shape + (self.dim, self.dim))
        return self._fd_hess(check_theta(theta, self.dim), y, y_prev)

    def _fd_hess(self, theta, y, y_prev, step=1e-5):
        cols = []
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = step * max(1.0, abs(theta[j]))
            gp = self.grad_theta(theta + e, y, y_prev)
            gm = self.grad_theta(theta - e, y, y_prev)
            cols.append((gp - gm) / (2 * e[j]))
        h = np.stack(cols, axis=-1)
        return 0.5 * (h + np.swapaxes(h, -1, -2))

    def stats(self, y, y_prev):
        if self.suff_stats is None:
            raise CapabilityError(f"model {self.name!r} has no sufficient statistics")
        return self.suff_stats(np.asarray(y, float), np.asarray(y_prev, float))

    def base(self, y, y_prev):
        shape = np.broadcast(np.asarray(y), np.asarray(y_prev)).shape
        if self.base_energy is None:
            return np.zeros(shape)
        return np.broadcast_to(self.base_energy(np.asarray(y, float), np.asarray(y_prev, float)), shape)


@dataclass(frozen=True)
class SampleSet:
    """Observed points ``y_1..y_n`` with the fixed initial point ``y_0``."""

    initial: float
    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_1d(np.asarray(self.points, dtype=float))
        if pts.ndim != 1 or pts.size < 1:
            raise DomainError("a sample set needs at least one point")
        if not np.isfinite(self.initial) or not np.all(np.isfinite(pts)):
            raise DomainError("sample set contains non-finite values")
        pts.setflags(write=False)
        object.__setattr__(self, "initial", float(self.initial))
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.size

    @property
    def ancestors(self) -> np.ndarray:
        """``y_0 .. y_{n-1}``: the conditioning point of every transition."""
        return np.concatenate(([self.initial], self.points[:-1]))

    def check(self, domain: Domain) -> "SampleSet":
        domain.check(self.points, "sample point")
        domain.check(self.initial, "initial point")
        return self

    def __len__(self):
        return self.n


@dataclass(frozen=True)
class ReferenceDensity:
    """Proposal ``q(r | y_prev)`` for reference draws.

    ``sampler(y_prev, rng, size)`` returns ``size`` draws per ancestor in
    ``y_prev`` (shape ``y_prev.shape + (size,)``).
    """

    log_density: Callable
    sampler: Callable
    domain: Domain


# --------------------------------------------------------------------------
# the toy Markov chain on [-1, 1]


TOY_DOMAIN = Domain(-1.0, 1.0)


def toy_suff_stats(y, y_prev):
    y = np.asarray(y, float)
    y_prev = np.asarray(y_prev, float)
    y, y_prev = np.broadcast_arrays(y, y_prev)
    return np.stack([y, -0.5 * (y - y_prev) ** 2], axis=-1)


def _toy_energy_raw(theta, y, y_prev):
    return theta[0] * y - 0.5 * theta[1] * (y - y_prev) ** 2


def _toy_grad_raw(theta, y, y_prev):
    return toy_suff_stats(y, y_prev)


def toy_energy(theta, y, y_prev):
    """``theta1 * y - theta2 * (y - y_prev)**2 / 2`` on ``[-1, 1]``."""
    theta = check_theta(theta, 2)
    TOY_DOMAIN.check(y, "y")
    TOY_DOMAIN.check(y_prev, "y_prev")
    out = _toy_energy_raw(theta, np.asarray(y, float), np.asarray(y_prev, float))
    return float(out) if np.ndim(out) == 0 else out


def toy_grad(theta, y, y_prev):
    """Gradient of :func:`toy_energy` in theta: ``(y, -(y - y_prev)**2 / 2)``."""
    check_theta(theta, 2)
    TOY_DOMAIN.check(y, "y")
    TOY_DOMAIN.check(y_prev, "y_prev")
    return toy_suff_stats(y, y_prev)


def _toy_moments(theta, ancestors, nodes, weights):
    return _backend.toy_moments(theta, ancestors, nodes, weights)


def toy_model() -> ConditionalEnergyModel:
    """The two-parameter toy Markov chain on ``[-1, 1]``."""
    return ConditionalEnergyModel(
        name="toy",
        dim=2,
        domain=TOY_DOMAIN,
        energy=_toy_energy_raw,
        grad_theta=_toy_grad_raw,
        suff_stats=toy_suff_stats,
        iid=False,
        moments=_toy_moments,
    )


def toy_iid_model(anchor: float = 0.0) -> ConditionalEnergyModel:
    """IID version of the toy model with the ancestor pinned at ``anchor``.

    The energy is ``theta1 * y - theta2 * (y - anchor)**2 / 2`` regardless of
    the supplied ``y_prev``.
    """
    TOY_DOMAIN.check(anchor, "anchor")
    a = float(anchor)

    def energy(theta, y, y_prev):
        y = np.broadcast_arrays(np.asarray(y, float), np.asarray(y_prev, float))[0]
        return _toy_energy_raw(theta, y, a)

    def stats(y, y_prev):
        y = np.broadcast_arrays(np.asarray(y, float), np.asarray(y_prev, float))[0]
        return toy_suff_stats(y, a)

    def moments(theta, ancestors, nodes, weights):
        anc = np.full(np.shape(ancestors), a)
        return _backend.toy_moments(theta, anc, nodes, weights)

    return ConditionalEnergyModel(
        name=f"toy-iid(anchor={a:g})",
        dim=2,
        domain=TOY_DOMAIN,
        energy=energy,
        grad_theta=lambda theta, y, y_prev: stats(y, y_prev),
        suff_stats=stats,
        iid=True,
        moments=moments,
    )


def freeze(model: ConditionalEnergyModel, fixed: dict) -> ConditionalEnergyModel:
    """Hold some coordinates of theta at fixed values.

    Returns a model over the remaining coordinates, in their original order.
    """
    fixed = {int(k): float(v) for k, v in fixed.items()}
    if not fixed or any(k < 0 or k >= model.dim for k in fixed):
        raise DomainError(f"invalid coordinates to freeze: {sorted(fixed)}")
    free = [j for j in range(model.dim) if j not in fixed]
    if not free:
        raise DomainError("cannot freeze every coordinate")

    def expand(theta):
        full = np.empty(model.dim)
        full[free] = theta
        for j, v in fixed.items():
            full[j] = v
        return full

    suff = base = hess = None
    if model.exponential_family:
        fixed_idx = list(fixed)
        fixed_val = np.array([fixed[j] for j in fixed_idx])

        def suff(y, y_prev):
            return model.suff_stats(y, y_prev)[..., free]

        def base(y, y_prev):
            return model.base(y, y_prev) + model.suff_stats(y, y_prev)[..., fixed_idx] @ fixed_val

    if model.hess_theta is not None:
        def hess(theta, y, y_prev):
            return model.hess_theta(expand(theta), y, y_prev)[..., free, :][..., :, free]

    moments = None
    if model.moments is not None:
        def moments(theta, ancestors, nodes, weights):
            log_z, mean, second = model.moments(expand(theta), ancestors, nodes, weights)
            return log_z, mean[:, free], second[:, free][:, :, free]

    return ConditionalEnergyModel(
        name=f"{model.name}|fixed{fixed}",
        dim=len(free),
        domain=model.domain,
        energy=lambda theta, y, y_prev: model.energy(expand(theta), y, y_prev),
        grad_theta=lambda theta, y, y_prev: model.grad_theta(expand(theta), y, y_prev)[..., free],
        suff_stats=suff,
        base_energy=base,
        hess_theta=hess,
        iid=model.iid,
        moments=moments,
    )


def uniform_reference(domain: Domain = TOY_DOMAIN) -> ReferenceDensity:
    """Uniform proposal on ``domain``, independent of the ancestor."""
    log_w = -float(np.log(domain.width))

    def log_density(r, y_prev=None):
        r = np.asarray(r, float)
        domain.check(r, "reference point")
        out = np.full(r.shape, log_w)
        return float(out) if out.ndim == 0 else out

    def sampler(y_prev, rng, size=1):
        y_prev = np.asarray(y_prev, float)
        return rng.uniform(domain.lower, domain.upper, size=y_prev.shape + (int(size),))

    return ReferenceDensity(log_density=log_density, sampler=sampler, domain=domain)
