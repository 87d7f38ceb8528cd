"""Noise-contrastive divergence: logistic regression of data against reference draws.

For each ancestor ``y_{t-1}`` the dataset holds the true transition
``(y_t, y_{t-1})`` labelled 1 and ``k`` reference draws
``(r_tj, y_{t-1})``, ``r_tj ~ q(. | y_{t-1})``, labelled 0. The log-odds of
a point are

    f_theta(u | u_prev) + nu(u_prev) - log q(u | u_prev) + log(n / m),

where the normaliser term ``nu`` is a shared intercept (IID / ignoring
constants), one intercept per ancestor (fully parametric), or a smooth
kernel expansion plus intercept (semi-parametric).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import CapabilityError, DomainError, NumericalError
from .kernels import Kernel, KernelBasis, KernelExpansion, median_bandwidth
from .model import ConditionalEnergyModel, ReferenceDensity, SampleSet, check_theta

__all__ = [
    "LabeledPoint",
    "NcdDataset",
    "LogisticFit",
    "build_dataset",
    "ncd_objective",
    "ncd_grad",
    "logistic_deviance",
    "fit_ncd_iid",
    "fit_ncd_ignore",
    "fit_ncd_param",
    "fit_ncd_semi",
    "select_lambda",
    "default_lambda_grid",
    "Kernel",
    "KernelExpansion",
    "median_bandwidth",
]

MAX_CENTERS = 50


class LabeledPoint(NamedTuple):
    u: float
    u_prev: float
    z: int
    log_q: float
    ancestor_index: int


@dataclass(frozen=True)
class NcdDataset:
    """Columnar classification dataset; positives first, then negatives.

    ``ancestor[i]`` is the index ``t - 1`` of the transition a point belongs
    to, so ``ancestors[ancestor[i]] == u_prev[i]``.
    """

    u: np.ndarray
    u_prev: np.ndarray
    z: np.ndarray
    log_q: np.ndarray
    ancestor: np.ndarray
    n: int
    k: int

    @property
    def m(self) -> int:
        return self.k * self.n

    @property
    def size(self) -> int:
        return self.u.size

    @property
    def ancestors(self) -> np.ndarray:
        return self.u_prev[: self.n]

    @property
    def log_ratio(self) -> float:
        """``log(n / m)``."""
        return -float(np.log(self.k))

    @property
    def offset(self) -> np.ndarray:
        return self.log_ratio - self.log_q

    @property
    def points(self) -> list:
        return [
            LabeledPoint(float(a), float(b), int(c), float(d), int(e))
            for a, b, c, d, e in zip(self.u, self.u_prev, self.z, self.log_q, self.ancestor)
        ]

    def subset(self, ancestor_ids) -> "NcdDataset":
        """Restrict to the given ancestors, renumbering them ``0..len-1``."""
        ids = np.unique(np.asarray(ancestor_ids, int))
        remap = np.full(self.n, -1)
        remap[ids] = np.arange(ids.size)
        keep = remap[self.ancestor] >= 0
        pos = keep & (self.z == 1)
        neg = keep & (self.z == 0)
        order = np.concatenate([np.flatnonzero(pos), np.flatnonzero(neg)])
        return NcdDataset(
            u=self.u[order],
            u_prev=self.u_prev[order],
            z=self.z[order],
            log_q=self.log_q[order],
            ancestor=remap[self.ancestor[order]],
            n=ids.size,
            k=self.k,
        )


@dataclass
class LogisticFit:
    theta_hat: np.ndarray
    nu: Optional[float] = None
    nu_vec: Optional[np.ndarray] = None
    chi: Optional[KernelExpansion] = None
    deviance: float = float("nan")
    converged: bool = False
    iterations: int = 0
    lambda_pen: Optional[float] = None
    diagnostics: list = field(default_factory=list)

    @property
    def loglik(self) -> float:
        return -0.5 * self.deviance

    def normaliser(self, u_prev) -> np.ndarray:
        """Fitted log-normaliser term at the given ancestors."""
        u_prev = np.asarray(u_prev, float)
        out = np.zeros(u_prev.shape)
        if self.nu is not None:
            out = out + self.nu
        if self.chi is not None:
            out = out + self.chi(u_prev)
        return out


# --------------------------------------------------------------------------
# dataset and objective


def build_dataset(sample: SampleSet, q: ReferenceDensity, k: int, rng) -> NcdDataset:
    """Pair every transition with ``k`` reference draws from its ancestor."""
    if int(k) != k or k < 1:
        raise DomainError(f"k must be a positive integer, got {k}")
    k = int(k)
    anc = sample.ancestors
    n = sample.n
    neg = np.asarray(q.sampler(anc, rng, k), float).reshape(n, k)
    if not q.domain.contains(neg):
        raise DomainError("reference sampler produced points outside the domain")
    u = np.concatenate([sample.points, neg.ravel()])
    u_prev = np.concatenate([anc, np.repeat(anc, k)])
    idx = np.concatenate([np.arange(n), np.repeat(np.arange(n), k)])
    z = np.concatenate([np.ones(n, dtype=np.int8), np.zeros(n * k, dtype=np.int8)])
    log_q = np.asarray(q.log_density(u, u_prev), float) * np.ones(u.size)
    return NcdDataset(u=u, u_prev=u_prev, z=z, log_q=log_q, ancestor=idx, n=n, k=k)


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def logistic_deviance(eta, z) -> float:
    """``-2 * sum[z log s(eta) + (1 - z) log s(-eta)]``."""
    eta = np.asarray(eta, float)
    z = np.asarray(z)
    return float(-2.0 * np.sum(np.where(z == 1, _log_sigmoid(eta), _log_sigmoid(-eta))))


def _nu_per_point(nu, ds: NcdDataset):
    nu = np.asarray(nu, float)
    if nu.ndim == 0:
        return nu
    if nu.shape != (ds.n,):
        raise DomainError(f"nu must be scalar or length {ds.n}")
    return nu[ds.ancestor]


def ncd_objective(model: ConditionalEnergyModel, theta, nu, ds: NcdDataset) -> float:
    """Logistic log-likelihood ``R^m(theta, nu)``; ``nu`` may be per-ancestor."""
    theta = check_theta(theta, model.dim)
    eta = model.f(theta, ds.u, ds.u_prev) + _nu_per_point(nu, ds) + ds.offset
    return -0.5 * logistic_deviance(eta, ds.z)


def ncd_grad(model: ConditionalEnergyModel, theta, nu: float, ds: NcdDataset) -> np.ndarray:
    """Gradient of :func:`ncd_objective` over ``(theta, nu)`` for scalar ``nu``."""
    theta = check_theta(theta, model.dim)
    eta = model.f(theta, ds.u, ds.u_prev) + float(nu) + ds.offset
    resid = ds.z - 1.0 / (1.0 + np.exp(-eta))
    g = model.grad(theta, ds.u, ds.u_prev)
    return np.append(resid @ g, resid.sum())


# --------------------------------------------------------------------------
# solvers


def _design(model: ConditionalEnergyModel, ds: NcdDataset):
    if not model.exponential_family:
        raise CapabilityError(
            f"logistic fitting needs an energy linear in theta; {model.name!r} has no sufficient statistics"
        )
    x = model.stats(ds.u, ds.u_prev)
    offset = ds.offset + model.base(ds.u, ds.u_prev)
    return np.ascontiguousarray(x), offset


def _loglik(eta, z):
    return float(np.sum(np.where(z == 1, _log_sigmoid(eta), _log_sigmoid(-eta))))


def _separated(eta, z) -> bool:
    """Every positive scores above every negative: the MLE does not exist."""
    pos, neg = eta[z == 1], eta[z == 0]
    return pos.size > 0 and neg.size > 0 and float(pos.min()) > float(neg.max())


def _flag_separation(eta, z, converged, diagnostics):
    if _separated(eta, z):
        diagnostics.append("complete separation: coefficients diverge, estimate is not finite")
        return False
    return converged


def _newton_grouped(x, z, offset, groups, n_groups, phi=None, lam=0.0, beta0=None,
                    tol=1e-8, max_iter=100, max_norm=1e6):
    """Penalised logistic Newton for ``eta = x @ beta + phi[groups] @ b + offset``.

    ``x`` has an intercept column if wanted. Products with ``phi`` are
    aggregated per group, so the cost is ``O(N p^2 + n_groups r^2)``.
    Returns ``(beta, b, loglik, iterations, converged, diagnostics)``.
    """
    p = x.shape[1]
    r = 0 if phi is None else phi.shape[1]
    coef = np.zeros(p + r) if beta0 is None else np.array(beta0, float)
    zf = z.astype(float)

    def eta_of(c):
        e = x @ c[:p] + offset
        if r:
            e = e + (phi @ c[p:])[groups]
        return e

    def penalised(c, eta):
        return _loglik(eta, z) - lam * float(c[p:] @ c[p:])

    eta = eta_of(coef)
    value = penalised(coef, eta)
    diagnostics = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = 1.0 / (1.0 + np.exp(-eta))
        resid = zf - mu
        w = mu * (1.0 - mu)
        grad = np.empty(p + r)
        grad[:p] = resid @ x
        hess = np.empty((p + r, p + r))
        hess[:p, :p] = (x * w[:, None]).T @ x
        if r:
            gres = np.bincount(groups, weights=resid, minlength=n_groups)
            gw = np.bincount(groups, weights=w, minlength=n_groups)
            gwx = np.stack(
                [np.bincount(groups, weights=w * x[:, j], minlength=n_groups) for j in range(p)],
                axis=1,
            )
            grad[p:] = phi.T @ gres - 2 * lam * coef[p:]
            cross = gwx.T @ phi
            hess[:p, p:] = cross
            hess[p:, :p] = cross.T
            hess[p:, p:] = (phi * gw[:, None]).T @ phi + 2 * lam * np.eye(r)
        if np.max(np.abs(grad)) <= tol:
            converged = True
            it -= 1
            break
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        slope = float(grad @ step)
        a = 1.0
        for _ in range(60):
            c_new = coef + a * step
            e_new = eta_of(c_new)
            v_new = penalised(c_new, e_new)
            if v_new >= value + 1e-4 * a * slope or (
                a == 1.0 and v_new >= value - 1e-12 * max(1.0, abs(value))
            ):
                break
            a *= 0.5
        else:
            diagnostics.append(f"line search stalled at iteration {it}")
            break
        coef, eta, value = c_new, e_new, v_new
        if np.max(np.abs(coef)) > max_norm:
            diagnostics.append("coefficients diverging: separation suspected")
            break
    else:
        diagnostics.append(f"no convergence after {max_iter} iterations")
    if lam == 0:
        converged = _flag_separation(eta, z, converged, diagnostics)
    return coef[:p], coef[p:], _loglik(eta, z), it, converged, diagnostics


def _newton_per_group(x, z, offset, groups, n_groups, beta0=None, nu0=None,
                      tol=1e-6, max_iter=100, max_norm=1e6):
    """Logistic Newton with shared ``beta`` and one free intercept per group.

    The Hessian is an arrowhead (dense ``beta`` block, diagonal intercept
    block), so each step eliminates the intercepts exactly through a Schur
    complement.
    """
    p = x.shape[1]
    beta = np.zeros(p) if beta0 is None else np.array(beta0, float)
    nu = np.zeros(n_groups) if nu0 is None else np.array(nu0, float)
    zf = z.astype(float)

    def eta_of(b, v):
        return x @ b + v[groups] + offset

    eta = eta_of(beta, nu)
    value = _loglik(eta, z)
    diagnostics = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = 1.0 / (1.0 + np.exp(-eta))
        resid = zf - mu
        w = mu * (1.0 - mu)
        g_b = resid @ x
        g_v = np.bincount(groups, weights=resid, minlength=n_groups)
        if max(np.max(np.abs(g_b)), np.max(np.abs(g_v))) <= tol:
            converged = True
            it -= 1
            break
        a_bb = (x * w[:, None]).T @ x
        d_v = np.bincount(groups, weights=w, minlength=n_groups)
        b_bv = np.stack(
            [np.bincount(groups, weights=w * x[:, j], minlength=n_groups) for j in range(p)],
            axis=0,
        )
        d_v = np.maximum(d_v, 1e-300)
        schur = a_bb - (b_bv / d_v[None, :]) @ b_bv.T
        rhs = g_b - b_bv @ (g_v / d_v)
        try:
            s_b = np.linalg.solve(schur, rhs)
        except np.linalg.LinAlgError:
            s_b = np.linalg.lstsq(schur, rhs, rcond=None)[0]
        s_v = (g_v - b_bv.T @ s_b) / d_v
        slope = float(g_b @ s_b + g_v @ s_v)
        a = 1.0
        for _ in range(60):
            b_new, v_new_nu = beta + a * s_b, nu + a * s_v
            e_new = eta_of(b_new, v_new_nu)
            v_new = _loglik(e_new, z)
            if v_new >= value + 1e-4 * a * slope or (
                a == 1.0 and v_new >= value - 1e-12 * max(1.0, abs(value))
            ):
                break
            a *= 0.5
        else:
            diagnostics.append(f"line search stalled at iteration {it}")
            break
        beta, nu, eta, value = b_new, v_new_nu, e_new, v_new
        if max(np.max(np.abs(beta)), np.max(np.abs(nu))) > max_norm:
            diagnostics.append("coefficients diverging: separation suspected")
            break
    else:
        diagnostics.append(f"no convergence after {max_iter} iterations")
    converged = _flag_separation(eta, z, converged, diagnostics)
    return beta, nu, value, it, converged, diagnostics


# --------------------------------------------------------------------------
# estimators


def fit_ncd_iid(model, ds: NcdDataset, tol=1e-8, max_iter=100) -> LogisticFit:
    """Joint logistic fit of ``(theta, nu)`` with a single intercept."""
    x, offset = _design(model, ds)
    xi = np.column_stack([x, np.ones(ds.size)])
    beta, _, ll, it, conv, diag = _newton_grouped(
        xi, ds.z, offset, ds.ancestor, ds.n, tol=tol, max_iter=max_iter
    )
    return LogisticFit(
        theta_hat=beta[:-1], nu=float(beta[-1]), deviance=-2 * ll,
        converged=conv, iterations=it, diagnostics=diag,
    )


def fit_ncd_ignore(model, ds: NcdDataset, tol=1e-8, max_iter=100) -> LogisticFit:
    """Ignore ancestor-dependent normalisers: one global intercept.

    Same solver as :func:`fit_ncd_iid`; the difference is the intent. On
    Markov data the single intercept is a deliberate misspecification.
    """
    return fit_ncd_iid(model, ds, tol=tol, max_iter=max_iter)


def fit_ncd_param(model, ds: NcdDataset, tol=1e-6, max_iter=100) -> LogisticFit:
    """Shared theta with one intercept ``nu_t`` per ancestor."""
    x, offset = _design(model, ds)
    beta, nu, ll, it, conv, diag = _newton_per_group(
        x, ds.z, offset, ds.ancestor, ds.n, tol=tol, max_iter=max_iter
    )
    flat = _unidentified(x, ds)
    if flat.size:
        diag.append(f"intercepts of ancestors {flat[:10].tolist()} are not separated from theta")
    return LogisticFit(
        theta_hat=beta, nu_vec=nu, deviance=-2 * ll,
        converged=conv, iterations=it, diagnostics=diag,
    )


def _unidentified(x, ds):
    """Ancestors whose points all share one design row."""
    spread = np.zeros(ds.n)
    for j in range(x.shape[1]):
        lo = np.full(ds.n, np.inf)
        hi = np.full(ds.n, -np.inf)
        np.minimum.at(lo, ds.ancestor, x[:, j])
        np.maximum.at(hi, ds.ancestor, x[:, j])
        spread = np.maximum(spread, hi - lo)
    return np.flatnonzero(spread == 0)


def _landmarks(ancestors, max_centers):
    uniq = np.unique(ancestors)
    if uniq.size <= max_centers:
        return uniq
    return np.unique(np.quantile(uniq, np.linspace(0.0, 1.0, max_centers)))


def _semi_setup(ds, kernel, max_centers):
    anc = ds.ancestors
    if kernel is None:
        kernel = Kernel(median_bandwidth(anc))
    basis = KernelBasis(kernel, _landmarks(anc, max_centers))
    return kernel, basis, basis.features(anc)


def fit_ncd_semi(model, ds: NcdDataset, kernel: Optional[Kernel] = None,
                 lambda_pen: float = 1e-2, tol=1e-8, max_iter=100,
                 max_centers: int = MAX_CENTERS, _warm=None) -> LogisticFit:
    """Semi-parametric fit: ``theta``, an intercept and a penalised ``chi``.

    ``chi`` is a Gaussian kernel expansion over the ancestors (reduced to at
    most ``max_centers`` quantile landmarks), with penalty
    ``lambda_pen * alpha^T K alpha``.
    """
    if lambda_pen < 0:
        raise DomainError("lambda_pen must be non-negative")
    x, offset = _design(model, ds)
    kernel, basis, phi = _semi_setup(ds, kernel, max_centers)
    xi = np.column_stack([x, np.ones(ds.size)])
    beta0 = None if _warm is None or _warm.size != xi.shape[1] + basis.size else _warm
    beta, b, ll, it, conv, diag = _newton_grouped(
        xi, ds.z, offset, ds.ancestor, ds.n, phi=phi, lam=lambda_pen,
        beta0=beta0, tol=tol, max_iter=max_iter,
    )
    fit = LogisticFit(
        theta_hat=beta[:-1], nu=float(beta[-1]), chi=basis.expansion(b),
        deviance=-2 * ll, converged=conv, iterations=it,
        lambda_pen=float(lambda_pen), diagnostics=diag,
    )
    fit._coef = np.concatenate([beta, b])
    return fit


def default_lambda_grid() -> np.ndarray:
    """Eight log-spaced penalties from 1e2 down to 1e-6."""
    return np.logspace(2, -6, 8)


def _heldout_deviance(model, fit: LogisticFit, ds: NcdDataset) -> float:
    eta = (
        model.energy(fit.theta_hat, ds.u, ds.u_prev)
        + fit.normaliser(ds.u_prev)
        + ds.offset
    )
    return logistic_deviance(eta, ds.z)


def _assign_folds(n, folds, rng):
    folds = min(int(folds), n)
    if folds < 2:
        raise DomainError("cross-validation needs at least two ancestors")
    perm = rng.permutation(n)
    return [np.sort(perm[i::folds]) for i in range(folds)]


def select_lambda(model, ds: NcdDataset, kernel: Optional[Kernel] = None,
                  grid: Optional[Sequence[float]] = None, folds: int = 5, rng=None,
                  max_centers: int = MAX_CENTERS, return_scores: bool = False):
    """Grouped K-fold cross-validation of the semi-parametric penalty.

    Folds never split an ancestor's positive from its negatives. Returns the
    penalty with the smallest mean held-out deviance, preferring the larger
    penalty on ties.
    """
    grid = np.sort(np.asarray(default_lambda_grid() if grid is None else grid, float))[::-1]
    if grid.size == 0:
        raise DomainError("empty penalty grid")
    if folds < 2:
        raise DomainError("folds must be at least 2")
    if grid.size == 1:
        return (float(grid[0]), np.zeros(1)) if return_scores else float(grid[0])
    rng = np.random.default_rng() if rng is None else rng
    if kernel is None:
        kernel = Kernel(median_bandwidth(ds.ancestors))
    scores = np.zeros(grid.size)
    for held in _assign_folds(ds.n, folds, rng):
        train_ids = np.setdiff1d(np.arange(ds.n), held)
        train, test = ds.subset(train_ids), ds.subset(held)
        warm = None
        for i, lam in enumerate(grid):
            fit = fit_ncd_semi(model, train, kernel, lam, max_centers=max_centers, _warm=warm)
            warm = fit._coef
            scores[i] += _heldout_deviance(model, fit, test)
    best = scores.min()
    tied = np.flatnonzero(scores <= best + 1e-10 * max(1.0, abs(best)))
    chosen = float(grid[tied].max())
    return (chosen, scores) if return_scores else chosen
