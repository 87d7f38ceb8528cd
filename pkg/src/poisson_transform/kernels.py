"""Gaussian RKHS kernels and kernel expansions for the normaliser function."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericalError

__all__ = ["Kernel", "KernelExpansion", "median_bandwidth", "gram", "KernelBasis"]

JITTER = 1e-10


@dataclass(frozen=True)
class Kernel:
    """Gaussian kernel ``exp(-(u - v)**2 / (2 * bandwidth**2))``."""

    bandwidth: float

    def __post_init__(self):
        if not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise DomainError(f"bandwidth must be positive, got {self.bandwidth}")

    def __call__(self, u, v) -> np.ndarray:
        u = np.asarray(u, float)
        v = np.asarray(v, float)
        return np.exp(-0.5 * ((u[..., :, None] - v[..., None, :]) / self.bandwidth) ** 2)


def gram(kernel: Kernel, centers) -> np.ndarray:
    c = np.asarray(centers, float)
    return kernel(c, c)


@dataclass(frozen=True)
class KernelExpansion:
    """``chi(u) = sum_j alpha_j k(u, center_j)``."""

    centers: np.ndarray
    alpha: np.ndarray
    kernel: Kernel

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.centers, float))
        a = np.atleast_1d(np.asarray(self.alpha, float))
        if c.shape != a.shape:
            raise DomainError(f"{c.size} centers but {a.size} coefficients")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "alpha", a)

    def __call__(self, u) -> np.ndarray:
        u = np.asarray(u, float)
        out = self.kernel(np.atleast_1d(u), self.centers) @ self.alpha
        return float(out[0]) if u.ndim == 0 else out

    def rkhs_norm_sq(self) -> float:
        """``alpha^T K alpha``."""
        return float(self.alpha @ gram(self.kernel, self.centers) @ self.alpha)


def median_bandwidth(ancestors, max_points: int = 1000, rng=None) -> float:
    """Median of pairwise absolute differences (subsampled to ``max_points``)."""
    x = np.asarray(ancestors, float).ravel()
    if x.size < 2 or np.all(x == x[0]):
        raise DomainError("median bandwidth needs at least two distinct values")
    if x.size > max_points:
        rng = np.random.default_rng(0) if rng is None else rng
        x = rng.choice(x, size=max_points, replace=False)
    i, j = np.triu_indices(x.size, k=1)
    med = float(np.median(np.abs(x[i] - x[j])))
    if med <= 0:
        # more than half of the pairs coincide; fall back to the spread
        med = float(np.mean(np.abs(x[i] - x[j])))
    return med


class KernelBasis:
    """Whitened feature map of the RKHS spanned by ``centers``.

    With ``K + eps I = U S U^T`` the features are ``Phi(u) = k(u, Z) U S^{-1/2}``
    so that ``chi = Phi b`` has squared RKHS norm ``|b|^2`` and coefficients
    ``alpha = U S^{-1/2} b``. ``eps`` is ``1e-10 * trace / m``.
    """

    def __init__(self, kernel: Kernel, centers):
        self.kernel = kernel
        self.centers = np.atleast_1d(np.asarray(centers, float))
        k = gram(kernel, self.centers)
        m = self.centers.size
        eps = JITTER * np.trace(k) / m
        s, u = np.linalg.eigh(k + eps * np.eye(m))
        if s.min() <= 0 or not np.all(np.isfinite(s)):
            raise NumericalError("kernel Gram matrix is not positive definite after jitter")
        self.eigvals = s
        self._proj = u / np.sqrt(s)[None, :]

    @property
    def size(self) -> int:
        return self.centers.size

    def features(self, u) -> np.ndarray:
        return self.kernel(np.atleast_1d(np.asarray(u, float)), self.centers) @ self._proj

    def expansion(self, b) -> KernelExpansion:
        return KernelExpansion(self.centers, self._proj @ np.asarray(b, float), self.kernel)
