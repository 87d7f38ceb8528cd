"""Result containers shared by the fitters."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np


@dataclass
class FitResult:
    """Outcome of a likelihood or Poisson-transform fit.

    ``nu_hat`` is a scalar for IID fits, a vector (one entry per ancestor)
    for sequential fits, a :class:`~poisson_transform.ncd.KernelExpansion`
    for semi-parametric fits, or None when not estimated.
    """

    theta_hat: np.ndarray
    nu_hat: Any = None
    covariance: Optional[np.ndarray] = None
    objective: float = float("nan")
    iterations: int = 0
    converged: bool = False
    diagnostics: list = field(default_factory=list)
    theta_avg: Optional[np.ndarray] = None
    nu_avg: Optional[float] = None
    extras: dict = field(default_factory=dict)

    @property
    def std_errors(self) -> Optional[np.ndarray]:
        if self.covariance is None:
            return None
        return np.sqrt(np.diag(self.covariance))


def invert_negative_hessian(hessian: np.ndarray):
    """Return ``(-H)^{-1}`` or None when ``-H`` is not positive definite."""
    neg = -0.5 * (hessian + hessian.T)
    try:
        chol = np.linalg.cholesky(neg)
    except np.linalg.LinAlgError:
        return None
    inv_chol = np.linalg.inv(chol)
    cov = inv_chol.T @ inv_chol
    return 0.5 * (cov + cov.T)
