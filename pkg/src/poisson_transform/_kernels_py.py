"""Pure numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` step for step and are used whenever the
compiled extension is unavailable (or ``POISSON_TRANSFORM_PURE=1``).
"""
import numpy as np

# 4-point Gauss-Legendre on [-1, 1], used within each sampler cell
CELL_X, CELL_W = np.polynomial.legendre.leggauss(4)


def toy_moments(theta, ancestors, nodes, weights):
    """Per-ancestor log-partition and first two moments of the toy statistic.

    Returns ``(log_z, mean, second)`` with shapes ``(n,)``, ``(n, 2)`` and
    ``(n, 2, 2)``; moments are under the normalised conditional density.
    """
    t1, t2 = float(theta[0]), float(theta[1])
    p = np.asarray(ancestors, float)[:, None]
    x = np.asarray(nodes, float)[None, :]
    d = -0.5 * (x - p) ** 2
    e = t1 * x + t2 * d
    mx = e.max(axis=1, keepdims=True)
    g = np.asarray(weights, float)[None, :] * np.exp(e - mx)
    z = g.sum(axis=1)
    log_z = mx[:, 0] + np.log(z)
    g /= z[:, None]
    xb = np.broadcast_to(x, g.shape)
    m1 = g @ x[0]
    m2 = (g * d).sum(axis=1)
    mean = np.stack([m1, m2], axis=1)
    s11 = g @ (x[0] ** 2)
    s12 = (g * xb * d).sum(axis=1)
    s22 = (g * d * d).sum(axis=1)
    second = np.empty((p.shape[0], 2, 2))
    second[:, 0, 0] = s11
    second[:, 0, 1] = second[:, 1, 0] = s12
    second[:, 1, 1] = s22
    return log_z, mean, second


def _cell_integral(t1, t2, p, mx, a, b):
    half = 0.5 * (b - a)
    x = a + half * (CELL_X + 1.0)
    e = t1 * x - 0.5 * t2 * (x - p) ** 2
    return half * float(CELL_W @ np.exp(e - mx))


def sample_toy_chain(theta, y0, uniforms, lower, upper, n_cells):
    """Inverse-CDF simulation of the toy chain driven by ``uniforms``.

    The conditional CDF is tabulated on ``n_cells`` equal cells (4-point
    Gauss-Legendre per cell), the cell is located by search, the position
    inside it is seeded by linear interpolation and then refined by
    safeguarded Newton/bisection on the exact partial integral.
    """
    t1, t2 = float(theta[0]), float(theta[1])
    u = np.asarray(uniforms, float)
    n = u.size
    h = (upper - lower) / n_cells
    edges = lower + h * np.arange(n_cells)
    xs = (edges[:, None] + 0.5 * h * (CELL_X + 1.0)[None, :])
    wh = 0.5 * h * CELL_W
    out = np.empty(n)
    p = float(y0)
    for t in range(n):
        e = t1 * xs - 0.5 * t2 * (xs - p) ** 2
        mx = float(e.max())
        mass = np.exp(e - mx) @ wh
        cum = np.cumsum(mass)
        total = cum[-1]
        target = u[t] * total
        c = int(np.searchsorted(cum, target, side="right"))
        c = min(c, n_cells - 1)
        r = target - (cum[c - 1] if c > 0 else 0.0)
        mc = mass[c]
        a = edges[c]
        b = a + h
        if r <= 0.0:
            r = 0.0
        if r >= mc:
            r = mc
        y = a + h * (r / mc) if mc > 0 else a + 0.5 * h
        lo, hi = a, b
        tol = 1e-13 * total
        for _ in range(60):
            f = _cell_integral(t1, t2, p, mx, a, y) - r
            if abs(f) <= tol:
                break
            if f > 0:
                hi = y
            else:
                lo = y
            dens = np.exp(t1 * y - 0.5 * t2 * (y - p) ** 2 - mx)
            step_ok = False
            if dens > 0:
                yn = y - f / dens
                if lo < yn < hi:
                    y = yn
                    step_ok = True
            if not step_ok:
                y = 0.5 * (lo + hi)
            if hi - lo <= 1e-15:
                break
        out[t] = y
        p = y
    return out
