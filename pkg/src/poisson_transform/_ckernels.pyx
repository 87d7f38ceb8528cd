# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels in ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs

cnp.import_array()

cdef double[4] CELL_X
cdef double[4] CELL_W
_x, _w = np.polynomial.legendre.leggauss(4)
for _i in range(4):
    CELL_X[_i] = _x[_i]
    CELL_W[_i] = _w[_i]


def toy_moments(theta, ancestors, nodes, weights):
    cdef double t1 = float(theta[0])
    cdef double t2 = float(theta[1])
    cdef const double[::1] anc = np.ascontiguousarray(ancestors, dtype=np.float64)
    cdef const double[::1] x = np.ascontiguousarray(nodes, dtype=np.float64)
    cdef const double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t n = anc.shape[0], N = x.shape[0], i, j
    log_z_arr = np.empty(n)
    mean_arr = np.empty((n, 2))
    second_arr = np.empty((n, 2, 2))
    cdef double[::1] log_z = log_z_arr
    cdef double[:, ::1] mean = mean_arr
    cdef double[:, :, ::1] second = second_arr
    cdef double[::1] e = np.empty(N)
    cdef double p, mx, d, g, z, m1, m2, s11, s12, s22
    for i in range(n):
        p = anc[i]
        mx = -1e308
        for j in range(N):
            d = x[j] - p
            e[j] = t1 * x[j] - 0.5 * t2 * d * d
            if e[j] > mx:
                mx = e[j]
        z = 0.0
        m1 = 0.0
        m2 = 0.0
        s11 = 0.0
        s12 = 0.0
        s22 = 0.0
        for j in range(N):
            g = w[j] * exp(e[j] - mx)
            d = x[j] - p
            d = -0.5 * d * d
            z += g
            m1 += g * x[j]
            m2 += g * d
            s11 += g * x[j] * x[j]
            s12 += g * x[j] * d
            s22 += g * d * d
        log_z[i] = mx + log(z)
        mean[i, 0] = m1 / z
        mean[i, 1] = m2 / z
        second[i, 0, 0] = s11 / z
        second[i, 0, 1] = s12 / z
        second[i, 1, 0] = s12 / z
        second[i, 1, 1] = s22 / z
    return log_z_arr, mean_arr, second_arr


cdef inline double _energy(double t1, double t2, double p, double y) nogil:
    cdef double d = y - p
    return t1 * y - 0.5 * t2 * d * d


cdef double _cell_integral(double t1, double t2, double p, double mx,
                           double a, double b) nogil:
    cdef double half = 0.5 * (b - a)
    cdef double s = 0.0
    cdef int g
    for g in range(4):
        s += CELL_W[g] * exp(_energy(t1, t2, p, a + half * (CELL_X[g] + 1.0)) - mx)
    return half * s


def sample_toy_chain(theta, double y0, uniforms, double lower, double upper,
                     int n_cells):
    cdef double t1 = float(theta[0])
    cdef double t2 = float(theta[1])
    cdef const double[::1] u = np.ascontiguousarray(uniforms, dtype=np.float64)
    cdef Py_ssize_t n = u.shape[0], t
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    cdef double h = (upper - lower) / n_cells
    cdef double[::1] mass = np.empty(n_cells)
    cdef double[::1] cum = np.empty(n_cells)
    cdef double[::1] xs = np.empty(4 * n_cells)
    cdef double[::1] wh = np.empty(4)
    cdef double[::1] e = np.empty(4 * n_cells)
    cdef int c, g, it, lo_i, hi_i, mid
    cdef double p = y0, mx, total, target, r, mc, a, b, y, lo, hi, f, dens, yn, tol, acc
    cdef bint step_ok
    for g in range(4):
        wh[g] = 0.5 * h * CELL_W[g]
    for c in range(n_cells):
        for g in range(4):
            xs[4 * c + g] = (lower + h * c) + 0.5 * h * (CELL_X[g] + 1.0)
    with nogil:
        for t in range(n):
            mx = -1e308
            for c in range(4 * n_cells):
                e[c] = _energy(t1, t2, p, xs[c])
                if e[c] > mx:
                    mx = e[c]
            acc = 0.0
            for c in range(n_cells):
                mass[c] = 0.0
                for g in range(4):
                    mass[c] += wh[g] * exp(e[4 * c + g] - mx)
                acc += mass[c]
                cum[c] = acc
            total = cum[n_cells - 1]
            target = u[t] * total
            # first index with cum > target
            lo_i = 0
            hi_i = n_cells
            while lo_i < hi_i:
                mid = (lo_i + hi_i) // 2
                if cum[mid] <= target:
                    lo_i = mid + 1
                else:
                    hi_i = mid
            c = lo_i
            if c > n_cells - 1:
                c = n_cells - 1
            r = target - (cum[c - 1] if c > 0 else 0.0)
            mc = mass[c]
            a = lower + h * c
            b = a + h
            if r <= 0.0:
                r = 0.0
            if r >= mc:
                r = mc
            if mc > 0:
                y = a + h * (r / mc)
            else:
                y = a + 0.5 * h
            lo = a
            hi = b
            tol = 1e-13 * total
            for it in range(60):
                f = _cell_integral(t1, t2, p, mx, a, y) - r
                if fabs(f) <= tol:
                    break
                if f > 0:
                    hi = y
                else:
                    lo = y
                dens = exp(_energy(t1, t2, p, y) - mx)
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
    return out_arr
