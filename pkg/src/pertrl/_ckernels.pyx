# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops; :mod:`pertrl._pykernels` holds the numpy equivalents."""

import numpy as np
from libc.math cimport NAN, fabs, isfinite

BACKEND = "cython"


cdef inline double _horner(const double[::1] c, double x) noexcept nogil:
    cdef Py_ssize_t k = c.shape[0] - 1
    cdef double acc = c[k]
    while k > 0:
        k -= 1
        acc = acc * x + c[k]
    return acc


def horner(const double[::1] c, const double[::1] x):
    cdef Py_ssize_t i, n = x.shape[0]
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _horner(c, x[i])
    return out


cdef void _wps(const double* x, const double* w, Py_ssize_t n, int P, double* s) noexcept nogil:
    # four interleaved samples give independent multiply chains
    cdef Py_ssize_t i, p, m = n - n % 4
    cdef double x0, x1, x2, x3, v0, v1, v2, v3
    for i in range(0, m, 4):
        x0 = x[i]; x1 = x[i + 1]; x2 = x[i + 2]; x3 = x[i + 3]
        if w == NULL:
            v0 = 1.0; v1 = 1.0; v2 = 1.0; v3 = 1.0
        else:
            v0 = w[i]; v1 = w[i + 1]; v2 = w[i + 2]; v3 = w[i + 3]
        for p in range(P + 1):
            s[p] += (v0 + v1) + (v2 + v3)
            v0 *= x0; v1 *= x1; v2 *= x2; v3 *= x3
    for i in range(m, n):
        v0 = 1.0 if w == NULL else w[i]
        for p in range(P + 1):
            s[p] += v0
            v0 *= x[i]


def power_sums(const double[::1] x, int P):
    """sum_k x_k**p for p = 0..P."""
    out = np.zeros(P + 1)
    cdef double[::1] s = out
    cdef Py_ssize_t n = x.shape[0]
    if n:
        with nogil:
            _wps(&x[0], NULL, n, P, &s[0])
    return out


def weighted_power_sums(const double[::1] x, const double[::1] w, int P):
    """sum_k w_k * x_k**p for p = 0..P."""
    out = np.zeros(P + 1)
    cdef double[::1] s = out
    cdef Py_ssize_t n = x.shape[0]
    if w.shape[0] != n:
        raise ValueError("x and w lengths differ")
    if n:
        with nogil:
            _wps(&x[0], &w[0], n, P, &s[0])
    return out


def cross_power_sums(const double[::1] x, const double[::1] y, int P, int Q):
    """Matrix sum_k y_k**i * x_k**j for i = 0..P (rows) and j = 0..Q (columns)."""
    out = np.zeros((P + 1, Q + 1))
    cdef double[:, ::1] s = out
    cdef Py_ssize_t k, i, j, n = x.shape[0]
    cdef double yi, xj, xk, yk
    with nogil:
        for k in range(n):
            xk = x[k]
            yk = y[k]
            yi = 1.0
            for i in range(P + 1):
                xj = yi
                for j in range(Q + 1):
                    s[i, j] += xj
                    xj *= xk
                yi *= yk
    return out


def closed_loop_costs(
    const double[:, ::1] omega,
    double x0,
    const double[::1] xbar,
    const double[::1] ubar,
    const double[::1] K,
    const double[:, ::1] S,
    const double[::1] fbar,
    const double[::1] gbar,
    const double[::1] lbar,
    const double[::1] cT,
    double r,
    double dt,
    double noise_scale,
    double bound,
    bint record=False,
):
    """Euler-Maruyama closed-loop rollouts with per-path costs.

    Returns ``(costs, diverged, states)``; ``diverged[i]`` is ``t + 1`` for the
    first step ``t`` whose successor state left ``|x| <= bound`` (0 otherwise),
    and ``states`` is ``None`` unless ``record``.
    """
    cdef Py_ssize_t n = omega.shape[0], T = omega.shape[1]
    cdef Py_ssize_t ds = S.shape[1]
    cdef Py_ssize_t i, t, k
    cdef double x, d, u, cost, s

    costs_arr = np.zeros(n)
    div_arr = np.zeros(n, dtype=np.int64)
    cdef double[::1] costs = costs_arr
    cdef long long[::1] div = div_arr
    states_arr = np.zeros((n, T + 1)) if record else np.zeros((1, 1))
    cdef double[:, ::1] states = states_arr

    with nogil:
        for i in range(n):
            x = x0
            cost = 0.0
            if record:
                states[i, 0] = x
            for t in range(T):
                d = x - xbar[t]
                u = ubar[t] + K[t] * d
                if ds > 0:
                    s = S[t, ds - 1]
                    k = ds - 1
                    while k > 0:
                        k -= 1
                        s = s * d + S[t, k]
                    u = u + s
                cost += (_horner(lbar, x) + 0.5 * r * u * u) * dt
                x = x + (_horner(fbar, x) + _horner(gbar, x) * u) * dt + noise_scale * omega[i, t]
                if not isfinite(x) or fabs(x) > bound:
                    div[i] = t + 1
                    break
                if record:
                    states[i, t + 1] = x
            if div[i] == 0:
                cost += _horner(cT, x)
                costs[i] = cost
            else:
                costs[i] = NAN
    return costs_arr, div_arr, (states_arr if record else None)
