"""Pure numpy implementations of the compiled kernels in ``_ckernels.pyx``.

Semantics (argument order, divergence codes, NaN costs for diverged paths)
match the compiled versions; only floating-point summation order may differ.
"""

import numpy as np

BACKEND = "python"

_CHUNK = 1 << 15


def horner(c, x):
    c = np.asarray(c, dtype=float)
    x = np.asarray(x, dtype=float)
    acc = np.full_like(x, c[-1])
    for k in range(c.size - 2, -1, -1):
        acc = acc * x + c[k]
    return acc


def _chunks(n):
    for lo in range(0, n, _CHUNK):
        yield slice(lo, min(lo + _CHUNK, n))


def power_sums(x, P):
    x = np.asarray(x, dtype=float)
    return weighted_power_sums(x, np.ones_like(x), P)


def weighted_power_sums(x, w, P):
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    out = np.zeros(P + 1)
    for sl in _chunks(x.size):
        xs = x[sl]
        v = w[sl].copy()
        for p in range(P + 1):
            out[p] += v.sum()
            v *= xs
    return out


def cross_power_sums(x, y, P, Q):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.zeros((P + 1, Q + 1))
    for sl in _chunks(x.size):
        xs, ys = x[sl], y[sl]
        xp = np.vstack([xs**j for j in range(Q + 1)])
        yp = np.vstack([ys**i for i in range(P + 1)])
        out += yp @ xp.T
    return out


def closed_loop_costs(omega, x0, xbar, ubar, K, S, fbar, gbar, lbar, cT, r, dt, noise_scale, bound, record=False):
    omega = np.asarray(omega, dtype=float)
    n, T = omega.shape
    S = np.asarray(S, dtype=float).reshape(T, -1)
    ds = S.shape[1]
    x = np.full(n, float(x0))
    cost = np.zeros(n)
    div = np.zeros(n, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    states = np.zeros((n, T + 1)) if record else None
    if record:
        states[:, 0] = x
    for t in range(T):
        d = x - xbar[t]
        u = ubar[t] + K[t] * d
        if ds > 0:
            s = np.full(n, S[t, ds - 1])
            for k in range(ds - 2, -1, -1):
                s = s * d + S[t, k]
            u = u + s
        cost = np.where(alive, cost + (horner(lbar, x) + 0.5 * r * u * u) * dt, cost)
        with np.errstate(over="ignore", invalid="ignore"):
            xn = x + (horner(fbar, x) + horner(gbar, x) * u) * dt + noise_scale * omega[:, t]
        bad = alive & (~np.isfinite(xn) | (np.abs(xn) > bound))
        div[bad] = t + 1
        alive &= ~bad
        x = np.where(alive, xn, 0.0)
        if record:
            states[:, t + 1] = np.where(alive, xn, 0.0)
    cost = np.where(alive, cost + horner(cT, x), np.nan)
    return cost, div, states
