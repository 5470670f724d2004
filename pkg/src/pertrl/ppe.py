"""Perturbed policy evaluation: Taylor-coefficient recursions about a nominal.

Writing ``J_t(xbar_t + d) = Jbar_t + sum_i K_t^i d^i`` (plain power-series
coefficients) and ``f(xbar_t + d) - xbar_{t+1} = sum_k F_t^k d^k``, the
backward recursion becomes ``K_t = C_t + K_{t+1} B_t`` with ``B_t``
upper-triangular: ``B_t[i, j]`` is the coefficient of ``d^j`` in
``(sum_k F_t^k d^k)^i``.  Row and column ``i`` of every array here stands
for power ``i + 1``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionError, StationarityError
from .poly import HermiteTransform, Polynomial, gaussian_moments


@dataclass(frozen=True)
class PpeTransfer:
    B: np.ndarray
    order: int
    t: int | None = None


@dataclass(frozen=True)
class PpeLadder:
    """``K_rows[t]`` holds ``[K_t^1..K_t^M]`` and ``Jbar[t]`` the nominal cost.

    For discounted ladders ``transient_index`` is the first ``t`` at which the
    recursion is still moving; only rows ``t < transient_index`` are stationary.
    """

    K_rows: tuple
    Jbar: tuple
    order: int
    transient_index: int | None = None
    residuals: tuple = field(default=(), repr=False)

    @property
    def T(self) -> int:
        return len(self.K_rows) - 1

    def evaluate(self, t: int, dx) -> np.ndarray:
        """Truncated series ``Jbar_t + sum_i K_t^i dx^i``."""
        return Polynomial(np.concatenate([[self.Jbar[t]], self.K_rows[t]]))(dx)

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "K": [np.asarray(k).tolist() for k in self.K_rows],
            "Jbar": [float(j) for j in self.Jbar],
            "transient_index": self.transient_index,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _mul_trunc(a: np.ndarray, b: np.ndarray, M: int) -> np.ndarray:
    # both arrays hold powers 0..M; fixed length keeps summation order stable
    out = np.zeros(M + 1)
    for j in range(M + 1):
        out[j] = np.dot(a[: j + 1], b[j::-1])
    return out


def _powers_of_series(F_row: np.ndarray, M: int, upto: int) -> list:
    """Coefficient arrays (powers 0..M) of ``(sum F^k d^k)^i`` for ``i = 0..upto``."""
    df = np.zeros(M + 1)
    n = min(F_row.size, M)
    df[1 : n + 1] = F_row[:n]
    out = [np.zeros(M + 1)]
    out[0][0] = 1.0
    for _ in range(upto):
        out.append(_mul_trunc(out[-1], df, M))
    return out


def build_ppe_transfer(F_row: Sequence[float], M: int, t: int | None = None) -> PpeTransfer:
    """Upper-triangular transfer from ``[F^1..F^M]``, truncated at order ``M``."""
    if M < 1:
        raise ValueError("order M must be >= 1")
    F = np.asarray(F_row, dtype=float)
    pw = _powers_of_series(F, M, M)
    B = np.vstack([pw[i][1:] for i in range(1, M + 1)])
    B.setflags(write=False)
    return PpeTransfer(B, M, t)


def _apply_transfer(K: np.ndarray, B: np.ndarray) -> np.ndarray:
    # column j only touches rows i <= j, which is what makes the recursion triangular
    M = B.shape[1]
    out = np.empty(M)
    for j in range(M):
        out[j] = np.dot(K[: j + 1], B[: j + 1, j])
    return out


def _rows(x, T, name):
    if isinstance(x, np.ndarray) and x.ndim == 1:
        return [x] * T
    x = list(x)
    if len(x) != T:
        raise DimensionError(f"expected {T} {name}, got {len(x)}")
    return x


def _scalars(x, T):
    if x is None:
        return [0.0] * T
    if np.ndim(x) == 0:
        return [float(x)] * T
    x = [float(v) for v in x]
    if len(x) != T:
        raise DimensionError(f"expected {T} nominal stage costs, got {len(x)}")
    return x


def ppe_backward(C_rows, K_terminal, transfers: Sequence[PpeTransfer], cbar=None, Jbar_terminal: float = 0.0) -> PpeLadder:
    """Sweep ``K_t = C_t + K_{t+1} B_t`` and ``Jbar_t = cbar_t + Jbar_{t+1}`` back from ``T``."""
    T = len(transfers)
    M = transfers[0].order if T else np.asarray(K_terminal).size
    C_rows = _rows(C_rows, T, "stage rows")
    cbar = _scalars(cbar, T)
    K = [None] * (T + 1)
    J = [0.0] * (T + 1)
    K[T] = np.asarray(K_terminal, dtype=float)
    J[T] = float(Jbar_terminal)
    if K[T].size != M:
        raise DimensionError(f"terminal row has {K[T].size} entries, order is {M}")
    for t in range(T - 1, -1, -1):
        tr = transfers[t]
        C = np.asarray(C_rows[t], dtype=float)
        if tr.order != M or C.size != M:
            raise DimensionError(f"t={t}: order mismatch (transfer {tr.order}, stage row {C.size}, expected {M})")
        K[t] = C + _apply_transfer(K[t + 1], tr.B)
        J[t] = float(cbar[t]) + J[t + 1]
    return PpeLadder(tuple(K), tuple(J), M)


def default_discount_horizon(beta: float, floor: float = 1e-10) -> int:
    return int(math.ceil(math.log(floor) / math.log(beta))) + 1


def ppe_discounted(
    C_row,
    transfers,
    beta: float,
    T: int | None = None,
    cbar: float = 0.0,
    tol: float | None = None,
) -> PpeLadder:
    """Discounted recursion ``K_t = C_t + beta K_{t+1} B_t`` from ``K_T = 0``.

    ``transfers`` is a single :class:`PpeTransfer` (static nominal) or one per
    step.  The returned ladder carries the transient index described in
    :class:`PpeLadder`; a recursion still moving at ``t = 0`` raises.
    """
    if not 0.0 < beta < 1.0:
        raise ValueError("beta out of (0,1)")
    if T is None:
        T = default_discount_horizon(beta)
    if isinstance(transfers, PpeTransfer):
        transfers = [transfers] * T
    if len(transfers) != T:
        raise DimensionError(f"expected {T} transfers, got {len(transfers)}")
    M = transfers[0].order
    C_rows = _rows(np.asarray(C_row, dtype=float), T, "stage rows") if np.ndim(C_row) == 1 else list(C_row)
    K = [None] * (T + 1)
    J = [0.0] * (T + 1)
    K[T] = np.zeros(M)
    for t in range(T - 1, -1, -1):
        K[t] = np.asarray(C_rows[t], dtype=float) + beta * _apply_transfer(K[t + 1], transfers[t].B)
        J[t] = cbar + beta * J[t + 1]
    res = np.array([np.max(np.abs(K[t] - K[t + 1])) for t in range(T)])
    if tol is None:
        tol = 1e-8 * (1.0 + max(float(np.max(np.abs(k))) for k in K))
    if res[0] > tol:
        raise StationarityError(float(res[0]), tol, T)
    moving = np.flatnonzero(res > tol)
    t_bar = int(moving[0]) if moving.size else T
    return PpeLadder(tuple(K), tuple(J), M, transient_index=t_bar, residuals=tuple(res.tolist()))


def hermite_conjugate(transfer, H, *, strip_constant: bool = False) -> np.ndarray:
    """``H B_ext H^-1`` where ``B_ext = diag(1, B)`` carries the constant through.

    ``H`` is a :class:`HermiteTransform` or a pair ``(H, H_inv)`` of
    ``(M+1) x (M+1)`` arrays.
    """
    B = transfer.B if isinstance(transfer, PpeTransfer) else np.asarray(transfer, dtype=float)
    M = B.shape[0]
    if isinstance(H, HermiteTransform):
        Hm, Hinv = H.H, H.H_inv
    else:
        Hm, Hinv = (np.asarray(a, dtype=float) for a in H)
    if Hm.shape != (M + 1, M + 1):
        raise DimensionError(f"Hermite matrix has shape {Hm.shape}, need {(M + 1, M + 1)}")
    ext = np.zeros((M + 1, M + 1))
    ext[0, 0] = 1.0
    ext[1:, 1:] = B
    out = Hm @ ext @ Hinv
    return out[1:, 1:] if strip_constant else out


@dataclass(frozen=True)
class StochasticClosure:
    """``G[k]`` is the coefficient of ``d^k`` in the expected next-step cost."""

    G: np.ndarray
    noise_var: float


def stochastic_closure(F_row, K_next, Jbar_next: float, noise_var: float, M: int) -> StochasticClosure:
    """Expected ``Jbar + sum_i K^i (df + w)^i`` over ``w ~ N(0, noise_var)``, truncated at ``M``."""
    if M < 1:
        raise ValueError("order M must be >= 1")
    if noise_var < 0:
        raise ValueError("noise_var must be nonnegative")
    K = np.asarray(K_next, dtype=float)
    if K.size != M:
        raise DimensionError(f"K row has {K.size} entries, order is {M}")
    G = np.empty(M + 1)
    G[0] = float(Jbar_next)
    G[1:] = _apply_transfer(K, build_ppe_transfer(F_row, M).B)
    if noise_var == 0.0:
        return StochasticClosure(G, 0.0)
    pw = _powers_of_series(np.asarray(F_row, dtype=float), M, M)
    m = gaussian_moments(M, noise_var)
    extra = np.zeros(M + 1)
    for i in range(2, M + 1):
        for p in range(2, i + 1, 2):
            extra += K[i - 1] * math.comb(i, p) * m[p] * pw[i - p]
    return StochasticClosure(G + extra, float(noise_var))


def stochastic_ppe_backward(C_rows, K_terminal, F_rows, noise_var: float, M: int, T: int, cbar=None, Jbar_terminal: float = 0.0) -> PpeLadder:
    """As :func:`ppe_backward`, with each step routed through :func:`stochastic_closure`."""
    C_rows = _rows(C_rows, T, "stage rows")
    F_rows = _rows(F_rows, T, "dynamics rows")
    cbar = _scalars(cbar, T)
    K = [None] * (T + 1)
    J = [0.0] * (T + 1)
    K[T] = np.asarray(K_terminal, dtype=float)
    J[T] = float(Jbar_terminal)
    for t in range(T - 1, -1, -1):
        G = stochastic_closure(F_rows[t], K[t + 1], J[t + 1], noise_var, M).G
        C = np.asarray(C_rows[t], dtype=float)
        if C.size != M:
            raise DimensionError(f"t={t}: stage row has {C.size} entries, order is {M}")
        K[t] = C + G[1:]
        J[t] = float(cbar[t]) + G[0]
    return PpeLadder(tuple(K), tuple(J), M)


@dataclass(frozen=True)
class PpeInputs:
    C_rows: list
    cbar: list
    F_rows: list
    K_terminal: np.ndarray
    Jbar_terminal: float
    order: int

    def transfers(self) -> list:
        return [build_ppe_transfer(F, self.order, t) for t, F in enumerate(self.F_rows)]


def ppe_inputs(f: Polynomial, c: Polynomial, g: Polynomial, states, M: int) -> PpeInputs:
    """Taylor rows of dynamics and costs about a nominal state sequence ``xbar_0..xbar_T``."""
    xs = np.asarray(states, dtype=float)
    T = xs.size - 1
    return PpeInputs(
        C_rows=[c.taylor(float(x), M) for x in xs[:T]],
        cbar=[float(c(float(x))) for x in xs[:T]],
        F_rows=[f.taylor(float(x), M) for x in xs[:T]],
        K_terminal=g.taylor(float(xs[T]), M),
        Jbar_terminal=float(g(float(xs[T]))),
        order=M,
    )


def run_ppe(f: Polynomial, c: Polynomial, g: Polynomial, states, M: int) -> PpeLadder:
    inp = ppe_inputs(f, c, g, states, M)
    return ppe_backward(inp.C_rows, inp.K_terminal, inp.transfers(), inp.cbar, inp.Jbar_terminal)
