"""Exact policy evaluation for polynomial systems.

The cost-to-go of ``x+ = f(x)`` with stage cost ``c`` satisfies
``J_t = c + J_{t+1} o f``.  For polynomial data this is closed under
composition, so the ladder below is the ground truth the estimators are
scored against.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegreeExplosionError, DimensionError
from .poly import Polynomial, compose, gaussian_moments

DEGREE_LIMIT = 10_000


@dataclass(frozen=True)
class CostToGoLadder:
    """``polys[t]`` is ``J_t`` for ``t = 0..T``; ``basis_counts[t]`` its degree."""

    polys: tuple
    basis_counts: tuple

    @property
    def T(self) -> int:
        return len(self.polys) - 1

    def __getitem__(self, t: int) -> Polynomial:
        return self.polys[t]

    def row(self, t: int, size: int | None = None, include_constant: bool = False) -> np.ndarray:
        """Coefficient row of ``J_t`` over powers ``1..size`` (or ``0..size``)."""
        p = self.polys[t]
        size = self.basis_counts[t] if size is None else size
        return p.padded(size + 1) if include_constant else p.padded(size, start=1)

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "basis_counts": list(self.basis_counts),
            "coefficients": [p.to_list() for p in self.polys],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "CostToGoLadder":
        d = json.loads(text)
        polys = tuple(Polynomial(c) for c in d["coefficients"])
        return cls(polys, tuple(d["basis_counts"]))


def _stage_costs(c, T):
    if isinstance(c, Polynomial):
        return [c] * T
    c = list(c)
    if len(c) != T:
        raise DimensionError(f"expected {T} stage costs, got {len(c)}")
    return c


def exact_backward(f: Polynomial, c, g_terminal: Polynomial, T: int, degree_limit: int = DEGREE_LIMIT) -> CostToGoLadder:
    """Backward composition ``J_t = c_t + J_{t+1} o f`` from ``J_T = g``.

    ``c`` is one polynomial or a sequence of ``T`` per-step costs.
    """
    if T < 0:
        raise ValueError("T must be >= 0")
    costs = _stage_costs(c, T)
    polys = [None] * (T + 1)
    polys[T] = g_terminal
    for t in range(T - 1, -1, -1):
        nxt = polys[t + 1]
        predicted = max(costs[t].degree, nxt.degree * f.degree)
        if predicted > degree_limit:
            raise DegreeExplosionError(predicted, degree_limit, t)
        polys[t] = costs[t] + compose(nxt, f)
    return CostToGoLadder(tuple(polys), tuple(p.degree for p in polys))


@dataclass(frozen=True)
class TransferMatrixB:
    """``entries[i, j]`` is the coefficient of ``x^j`` in ``f(x)^i``.

    Row and column powers start at 0 when ``include_constant`` is set and at
    1 otherwise.
    """

    entries: np.ndarray
    source_degree: int
    target_degree: int
    include_constant: bool = False

    @property
    def shape(self):
        return self.entries.shape


def build_transfer(
    f: Polynomial,
    N_next: int,
    N_t: int,
    *,
    include_constant: bool = False,
    truncate: bool = False,
) -> TransferMatrixB:
    """Exact transfer from the ``N_next`` basis at ``t+1`` to ``N_t`` monomials at ``t``.

    Raises unless ``truncate`` when some power of ``f`` has degree above ``N_t``.
    """
    if not include_constant and f.coef(0) != 0.0:
        raise ValueError("f(0) != 0 generates constants; use include_constant=True")
    lo = 0 if include_constant else 1
    B = np.zeros((N_next + 1 - lo, N_t + 1 - lo))
    p = Polynomial([1.0])
    for i in range(N_next + 1):
        if i:
            p = p * f
        if i < lo:
            continue
        if p.degree > N_t and not truncate:
            raise DimensionError(f"row i={i}: deg f^{i} = {p.degree} exceeds target size {N_t}")
        B[i - lo] = p.padded(N_t + 1 - lo, start=lo)
    B.setflags(write=False)
    return TransferMatrixB(B, N_next, N_t, include_constant)


def projected_transfer(
    f: Polynomial, N_next: int, N_t: int, sigma_X2: float, *, include_constant: bool = False
) -> TransferMatrixB:
    """Gaussian-weighted projection of ``phi_{t+1}(f(x))`` onto a (possibly too small) basis.

    Equals :func:`build_transfer` whenever the basis is large enough; otherwise
    it is the infinite-sample limit of the least-squares transfer.
    """
    lo = 0 if include_constant else 1
    full_deg = max(N_next * f.degree, N_t)
    full = build_transfer(f, N_next, full_deg, include_constant=include_constant).entries
    m = gaussian_moments(2 * full_deg, sigma_X2)
    cols = np.arange(lo, N_t + 1)
    rows = np.arange(lo, full_deg + 1)
    cross = np.array([[m[i + j] for j in cols] for i in rows])
    gram = np.array([[m[i + j] for j in cols] for i in cols])
    B = np.linalg.solve(gram, (full @ cross).T).T
    B.setflags(write=False)
    return TransferMatrixB(B, N_next, N_t, include_constant)


def galerkin_recursion(c_rows, g_row, transfers: Sequence[TransferMatrixB]) -> list:
    """``a_t = c_t + a_{t+1} B_t`` swept back from ``a_T = g``.

    ``transfers[t]`` maps the row at ``t+1`` to the row at ``t``.  Stage rows
    shorter than the target are zero-padded.  Returns ``[a_0, ..., a_T]``.
    """
    T = len(transfers)
    if isinstance(c_rows, np.ndarray) and c_rows.ndim == 1:
        c_rows = [c_rows] * T
    if len(c_rows) != T:
        raise DimensionError(f"expected {T} stage rows, got {len(c_rows)}")
    out = [None] * (T + 1)
    out[T] = np.asarray(g_row, dtype=float)
    for t in range(T - 1, -1, -1):
        B = transfers[t].entries if isinstance(transfers[t], TransferMatrixB) else np.asarray(transfers[t])
        if out[t + 1].size != B.shape[0]:
            raise DimensionError(f"t={t}: row of length {out[t + 1].size} does not chain into B with {B.shape[0]} rows")
        c = np.asarray(c_rows[t], dtype=float)
        if c.size > B.shape[1]:
            raise DimensionError(f"t={t}: stage row longer than target basis ({c.size} > {B.shape[1]})")
        row = out[t + 1] @ B
        row[: c.size] += c
        out[t] = row
    return out


def monomial_ladder_rows(f: Polynomial, c: Polynomial, g: Polynomial, T: int, *, include_constant: bool = False):
    """Inputs for :func:`galerkin_recursion` on the full expanding monomial basis."""
    lo = 0 if include_constant else 1
    sizes = [0] * (T + 1)
    sizes[T] = g.degree
    for t in range(T - 1, -1, -1):
        sizes[t] = max(c.degree, sizes[t + 1] * f.degree)
    transfers = [build_transfer(f, sizes[t + 1], sizes[t], include_constant=include_constant) for t in range(T)]
    c_rows = [c.padded(c.degree + 1 - lo, start=lo) for _ in range(T)]
    g_row = g.padded(sizes[T] + 1 - lo, start=lo)
    return c_rows, g_row, transfers, sizes
