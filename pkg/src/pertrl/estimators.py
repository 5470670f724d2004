"""Sampled least-squares estimators for the backward evaluation recursion.

All estimators share one normal-equation solver: the empirical Gram matrix is
diagonally equilibrated, checked against ``cond_max`` and Cholesky-factored.
Raw and equilibrated condition numbers are both reported.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import kernels
from .errors import DimensionError, NumericalRefusal, PertrlError
from .exact import CostToGoLadder, exact_backward
from .poly import Polynomial, exact_gram, gaussian_moments, gram_moment_variance, hermite_c_prime, hermite_matrix
from .seeding import stream

COND_MAX = 1e14


# ---------------------------------------------------------------------------
# bases


@dataclass(frozen=True)
class Basis:
    """Polynomial basis of size ``N`` expressed through its monomial coefficients.

    ``transform`` has one row per basis function and columns for powers
    ``0..N``.  Hermite rows are the orthonormal functions for ``N(0, sigma_X2)``.
    """

    kind: str
    N: int
    include_constant: bool = False
    sigma_X2: float = 1.0

    def __post_init__(self):
        if self.kind not in ("monomial", "hermite"):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.N < 1:
            raise ValueError("basis size N must be >= 1")

    @property
    def size(self) -> int:
        return self.N + (1 if self.include_constant else 0)

    @cached_property
    def transform(self) -> np.ndarray:
        if self.kind == "monomial":
            T = np.eye(self.N + 1)
        else:
            T = hermite_matrix(self.N, self.sigma_X2).H
        return T if self.include_constant else T[1:]

    def values(self, x) -> np.ndarray:
        """Basis matrix, shape ``(size, len(x))``."""
        x = np.asarray(x, dtype=float)
        V = np.vstack([x**p for p in range(self.N + 1)])
        if self.kind == "monomial":
            return V if self.include_constant else V[1:]
        return self.transform @ V

    def to_monomial(self, coeffs) -> np.ndarray:
        """Monomial coefficients (powers ``0..N``) of ``sum_i coeffs[i] phi_i``."""
        return np.asarray(coeffs, dtype=float) @ self.transform

    def coefficients_of(self, p: Polynomial) -> np.ndarray:
        """Basis coordinates of a polynomial lying in the span."""
        if p.degree > self.N:
            raise DimensionError(f"degree {p.degree} polynomial outside a size-{self.N} basis")
        mono = p.padded(self.N + 1)
        if not self.include_constant:
            if self.kind == "monomial":
                if mono[0] != 0.0:
                    raise DimensionError("constant term outside a basis without constant")
                return mono[1:]
            full = mono @ hermite_matrix(self.N, self.sigma_X2).H_inv
            if abs(full[0]) > 1e-12 * (1 + np.abs(full).max()):
                raise DimensionError("polynomial needs the constant Hermite row")
            return full[1:]
        if self.kind == "monomial":
            return mono
        return mono @ hermite_matrix(self.N, self.sigma_X2).H_inv

    def gram_from_moments(self, moments: np.ndarray) -> np.ndarray:
        """``T Hankel(moments) T'`` for raw moments of orders ``0..2N``."""
        idx = np.arange(self.N + 1)
        hankel = moments[idx[:, None] + idx[None, :]]
        if self.kind == "monomial":
            return hankel if self.include_constant else hankel[1:, 1:]
        T = self.transform
        return T @ hankel @ T.T


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class SampleBatch:
    """Seeded draws ``x ~ N(0, sigma_X2)`` with next states ``f(x) (+ w)``.

    ``obs_noise`` holds the synthetic observation errors ``v`` added to
    regression targets.  Basis matrices and the Gram are built on demand.
    """

    seed: int
    stream_key: tuple
    sigma_X2: float
    R: int
    basis: Basis
    f: Polynomial
    draws: np.ndarray
    next_states: np.ndarray
    obs_noise: np.ndarray
    obs_noise_var: float = 0.0
    dyn_noise_var: float = 0.0

    @cached_property
    def moments(self) -> np.ndarray:
        return kernels.power_sums(self.draws, 2 * self.basis.N) / self.R

    @cached_property
    def gram(self) -> np.ndarray:
        return self.basis.gram_from_moments(self.moments)

    @property
    def phi_t(self) -> np.ndarray:
        return self.basis.values(self.draws)

    def phi_next(self, basis: Basis | None = None) -> np.ndarray:
        return (basis or self.basis).values(self.next_states)

    def project(self, targets: np.ndarray) -> np.ndarray:
        """``(1/R) Phi_t y`` through the power-sum kernel."""
        w = kernels.weighted_power_sums(self.draws, np.ascontiguousarray(targets, dtype=float), self.basis.N) / self.R
        if self.basis.kind == "monomial":
            return w if self.basis.include_constant else w[1:]
        return self.basis.transform @ w


def draw_batch(
    seed: int,
    sigma_X2: float,
    R: int,
    basis: Basis | str = "monomial",
    N: int | None = None,
    f: Polynomial | None = None,
    obs_noise_var: float = 0.0,
    dyn_noise_var: float = 0.0,
    *,
    key: Sequence[int] = (),
    include_constant: bool = False,
) -> SampleBatch:
    """Draw a reproducible batch; ``key`` selects the (t, replication) stream."""
    if isinstance(basis, str):
        if N is None:
            raise ValueError("N is required with a basis name")
        basis = Basis(basis, N, include_constant, sigma_X2)
    if R < basis.size:
        raise DimensionError(f"R={R} < basis size {basis.size}: Gram singular by construction")
    if sigma_X2 <= 0:
        raise ValueError("sigma_X2 must be positive")
    f = Polynomial.identity() if f is None else f
    key = tuple(key)
    x = stream(seed, *key, purpose="x").normal(0.0, math.sqrt(sigma_X2), R)
    nxt = kernels.horner(np.ascontiguousarray(f.coeffs), x)
    if dyn_noise_var > 0:
        nxt = nxt + stream(seed, *key, purpose="omega").normal(0.0, math.sqrt(dyn_noise_var), R)
    v = stream(seed, *key, purpose="v").normal(0.0, math.sqrt(obs_noise_var), R) if obs_noise_var > 0 else np.zeros(R)
    for a in (x, nxt, v):
        a.setflags(write=False)
    return SampleBatch(seed, key, sigma_X2, R, basis, f, x, nxt, v, obs_noise_var, dyn_noise_var)


# ---------------------------------------------------------------------------
# normal equations


@dataclass(frozen=True)
class GramSolve:
    solution: np.ndarray
    condition: float
    condition_equilibrated: float
    inv_norm: float


def solve_gram(G: np.ndarray, rhs: np.ndarray, cond_max: float = COND_MAX, ridge: float = 0.0, t=None) -> GramSolve:
    """Solve ``G X = rhs`` (rhs columns) by equilibrated Cholesky with refusal."""
    G = np.asarray(G, dtype=float)
    if ridge:
        G = G + ridge * np.eye(G.shape[0])
    diag = np.diag(G)
    if np.any(diag <= 0):
        raise NumericalRefusal(math.inf, cond_max, t)
    d = 1.0 / np.sqrt(diag)
    Ge = G * d[:, None] * d[None, :]
    ev = np.linalg.eigvalsh(Ge)
    kappa_eq = math.inf if ev[0] <= 0 else float(ev[-1] / ev[0])
    kappa = float(np.linalg.cond(G))
    if not kappa_eq <= cond_max:
        raise NumericalRefusal(kappa_eq, cond_max, t)
    try:
        fac = cho_factor(Ge)
    except LinAlgError:
        raise NumericalRefusal(kappa_eq, cond_max, t) from None
    rhs = np.asarray(rhs, dtype=float)
    X = d.reshape((-1,) + (1,) * (rhs.ndim - 1)) * cho_solve(fac, (d.reshape((-1,) + (1,) * (rhs.ndim - 1))) * rhs)
    Ginv = d[:, None] * cho_solve(fac, np.diag(d))
    inv_norm = float(np.linalg.eigvalsh(0.5 * (Ginv + Ginv.T))[-1])
    return GramSolve(X, kappa, kappa_eq, inv_norm)


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class EstimateReport:
    coefficients: np.ndarray
    err_max: float | None
    err_l2: float | None
    gram_condition: float
    gram_condition_equilibrated: float
    ls_covariance_norm: float
    R: int
    M: int
    sigma_X2: float
    sigma_v2: float
    ridge: float = 0.0
    seed: int | None = None
    t: int | None = None
    bias: np.ndarray | None = None
    extra: dict = field(default_factory=dict)


def _errors(est, oracle):
    if oracle is None:
        return None, None
    d = np.asarray(est, dtype=float) - np.asarray(oracle, dtype=float)
    return float(np.max(np.abs(d))), float(np.linalg.norm(d))


def _report(coeffs, sol, R, M, sigma_X2, sigma_v2, ridge, oracle=None, seed=None, t=None, monomial=None, **kw):
    err_max, err_l2 = _errors(coeffs if monomial is None else monomial, oracle)
    return EstimateReport(
        coefficients=coeffs,
        err_max=err_max,
        err_l2=err_l2,
        gram_condition=max(sol.condition, 1.0),
        gram_condition_equilibrated=sol.condition_equilibrated,
        ls_covariance_norm=sigma_v2 * sol.inv_norm / R,
        R=R,
        M=M,
        sigma_X2=sigma_X2,
        sigma_v2=sigma_v2,
        ridge=ridge,
        seed=seed,
        t=t,
        **kw,
    )


def _oracle_row(oracle, basis: Basis):
    # oracle is a Polynomial (compared over the basis' monomial range) or a row
    if oracle is None:
        return None
    if isinstance(oracle, Polynomial):
        lo = 0 if basis.include_constant else 1
        return oracle.padded(basis.N + 1 - lo, start=lo)
    return np.asarray(oracle, dtype=float)


def rl_ls_step(
    batch: SampleBatch,
    alpha_next,
    c_row,
    *,
    next_basis: Basis | None = None,
    oracle=None,
    cond_max: float = COND_MAX,
    ridge: float = 0.0,
    t: int | None = None,
) -> EstimateReport:
    """``a_t = c_t + (a_{t+1} Phi_{t+1} + V) Phi_t' (Phi_t Phi_t')^-1``.

    ``alpha_next`` is in ``next_basis`` coordinates (default: the batch basis).
    ``oracle`` is the exact ``J_t``; errors are measured on monomial
    coefficients over the basis' power range.
    """
    nb = next_basis or batch.basis
    alpha_next = np.asarray(alpha_next, dtype=float)
    if alpha_next.size != nb.size:
        raise DimensionError(f"alpha_next has {alpha_next.size} entries, next basis has {nb.size}")
    c = np.zeros(batch.basis.size)
    c_row = np.asarray(c_row, dtype=float)
    if c_row.size > c.size:
        raise DimensionError("stage row longer than the basis")
    c[: c_row.size] = c_row
    y = kernels.horner(np.ascontiguousarray(nb.to_monomial(alpha_next)), np.ascontiguousarray(batch.next_states))
    y = y + batch.obs_noise
    sol = solve_gram(batch.gram, batch.project(y), cond_max, ridge, t)
    coeffs = c + sol.solution
    mono = None
    if batch.basis.kind != "monomial":
        full = batch.basis.to_monomial(coeffs)
        mono = full if batch.basis.include_constant else full[1:]
    return _report(
        coeffs, sol, batch.R, batch.basis.N, batch.sigma_X2, batch.obs_noise_var, ridge,
        _oracle_row(oracle, batch.basis), batch.seed, t, monomial=mono,
    )


def rl_ls_sweep(
    f: Polynomial,
    c: Polynomial,
    g_terminal: Polynomial,
    T: int,
    sizes,
    *,
    sigma_X2: float,
    R: int,
    sigma_v2: float = 0.0,
    seed: int = 0,
    rep: int = 0,
    basis: str = "monomial",
    include_constant: bool = False,
    dyn_noise_var: float = 0.0,
    cond_max: float = COND_MAX,
    ridge: float = 0.0,
    oracle: CostToGoLadder | None = None,
) -> list:
    """Backward chain of :func:`rl_ls_step` from ``t = T-1`` to ``0``.

    ``sizes`` is one basis size for every ``t`` or a list ``N_0..N_T``.
    Returns reports ordered ``t = T-1, ..., 0``; the terminal row is the
    projection of ``g_terminal`` (which must lie in the span).
    """
    sizes = [int(sizes)] * (T + 1) if np.ndim(sizes) == 0 else [int(s) for s in sizes]
    if len(sizes) != T + 1:
        raise DimensionError(f"need {T + 1} basis sizes, got {len(sizes)}")
    if oracle is None:
        oracle = exact_backward(f, c, g_terminal, T)
    bases = [Basis(basis, n, include_constant, sigma_X2) for n in sizes]
    alpha = bases[T].coefficients_of(g_terminal)
    reports = []
    for t in range(T - 1, -1, -1):
        b = bases[t]
        if c.degree > b.N:
            raise DimensionError(f"t={t}: stage cost does not fit a size-{b.N} basis")
        batch = draw_batch(seed, sigma_X2, R, b, f=f, obs_noise_var=sigma_v2, dyn_noise_var=dyn_noise_var, key=(t, rep))
        try:
            rep_t = rl_ls_step(
                batch, alpha, b.coefficients_of(c), next_basis=bases[t + 1],
                oracle=oracle[t], cond_max=cond_max, ridge=ridge, t=t,
            )
        except PertrlError as e:
            if getattr(e, "t", None) is None:
                e.t = t
            raise
        reports.append(rep_t)
        alpha = rep_t.coefficients
    return reports


# ---------------------------------------------------------------------------
# model-based Taylor fitting


def perturbation_map(f: Polynomial, x_bar: float) -> Polynomial:
    """``d -> f(x_bar + d) - f(x_bar)``."""
    s = f.shift(x_bar)
    return s - s.coef(0)


def moment_bias(F_full, M: int, sigma_X2: float) -> np.ndarray:
    """Limiting bias row ``Delta G^-1`` of an order-``M`` fit to ``sum_k F^k d^k``.

    ``Delta^l = sum_{k > M} F^k E[d^(k+l)]`` for ``l = 1..M``.
    """
    F = np.asarray(F_full, dtype=float)
    K = F.size
    m = gaussian_moments(K + M, sigma_X2)
    delta = np.array([sum(F[k - 1] * m[k + l] for k in range(M + 1, K + 1)) for l in range(1, M + 1)])
    G = exact_gram(M, False, sigma_X2)
    return np.linalg.solve(G, delta)


def mb_ls_fit(batch: SampleBatch, M: int | None = None, *, cond_max: float = COND_MAX, ridge: float = 0.0, t=None) -> EstimateReport:
    """Fit ``[F^1..F^M]`` from perturbation pairs ``(d, f(x_bar + d) - f(x_bar))``.

    Build the batch with ``f=perturbation_map(f, x_bar)``.  The report's
    ``bias`` is the closed-form infinite-sample bias; ``err_*`` compare against
    the true low-order coefficients.
    """
    M = batch.basis.N if M is None else M
    if batch.basis.kind != "monomial" or batch.basis.include_constant or batch.basis.N != M:
        raise DimensionError("mb_ls_fit needs a monomial batch over powers 1..M")
    y = batch.next_states + batch.obs_noise
    sol = solve_gram(batch.gram, batch.project(y), cond_max, ridge, t)
    F_full = batch.f.coeffs[1:]
    truth = np.zeros(M)
    truth[: min(M, F_full.size)] = F_full[:M]
    bias = moment_bias(F_full, M, batch.sigma_X2) if F_full.size > M else np.zeros(M)
    return _report(sol.solution, sol, batch.R, M, batch.sigma_X2, batch.obs_noise_var, ridge, truth, batch.seed, t, bias=bias)


@dataclass(frozen=True)
class BiasBound:
    relative_error: float
    kappa: float
    eps: float

    @property
    def holds(self) -> bool:
        return self.relative_error <= self.kappa * self.eps * (1 + 1e-12)


def relative_error_bound(F_full, M: int, sigma_X2: float) -> BiasBound:
    """``|F_inf - F| / |F| <= kappa(G) eps`` with ``eps = max_j |Delta^j| / |ftilde^j|``."""
    F = np.asarray(F_full, dtype=float)
    G = exact_gram(M, False, sigma_X2)
    F_low = np.zeros(M)
    F_low[: min(M, F.size)] = F[:M]
    ftilde = F_low @ G
    delta = moment_bias(F, M, sigma_X2) @ G
    nz = delta != 0
    if np.any(nz & (ftilde == 0)):
        eps = math.inf
    else:
        eps = float(np.max(np.abs(delta[nz]) / np.abs(ftilde[nz]))) if nz.any() else 0.0
    F_inf = F_low + np.linalg.solve(G, delta)
    rel = float(np.linalg.norm(F_inf - F_low) / np.linalg.norm(F_low))
    return BiasBound(rel, float(np.linalg.cond(G)), eps)


# ---------------------------------------------------------------------------
# model-free PPE


def model_free_ppe_step(
    batch: SampleBatch, K_next, C_row, M: int | None = None, *, oracle=None, cond_max: float = COND_MAX, ridge: float = 0.0, t=None
) -> EstimateReport:
    """``K_t = C_t + K_{t+1} (chi_{t+1} chi_t')(chi_t chi_t')^-1`` on deviation powers ``1..M``.

    ``batch.draws`` are deviations ``dx_t`` and ``batch.next_states`` the
    observed ``dx_{t+1}``.
    """
    M = batch.basis.N if M is None else M
    if batch.basis.kind != "monomial" or batch.basis.include_constant or batch.basis.N != M:
        raise DimensionError("model_free_ppe_step needs a monomial batch over powers 1..M")
    K_next = np.asarray(K_next, dtype=float)
    if K_next.size != M:
        raise DimensionError(f"K_next has {K_next.size} entries, order is {M}")
    X = kernels.cross_power_sums(batch.draws, np.ascontiguousarray(batch.next_states), M, M)[1:, 1:] / batch.R
    sol = solve_gram(batch.gram, X.T, cond_max, ridge, t)
    B_hat = sol.solution.T
    coeffs = np.asarray(C_row, dtype=float) + K_next @ B_hat
    return _report(coeffs, sol, batch.R, M, batch.sigma_X2, batch.obs_noise_var, ridge, oracle, batch.seed, t, extra={"B_hat": B_hat})


@dataclass(frozen=True)
class FlopCounts:
    model_free: float
    model_based: float

    @property
    def ratio(self) -> float:
        return self.model_free / self.model_based


def flop_counts(R: int, M: int) -> FlopCounts:
    """Operation-count model: ``2 R^2 M^2`` model-free against ``(R^2 + R) M^2`` model-based."""
    return FlopCounts(2.0 * R * R * M * M, (R * R + R) * M * M)


# ---------------------------------------------------------------------------
# user-supplied basis rows


def instantaneous_basis_ls(
    basis_rows: Sequence[Callable],
    draws,
    c_values,
    delta_h_values,
    *,
    sigma_X2: float | None = None,
    sigma_v2: float = 0.0,
    cond_max: float = COND_MAX,
    ridge: float = 0.0,
) -> EstimateReport:
    """``dtheta = (C + dH) Hm' (Hm Hm')^-1`` with ``Hm`` the rows evaluated at ``draws``."""
    x = np.asarray(draws, dtype=float)
    Hm = np.vstack([np.broadcast_to(np.asarray(h(x), dtype=float), x.shape) for h in basis_rows])
    R = x.size
    if R < Hm.shape[0]:
        raise DimensionError(f"R={R} < {Hm.shape[0]} basis rows")
    y = np.asarray(c_values, dtype=float) + np.asarray(delta_h_values, dtype=float)
    G = Hm @ Hm.T / R
    sol = solve_gram(G, Hm @ y / R, cond_max, ridge)
    s2 = float(np.var(x)) if sigma_X2 is None else sigma_X2
    return _report(sol.solution, sol, R, Hm.shape[0], s2, sigma_v2, ridge)


# ---------------------------------------------------------------------------
# sample complexity


@dataclass(frozen=True)
class ComplexityQuote:
    R_required: int
    parts: tuple
    inputs: dict


def sample_complexity(n, beta, delta, C, C_prime, M, sigma_X2, sigma_v2) -> ComplexityQuote:
    """``R > max[(n C C' / beta)^2 s_2M^2, s_v^2 C / (delta (1 - beta))]``."""
    if not 0.0 < beta < 1.0:
        raise ValueError("beta out of (0,1)")
    if delta <= 0 or n <= 0 or C <= 0 or C_prime <= 0:
        raise ValueError("n, delta, C and C_prime must be positive")
    var_part = (n / beta * C * C_prime) ** 2 * gram_moment_variance(M, sigma_X2)
    cov_part = sigma_v2 * C / (delta * (1.0 - beta)) if math.isfinite(delta) else 0.0
    inputs = dict(n=n, beta=beta, delta=delta, C=C, C_prime=C_prime, M=M, sigma_X2=sigma_X2, sigma_v2=sigma_v2)
    return ComplexityQuote(int(math.ceil(max(var_part, cov_part))), (var_part, cov_part), inputs)


def hermite_c_prime_closed_form(N: int, sigma_X2: float) -> float:
    """``1 / (N!^2 sigma^(4N))``."""
    return 1.0 / (math.factorial(N) ** 2 * sigma_X2 ** (2 * N))


def measured_constants(M: int, sigma_X2: float, basis: str = "monomial") -> tuple:
    """``(C, C')``: ``||G^-1||`` of the exact Gram and ``||H_M|| ||H^N||`` (1 for monomials)."""
    if basis == "monomial":
        G = exact_gram(M, False, sigma_X2)
        return float(np.linalg.norm(np.linalg.inv(G), 2)), 1.0
    return 1.0, hermite_c_prime(M, sigma_X2)


# ---------------------------------------------------------------------------
# export

CSV_FIELDS = ("t", "R", "M", "sigma_X", "sigma_v", "seed", "err_max", "err_l2", "gram_cond", "ls_cov_norm")


def reports_to_csv(reports: Sequence[EstimateReport], out=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in reports:
        w.writerow([
            r.t, r.R, r.M, repr(math.sqrt(r.sigma_X2)), repr(math.sqrt(r.sigma_v2)), r.seed,
            "" if r.err_max is None else repr(r.err_max), "" if r.err_l2 is None else repr(r.err_l2),
            repr(r.gram_condition), repr(r.ls_covariance_norm),
        ])
    text = buf.getvalue()
    if out is not None:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    return text
