"""Decoupled feedback design about an optimal open-loop nominal, plus the
Monte-Carlo harness for the small-noise scaling laws.

The nominal is found by adjoint-gradient descent on the discrete open-loop
cost.  Gains come from backward Euler integration of the co-state and the
cost-Hessian equations along the nominal (scalar state)::

    G' + l_x + (f_x + g_x u) G = 0
    P' + l_xx + 2 (f_x + 2 g_x u) P - g^2 P^2 / r
       + f_xx G + g_xx u G - g_x^2 G^2 / r = 0

with ``K = -(g / r) P``.  Every derivative is evaluated at ``(xbar_t, ubar_t)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConvergenceError, DimensionError, DivergenceError
from .seeding import stream
from .systems import DIVERGENCE_BOUND, ControlAffineSystem, NominalTrajectory, rollout_nominal


# ---------------------------------------------------------------------------
# open-loop nominal


def _forward(system: ControlAffineSystem, x0: float, u: np.ndarray) -> np.ndarray:
    x = np.empty(system.T + 1)
    x[0] = x0
    for t in range(system.T):
        x[t + 1] = system.step(x[t], u[t])
        if not math.isfinite(x[t + 1]) or abs(x[t + 1]) > DIVERGENCE_BOUND:
            raise DivergenceError(t, x[t + 1], DIVERGENCE_BOUND)
    return x


def open_loop_cost(system: ControlAffineSystem, x0: float, u) -> float:
    u = np.asarray(u, dtype=float)
    x = _forward(system, x0, u)
    return float(np.sum(system.stage_cost(x[:-1], u)) + system.cT(x[-1]))


def open_loop_gradient(system: ControlAffineSystem, x0: float, u) -> tuple:
    """Cost and ``dJ/du_t`` by the discrete adjoint."""
    u = np.asarray(u, dtype=float)
    x = _forward(system, x0, u)
    dt, r = system.dt, system.r
    fx, gx, lx = system.fbar.derivative(), system.gbar.derivative(), system.lbar.derivative()
    lam = float(system.cT.derivative()(x[-1]))
    grad = np.empty(system.T)
    for t in range(system.T - 1, -1, -1):
        grad[t] = r * u[t] * dt + lam * system.gbar(x[t]) * dt
        lam = lx(x[t]) * dt + lam * (1.0 + (fx(x[t]) + gx(x[t]) * u[t]) * dt)
    J = float(np.sum(system.stage_cost(x[:-1], u)) + system.cT(x[-1]))
    return J, grad


@dataclass(frozen=True)
class OptimizeResult:
    nominal: NominalTrajectory
    cost: float
    grad_norm: float
    iterations: int


def optimize_nominal(
    system: ControlAffineSystem,
    x0: float,
    max_iters: int = 10_000,
    tol: float = 1e-12,
    u0=None,
    *,
    armijo: float = 1e-4,
    return_info: bool = False,
):
    """Minimize the zero-noise discrete cost over open-loop controls.

    Steps are preconditioned by ``1 / (r dt)`` (the exact control Hessian of
    the stage cost) and backtracked until the Armijo condition holds.  Stops
    when ``max_t |dJ/du_t| <= tol``.
    """
    u = np.zeros(system.T) if u0 is None else np.array(u0, dtype=float)
    precond = 1.0 / (system.r * system.dt)
    J, g = open_loop_gradient(system, x0, u)
    it = 0
    gmax = float(np.max(np.abs(g)))
    while gmax > tol:
        if it >= max_iters:
            raise ConvergenceError(gmax, it)
        d = -precond * g
        slope = float(g @ d)
        # below cost resolution the Armijo test is noise; fall back to |grad|
        resolvable = -slope > 64 * np.finfo(float).eps * max(abs(J), 1.0)
        step = 1.0
        while True:
            trial = u + step * d
            try:
                if resolvable:
                    Jt = open_loop_cost(system, x0, trial)
                    accept = Jt <= J + armijo * step * slope
                else:
                    Jt, gt = open_loop_gradient(system, x0, trial)
                    accept = float(np.max(np.abs(gt))) < gmax
            except DivergenceError:
                accept = False
            if accept:
                break
            step *= 0.5
            if step < 1e-12:
                raise ConvergenceError(gmax, it)
        u = trial
        J, g = open_loop_gradient(system, x0, u)
        gmax = float(np.max(np.abs(g)))
        it += 1
    nominal = rollout_nominal(system, x0, u)
    if return_info:
        return OptimizeResult(nominal, J, gmax, it)
    return nominal


# ---------------------------------------------------------------------------
# gain design


@dataclass(frozen=True)
class TpfcDesign:
    nominal: NominalTrajectory
    G: np.ndarray
    P: np.ndarray
    gains: np.ndarray
    include_second_order: bool = True

    @property
    def T(self) -> int:
        return self.gains.size


def tpfc_backward(system: ControlAffineSystem, nominal: NominalTrajectory, *, include_second_order: bool = True) -> TpfcDesign:
    """Backward Euler sweep of the co-state and cost-Hessian equations.

    With ``include_second_order=False`` the terms carrying ``G`` are dropped
    and ``2 (f_x + g_x u) P`` replaces the cross term, which is the Riccati
    equation of LQR about the same nominal.
    """
    T, dt, r = system.T, system.dt, system.r
    x, u = nominal.states, nominal.controls
    if u.size != T:
        raise DimensionError("nominal has no controls for a control-affine system")
    fx, fxx = system.fbar.derivative(), system.fbar.derivative(2)
    g, gx, gxx = system.gbar, system.gbar.derivative(), system.gbar.derivative(2)
    lx, lxx = system.lbar.derivative(), system.lbar.derivative(2)
    G = np.empty(T + 1)
    P = np.empty(T + 1)
    G[T] = system.cT.derivative()(x[T])
    P[T] = system.cT.derivative(2)(x[T])
    for t in range(T - 1, -1, -1):
        xt, ut = x[t], u[t]
        Gn, Pn = G[t + 1], P[t + 1]
        a = fx(xt) + gx(xt) * ut
        G[t] = Gn + dt * (lx(xt) + a * Gn)
        gt = g(xt)
        if include_second_order:
            rhs = (
                lxx(xt) + 2.0 * (fx(xt) + 2.0 * gx(xt) * ut) * Pn - gt * gt * Pn * Pn / r
                + fxx(xt) * Gn + gxx(xt) * ut * Gn - gx(xt) ** 2 * Gn * Gn / r
            )
        else:
            rhs = lxx(xt) + 2.0 * a * Pn - gt * gt * Pn * Pn / r
        P[t] = Pn + dt * rhs
        if not (math.isfinite(P[t]) and math.isfinite(G[t])):
            raise DivergenceError(t, P[t], math.inf)
    gains = np.array([-g(x[t]) / r * P[t] for t in range(T)])
    return TpfcDesign(nominal, G, P, gains, include_second_order)


def tpfc_backward_vector(states, controls, f_x, f_xx, l_x, l_xx, B, R, cT_x, cT_xx, dt: float):
    """Vector-state sweep for a constant control matrix ``B``.

    ``f_x(x) -> (n, n)``, ``f_xx(x) -> (n, n, n)`` with ``f_xx[k]`` the Hessian
    of component ``k``; ``l_x``, ``l_xx``, ``cT_x``, ``cT_xx`` likewise.  The
    Hessian equation is ``P' + l_xx + A'P + PA - P B R^-1 B' P + sum_k G_k f_xx[k] = 0``
    with ``A = f_x``.  Returns ``(G, P, K)`` with ``K_t = -R^-1 B' P_t``.
    """
    states = np.asarray(states, dtype=float)
    T = states.shape[0] - 1
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Rinv = np.linalg.inv(np.atleast_2d(np.asarray(R, dtype=float)))
    S = B @ Rinv @ B.T
    n = states.shape[1]
    G = np.empty((T + 1, n))
    P = np.empty((T + 1, n, n))
    G[T] = cT_x(states[T])
    P[T] = cT_xx(states[T])
    for t in range(T - 1, -1, -1):
        xt = states[t]
        A = f_x(xt)
        Gn, Pn = G[t + 1], P[t + 1]
        G[t] = Gn + dt * (l_x(xt) + A.T @ Gn)
        curv = np.tensordot(Gn, f_xx(xt), axes=1)
        P[t] = Pn + dt * (l_xx(xt) + A.T @ Pn + Pn @ A - Pn @ S @ Pn + curv)
        P[t] = 0.5 * (P[t] + P[t].T)
    K = np.array([-Rinv @ B.T @ P[t] for t in range(T)])
    return G, P, K


def riccati_euler(a, b, q, r, p_terminal, dt, T):
    """Plain LQR Riccati ``P_t = P_{t+1} + dt (q + 2 a P - b^2 P^2 / r)`` for scalar data.

    ``a``, ``b``, ``q`` may be length-``T`` arrays.
    """
    a, b, q = (np.broadcast_to(np.asarray(v, dtype=float), (T,)) for v in (a, b, q))
    P = np.empty(T + 1)
    P[T] = p_terminal
    for t in range(T - 1, -1, -1):
        P[t] = P[t + 1] + dt * (q[t] + 2 * a[t] * P[t + 1] - b[t] ** 2 * P[t + 1] ** 2 / r)
    return P, -b * P[:T] / r


def discrete_lqr(a, b, Q, Rd, QT, T):
    """Discrete finite-horizon LQR for ``x+ = a x + b u``, cost ``sum (Q x^2 + Rd u^2)/2 + QT x_T^2/2``.

    Returns ``(P, K)`` with ``u_t = K_t x_t``.
    """
    P = np.empty(T + 1)
    K = np.empty(T)
    P[T] = QT
    for t in range(T - 1, -1, -1):
        Pn = P[t + 1]
        K[t] = -(b * Pn * a) / (Rd + b * b * Pn)
        P[t] = Q + a * a * Pn - (a * b * Pn) ** 2 / (Rd + b * b * Pn)
    return P, K


# ---------------------------------------------------------------------------
# policies and Monte Carlo


@dataclass(frozen=True)
class PolicyUnderTest:
    """``u_t = ubar_t + K_t dx + S_t(dx)``; ``higher_order[t, k]`` multiplies ``dx^k``.

    Columns 0 and 1 of ``higher_order`` must be zero.
    """

    nominal: NominalTrajectory
    gains: np.ndarray
    higher_order: np.ndarray | None = None

    def __post_init__(self):
        if self.higher_order is not None:
            S = np.atleast_2d(np.asarray(self.higher_order, dtype=float))
            if S.shape[0] != self.gains.size:
                raise DimensionError("one higher-order row per step is required")
            if S.shape[1] >= 1 and np.any(S[:, : min(2, S.shape[1])] != 0):
                raise ValueError("higher-order feedback must start at dx^2")
            object.__setattr__(self, "higher_order", S)

    @property
    def ubar(self) -> np.ndarray:
        return self.nominal.controls

    def linear(self) -> "PolicyUnderTest":
        return PolicyUnderTest(self.nominal, self.gains, None)

    def quadratic_coefficient(self) -> np.ndarray:
        S = self.higher_order
        return np.zeros(self.gains.size) if S is None or S.shape[1] < 3 else S[:, 2].copy()

    def _S(self):
        if self.higher_order is None:
            return np.zeros((self.gains.size, 0))
        return np.ascontiguousarray(self.higher_order)


def with_quadratic_feedback(design: TpfcDesign, s) -> PolicyUnderTest:
    S = np.zeros((design.T, 3))
    S[:, 2] = s
    return PolicyUnderTest(design.nominal, design.gains, S)


def noise_paths(seed: int, n: int, T: int, key=()) -> np.ndarray:
    """Standard-normal increments, shape ``(n, T)``; identical for identical arguments."""
    return stream(seed, *key, purpose="mc").standard_normal((n, T))


def _c(a):
    return np.ascontiguousarray(a, dtype=float)


def _rollouts(system, policy, omega, eps, record=False, backend=None):
    k = backend or kernels
    nom = policy.nominal
    return k.closed_loop_costs(
        _c(omega), float(nom.states[0]), _c(nom.states), _c(nom.controls), _c(policy.gains), _c(policy._S()),
        _c(system.fbar.coeffs), _c(system.gbar.coeffs), _c(system.lbar.coeffs), _c(system.cT.coeffs),
        float(system.r), float(system.dt), float(eps) * math.sqrt(system.dt), DIVERGENCE_BOUND, record,
    )


def nominal_cost(system, policy) -> float:
    """Zero-noise closed-loop cost, computed by the same kernel as the rollouts."""
    costs, _, _ = _rollouts(system, policy, np.zeros((1, system.T)), 0.0)
    return float(costs[0])


@dataclass(frozen=True)
class McCostSummary:
    eps: float
    n_rollouts: int
    mean_cost: float
    var_cost: float
    mean_abs_offset: float
    seed: int
    n_diverged: int = 0
    stderr: float = 0.0
    Jbar: float = 0.0


def mc_evaluate(system, policy: PolicyUnderTest, eps: float, n_rollouts: int, seed: int, *, omega=None) -> McCostSummary:
    """Closed-loop Euler-Maruyama costs; the same ``seed`` gives the same noise paths."""
    if n_rollouts < 2:
        raise ValueError("n_rollouts must be >= 2")
    if omega is None:
        omega = noise_paths(seed, n_rollouts, system.T)
    costs, div, _ = _rollouts(system, policy, omega, eps)
    ok = div == 0
    c = costs[ok]
    Jbar = nominal_cost(system, policy)
    mean = float(np.mean(c)) if c.size else math.nan
    var = float(np.var(c, ddof=1)) if c.size > 1 else math.nan
    return McCostSummary(
        eps=float(eps), n_rollouts=int(n_rollouts), mean_cost=mean, var_cost=var,
        mean_abs_offset=abs(mean - Jbar), seed=int(seed), n_diverged=int(np.sum(~ok)),
        stderr=math.sqrt(var / c.size) if c.size > 1 else math.nan, Jbar=Jbar,
    )


def closed_loop_matrix(system, policy) -> np.ndarray:
    """``Abar_t = 1 + (f_x + g_x ubar) dt + g K dt`` along the nominal."""
    x, u = policy.nominal.states, policy.nominal.controls
    fx, gx = system.fbar.derivative(), system.gbar.derivative()
    return np.array(
        [1.0 + (fx(x[t]) + gx(x[t]) * u[t]) * system.dt + system.gbar(x[t]) * policy.gains[t] * system.dt for t in range(system.T)]
    )


def linear_paths(system, policy, omega, eps) -> np.ndarray:
    """``dx^l_{t+1} = Abar_t dx^l_t + eps sqrt(dt) w_t`` from ``dx^l_0 = 0``; shape ``(n, T+1)``."""
    A = closed_loop_matrix(system, policy)
    omega = np.asarray(omega, dtype=float)
    n, T = omega.shape
    out = np.zeros((n, T + 1))
    scale = eps * math.sqrt(system.dt)
    for t in range(T):
        out[:, t + 1] = A[t] * out[:, t] + scale * omega[:, t]
    return out


def first_order_cost(system, policy, dxl: np.ndarray) -> np.ndarray:
    """Cost change linear in the linear-path deviations; exactly zero-mean."""
    x, u = policy.nominal.states, policy.nominal.controls
    lx = system.lbar.derivative()
    w = np.array([(lx(x[t]) + system.r * u[t] * policy.gains[t]) * system.dt for t in range(system.T)])
    return dxl[:, :-1] @ w + system.cT.derivative()(x[-1]) * dxl[:, -1]


# ---------------------------------------------------------------------------
# scaling fits


@dataclass(frozen=True)
class ScalingPoint:
    quantity: str
    eps: float
    estimate: float
    stderr: float
    n_used: int
    n_diverged: int


@dataclass(frozen=True)
class SlopeFit:
    quantity: str
    slope: float
    stderr: float
    intercept: float
    eps_used: tuple
    excluded: tuple = ()


@dataclass(frozen=True)
class ScalingResult:
    points: list
    fits: dict = field(default_factory=dict)

    def slope(self, quantity: str) -> float:
        return self.fits[quantity].slope


def fit_loglog(eps, est, se, quantity="") -> SlopeFit:
    """Weighted least squares of ``log est`` on ``log eps``; weights from ``se / est``."""
    eps, est, se = (np.asarray(v, dtype=float) for v in (eps, est, se))
    X = np.column_stack([np.ones_like(eps), np.log(eps)])
    y = np.log(np.abs(est))
    sig = np.where(se > 0, se / np.abs(est), 1.0)
    W = 1.0 / sig**2
    cov = np.linalg.inv(X.T @ (W[:, None] * X))
    beta = cov @ X.T @ (W * y)
    return SlopeFit(quantity, float(beta[1]), float(math.sqrt(cov[1, 1])), float(beta[0]), tuple(eps.tolist()))


QUANTITIES = ("mean_offset", "cost_variance", "truncation_gap")


def eps_scaling(system, policy: PolicyUnderTest, eps_grid, n_rollouts: int, seed: int, *, max_diverged: float = 0.01) -> ScalingResult:
    """Slopes of the three small-noise statistics against ``eps``.

    ``mean_offset`` is ``E[J] - Jbar`` estimated with the zero-mean control
    variate ``first_order_cost``; ``cost_variance`` is the sample variance of
    ``J``; ``truncation_gap`` is ``E[J^pi] - E[J^pi_lin]`` on paired paths.
    """
    eps_grid = [float(e) for e in eps_grid]
    if len(eps_grid) < 4:
        raise ValueError("eps_grid needs at least 4 points")
    lin = policy.linear()
    omega = noise_paths(seed, n_rollouts, system.T)
    Jbar = nominal_cost(system, policy)
    points = []
    excluded = []
    for eps in eps_grid:
        cp, dp, _ = _rollouts(system, policy, omega, eps)
        cl, dl, _ = _rollouts(system, lin, omega, eps)
        ok = (dp == 0) & (dl == 0)
        n_div = int(np.sum(~ok))
        if n_div > max_diverged * n_rollouts:
            excluded.append(eps)
            continue
        dJ1 = first_order_cost(system, policy, linear_paths(system, policy, omega[ok], eps))
        cv = cp[ok] - dJ1 - Jbar
        n = int(ok.sum())
        gap = cp[ok] - cl[ok]
        var = float(np.var(cp[ok], ddof=1))
        # variance of the sample variance, from the fourth central moment
        m4 = float(np.mean((cp[ok] - cp[ok].mean()) ** 4))
        se_var = math.sqrt(max(m4 - var * var * (n - 3) / (n - 1), 0.0) / n)
        points.append(ScalingPoint("mean_offset", eps, float(cv.mean()), float(cv.std(ddof=1) / math.sqrt(n)), n, n_div))
        points.append(ScalingPoint("cost_variance", eps, var, se_var, n, n_div))
        points.append(ScalingPoint("truncation_gap", eps, float(gap.mean()), float(gap.std(ddof=1) / math.sqrt(n)), n, n_div))
    fits = {}
    for q in QUANTITIES:
        pts = [p for p in points if p.quantity == q]
        if len(pts) >= 2:
            fit = fit_loglog([p.eps for p in pts], [p.estimate for p in pts], [p.stderr for p in pts], q)
            fits[q] = SlopeFit(fit.quantity, fit.slope, fit.stderr, fit.intercept, fit.eps_used, tuple(excluded))
    return ScalingResult(points, fits)


@dataclass(frozen=True)
class Decomposition:
    dx: np.ndarray
    dx_lin: np.ndarray
    e: np.ndarray
    e2: np.ndarray


def decompose_rollout(system, policy: PolicyUnderTest, eps: float, seed: int, n_paths: int = 1, *, omega=None) -> Decomposition:
    """Nonlinear and linearized closed loops on the same noise.

    ``e = dx - dx_lin``; ``e2`` is the second-order prediction
    ``e2_{t+1} = Abar_t e2_t + S2_t (dx_lin_t)^2``.
    """
    if omega is None:
        omega = noise_paths(seed, n_paths, system.T)
    _, div, states = _rollouts(system, policy, omega, eps, record=True)
    if np.any(div):
        t = int(div[div > 0].min()) - 1
        raise DivergenceError(t, math.inf, DIVERGENCE_BOUND)
    x, u = policy.nominal.states, policy.nominal.controls
    dx = states - x[None, :]
    dxl = linear_paths(system, policy, omega, eps)
    A = closed_loop_matrix(system, policy)
    f2, g1, g2 = system.fbar.derivative(2), system.gbar.derivative(), system.gbar.derivative(2)
    s = policy.quadratic_coefficient()
    S2 = np.array([
        (0.5 * f2(x[t]) + 0.5 * g2(x[t]) * u[t] + g1(x[t]) * policy.gains[t] + system.gbar(x[t]) * s[t]) * system.dt
        for t in range(system.T)
    ])
    e2 = np.zeros_like(dxl)
    for t in range(system.T):
        e2[:, t + 1] = A[t] * e2[:, t] + S2[t] * dxl[:, t] ** 2
    return Decomposition(dx, dxl, dx - dxl, e2)


# ---------------------------------------------------------------------------
# linear-Gaussian oracle


def linear_gaussian_cost_moments(system, policy: PolicyUnderTest, eps: float) -> tuple:
    """Exact mean and variance of the closed-loop cost for linear dynamics,
    constant input gain, quadratic costs and a linear policy."""
    if system.fbar.degree > 1 or system.gbar.degree > 0 or system.lbar.degree > 2 or system.cT.degree > 2:
        raise ValueError("oracle needs linear dynamics, constant input gain and quadratic costs")
    if policy.higher_order is not None and np.any(policy.higher_order):
        raise ValueError("oracle needs a linear policy")
    T, dt, r = system.T, system.dt, system.r
    a = 1.0 + system.fbar.coef(1) * dt
    b = system.gbar.coef(0) * dt
    drift = system.fbar.coef(0) * dt
    x, u, K = policy.nominal.states, policy.nominal.controls, policy.gains
    # x_t = m_t + L_t . w  (w in R^T)
    m = np.zeros(T + 1)
    L = np.zeros((T + 1, T))
    m[0] = x[0]
    s = eps * math.sqrt(dt)
    for t in range(T):
        ut_const = u[t] - K[t] * x[t]
        m[t + 1] = a * m[t] + drift + b * (ut_const + K[t] * m[t])
        L[t + 1] = (a + b * K[t]) * L[t]
        L[t + 1, t] += s
    # cost = const + g.w + w'Hw
    c0 = 0.0
    g = np.zeros(T)
    H = np.zeros((T, T))

    def add_quad(q2, q1, q0, mt, Lt):
        nonlocal c0, g, H
        c0 += q2 * mt * mt + q1 * mt + q0
        g += (2 * q2 * mt + q1) * Lt
        H += q2 * np.outer(Lt, Lt)

    l2, l1, l0 = (system.lbar.coef(k) for k in (2, 1, 0))
    for t in range(T):
        add_quad(l2 * dt, l1 * dt, l0 * dt, m[t], L[t])
        # u = ut_const + K x  ->  0.5 r u^2 dt
        kq = K[t]
        uc = u[t] - K[t] * x[t]
        add_quad(0.5 * r * kq * kq * dt, r * kq * uc * dt, 0.5 * r * uc * uc * dt, m[t], L[t])
    add_quad(system.cT.coef(2), system.cT.coef(1), system.cT.coef(0), m[T], L[T])
    mean = c0 + np.trace(H)
    var = float(g @ g + 2.0 * np.sum(H * H))
    return float(mean), var
