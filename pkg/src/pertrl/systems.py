"""Benchmark dynamical systems and nominal rollouts."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DivergenceError
from .poly import Polynomial

DIVERGENCE_BOUND = 1e8


@dataclass(frozen=True)
class PolynomialDynamics:
    """Autonomous step map ``x_{t+1} = f(x_t)`` over ``T`` steps."""

    f: Polynomial
    T: int

    def __post_init__(self):
        if self.f.degree < 1:
            raise ValueError("step map must have degree >= 1")
        if self.T < 1:
            raise ValueError("horizon T must be >= 1")

    def step(self, x):
        return self.f(x)

    def step_map(self, t: int = 0, u: float = 0.0) -> Polynomial:
        return self.f


@dataclass(frozen=True)
class CubicBenchmark:
    """Cubic map plus its stage and terminal costs."""

    dynamics: PolynomialDynamics
    cost: Polynomial
    terminal: Polynomial
    eps: float
    dt: float

    @property
    def f(self) -> Polynomial:
        return self.dynamics.f

    @property
    def T(self) -> int:
        return self.dynamics.T


def cubic_benchmark(eps: float = 1.0, dt: float = 0.1, c: float = 10.0, alpha: float = 10.0, T: int = 3) -> CubicBenchmark:
    """``x+ = x + dt(-x + eps x^3)`` with stage cost ``c x^2`` and terminal ``alpha x^2``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    f = Polynomial([0.0, 1.0 - dt, 0.0, dt * eps])
    return CubicBenchmark(
        dynamics=PolynomialDynamics(f, T),
        cost=Polynomial.monomial(2, c),
        terminal=Polynomial.monomial(2, alpha),
        eps=eps,
        dt=dt,
    )


@dataclass(frozen=True)
class ControlAffineSystem:
    """Scalar ``x+ = x + (fbar(x) + gbar(x) u) dt + eps sqrt(dt) w``.

    Stage cost is ``(lbar(x) + r u^2 / 2) dt`` and the terminal cost ``cT(x)``.
    """

    fbar: Polynomial
    gbar: Polynomial
    dt: float
    eps: float
    r: float
    lbar: Polynomial
    cT: Polynomial
    T: int
    small_dt: bool = field(init=False)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.r <= 0:
            raise ValueError("control weight r must be positive")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        if self.T < 1:
            raise ValueError("horizon T must be >= 1")
        object.__setattr__(self, "small_dt", self.dt <= 0.1)
        if not self.small_dt:
            warnings.warn(f"dt={self.dt} > 0.1; Euler discretization may be inaccurate", stacklevel=3)

    def with_eps(self, eps: float) -> "ControlAffineSystem":
        return ControlAffineSystem(self.fbar, self.gbar, self.dt, eps, self.r, self.lbar, self.cT, self.T)

    def step(self, x, u):
        return x + (self.fbar(x) + self.gbar(x) * u) * self.dt

    def step_map(self, t: int = 0, u: float = 0.0) -> Polynomial:
        """The zero-noise step as a polynomial in ``x`` with ``u`` frozen."""
        return Polynomial.identity() + (self.fbar + self.gbar * u) * self.dt

    def stage_cost(self, x, u):
        return (self.lbar(x) + 0.5 * self.r * u * u) * self.dt


@dataclass(frozen=True)
class NominalTrajectory:
    states: np.ndarray
    controls: np.ndarray
    dynamics_taylor: tuple  # one array [F^1..F^M] per step t = 0..T-1

    @property
    def T(self) -> int:
        return self.states.size - 1


def _taylor_rows(system, states, controls, order):
    rows = []
    for t in range(states.size - 1):
        u = float(controls[t]) if controls.size else 0.0
        rows.append(system.step_map(t, u).taylor(float(states[t]), order))
    return tuple(rows)


def rollout_nominal(system, x0: float, controls=None, order: int | None = None) -> NominalTrajectory:
    """Zero-noise rollout with exact Taylor rows of the step map about each state.

    ``order`` defaults to the step map's degree, which makes the rows exact.
    """
    T = system.T
    if isinstance(system, ControlAffineSystem):
        u = np.zeros(T) if controls is None else np.asarray(controls, dtype=float)
        if u.shape != (T,):
            raise DimensionError(f"expected {T} controls, got {u.size}")
    else:
        if controls is not None and len(controls):
            raise DimensionError("autonomous dynamics take no controls")
        u = np.zeros(0)
    x = np.empty(T + 1)
    x[0] = x0
    for t in range(T):
        nxt = system.step(x[t], u[t]) if u.size else system.step(x[t])
        if not math.isfinite(nxt) or abs(nxt) > DIVERGENCE_BOUND:
            raise DivergenceError(t, nxt, DIVERGENCE_BOUND)
        x[t + 1] = nxt
    if order is None:
        order = max(system.step_map(0, 0.0).degree, 1)
    x.setflags(write=False)
    u.setflags(write=False)
    return NominalTrajectory(states=x, controls=u, dynamics_taylor=_taylor_rows(system, x, u, order))


def stochastic_step(system: ControlAffineSystem, x, u, omega):
    return system.step(x, u) + system.eps * math.sqrt(system.dt) * omega


def stochastic_rollout(system: ControlAffineSystem, x0: float, controls, rng: np.random.Generator, feedback=None):
    """One Euler-Maruyama path; ``feedback(t, x)`` adds to the open-loop control."""
    T = system.T
    x = np.empty(T + 1)
    x[0] = x0
    omega = rng.standard_normal(T)
    for t in range(T):
        u = controls[t] + (feedback(t, x[t]) if feedback is not None else 0.0)
        x[t + 1] = stochastic_step(system, x[t], u, omega[t])
        if not math.isfinite(x[t + 1]) or abs(x[t + 1]) > DIVERGENCE_BOUND:
            raise DivergenceError(t, x[t + 1], DIVERGENCE_BOUND)
    return x, omega
