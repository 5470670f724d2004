"""Experiment runners behind the CLI.

Each runner returns a :class:`ResultTable` of tidy rows plus a JSON-ready
summary.  Grid points run on a thread pool; results are gathered in grid
order so output never depends on scheduling.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .config import ExperimentConfig
from .errors import NumericalRefusal
from .estimators import reports_to_csv, rl_ls_sweep
from .exact import exact_backward
from .poly import Polynomial, gram_moment_variance
from .ppe import (
    ppe_discounted,
    ppe_inputs,
    run_ppe as ppe_along_nominal,
    stochastic_ppe_backward,
    build_ppe_transfer,
)
from .seeding import stream
from .systems import ControlAffineSystem, cubic_benchmark, rollout_nominal
from .tpfc import decompose_rollout, eps_scaling, optimize_nominal, tpfc_backward, with_quadratic_feedback

ERROR_METRIC_NOTE = (
    "error = max-abs coefficient error vs the exact ladder over the estimated powers; "
    "mean/variance/median taken over seeds"
)


@dataclass(frozen=True)
class Row:
    grid: str
    statistic: str
    value: float
    stderr: float | None = None
    n_seeds: int | None = None


@dataclass
class ResultTable:
    experiment: str
    master_seed: int
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    extra_files: dict = field(default_factory=dict)

    def add(self, grid: dict, statistic: str, value, stderr=None, n_seeds=None):
        g = ";".join(f"{k}={_fmt(v)}" for k, v in grid.items())
        self.rows.append(Row(g, statistic, value, stderr, n_seeds))


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _map(fn, items, threads):
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------


def _bench(cfg):
    s = cfg.system
    return cubic_benchmark(s.eps, s.dt, s.c, s.alpha, max(s.T, 1) if s.T else 1)


def run_exact_pe(cfg: ExperimentConfig, threads: int = 1) -> ResultTable:
    s = cfg.system
    b = cubic_benchmark(s.eps, s.dt, s.c, s.alpha, max(s.T, 1))
    L = exact_backward(b.f, b.cost, b.terminal, s.T)
    tab = ResultTable(cfg.experiment, cfg.master_seed)
    for t in range(s.T, -1, -1):
        tab.add({"t": t}, "basis_count", L.basis_counts[t])
        for k, v in enumerate(L[t].coeffs):
            if v != 0.0:
                tab.add({"t": t, "power": k}, "coefficient", float(v))
    tab.summary = {"ladder": L.to_dict()}
    return tab


def run_rl_pe(cfg: ExperimentConfig, threads: int = 1) -> ResultTable:
    s, e = cfg.system, cfg.estimator
    b = _bench(cfg)
    T = s.T
    oracle = exact_backward(b.f, b.cost, b.terminal, T)
    hermite = e.basis == "hermite"
    tasks = [(M, sx, R, rep) for M in e.M for sx in e.sigma_X for R in e.R for rep in range(e.n_seeds)]

    def one(task):
        M, sx, R, rep = task
        try:
            reps = rl_ls_sweep(
                b.f, b.cost, b.terminal, T, M, sigma_X2=sx * sx, R=R, sigma_v2=e.sigma_v**2,
                seed=cfg.master_seed, rep=rep, basis=e.basis, include_constant=hermite,
                dyn_noise_var=e.dyn_noise_var, cond_max=e.cond_max, ridge=e.ridge, oracle=oracle,
            )
            return reps, None
        except NumericalRefusal as exc:
            if e.on_refusal == "fail":
                raise
            return None, exc

    results = _map(one, tasks, threads)
    tab = ResultTable(cfg.experiment, cfg.master_seed, notes=[ERROR_METRIC_NOTE])
    per_rep = []
    i = 0
    for M in e.M:
        for sx in e.sigma_X:
            for R in e.R:
                chunk = results[i : i + e.n_seeds]
                i += e.n_seeds
                ok = [c[0] for c in chunk if c[0] is not None]
                refused = len(chunk) - len(ok)
                for rep, (reps, _) in enumerate(chunk):
                    if reps is not None:
                        per_rep.append((rep, reps))
                for k in range(T):
                    t = T - 1 - k
                    grid = {"t": t, "M": M, "sigma_X": float(sx), "R": R}
                    errs = np.array([r[k].err_max for r in ok])
                    conds = np.array([r[k].gram_condition for r in ok])
                    n = errs.size
                    if n:
                        tab.add(grid, "mean_error", float(errs.mean()), float(errs.std(ddof=1) / math.sqrt(n)) if n > 1 else None, n)
                        tab.add(grid, "error_variance", float(errs.var(ddof=1)) if n > 1 else 0.0, None, n)
                        tab.add(grid, "median_error", float(np.median(errs)), None, n)
                        tab.add(grid, "mean_gram_condition", float(conds.mean()), None, n)
                    tab.add(grid, "n_refused", refused, None, e.n_seeds)
    lines = reports_to_csv([r for _, reps in per_rep for r in reps]).splitlines()
    reps_col = [str(rep) for rep, reps in per_rep for _ in reps]
    lines = [lines[0] + ",rep"] + [ln + "," + rc for ln, rc in zip(lines[1:], reps_col)]
    tab.extra_files["replications.csv"] = "\n".join(lines) + "\n"
    tab.summary = {"T": T, "basis": e.basis, "oracle_basis_counts": list(oracle.basis_counts)}
    return tab


def run_ppe(cfg: ExperimentConfig, threads: int = 1) -> ResultTable:
    s, q = cfg.system, cfg.ppe
    b = _bench(cfg)
    nominal = rollout_nominal(b.dynamics, s.x0)
    exact = exact_backward(b.f, b.cost, b.terminal, s.T)
    tab = ResultTable(cfg.experiment, cfg.master_seed)
    summary = {"nominal": nominal.states.tolist(), "orders": {}}
    for M in q.M:
        if q.noise_var > 0:
            inp = ppe_inputs(b.f, b.cost, b.terminal, nominal.states, M)
            lad = stochastic_ppe_backward(inp.C_rows, inp.K_terminal, inp.F_rows, q.noise_var, M, s.T, inp.cbar, inp.Jbar_terminal)
        else:
            lad = ppe_along_nominal(b.f, b.cost, b.terminal, nominal.states, M)
        for t in range(s.T, -1, -1):
            tab.add({"M": M, "t": t}, "Jbar", lad.Jbar[t])
            for k, v in enumerate(lad.K_rows[t], start=1):
                tab.add({"M": M, "t": t, "power": k}, "K", float(v))
            if q.noise_var == 0:
                truth = exact[t].taylor(float(nominal.states[t]), M)
                tab.add({"M": M, "t": t}, "max_abs_error_vs_exact", float(np.max(np.abs(lad.K_rows[t] - truth))))
        summary["orders"][str(M)] = lad.to_dict()
    if q.beta is not None:
        # stationary costs only exist about a fixed point; use the origin
        M = max(q.M)
        tr = build_ppe_transfer(b.f.taylor(0.0, M), M)
        lad = ppe_discounted(b.cost.taylor(0.0, M), tr, q.beta, cbar=float(b.cost(0.0)))
        tab.add({"beta": float(q.beta), "M": M, "xbar": 0.0}, "transient_index", lad.transient_index)
        for k, v in enumerate(lad.K_rows[0], start=1):
            tab.add({"beta": float(q.beta), "M": M, "xbar": 0.0, "t": 0, "power": k}, "K", float(v))
        summary["discounted"] = lad.to_dict()
    tab.summary = summary
    return tab


def run_variance_sweep(cfg: ExperimentConfig, threads: int = 1) -> ResultTable:
    e = cfg.estimator
    tasks = [(M, sx, R, rep) for M in e.M for sx in e.sigma_X for R in e.R for rep in range(e.n_seeds)]

    def one(task):
        M, sx, R, rep = task
        x = stream(cfg.master_seed, 0, rep, purpose="x").normal(0.0, sx, R)
        return float(kernels.power_sums(x, 2 * M)[2 * M] / R)

    tops = _map(one, tasks, threads)
    tab = ResultTable(cfg.experiment, cfg.master_seed)
    i = 0
    for M in e.M:
        for sx in e.sigma_X:
            for R in e.R:
                v = np.array(tops[i : i + e.n_seeds])
                i += e.n_seeds
                theory = gram_moment_variance(M, sx * sx) / R
                grid = {"M": M, "sigma_X": float(sx), "R": R}
                emp = float(v.var(ddof=1)) if v.size > 1 else 0.0
                tab.add(grid, "empirical_variance", emp, None, e.n_seeds)
                tab.add(grid, "theoretical_variance", theory, None, e.n_seeds)
                tab.add(grid, "ratio", emp / theory, None, e.n_seeds)
    return tab


def _control_system(cfg, eps=0.0):
    t = cfg.tpfc
    return ControlAffineSystem(
        fbar=Polynomial(t.fbar), gbar=Polynomial(t.gbar), dt=t.dt, eps=eps, r=t.r,
        lbar=Polynomial(t.lbar), cT=Polynomial(t.cT), T=t.T,
    )


def run_tpfc(cfg: ExperimentConfig, threads: int = 1) -> ResultTable:
    t = cfg.tpfc
    system = _control_system(cfg)
    res = optimize_nominal(system, t.x0, t.max_iters, t.tol, return_info=True)
    d = tpfc_backward(system, res.nominal)
    naive = tpfc_backward(system, res.nominal, include_second_order=False)
    tab = ResultTable(cfg.experiment, cfg.master_seed)
    for k in range(system.T + 1):
        g = {"t": k}
        tab.add(g, "xbar", float(res.nominal.states[k]))
        tab.add(g, "G", float(d.G[k]))
        tab.add(g, "P", float(d.P[k]))
        tab.add(g, "P_lqr_about_nominal", float(naive.P[k]))
        if k < system.T:
            tab.add(g, "ubar", float(res.nominal.controls[k]))
            tab.add(g, "K", float(d.gains[k]))
            tab.add(g, "K_lqr_about_nominal", float(naive.gains[k]))
    dev = float(np.max(np.abs(d.gains - naive.gains)))
    tab.add({}, "max_gain_deviation_from_lqr", dev)
    tab.summary = {
        "nominal_cost": res.cost,
        "grad_norm": res.grad_norm,
        "iterations": res.iterations,
        "max_gain_deviation_from_lqr": dev,
    }
    return tab


def run_eps_sweep(cfg: ExperimentConfig, threads: int = 1) -> ResultTable:
    t = cfg.tpfc
    system = _control_system(cfg)
    nominal = optimize_nominal(system, t.x0, t.max_iters, t.tol)
    policy = with_quadratic_feedback(tpfc_backward(system, nominal), t.quadratic_feedback)
    out = eps_scaling(system, policy, t.eps_grid, t.n_rollouts, cfg.master_seed)
    tab = ResultTable(cfg.experiment, cfg.master_seed)
    for p in out.points:
        tab.add({"quantity": p.quantity, "eps": p.eps}, "estimate", p.estimate, p.stderr, p.n_used)
    for q, f in out.fits.items():
        tab.add({"quantity": q}, "slope", f.slope, f.stderr)
    grid = sorted(t.eps_grid, reverse=True)
    ratios = []
    for hi, lo in zip(grid, grid[1:]):
        a = decompose_rollout(system, policy, hi, cfg.master_seed, 100)
        b = decompose_rollout(system, policy, lo, cfg.master_seed, 100)
        ratio = float(np.median(np.abs(a.e).max(1)) / np.median(np.abs(b.e).max(1)))
        ratios.append(ratio)
        tab.add({"eps_hi": hi, "eps_lo": lo}, "e_max_ratio", ratio, None, 100)
    tab.summary = {
        "slopes": {q: {"slope": f.slope, "stderr": f.stderr, "excluded_eps": list(f.excluded)} for q, f in out.fits.items()},
        "e_max_ratios": ratios,
    }
    return tab


RUNNERS = {
    "exact-pe": run_exact_pe,
    "rl-pe": run_rl_pe,
    "ppe": run_ppe,
    "variance-sweep": run_variance_sweep,
    "tpfc": run_tpfc,
    "eps-sweep": run_eps_sweep,
}


def run(cfg: ExperimentConfig, threads: int = 1) -> ResultTable:
    return RUNNERS[cfg.experiment](cfg, threads)
