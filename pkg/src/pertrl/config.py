"""JSON experiment configuration with field-level validation."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

SCHEMA_VERSION = 1
EXPERIMENTS = ("exact-pe", "rl-pe", "ppe", "variance-sweep", "tpfc", "eps-sweep")


@dataclass
class SystemSection:
    eps: float = 1.0
    dt: float = 0.1
    c: float = 10.0
    alpha: float = 10.0
    T: int = 3
    x0: float = 0.0


@dataclass
class EstimatorSection:
    M: list = field(default_factory=lambda: [6, 12, 18])
    basis: str = "monomial"
    sigma_X: list = field(default_factory=lambda: [0.1, 1.0])
    sigma_v: float = 0.1
    R: list = field(default_factory=lambda: [1000, 10000, 100000])
    n_seeds: int = 30
    ridge: float = 0.0
    cond_max: float = 1e14
    dyn_noise_var: float = 0.0
    on_refusal: str = "record"


@dataclass
class PpeSection:
    M: list = field(default_factory=lambda: [2, 3, 4, 6])
    beta: float | None = None
    noise_var: float = 0.0


@dataclass
class TpfcSection:
    fbar: list = field(default_factory=lambda: [0.0, -1.0, 0.0, -1.0])
    gbar: list = field(default_factory=lambda: [1.0])
    lbar: list = field(default_factory=lambda: [0.0, 0.0, 0.5])
    cT: list = field(default_factory=lambda: [0.0, 0.0, 0.5])
    r: float = 1.0
    dt: float = 0.1
    T: int = 20
    x0: float = 1.0
    eps_grid: list = field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05])
    n_rollouts: int = 100_000
    quadratic_feedback: float = 1.0
    tol: float = 1e-12
    max_iters: int = 10_000


@dataclass
class ExperimentConfig:
    experiment: str
    master_seed: int
    schema_version: int = SCHEMA_VERSION
    system: SystemSection = field(default_factory=SystemSection)
    estimator: EstimatorSection = field(default_factory=EstimatorSection)
    ppe: PpeSection = field(default_factory=PpeSection)
    tpfc: TpfcSection = field(default_factory=TpfcSection)
    output: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {"system": SystemSection, "estimator": EstimatorSection, "ppe": PpeSection, "tpfc": TpfcSection}


def _section(cls, raw, name, problems):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        problems.append(f"{name}: expected an object")
        return cls()
    known = {f.name for f in fields(cls)}
    for k in raw:
        if k not in known:
            problems.append(f"{name}.{k}: unknown field")
    return cls(**{k: v for k, v in raw.items() if k in known})


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _check(cfg: ExperimentConfig) -> list:
    p = []

    def num(path, v, lo=None, hi=None, lo_open=False, integer=False):
        ok = _is_int(v) if integer else _is_num(v)
        if not ok:
            p.append(f"{path}: expected {'an integer' if integer else 'a finite number'}, got {v!r}")
            return
        if lo is not None and (v <= lo if lo_open else v < lo):
            p.append(f"{path}: must be {'>' if lo_open else '>='} {lo}, got {v!r}")
        if hi is not None and v > hi:
            p.append(f"{path}: must be <= {hi}, got {v!r}")

    def lst(path, v, **kw):
        if not isinstance(v, list) or not v:
            p.append(f"{path}: expected a nonempty list")
            return []
        for i, item in enumerate(v):
            num(f"{path}[{i}]", item, **kw)
        return v

    if cfg.schema_version != SCHEMA_VERSION:
        p.append(f"schema_version: unsupported version {cfg.schema_version!r} (expected {SCHEMA_VERSION})")
    if cfg.experiment not in EXPERIMENTS:
        p.append(f"experiment: unknown experiment {cfg.experiment!r}")
    num("master_seed", cfg.master_seed, lo=0, integer=True)

    s = cfg.system
    num("system.eps", s.eps)
    num("system.dt", s.dt, lo=0, lo_open=True)
    num("system.c", s.c)
    num("system.alpha", s.alpha)
    num("system.T", s.T, lo=0, integer=True)
    num("system.x0", s.x0)

    e = cfg.estimator
    Ms = lst("estimator.M", e.M, lo=1, integer=True)
    if e.basis not in ("monomial", "hermite"):
        p.append(f"estimator.basis: expected 'monomial' or 'hermite', got {e.basis!r}")
    lst("estimator.sigma_X", e.sigma_X, lo=0, lo_open=True)
    num("estimator.sigma_v", e.sigma_v, lo=0)
    Rs = lst("estimator.R", e.R, lo=1, integer=True)
    num("estimator.n_seeds", e.n_seeds, lo=1, integer=True)
    num("estimator.ridge", e.ridge, lo=0)
    num("estimator.cond_max", e.cond_max, lo=1)
    num("estimator.dyn_noise_var", e.dyn_noise_var, lo=0)
    if e.on_refusal not in ("record", "fail"):
        p.append(f"estimator.on_refusal: expected 'record' or 'fail', got {e.on_refusal!r}")
    if cfg.experiment in ("rl-pe", "variance-sweep"):
        size_extra = 1 if e.basis == "hermite" else 0
        for i, R in enumerate(Rs):
            for j, M in enumerate(Ms):
                if _is_int(R) and _is_int(M) and R < M + size_extra:
                    p.append(f"estimator.R[{i}]={R} < basis size {M + size_extra} at grid point M[{j}]={M}")

    q = cfg.ppe
    lst("ppe.M", q.M, lo=1, integer=True)
    if q.beta is not None and not (_is_num(q.beta) and 0.0 < q.beta < 1.0):
        p.append(f"ppe.beta: beta out of (0,1), got {q.beta!r}")
    num("ppe.noise_var", q.noise_var, lo=0)

    t = cfg.tpfc
    for name in ("fbar", "gbar", "lbar", "cT"):
        lst(f"tpfc.{name}", getattr(t, name))
    num("tpfc.r", t.r, lo=0, lo_open=True)
    num("tpfc.dt", t.dt, lo=0, lo_open=True)
    num("tpfc.T", t.T, lo=1, integer=True)
    num("tpfc.x0", t.x0)
    grid = lst("tpfc.eps_grid", t.eps_grid, lo=0, lo_open=True)
    if cfg.experiment == "eps-sweep" and isinstance(grid, list) and len(grid) < 4:
        p.append("tpfc.eps_grid: needs at least 4 points")
    num("tpfc.n_rollouts", t.n_rollouts, lo=2, integer=True)
    num("tpfc.quadratic_feedback", t.quadratic_feedback)
    num("tpfc.tol", t.tol, lo=0, lo_open=True)
    num("tpfc.max_iters", t.max_iters, lo=1, integer=True)
    return p


def parse_config(raw: dict, experiment: str | None = None) -> ExperimentConfig:
    """Build and validate a config; raises :class:`ConfigError` listing every problem."""
    problems = []
    if not isinstance(raw, dict):
        raise ConfigError(["config: expected a JSON object"])
    if experiment is not None:
        if "experiment" in raw and raw["experiment"] != experiment:
            problems.append(f"experiment: config says {raw['experiment']!r} but {experiment!r} was requested")
        raw = {**raw, "experiment": experiment}
    for key in ("experiment", "master_seed"):
        if key not in raw:
            problems.append(f"{key}: required field missing")
    known = {f.name for f in fields(ExperimentConfig)}
    for k in raw:
        if k not in known:
            problems.append(f"{k}: unknown field")
    if problems:
        raise ConfigError(problems)
    sections = {name: _section(cls, raw.get(name), name, problems) for name, cls in _SECTIONS.items()}
    try:
        cfg = ExperimentConfig(
            experiment=raw["experiment"],
            master_seed=raw["master_seed"],
            schema_version=raw.get("schema_version", SCHEMA_VERSION),
            output=raw.get("output"),
            **sections,
        )
    except TypeError as exc:
        raise ConfigError([f"config: {exc}"]) from None
    problems.extend(_check(cfg))
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path, experiment: str | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError([f"{path}: file not found"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})"]) from None
    return parse_config(raw, experiment)


def validate(path) -> list:
    """Empty list when the config at ``path`` is valid, else the problems."""
    try:
        load_config(path)
    except ConfigError as exc:
        return exc.problems
    return []
