"""Batch runs on the heat-equation benchmark: Gramians, truncation, bounds, Monte Carlo.

Every run is described by an :class:`ExperimentConfig`, which can be read
from a flat ``key = value`` text file. All randomness derives from
``ExperimentConfig.seed``; each stage receives its own child seed.
"""

from dataclasses import dataclass, field, fields, replace
import logging
import os

import numpy as np

from .errbound import aposteriori_bound, hsv_representation
from .gramians import ApproxConfig, EstimatorConfig, approx_gramians, exact_gramians, sampled_gramians
from .mcsim import simulate_errors
from .reduce import balanced_transform, modal_transform, truncate
from .sysmodel import BenchmarkConfig, benchmark_control, build_heat_spde_benchmark, load_system
from .textio import write_csv

__all__ = [
    "ExperimentConfig",
    "read_config",
    "parse_config",
    "stage_seeds",
    "compute_gramians",
    "run_pipeline",
    "PIPELINE_HEADER",
    "EXPERIMENTS",
    "run_experiment",
]

log = logging.getLogger(__name__)

STAGES = ("gramians", "simulate")

PIPELINE_HEADER = [
    "strategy",
    "T",
    "rho",
    "r",
    "bound",
    "mc_error",
    "mc_stderr",
    "term_hsv",
    "term_cov_cross",
    "term_cov_diag",
    "agreement_residual",
]


def _parse_orders(text):
    return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)


def _parse_bool(text):
    v = str(text).strip().lower()
    if v in ("none", "auto", ""):
        return None
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """All knobs of a pipeline run.

    ``steps`` is the number of Euler-Maruyama steps per unit time, so a run
    on ``[0, T]`` takes ``round(steps * T)`` steps. ``system`` optionally
    names a STOCHLIN file that replaces the benchmark.
    """

    alpha: float = 0.4
    beta: float = 3.0
    gamma: float = 2.0
    n: int = 100
    T: float = 1.0
    q: int = 1
    rho: float = 0.0
    strategy: str = "exact"
    M: int = 10
    n_g: int = 1000
    c: float = 0.0
    c_F: float = 0.0
    c_G: float = 0.0
    include_ito_correction: bool = None
    solver: str = "auto"
    transform: str = "balanced"
    orders: tuple = (2, 4, 8, 16)
    paths: int = 10_000
    steps: int = 1000
    seed: int = 0
    out: str = "results"
    system: str = ""
    bound: bool = True

    def __post_init__(self):
        if self.strategy not in ("exact", "sampled", "approx"):
            raise ValueError(f"strategy must be exact, sampled or approx, not {self.strategy!r}")
        if self.transform not in ("balanced", "modal"):
            raise ValueError(f"transform must be balanced or modal, not {self.transform!r}")
        if self.solver not in ("auto", "direct", "iterative", "krylov"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.paths < 1 or self.steps < 1:
            raise ValueError("paths and steps must be at least 1")
        if not self.orders or min(self.orders) < 1:
            raise ValueError("orders must be positive integers")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        self.benchmark()
        EstimatorConfig(M=self.M, n_g=self.n_g, c=self.c, include_ito_correction=self.include_ito_correction)
        ApproxConfig(c_F=self.c_F, c_G=self.c_G)

    def benchmark(self):
        return BenchmarkConfig(
            alpha=self.alpha, beta=self.beta, gamma=self.gamma, n=self.n, T=self.T, q=self.q, rho=self.rho
        )

    def total_steps(self, T=None):
        return max(1, round(self.steps * (self.T if T is None else T)))


_CONVERTERS = {
    "orders": _parse_orders,
    "include_ito_correction": _parse_bool,
    "bound": lambda v: bool(_parse_bool(v)),
}


def _convert(name, value):
    if name in _CONVERTERS:
        return _CONVERTERS[name](value)
    default = {f.name: f.default for f in fields(ExperimentConfig)}[name]
    if isinstance(default, bool):
        return bool(_parse_bool(value))
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return str(value)


def parse_config(text, base=None):
    """Parse ``key = value`` lines (``#`` starts a comment) into a config."""
    names = {f.name for f in fields(ExperimentConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in names:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, value)
    return replace(base or ExperimentConfig(), **values)


def read_config(path, base=None):
    with open(path) as f:
        return parse_config(f.read(), base)


def stage_seeds(seed):
    """Child seeds of the top-level ``seed``, one per pipeline stage."""
    return {
        name: int(np.random.SeedSequence(seed, spawn_key=(i,)).generate_state(1, dtype=np.uint64)[0])
        for i, name in enumerate(STAGES)
    }


def report_header(cfg):
    seeds = stage_seeds(cfg.seed)
    parts = [f"seed={cfg.seed}"] + [f"{k}_seed={v}" for k, v in seeds.items()]
    return "# " + " ".join(parts)


def load_model(cfg):
    if cfg.system:
        return load_system(cfg.system)
    return build_heat_spde_benchmark(cfg.benchmark())


def _solver_for(system, solver):
    if solver != "auto":
        return solver
    return "direct" if system.n**2 <= system.operator.kron_cap else "krylov"


def compute_gramians(system, cfg, T=None):
    T = cfg.T if T is None else T
    solver = _solver_for(system, cfg.solver)
    if cfg.strategy == "exact":
        return exact_gramians(system, T, solver)
    if cfg.strategy == "sampled":
        est = EstimatorConfig(
            M=cfg.M,
            n_g=cfg.n_g,
            c=cfg.c,
            include_ito_correction=cfg.include_ito_correction,
            seed=stage_seeds(cfg.seed)["gramians"],
        )
        return sampled_gramians(system, T, est, solver)
    return approx_gramians(system, T, ApproxConfig(c_F=cfg.c_F, c_G=cfg.c_G), solver)


def make_transform(gram, kind):
    return balanced_transform(gram.P, gram.Q) if kind == "balanced" else modal_transform(gram.P)


@dataclass
class PipelineResult:
    cfg: ExperimentConfig
    gramians: object
    transform: object
    roms: list
    reports: list
    estimates: list
    rows: list = field(default_factory=list)


def run_pipeline(cfg, system=None, *, simulate=True):
    """Gramians, transformation, truncation, bounds and Monte Carlo errors for ``cfg.orders``."""
    system = system if system is not None else load_model(cfg)
    T = cfg.T
    gram = compute_gramians(system, cfg)
    tr = make_transform(gram, cfg.transform)
    orders = [r for r in cfg.orders if r <= system.n]
    roms = [truncate(system, tr, r) for r in orders]
    u = benchmark_control(T)
    u_norm = u.l2_norm(T)

    reports = []
    if cfg.bound:
        solver = _solver_for(system, cfg.solver)
        strategy = "auto" if solver == "direct" else solver
        for rom in roms:
            rep = aposteriori_bound(system, rom, T, u_norm, strategy=strategy)
            if cfg.strategy == "exact":
                rep = hsv_representation(system, rom, tr, T, report=rep, strategy=strategy)
            reports.append(rep)
    estimates = []
    if simulate:
        estimates = simulate_errors(
            system, roms, u, T, cfg.total_steps(), cfg.paths, stage_seeds(cfg.seed)["simulate"]
        )

    rows = []
    nan = float("nan")
    for k, r in enumerate(orders):
        rep = reports[k] if reports else None
        est = estimates[k] if estimates else None
        rows.append(
            [
                cfg.strategy,
                float(T),
                float(cfg.rho),
                r,
                rep.bound if rep else nan,
                est.sup_error if est else nan,
                est.sup_stderr if est else nan,
                rep.term_hsv if rep else nan,
                rep.term_cov_cross if rep else nan,
                rep.term_cov_diag if rep else nan,
                rep.agreement_residual if rep else nan,
            ]
        )
    return PipelineResult(cfg, gram, tr, roms, reports, estimates, rows)


def _ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _write_report(path, cfg, lines):
    with open(path, "w", newline="\n") as f:
        f.write(report_header(cfg) + "\n")
        for line in lines:
            f.write(line.rstrip("\n") + "\n")


def experiment_fig1(cfg, count=50):
    """Leading Hankel singular values from exact Gramians."""
    cfg = replace(cfg, strategy="exact", transform="balanced")
    system = load_model(cfg)
    gram = compute_gramians(system, cfg)
    sigma = balanced_transform(gram.P, gram.Q).sigma[:count]
    rows = [[i + 1, float(s), float(np.log10(s)) if s > 0 else float("-inf")] for i, s in enumerate(sigma)]
    return {"fig1.csv": (["index", "sigma", "log10_sigma"], rows)}, {"sigma": sigma, "gramians": gram}


def experiment_fig2(cfg):
    """Monte Carlo error and bound for r = 2, 4, ..., 20."""
    cfg = replace(cfg, strategy="exact", orders=tuple(range(2, 21, 2)), bound=True)
    res = run_pipeline(cfg)
    plot = [[r[3], float(np.log10(r[5])), float(np.log10(r[4]))] for r in res.rows]
    return {
        "fig2.csv": (["r", "log10_error", "log10_bound"], plot),
        "fig2_pipeline.csv": (PIPELINE_HEADER, res.rows),
    }, {"result": res}


def experiment_table1(cfg):
    """Errors for exact, sampled and approximate Gramians (n = 100)."""
    system = load_model(cfg)
    rows, results = [], {}
    for strategy in ("exact", "sampled", "approx"):
        sub = replace(cfg, strategy=strategy, include_ito_correction=False if strategy == "sampled" else cfg.include_ito_correction)
        res = run_pipeline(sub, system)
        rows += res.rows
        results[strategy] = res
    return {"table1.csv": (PIPELINE_HEADER, rows)}, results


def experiment_table2(cfg):
    """Errors for sampled and approximate Gramians at n = 1000 (no bounds)."""
    base = replace(cfg, n=1000, bound=False, include_ito_correction=False)
    system = load_model(base)
    rows, results = [], {}
    for strategy in ("sampled", "approx"):
        res = run_pipeline(replace(base, strategy=strategy), system)
        rows += res.rows
        results[strategy] = res
    return {"table2.csv": (PIPELINE_HEADER, rows)}, results


def experiment_table3(cfg, times=(0.5, 1.0, 2.0, 3.0)):
    """Exact-Gramian errors on [0, T] for several T."""
    system = load_model(cfg)
    rows, results = [], {}
    for T in times:
        res = run_pipeline(replace(cfg, strategy="exact", T=T), system)
        rows += res.rows
        results[T] = res
    return {"table3.csv": (PIPELINE_HEADER, rows)}, results


def experiment_table4(cfg, rhos=(0.0, 0.5, 1.0)):
    """Exact-Gramian errors with two correlated Wiener processes."""
    rows, results = [], {}
    for rho in rhos:
        res = run_pipeline(replace(cfg, strategy="exact", q=2, rho=rho))
        rows += res.rows
        results[rho] = res
    return {"table4.csv": (PIPELINE_HEADER, rows)}, results


EXPERIMENTS = {
    "fig1": experiment_fig1,
    "fig2": experiment_fig2,
    "table1": experiment_table1,
    "table2": experiment_table2,
    "table3": experiment_table3,
    "table4": experiment_table4,
}


def run_experiment(name, cfg, out=None):
    """Run experiment ``name`` and write its CSV files and a report to ``out``."""
    if name not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
    tables, extra = EXPERIMENTS[name](cfg)
    out = _ensure_dir(out or cfg.out)
    for fname, (header, rows) in tables.items():
        write_csv(os.path.join(out, fname), header, rows)
    lines = [f"experiment = {name}"] + [f"wrote = {fname}" for fname in tables]
    _write_report(os.path.join(out, f"{name}_report.txt"), cfg, lines)
    return tables, extra
