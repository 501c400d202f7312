"""Command-line experiment runner.

    imexdwr run <config>                 run an experiment, write artifacts
    imexdwr compare <a> <b> [--tol r]    relative differences of two results.csv tables
    imexdwr plot-data <dir>              plot-ready CSV bundle for a finished run

Configs are ``key = value`` lines; ``#`` starts a comment. Relative output
directories are resolved against ``$IMEXDWR_OUTPUT_ROOT`` when it is set.
Exit codes: 0 success, 1 comparison above tolerance, 2 invalid input,
3 solver failure (artifacts written so far are kept).
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import __version__
from .adaptive import AdaptiveConfig
from .estimator import write_indicator_csv
from .experiments import (CONSISTENCY_BOX, EFFECTIVITY_BOX, MOVING_SOURCE_BOX, RING_BOX, added_dofs_fraction,
                          adaptive_run, dual_consistency_run, effectivity_problem, estimate_level,
                          final_error_exact, final_error_reference, loglog_slope, moving_source_problem,
                          reference_solution, refinement_levels, ring_problem)
from .linalg import SolverConfig, SolverError
from .mesh import FeFunction, read_snapshot, space_for, uniform_mesh, uniform_refine, write_snapshot
from .primal import TimeGrid

log = logging.getLogger("imexdwr")

OUTPUT_ROOT_ENV = "IMEXDWR_OUTPUT_ROOT"
CACHE_ENV = "IMEXDWR_CACHE_DIR"

EXPERIMENTS = ("dual_consistency", "ac_effectivity_spatial", "ac_effectivity_temporal",
               "ac_effectivity_spacetime", "heat_moving_source", "ac_ring", "custom")
PROBLEMS = ("ac_effectivity", "heat_moving_source", "ac_ring")
MODES = ("uniform_space", "uniform_time", "uniform_spacetime", "adaptive")

SWEEP_COLUMNS = ["level", "M", "N", "dofs", "true_error", "E_st", "E_s", "E_t", "Osc", "effectivity",
                 "error_ratio"]
CONSISTENCY_COLUMNS = ["level", "N", "tau_max", "error_initial", "error_terminal"]
ADAPTIVE_COLUMNS = ["iteration", "N", "total_dofs", "Max", "E_st", "E_s", "E_t", "Osc", "true_error",
                    "effectivity"]
TIMESTEP_COLUMNS = ["k", "t_k", "tau_k", "M_k"]


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Every parameter that affects results; echoed verbatim into ``manifest.txt``."""

    experiment: str
    problem: str = ""
    box: Tuple[float, ...] = ()
    mesh: Tuple[int, ...] = ()
    steps: Tuple[float, ...] = ()
    T: float = 0.0
    epsilon: float = 1.0
    theta: float = 0.8
    lam: float = 0.8
    tol: float = 1e-8
    mode: str = ""
    levels: int = 4
    output: str = "out"
    seed: int = 0
    boundary: str = "dirichlet"
    max_outer_iterations: int = 20
    max_dofs: int = 0
    max_steps: int = 0
    reference_mesh: int = 256
    reference_tau: float = 2e-5
    full_scale: bool = False
    baseline_levels: int = 0
    snapshot_times: Tuple[float, ...] = ()
    solver_tol: float = 1e-12

    @property
    def dim(self) -> int:
        return len(self.box) // 2

    @property
    def box_pairs(self):
        b = self.box
        return tuple((b[2 * i], b[2 * i + 1]) for i in range(self.dim))


# Built-in experiment defaults; anything set in the config file wins.
DEFAULTS: Dict[str, dict] = {
    "dual_consistency": dict(problem="dual_consistency", box=CONSISTENCY_BOX, mesh=(256,), steps=(0.1,) * 5,
                             mode="uniform_time", levels=5),
    "ac_effectivity_spatial": dict(problem="ac_effectivity", box=sum(EFFECTIVITY_BOX, ()), mesh=(4,),
                                   steps=(1e-4,) * 20, mode="uniform_space", levels=4),
    "ac_effectivity_temporal": dict(problem="ac_effectivity", box=sum(EFFECTIVITY_BOX, ()), mesh=(64,),
                                    steps=(0.05,) * 4, mode="uniform_time", levels=4),
    "ac_effectivity_spacetime": dict(problem="ac_effectivity", box=sum(EFFECTIVITY_BOX, ()), mesh=(8,),
                                     steps=(0.05,) * 4, mode="uniform_spacetime", levels=4),
    "heat_moving_source": dict(problem="heat_moving_source", box=sum(MOVING_SOURCE_BOX, ()), mesh=(4, 8),
                               steps=(0.05,) * 10, mode="adaptive", tol=1e-5, max_outer_iterations=20),
    "ac_ring": dict(problem="ac_ring", box=sum(RING_BOX, ()), mesh=(16,), steps=(5e-3,) * 4, epsilon=0.0625,
                    mode="adaptive", tol=1e-5, max_outer_iterations=40, baseline_levels=4,
                    reference_mesh=256, reference_tau=2e-5),
    "custom": dict(mode="adaptive"),
}
PROBLEM_BOXES = {"ac_effectivity": sum(EFFECTIVITY_BOX, ()), "heat_moving_source": sum(MOVING_SOURCE_BOX, ()),
                 "ac_ring": sum(RING_BOX, ())}


# -- config parsing ------------------------------------------------------------
def _floats(v: str) -> Tuple[float, ...]:
    out = []
    for tok in v.replace(",", " ").split():
        if "*" in tok:  # "0.05*4" repeats a value
            val, rep = tok.split("*")
            out.extend([float(val)] * int(rep))
        else:
            out.append(float(tok))
    return tuple(out)


def _ints(v: str) -> Tuple[int, ...]:
    return tuple(int(t) for t in _floats(v))


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def parse_config_text(text: str) -> ExperimentConfig:
    raw: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = val
    return build_config(raw)


def build_config(raw: Dict[str, str]) -> ExperimentConfig:
    """Typed config from string values, with experiment defaults filled in."""
    raw = dict(raw)
    name = raw.pop("experiment", None)
    if name not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}; got {name!r}")
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    values = dict(DEFAULTS[name])
    n_steps = raw.pop("n_steps", None)
    tau = raw.pop("tau", None)
    for key, val in raw.items():
        if key not in types:
            raise ConfigError(f"unknown key {key!r}")
        t = types[key]
        try:
            if "Tuple[float" in t:
                values[key] = _floats(val)
            elif "Tuple[int" in t:
                values[key] = _ints(val)
            elif t == "bool":
                values[key] = _bool(val)
            elif t == "int":
                values[key] = int(val)
            elif t == "float":
                values[key] = float(val)
            else:
                values[key] = val
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    try:
        if n_steps is not None or tau is not None:
            T = values.get("T") or float(sum(values.get("steps", ())))
            if tau is not None:
                n = int(round(T / float(tau)))
                if n_steps is not None and int(n_steps) != n:
                    raise ConfigError("n_steps and tau disagree")
            else:
                n = int(n_steps)
            if n < 1 or not T > 0:
                raise ConfigError("need T > 0 and at least one step")
            values["steps"] = (T / n,) * n
    except ValueError as exc:
        raise ConfigError(f"bad step specification: {exc}") from None
    if name == "custom":
        prob = values.get("problem", "")
        if prob not in PROBLEMS:
            raise ConfigError(f"custom experiments need problem in {', '.join(PROBLEMS)}")
        values.setdefault("box", PROBLEM_BOXES[prob])
        if prob == "ac_ring":
            values.setdefault("epsilon", 0.0625)
    values.setdefault("T", 0.0)
    cfg = ExperimentConfig(experiment=name, **values)
    if cfg.full_scale and cfg.problem == "ac_ring":
        cfg.reference_mesh, cfg.reference_tau = 512, 1e-5
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig):
    steps = np.asarray(cfg.steps, dtype=float)
    if len(steps) == 0 or np.any(steps <= 0):
        raise ConfigError("steps must be a non-empty list of positive numbers")
    sum_steps = float(steps.sum())
    if cfg.T == 0.0:
        cfg.T = sum_steps
    elif not math.isclose(cfg.T, sum_steps, rel_tol=1e-9):
        raise ConfigError(f"T = {cfg.T} does not match the sum of steps {sum_steps}")
    if len(cfg.box) not in (2, 4) or any(b <= a for a, b in cfg.box_pairs):
        raise ConfigError("box must be 'a,b' (1D) or 'a0,b0,a1,b1' (2D) with a < b")
    if len(cfg.mesh) not in (1, cfg.dim) or min(cfg.mesh) < 1:
        raise ConfigError("mesh gives positive cells per axis (one value or one per axis)")
    if cfg.mode not in MODES:
        raise ConfigError(f"mode must be one of {', '.join(MODES)}")
    if cfg.experiment == "dual_consistency" and cfg.mode != "uniform_time":
        raise ConfigError("dual_consistency only supports mode = uniform_time")
    if cfg.mode == "adaptive" and cfg.problem not in ("heat_moving_source", "ac_ring", "ac_effectivity"):
        raise ConfigError(f"problem {cfg.problem!r} does not support adaptive mode")
    if cfg.levels < 1:
        raise ConfigError("levels must be at least 1")
    if not (0 <= cfg.theta <= 1 and 0 <= cfg.lam <= 1):
        raise ConfigError("theta and lam must lie in [0, 1]")
    if not (cfg.tol > 0 and cfg.epsilon > 0 and cfg.solver_tol > 0):
        raise ConfigError("tol, epsilon and solver_tol must be positive")
    if cfg.boundary not in ("flux", "dirichlet"):
        raise ConfigError("boundary must be flux or dirichlet")
    if cfg.max_outer_iterations < 1:
        raise ConfigError("max_outer_iterations must be at least 1")


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config_text(text)


def output_dir(cfg: ExperimentConfig) -> str:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(cfg.output):
        return os.path.join(root, cfg.output)
    return cfg.output


# -- artifacts -------------------------------------------------------------------
def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (tuple, list)):
        return ",".join(_run_length(v))
    if v is None:
        return ""
    return str(v)


def _run_length(values):
    """Format a list with runs of equal entries collapsed to ``value*count``."""
    out, i = [], 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[j + 1] == values[i]:
            j += 1
        n = j - i + 1
        out.append(_fmt(values[i]) + (f"*{n}" if n > 1 else ""))
        i = j + 1
    return out


def write_manifest(path: str, cfg: ExperimentConfig, extra: Optional[dict] = None):
    with open(path, "w") as fh:
        fh.write(f"# imexdwr {__version__} run manifest\n")
        for k, v in asdict(cfg).items():
            fh.write(f"{k} = {_fmt(v)}\n")
        for k, v in (extra or {}).items():
            fh.write(f"{k} = {_fmt(v)}\n")


def read_manifest(path: str) -> Dict[str, str]:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if "=" in line:
                k, v = (s.strip() for s in line.split("=", 1))
                out[k] = v
    return out


def append_manifest(path: str, extra: dict):
    with open(path, "a") as fh:
        for k, v in extra.items():
            fh.write(f"{k} = {_fmt(v)}\n")


def write_table(path: str, columns: List[str], rows: List[dict]):
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=columns)
        wr.writeheader()
        for r in rows:
            wr.writerow({c: _fmt(r.get(c)) for c in columns})


def read_table(path: str) -> Tuple[List[str], List[List[str]]]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        return header, [row for row in rd]


# -- experiment runners ------------------------------------------------------------
def make_problem(cfg: ExperimentConfig):
    if cfg.problem == "ac_effectivity":
        return effectivity_problem(cfg.boundary)
    if cfg.problem == "heat_moving_source":
        return moving_source_problem()
    if cfg.problem == "ac_ring":
        return ring_problem(cfg.epsilon)
    raise ConfigError(f"no built-in problem {cfg.problem!r}")


def _initial(cfg: ExperimentConfig):
    mesh = uniform_mesh(cfg.dim, cfg.box_pairs if cfg.dim > 1 else cfg.box_pairs[0],
                        cfg.mesh if len(cfg.mesh) == cfg.dim else cfg.mesh[0])
    return mesh, TimeGrid.from_steps(cfg.steps)


def _solver(cfg: ExperimentConfig) -> SolverConfig:
    return SolverConfig(rel_tolerance=cfg.solver_tol)


def _reference_error(cfg: ExperimentConfig, p, mesh, out: str):
    """Exact-solution error when available, else error against a cached fine reference."""
    if p.exact is not None:
        return final_error_exact(p), {}
    n0 = max(cfg.mesh)
    times = int(round(math.log2(cfg.reference_mesh / n0)))
    if n0 * 2 ** times != cfg.reference_mesh or times < 0:
        raise ConfigError("reference_mesh must be the initial resolution times a power of two")
    ref_mesh = uniform_refine(mesh, times)
    cache = os.environ.get(CACHE_ENV) or os.path.join(out, "cache")
    os.makedirs(cache, exist_ok=True)
    fname = os.path.join(cache, f"reference_{cfg.problem}_{cfg.reference_mesh}_{cfg.reference_tau!r}_"
                                f"{cfg.T!r}_{cfg.epsilon!r}.npy")
    space = space_for(ref_mesh)
    if os.path.exists(fname):
        ref = FeFunction(space, np.load(fname))
    else:
        log.info("computing reference solution (%d^2, tau=%g)", cfg.reference_mesh, cfg.reference_tau)
        ref = reference_solution(p, ref_mesh, cfg.reference_tau, cfg.T, _solver(cfg))
        np.save(fname, ref.coefficients)
    return final_error_reference(ref), dict(reference_file=os.path.abspath(fname))


def _snapshot_indices(grid: TimeGrid, times) -> List[int]:
    return sorted({int(np.argmin(np.abs(grid.t - t))) for t in times})


def _write_snapshots(out: str, prefix: str, traj, times):
    os.makedirs(os.path.join(out, "snapshots"), exist_ok=True)
    for k in _snapshot_indices(traj.grid, times):
        t = traj.grid.t[k]
        write_snapshot(traj[k], os.path.join(out, "snapshots", f"{prefix}_k{k:04d}.txt"), t)


def run_consistency(cfg: ExperimentConfig, out: str) -> dict:
    res = dual_consistency_run(cfg.steps, cfg.levels, cfg.mesh[0], _solver(cfg))
    rows = [dict(level=i, N=r.N, tau_max=r.tau_max, error_initial=r.error_initial,
                 error_terminal=r.error_terminal) for i, r in enumerate(res)]
    write_table(os.path.join(out, "results.csv"), CONSISTENCY_COLUMNS, rows)
    tau = [r.tau_max for r in res]
    return dict(slope_initial=loglog_slope(tau, [r.error_initial for r in res]),
                slope_terminal=loglog_slope(tau, [r.error_terminal for r in res]))


def run_sweep(cfg: ExperimentConfig, out: str) -> dict:
    p = make_problem(cfg)
    mesh, grid = _initial(cfg)
    err, extra = _reference_error(cfg, p, mesh, out)
    rows = []
    dirichlet = cfg.boundary == "dirichlet" and cfg.problem == "ac_effectivity"
    for lev, (m, g) in enumerate(refinement_levels(cfg.mode, mesh, grid, cfg.levels)):
        res = estimate_level(p, m, g, err, lev, dirichlet, _solver(cfg), keep=True)
        row = res.row()
        row["error_ratio"] = rows[-1]["true_error"] / res.true_error if rows else None
        rows.append(row)
        write_indicator_csv(res.solution.report, os.path.join(out, f"indicators_level{lev:02d}.csv"))
        _write_snapshots(out, f"level{lev:02d}_primal", res.solution.coarse, cfg.snapshot_times or (cfg.T,))
        write_table(os.path.join(out, "results.csv"), SWEEP_COLUMNS, rows)
        _write_timesteps(out, res.solution.report)
        log.info("level %d: M=%d N=%d err=%.4e E_st=%.4e eff=%.4f", lev, res.M, res.N, res.true_error,
                 res.E_st, res.effectivity)
    eff = [r["effectivity"] for r in rows]
    extra.update(effectivity_min=min(eff), effectivity_max=max(eff),
                 max_decomposition_defect=max(abs(r["E_st"] - r["E_s"] - r["E_t"] - r["Osc"]) for r in rows))
    if len(rows) > 1:
        x = [r["dofs"] for r in rows]
        extra.update(slope_error_vs_dofs=loglog_slope(x, [r["true_error"] for r in rows]),
                     slope_estimate_vs_dofs=loglog_slope(x, [abs(r["E_st"]) for r in rows]))
    return extra


def _write_timesteps(out: str, report):
    rows = [dict(k=r["k"], t_k=r["t_k"], tau_k=r["tau_k"], M_k=r["M_k"]) for r in report.rows()]
    write_table(os.path.join(out, "timesteps.csv"), TIMESTEP_COLUMNS, rows)


def run_adaptive_experiment(cfg: ExperimentConfig, out: str) -> dict:
    p = make_problem(cfg)
    mesh, grid = _initial(cfg)
    err, extra = _reference_error(cfg, p, mesh, out)
    acfg = AdaptiveConfig(tol=cfg.tol, theta=cfg.theta, lam=cfg.lam, max_outer_iterations=cfg.max_outer_iterations,
                          max_dofs=cfg.max_dofs or None, max_steps=cfg.max_steps or None)
    rows = []

    def record(it, state, sol):
        r = sol.report
        h = dict(state.history[-1])
        h["effectivity"] = r.E_st / r.true_error if r.true_error else None
        rows.append(h)
        write_table(os.path.join(out, "results.csv"), ADAPTIVE_COLUMNS, rows)

    initial_dofs = [space_for(mesh).dim] * (grid.N + 1)
    res = adaptive_run(p, mesh, grid, acfg, err, os.path.join(out, "iterations"), _solver(cfg), record)
    extra.update(status=res.status, iterations=len(rows))
    if res.solution is not None:
        sol = res.solution
        _write_timesteps(out, sol.report)
        times = cfg.snapshot_times or (cfg.T,)
        _write_snapshots(out, "primal", sol.coarse, times)
        from .primal import Trajectory
        _write_snapshots(out, "dual", Trajectory(sol.coarse.grid, sol.dual.functions[0::2], "dual"), times)
    extra["added_dofs_fraction_last20"] = added_dofs_fraction(initial_dofs, res.state)
    if cfg.baseline_levels > 0:
        brows = []
        for lev, (m, g) in enumerate(refinement_levels("uniform_spacetime", mesh, grid, cfg.baseline_levels)):
            r = estimate_level(p, m, g, err, lev, False, _solver(cfg))
            row = r.row()
            row["error_ratio"] = brows[-1]["true_error"] / r.true_error if brows else None
            brows.append(row)
            write_table(os.path.join(out, "baseline.csv"), SWEEP_COLUMNS, brows)
    if res.status == "solver_failure":
        raise SolverError("solver failure during the adaptive run")
    return extra


def run_experiment(cfg: ExperimentConfig) -> str:
    out = output_dir(cfg)
    os.makedirs(out, exist_ok=True)
    manifest = os.path.join(out, "manifest.txt")
    write_manifest(manifest, cfg, dict(version=__version__))
    try:
        if cfg.experiment == "dual_consistency":
            extra = run_consistency(cfg, out)
        elif cfg.mode == "adaptive":
            extra = run_adaptive_experiment(cfg, out)
        else:
            extra = run_sweep(cfg, out)
    except SolverError:
        append_manifest(manifest, dict(complete=False))
        raise
    append_manifest(manifest, dict(extra, complete=True))
    return out


# -- compare / plot-data ------------------------------------------------------------
def compare_dirs(a: str, b: str, tol: float = 0.0, stream=sys.stdout) -> int:
    try:
        ma, mb = read_manifest(os.path.join(a, "manifest.txt")), read_manifest(os.path.join(b, "manifest.txt"))
        ha, ra = read_table(os.path.join(a, "results.csv"))
        hb, rb = read_table(os.path.join(b, "results.csv"))
    except (OSError, StopIteration) as exc:
        print(f"error: {exc}", file=stream)
        return 2
    if ma.get("experiment") != mb.get("experiment"):
        print(f"error: experiments differ ({ma.get('experiment')} vs {mb.get('experiment')})", file=stream)
        return 2
    if ha != hb or len(ra) != len(rb):
        print("error: result tables have different shapes", file=stream)
        return 2
    worst = 0.0
    print("row,column,a,b,rel_diff", file=stream)
    for i, (x, y) in enumerate(zip(ra, rb)):
        for col, u, v in zip(ha, x, y):
            d = _rel_diff(u, v)
            if d is None:
                continue
            worst = max(worst, d)
            print(f"{i},{col},{u},{v},{d!r}", file=stream)
    print(f"max_rel_diff = {worst!r}", file=stream)
    return 0 if worst <= tol else 1


def _rel_diff(u: str, v: str) -> Optional[float]:
    if u == v:
        return 0.0 if u != "" else None
    try:
        x, y = float(u), float(v)
    except ValueError:
        return math.inf
    if x == y:
        return 0.0
    scale = max(abs(x), abs(y))
    return abs(x - y) / scale if scale > 0 else 0.0


CONVERGENCE_COLUMNS = ["series", "level", "dofs", "N", "value"]
SNAPSHOT_COLUMNS = ["x", "y", "value"]


def emit_plot_data(run_dir: str) -> str:
    """Write ``plot/convergence.csv``, ``plot/timesteps.csv`` and ``plot/snapshot_*.csv``."""
    need = [os.path.join(run_dir, f) for f in ("manifest.txt", "results.csv")]
    for f in need:
        if not os.path.exists(f):
            raise FileNotFoundError(f"incomplete run directory: missing {os.path.basename(f)}")
    man = read_manifest(need[0])
    if man.get("complete") != "true":
        raise FileNotFoundError("incomplete run directory: manifest is not marked complete")
    plot = os.path.join(run_dir, "plot")
    os.makedirs(plot, exist_ok=True)
    header, rows = read_table(need[1])
    conv = []
    for fname, tag in (("results.csv", ""), ("baseline.csv", "uniform_")):
        path = os.path.join(run_dir, fname)
        if not os.path.exists(path):
            continue
        header, rows = read_table(path)
        idx = {c: i for i, c in enumerate(header)}
        level_col = "level" if "level" in idx else "iteration"
        dofs_col = "dofs" if "dofs" in idx else ("total_dofs" if "total_dofs" in idx else None)
        for series in ("true_error", "E_st", "error_initial", "error_terminal"):
            if series not in idx:
                continue
            for r in rows:
                if r[idx[series]] == "":
                    continue
                conv.append(dict(series=tag + series, level=r[idx[level_col]],
                                 dofs=r[idx[dofs_col]] if dofs_col else "",
                                 N=r[idx["N"]], value=r[idx[series]]))
    write_table(os.path.join(plot, "convergence.csv"), CONVERGENCE_COLUMNS, conv)
    ts = os.path.join(run_dir, "timesteps.csv")
    if os.path.exists(ts):
        header, rows = read_table(ts)
        write_table(os.path.join(plot, "timesteps.csv"), ["t_k", "tau_k"],
                    [dict(t_k=r[header.index("t_k")], tau_k=r[header.index("tau_k")]) for r in rows])
    snapdir = os.path.join(run_dir, "snapshots")
    if os.path.isdir(snapdir):
        for name in sorted(os.listdir(snapdir)):
            coords, values, _, _ = read_snapshot(os.path.join(snapdir, name))
            srows = [dict(x=c[0], y=c[1] if len(c) > 1 else None, value=v) for c, v in zip(coords, values)]
            write_table(os.path.join(plot, "snapshot_" + os.path.splitext(name)[0] + ".csv"),
                        SNAPSHOT_COLUMNS, srows)
    return plot


# -- entry point -----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="imexdwr", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment from a key=value config file")
    r.add_argument("config")
    c = sub.add_parser("compare", help="compare the results tables of two run directories")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--tol", type=float, default=0.0, help="maximum allowed relative difference")
    pd = sub.add_parser("plot-data", help="write plot-ready CSVs for a finished run")
    pd.add_argument("run_dir")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    if args.command == "run":
        try:
            cfg = load_config(args.config)
        except ConfigError as exc:
            print(f"invalid config: {exc}", file=sys.stderr)
            return 2
        try:
            out = run_experiment(cfg)
        except ConfigError as exc:
            print(f"invalid config: {exc}", file=sys.stderr)
            return 2
        except SolverError as exc:
            print(f"solver failure: {exc}", file=sys.stderr)
            return 3
        print(out)
        return 0
    if args.command == "compare":
        return compare_dirs(args.a, args.b, args.tol)
    try:
        print(emit_plot_data(args.run_dir))
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
