"""Built-in problems and the experiment drivers behind the CLI.

Problems
--------
``effectivity_problem``      Allen-Cahn, eps = 1, u = sin(pi x) sin(pi y) exp(-t) on (0,1)^2
``moving_source_problem``    heat, exponential peak moving clockwise on (0,1) x (0,2)
``ring_problem``             Allen-Cahn shrinking ring on (-1,1)^2, no forcing
``dual_consistency_problem`` 1D manufactured dual z = exp(-10 x^2 + sin t) on (-3,3)

The manufactured solutions do not satisfy homogeneous Neumann conditions.
The effectivity solution vanishes on the boundary and is solved in homogeneous
Dirichlet spaces by default (``boundary="dirichlet"``); ``boundary="flux"``
keeps the natural spaces and prescribes the exact outward flux ``du/dn``
instead. The moving source always uses the flux.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from .adaptive import AdaptiveConfig, AdaptiveResult, AdaptiveState, Solution, final_error_qoi, \
    run_adaptive, solve_and_estimate
from .assembly import field_values, l2_inner, quad_data
from .dual import DualPair, discretize_qoi, solve_backward
from .linalg import DEFAULT_SOLVER, SolverConfig
from .mesh import FeFunction, Mesh, overlay, space_for, uniform_mesh, uniform_refine
from .model import ALLEN_CAHN, HEAT, Problem, Qoi, psi_second
from .primal import TimeGrid, Trajectory, solve_forward, uniform_spaces

PI = math.pi


def box_flux(grad: Callable, box) -> Callable:
    """Outward normal derivative on the faces of an axis-aligned box from ``grad(x, t)``."""
    box = np.asarray(box, dtype=float).reshape(-1, 2)

    def g(x, t):
        gr = grad(x, t)
        out = np.zeros(len(x))
        for d, (lo, hi) in enumerate(box):
            out -= np.where(np.isclose(x[:, d], lo), gr[:, d], 0.0)
            out += np.where(np.isclose(x[:, d], hi), gr[:, d], 0.0)
        return out
    return g


# -- problems -----------------------------------------------------------------
EFFECTIVITY_BOX = ((0.0, 1.0), (0.0, 1.0))


def effectivity_problem(boundary: str = "dirichlet") -> Problem:
    def u(x, t):
        return np.sin(PI * x[:, 0]) * np.sin(PI * x[:, 1]) * np.exp(-t)

    def grad(x, t):
        e = np.exp(-t)
        return PI * e * np.stack([np.cos(PI * x[:, 0]) * np.sin(PI * x[:, 1]),
                                  np.sin(PI * x[:, 0]) * np.cos(PI * x[:, 1])], axis=1)

    flux = box_flux(grad, EFFECTIVITY_BOX) if boundary == "flux" else None
    if boundary not in ("flux", "dirichlet"):
        raise ValueError(f"unknown boundary treatment {boundary!r}")
    return Problem(ALLEN_CAHN, initial=lambda x: u(x, 0.0), epsilon=1.0, exact=u,
                   exact_dt=lambda x, t: -u(x, t), exact_laplacian=lambda x, t: -2 * PI ** 2 * u(x, t),
                   boundary_flux=flux, name="ac_effectivity")


MOVING_SOURCE_BOX = ((0.0, 1.0), (0.0, 2.0))


def _peak_offsets(x, t):
    a = x[:, 0] - 0.5 - 0.25 * np.sin(PI * t)
    b = x[:, 1] - 1.0 - 0.5 * np.cos(PI * t)
    return a, b


def moving_source_problem() -> Problem:
    def u(x, t):
        a, b = _peak_offsets(x, t)
        return np.exp(-100 * a * a - 100 * b * b)

    def u_t(x, t):
        a, b = _peak_offsets(x, t)
        return u(x, t) * (50 * PI * a * np.cos(PI * t) - 100 * PI * b * np.sin(PI * t))

    def lap(x, t):
        a, b = _peak_offsets(x, t)
        return u(x, t) * (40000 * (a * a + b * b) - 400)

    def grad(x, t):
        a, b = _peak_offsets(x, t)
        return -200 * u(x, t)[:, None] * np.stack([a, b], axis=1)

    return Problem(HEAT, initial=lambda x: u(x, 0.0), exact=u, exact_dt=u_t, exact_laplacian=lap,
                   boundary_flux=box_flux(grad, MOVING_SOURCE_BOX), name="heat_moving_source")


RING_BOX = ((-1.0, 1.0), (-1.0, 1.0))


def ring_initial(epsilon: float = 0.0625) -> Callable:
    s = math.sqrt(2.0) * epsilon

    def u0(x):
        r = np.sqrt(x[:, 0] ** 2 + x[:, 1] ** 2)
        return -np.tanh((r - 0.6) / s) + np.tanh((r - 0.15) / s) - 1.0
    return u0


def ring_problem(epsilon: float = 0.0625) -> Problem:
    return Problem(ALLEN_CAHN, initial=ring_initial(epsilon), epsilon=epsilon, name="ac_ring")


CONSISTENCY_BOX = (-3.0, 3.0)


@dataclass(frozen=True)
class ManufacturedDual:
    """A dual problem with known solution: linearization state, exact ``z`` and its QoI."""

    problem: Problem
    u_ref: Callable
    z: Callable
    qoi_at: Callable[[float], Qoi]

    def pairs(self, n: int) -> List[DualPair]:
        return [DualPair(self.u_ref, self.u_ref)] * n


def dual_consistency_problem(epsilon: float = 1.0) -> ManufacturedDual:
    """``z = exp(-10 x^2 + sin t)`` solving ``-z_t - z_xx + eps**-2 psi''(u_ref) z = q``.

    The linearization pair is ``u = u^ = u_ref = sin(x) / 2`` so that the
    mean-value coefficient reduces to ``psi''(u_ref)`` and stays in the
    quartic branch. The QoI has ``q`` as above and terminal weight ``z(T)``.
    """
    def u_ref(x):
        return 0.5 * np.sin(x[:, 0])

    def z(x, t):
        return np.exp(-10 * x[:, 0] ** 2 + np.sin(t))

    c = 1.0 / epsilon ** 2

    def q(x, t):
        xx = x[:, 0]
        return z(x, t) * (-np.cos(t) - (400 * xx * xx - 20) + c * psi_second(u_ref(x)))

    p = Problem(ALLEN_CAHN, initial=u_ref, epsilon=epsilon, name="dual_consistency")
    return ManufacturedDual(p, u_ref, z, lambda T: Qoi(terminal=lambda x: z(x, T), distributed=q))


# -- errors -------------------------------------------------------------------
def final_error_exact(p: Problem, order: int = 5) -> Callable[[Trajectory], float]:
    """``||u(T) - u_N^h||^2`` against the manufactured solution."""
    def err(traj: Trajectory) -> float:
        m = traj[-1].space.mesh
        x, w = quad_data(m, order)
        d = p.exact(x, traj.grid.T) - field_values(traj[-1], m, order)
        return float(np.sum(w * d * d))
    return err


def final_error_reference(reference: FeFunction, order: int = 3) -> Callable[[Trajectory], float]:
    """``||u_ref(T) - u_N^h||^2`` on the overlay of the two final meshes."""
    def err(traj: Trajectory) -> float:
        m = overlay(reference.space.mesh, traj[-1].space.mesh)
        x, w = quad_data(m, order)
        d = field_values(reference, m, order) - field_values(traj[-1], m, order)
        return float(np.sum(w * d * d))
    return err


# -- effectivity sweeps ---------------------------------------------------------
@dataclass
class LevelResult:
    level: int
    M: int
    N: int
    dofs: int
    true_error: float
    E_st: float
    E_s: float
    E_t: float
    Osc: float
    solution: Optional[Solution] = None

    @property
    def effectivity(self) -> float:
        return self.E_st / self.true_error

    @property
    def decomposition_defect(self) -> float:
        return abs(self.E_st - (self.E_s + self.E_t + self.Osc))

    def row(self) -> dict:
        return dict(level=self.level, M=self.M, N=self.N, dofs=self.dofs, true_error=self.true_error,
                    E_st=self.E_st, E_s=self.E_s, E_t=self.E_t, Osc=self.Osc, effectivity=self.effectivity)


def estimate_level(p: Problem, mesh: Mesh, grid: TimeGrid, true_error: Callable, level: int = 0,
                   dirichlet: bool = False, cfg: SolverConfig = DEFAULT_SOLVER, keep: bool = False) -> LevelResult:
    """Estimate the final-time error on one uniform space-time discretization."""
    space = space_for(mesh, dirichlet)
    sol = solve_and_estimate(p, grid, uniform_spaces(space, grid), final_error_qoi, cfg,
                             with_nodes=False, true_error=true_error)
    r = sol.report
    return LevelResult(level, mesh.n_cells, grid.N, int(np.sum(r.dofs)), float(r.true_error),
                       r.E_st, r.E_s, r.E_t, r.Osc, sol if keep else None)


def refinement_levels(mode: str, mesh: Mesh, grid: TimeGrid, levels: int):
    """``(mesh, grid)`` per level for uniform refinement in space, time or both."""
    if mode not in ("uniform_space", "uniform_time", "uniform_spacetime"):
        raise ValueError(f"unknown refinement mode {mode!r}")
    out = []
    for lev in range(levels):
        s = lev if mode != "uniform_time" else 0
        t = lev if mode != "uniform_space" else 0
        out.append((uniform_refine(mesh, s), grid.refined(t)))
    return out


def effectivity_sweep(p: Problem, mesh: Mesh, grid: TimeGrid, mode: str, levels: int,
                      dirichlet: bool = False, cfg: SolverConfig = DEFAULT_SOLVER,
                      on_level: Optional[Callable[[LevelResult], None]] = None) -> List[LevelResult]:
    err = final_error_exact(p)
    out = []
    for lev, (m, g) in enumerate(refinement_levels(mode, mesh, grid, levels)):
        res = estimate_level(p, m, g, err, lev, dirichlet, cfg)
        out.append(res)
        if on_level is not None:
            on_level(res)
    return out


# -- dual consistency -----------------------------------------------------------
@dataclass
class ConsistencyResult:
    N: int
    tau_max: float
    error_initial: float
    error_terminal: float


def dual_consistency_run(steps: Sequence[float], refinements: int, cells: int = 256,
                         cfg: SolverConfig = DEFAULT_SOLVER) -> List[ConsistencyResult]:
    """L2 errors of the backward IMEX dual against the manufactured ``z`` under dyadic step refinement.

    ``error_initial`` is measured at ``t = 0``, where the backward sweep ends;
    ``error_terminal`` at ``t = T``.
    """
    md = dual_consistency_problem()
    space = space_for(uniform_mesh(1, CONSISTENCY_BOX, cells))
    base = TimeGrid.from_steps(steps)
    out = []
    for lev in range(refinements + 1):
        grid = base.refined(lev)
        dq = discretize_qoi(md.qoi_at(grid.T), grid)
        z = solve_backward(md.problem, grid, uniform_spaces(space, grid), md.pairs(grid.N + 1), dq, cfg)
        e0 = _l2_error(z[0], lambda x: md.z(x, 0.0))
        eT = _l2_error(z[-1], lambda x: md.z(x, grid.T))
        out.append(ConsistencyResult(grid.N, float(np.max(grid.tau)), e0, eT))
    return out


def _l2_error(f: FeFunction, g: Callable, order: int = 5) -> float:
    m = f.space.mesh
    x, w = quad_data(m, order)
    d = g(x) - field_values(f, m, order)
    return float(np.sqrt(np.sum(w * d * d)))


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


# -- reference and adaptive runs ----------------------------------------------------
def reference_solution(p: Problem, mesh: Mesh, tau: float, T: float, cfg: SolverConfig = DEFAULT_SOLVER
                       ) -> FeFunction:
    """Final state of a uniform fine run (only the last state is kept)."""
    from .primal import imex_step
    from .assembly import l2_project
    from .model import time_averaged_flux, time_averaged_forcing
    space = space_for(mesh)
    n = int(round(T / tau))
    grid = TimeGrid.uniform(T, n)
    u = l2_project(p.initial, space, cfg)
    for k in range(n):
        ta, tb = grid.t[k], grid.t[k + 1]
        u = imex_step(p, u, space, tb - ta, time_averaged_forcing(p, ta, tb), cfg,
                      gbar=time_averaged_flux(p, ta, tb))
    return u


def adaptive_run(p: Problem, mesh: Mesh, grid: TimeGrid, cfg: AdaptiveConfig,
                 true_error: Optional[Callable] = None, out_dir: Optional[str] = None,
                 solver: SolverConfig = DEFAULT_SOLVER, callback=None) -> AdaptiveResult:
    """Final-time-error adaptivity from a uniform initial discretization."""
    return run_adaptive(p, final_error_qoi, cfg, AdaptiveState.uniform(grid, mesh), solver,
                        true_error=true_error, out_dir=out_dir, callback=callback)


def added_dofs_fraction(initial_dofs: Sequence[int], state: AdaptiveState, window: float = 0.2) -> float:
    """Share of added spatial dofs at time indices with ``t_k >= (1 - window) T``.

    Added dofs are counted per index against the initial per-index count,
    which is the same at every index for a uniform start.
    """
    base = np.asarray(initial_dofs)
    if np.ptp(base) != 0:
        raise ValueError("the initial mesh list must be uniform")
    dofs = np.array([s.dim for s in state.spaces]) - base[0]
    t = state.grid.t
    late = t >= (1.0 - window) * t[-1] - 1e-14
    total = dofs.sum()
    return float(dofs[late].sum() / total) if total > 0 else 0.0
