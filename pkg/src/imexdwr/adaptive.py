"""Duality-based space-time adaptivity.

Each outer iteration runs the coarse forward solve, the enriched half-step
solve, the half-step dual and the estimator. Every index whose space-time
indicator reaches ``theta * max`` is then either bisected in time (when the
temporal indicator dominates) or has its mesh refined by node marking.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from .assembly import DEFAULT_CONTEXT, FormContext
from .dual import discretize_qoi, half_step_pairs, solve_backward
from .estimator import EstimateReport, estimate_all, write_indicator_csv
from .linalg import DEFAULT_SOLVER, SolverConfig, SolverError
from .mesh import FeSpace, Mesh, refine, space_for
from .model import Problem, Qoi
from .primal import EnrichedSolution, TimeGrid, Trajectory, solve_forward, solve_forward_enriched

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITERATIONS = "max_iterations"
MAX_DOFS = "max_dofs"
MAX_STEPS = "max_steps"
SOLVER_FAILURE = "solver_failure"

QoiLike = Union[Qoi, Callable[[Trajectory, EnrichedSolution], Qoi]]


@dataclass(frozen=True)
class AdaptiveConfig:
    """Marking fractions, stopping tolerance and safety caps (None disables a cap)."""

    tol: float
    theta: float = 0.8
    lam: float = 0.8
    max_outer_iterations: int = 20
    max_dofs: Optional[int] = None
    max_steps: Optional[int] = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        for name in ("theta", "lam"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.max_outer_iterations < 1:
            raise ValueError("max_outer_iterations must be at least 1")


@dataclass
class AdaptiveState:
    """Time grid, one mesh per time index and the per-iteration history."""

    grid: TimeGrid
    meshes: List[Mesh]
    dirichlet: bool = False
    iteration: int = 0
    history: List[dict] = field(default_factory=list)

    def __post_init__(self):
        if len(self.meshes) != self.grid.N + 1:
            raise ValueError("one mesh per time index is required")
        roots = {m.root for m in self.meshes}
        if len(roots) != 1:
            raise ValueError("all meshes must share one root")

    @classmethod
    def uniform(cls, grid: TimeGrid, mesh: Mesh, dirichlet: bool = False) -> "AdaptiveState":
        return cls(grid, [mesh] * (grid.N + 1), dirichlet)

    @property
    def spaces(self) -> List[FeSpace]:
        return [space_for(m, self.dirichlet) for m in self.meshes]

    @property
    def total_dofs(self) -> int:
        return int(sum(s.dim for s in self.spaces))


@dataclass
class Solution:
    """Everything one estimate produces."""

    report: EstimateReport
    coarse: Trajectory
    enriched: EnrichedSolution
    dual: Trajectory
    qoi: Qoi


@dataclass
class AdaptiveResult:
    state: AdaptiveState
    status: str
    solution: Optional[Solution]

    @property
    def report(self) -> Optional[EstimateReport]:
        return None if self.solution is None else self.solution.report


def final_error_qoi(coarse: Trajectory, enriched: EnrichedSolution) -> Qoi:
    """``qbar = u~_N - u_N^h``: the computable surrogate of the final-time error weight."""
    from .assembly import Combination
    return Qoi(terminal=Combination([(1.0, enriched.fine_half[-1]), (-1.0, coarse[-1])]))


def solve_and_estimate(p: Problem, grid: TimeGrid, spaces: Sequence[FeSpace], q: QoiLike,
                       cfg: SolverConfig = DEFAULT_SOLVER, ctx: FormContext = DEFAULT_CONTEXT,
                       with_nodes: bool = True, true_error: Optional[Callable[[Trajectory], float]] = None
                       ) -> Solution:
    """Coarse solve, enriched half-step solve, half-step dual and all estimates."""
    coarse = solve_forward(p, grid, spaces, cfg, ctx)
    enriched = solve_forward_enriched(p, grid, spaces, cfg, ctx)
    qoi = q if isinstance(q, Qoi) else q(coarse, enriched)
    half = grid.halved()
    pairs = half_step_pairs(enriched.fine_half, coarse) if p.nonlinear else None
    z = solve_backward(p, half, enriched.fine_half.spaces, pairs, discretize_qoi(qoi, half), cfg, ctx)
    err = None if true_error is None else float(true_error(coarse))
    report = estimate_all(p, coarse, z, enriched.fine_half[0], ctx, with_nodes=with_nodes, true_error=err)
    return Solution(report, coarse, enriched, z, qoi)


# -- marking ----------------------------------------------------------------
def mark_time_steps(report_or_indicators, theta: float) -> List[int]:
    """Indices ``k`` with ``E^k_hT >= theta * max_j E^j_hT`` (index 0 included)."""
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    eta = np.abs(np.asarray(getattr(report_or_indicators, "E_hT", report_or_indicators), dtype=float))
    if eta.size == 0:
        return []
    return [int(k) for k in np.nonzero(eta >= theta * eta.max())[0]]


def mark_nodes(indicators, lam: float) -> List[int]:
    """Maximum strategy on node indicators: ``{i : eta_i >= lam * max eta}``."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    eta = np.abs(np.asarray(indicators, dtype=float))
    if eta.size == 0:
        return []
    return [int(i) for i in np.nonzero(eta >= lam * eta.max())[0]]


def nodes_to_cells(mesh: Mesh, space: FeSpace, nodes: Sequence[int]) -> np.ndarray:
    """Leaves of ``mesh`` intersecting the supports of the given dofs of ``space``.

    The dofs live on the enriched space over ``mesh``, so their supports are
    covered by the coarse leaves whose closure contains the node.
    """
    if len(nodes) == 0:
        return np.zeros(0, dtype=np.int64)
    return mesh.cells_touching(space.node_coords[np.asarray(nodes)])


def refine_by_nodes(mesh: Mesh, space: FeSpace, indicators, lam: float) -> Mesh:
    return refine(mesh, nodes_to_cells(mesh, space, mark_nodes(indicators, lam)))


def bisect_step(state: AdaptiveState, k: int) -> AdaptiveState:
    """Split interval ``k`` (1-based); both halves carry the mesh of index ``k``."""
    grid = state.grid.bisect(k)
    meshes = list(state.meshes)
    meshes.insert(k, state.meshes[k])
    return AdaptiveState(grid, meshes, state.dirichlet, state.iteration, state.history)


def refine_state(state: AdaptiveState, report: EstimateReport, theta: float, lam: float):
    """One mark-and-refine sweep. Returns the new state and the log of actions."""
    marked = mark_time_steps(report, theta)
    threshold = theta * float(np.max(report.E_hT))
    actions = []
    meshes = list(state.meshes)
    for k in marked:
        assert report.E_hT[k] >= threshold
        if k == 0 or report.E_tau[k] < report.E_h[k]:
            new = refine_by_nodes(meshes[k], report.node_spaces[k], report.node_indicators[k], lam)
            actions.append(("space", k, meshes[k].n_cells, new.n_cells))
            meshes[k] = new
    out = AdaptiveState(state.grid, meshes, state.dirichlet, state.iteration, state.history)
    for k in sorted(marked, reverse=True):
        if k > 0 and report.E_tau[k] >= report.E_h[k]:
            out = bisect_step(out, k)
            actions.append(("time", k))
    return out, actions


# -- driver ------------------------------------------------------------------
def _dump(out_dir, it, report: EstimateReport):
    if out_dir is None:
        return
    os.makedirs(out_dir, exist_ok=True)
    write_indicator_csv(report, os.path.join(out_dir, f"indicators_iter{it:03d}.csv"))


def run_adaptive(p: Problem, q: QoiLike, cfg: AdaptiveConfig, state: AdaptiveState,
                 solver: SolverConfig = DEFAULT_SOLVER, ctx: FormContext = DEFAULT_CONTEXT,
                 true_error: Optional[Callable[[Trajectory], float]] = None, out_dir: Optional[str] = None,
                 callback: Optional[Callable[[int, AdaptiveState, Solution], None]] = None) -> AdaptiveResult:
    """Estimate, mark and refine until ``max_k E^k_hT <= tol`` or a cap is hit.

    ``q`` is a fixed QoI or a builder called with the coarse and enriched
    trajectories of each iteration. The history records, per iteration, the
    step count, total dofs, ``Max``, the estimates and the true error when a
    ``true_error`` callback is given.
    """
    solution = None
    status = MAX_ITERATIONS
    for it in range(cfg.max_outer_iterations):
        state.iteration = it
        if cfg.max_dofs is not None and state.total_dofs > cfg.max_dofs:
            status = MAX_DOFS
            break
        if cfg.max_steps is not None and state.grid.N > cfg.max_steps:
            status = MAX_STEPS
            break
        try:
            solution = solve_and_estimate(p, state.grid, state.spaces, q, solver, ctx, True, true_error)
        except SolverError as exc:
            log.error("solver failure in iteration %d: %s", it, exc)
            status = SOLVER_FAILURE
            break
        rep = solution.report
        peak = float(np.max(rep.E_hT))
        state.history.append(dict(iteration=it, N=state.grid.N, total_dofs=state.total_dofs, Max=peak,
                                  E_st=rep.E_st, E_s=rep.E_s, E_t=rep.E_t, Osc=rep.Osc,
                                  true_error=rep.true_error))
        _dump(out_dir, it, rep)
        if callback is not None:
            callback(it, state, solution)
        log.info("iteration %d: N=%d dofs=%d Max=%.3e E_st=%.3e", it, state.grid.N, state.total_dofs,
                 peak, rep.E_st)
        if peak <= cfg.tol:
            status = CONVERGED
            break
        if it == cfg.max_outer_iterations - 1:
            break
        history = state.history
        state, actions = refine_state(state, rep, cfg.theta, cfg.lam)
        state.history = history
        log.debug("iteration %d actions: %s", it, actions)
    return AdaptiveResult(state, status, solution)
