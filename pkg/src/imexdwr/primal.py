"""Forward IMEX time stepping.

One step solves the linear SPD system

    (M/tau + K + 2/eps**2 M) u_{k+1} = (u_k/tau, .) + (fbar, .) + eps**-2 (psi_e'(u_k), .)

where all right-hand-side integrals are assembled on the overlay of the two
step meshes. For the heat equation the ``eps`` terms are absent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .assembly import DEFAULT_CONTEXT, FormContext, boundary_load, boundary_values, field_values, \
    integration_mesh, l2_project, load_from_density, mass_matrix, stiffness_matrix
from .linalg import DEFAULT_SOLVER, SolverConfig, SolverError, cg_solve
from .mesh import FeFunction, FeSpace, space_for, uniform_refine
from .model import Problem, psi_e_prime, time_averaged_flux, time_averaged_forcing


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing time nodes ``0 = t_0 < ... < t_N = T``."""

    t: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if t.ndim != 1 or len(t) < 2:
            raise ValueError("a time grid needs at least two nodes")
        if np.any(np.diff(t) <= 0):
            raise ValueError("time nodes must be strictly increasing")
        t = t.copy()
        t.setflags(write=False)
        object.__setattr__(self, "t", t)

    @classmethod
    def uniform(cls, T: float, N: int, t0: float = 0.0) -> "TimeGrid":
        return cls(np.linspace(t0, T, N + 1))

    @classmethod
    def from_steps(cls, steps: Sequence[float], t0: float = 0.0) -> "TimeGrid":
        return cls(t0 + np.concatenate([[0.0], np.cumsum(np.asarray(steps, dtype=float))]))

    @property
    def N(self) -> int:
        return len(self.t) - 1

    @property
    def T(self) -> float:
        return float(self.t[-1])

    @property
    def tau(self) -> np.ndarray:
        """``tau[k]`` is the length of interval ``(t_k, t_{k+1})``."""
        return np.diff(self.t)

    def halved(self) -> "TimeGrid":
        mid = 0.5 * (self.t[:-1] + self.t[1:])
        out = np.empty(2 * self.N + 1)
        out[0::2] = self.t
        out[1::2] = mid
        return TimeGrid(out)

    def refined(self, times: int = 1) -> "TimeGrid":
        g = self
        for _ in range(times):
            g = g.halved()
        return g

    def bisect(self, k: int) -> "TimeGrid":
        """Split interval ``(t_{k-1}, t_k)`` at its midpoint (1-based, as in the marking)."""
        if not 1 <= k <= self.N:
            raise IndexError(f"interval {k} outside 1..{self.N}")
        mid = 0.5 * (self.t[k - 1] + self.t[k])
        return TimeGrid(np.insert(self.t, k, mid))


@dataclass
class Trajectory:
    grid: TimeGrid
    functions: List[FeFunction]
    tag: str = "coarse"

    def __post_init__(self):
        if len(self.functions) != self.grid.N + 1:
            raise ValueError("one function per time node is required")

    @property
    def spaces(self) -> List[FeSpace]:
        return [f.space for f in self.functions]

    @property
    def dofs(self) -> np.ndarray:
        return np.array([f.space.dim for f in self.functions])

    def __getitem__(self, k):
        return self.functions[k]

    def __len__(self):
        return len(self.functions)


def step_matrix(p: Problem, space: FeSpace, tau: float, ctx: FormContext = DEFAULT_CONTEXT):
    """``M/tau + K + 2/eps**2 M``; shared by the primal steps and the interior dual steps."""
    key = ("step", float(tau), p.kind, p.inv_eps2, ctx.space_order)
    a = space._cache.get(key)
    if a is None:
        M = mass_matrix(space, ctx.space_order)
        K = stiffness_matrix(space, ctx.space_order)
        a = (1.0 / tau + 2.0 * p.inv_eps2) * M + K
        space._cache[key] = a
    return a


def imex_step(p: Problem, u_prev: FeFunction, space_next: FeSpace, tau: float, fbar=None,
              cfg: SolverConfig = DEFAULT_SOLVER, ctx: FormContext = DEFAULT_CONTEXT, gbar=None) -> FeFunction:
    """Advance ``u_prev`` by one IMEX step of length ``tau`` into ``space_next``.

    ``fbar`` and ``gbar`` are the time-averaged forcing and boundary flux.
    """
    if not tau > 0:
        raise ValueError("time step must be positive")
    order = ctx.space_order
    m = integration_mesh(space_next, u_prev)
    u = field_values(u_prev, m, order)
    dens = u / tau
    if p.nonlinear:
        dens = dens + p.inv_eps2 * psi_e_prime(u)
    if fbar is not None:
        dens = dens + field_values(fbar, m, order)
    if not np.all(np.isfinite(dens)):
        raise SolverError("NaN in right-hand side of the IMEX step")
    b = load_from_density(space_next, m, dens, order=order)
    if gbar is not None:
        b = b + boundary_load(space_next, m, boundary_values(gbar, m, order=order), order)
    return FeFunction(space_next, cg_solve(step_matrix(p, space_next, tau, ctx), b, cfg))


def solve_forward(p: Problem, grid: TimeGrid, spaces: Sequence[FeSpace], cfg: SolverConfig = DEFAULT_SOLVER,
                  ctx: FormContext = DEFAULT_CONTEXT, tag: str = "coarse") -> Trajectory:
    """u_0 by L2 projection, then one IMEX step per interval."""
    if len(spaces) != grid.N + 1:
        raise ValueError(f"need {grid.N + 1} spaces, got {len(spaces)}")
    u = l2_project(p.initial, spaces[0], cfg, ctx.space_order)
    out = [u]
    for k in range(grid.N):
        ta, tb = grid.t[k], grid.t[k + 1]
        fbar = time_averaged_forcing(p, ta, tb)
        gbar = time_averaged_flux(p, ta, tb)
        u = imex_step(p, u, spaces[k + 1], tb - ta, fbar, cfg, ctx, gbar)
        out.append(u)
    return Trajectory(grid, out, tag)


def enriched_spaces(coarse: Sequence[FeSpace]) -> List[FeSpace]:
    """Per-index fine spaces ``F_k`` built by one uniform refinement of each coarse mesh."""
    return [space_for(uniform_refine(s.mesh), s.dirichlet) for s in coarse]


def half_step_spaces(fine: Sequence[FeSpace]) -> List[FeSpace]:
    """Spaces on the halved grid: ``[F_0, F_1, F_1, F_2, F_2, ...]`` (the half node uses the next space)."""
    out = [fine[0]]
    for s in fine[1:]:
        out.extend([s, s])
    return out


@dataclass
class EnrichedSolution:
    fine_half: Trajectory
    fine_concurrent: Trajectory
    fine_spaces: List[FeSpace] = field(default_factory=list)


def solve_forward_enriched(p: Problem, grid: TimeGrid, coarse_spaces: Sequence[FeSpace],
                           cfg: SolverConfig = DEFAULT_SOLVER, ctx: FormContext = DEFAULT_CONTEXT
                           ) -> EnrichedSolution:
    """Half-step solve in the enriched spaces and its restriction to whole indices."""
    fine = enriched_spaces(coarse_spaces)
    half = solve_forward(p, grid.halved(), half_step_spaces(fine), cfg, ctx, tag="fine_half_steps")
    conc = Trajectory(grid, half.functions[0::2], tag="fine_same_steps")
    return EnrichedSolution(half, conc, fine)


def uniform_spaces(space: FeSpace, grid: TimeGrid) -> List[FeSpace]:
    return [space] * (grid.N + 1)


def fine_same_steps(p: Problem, grid: TimeGrid, coarse_spaces: Sequence[FeSpace],
                    cfg: SolverConfig = DEFAULT_SOLVER, ctx: FormContext = DEFAULT_CONTEXT) -> Trajectory:
    """Enriched-space solve on the coarse grid itself (no reduced-cost identification)."""
    return solve_forward(p, grid, enriched_spaces(coarse_spaces), cfg, ctx, tag="fine_same_steps")

