"""Time-discrete QoI weights and the backward IMEX dual scheme.

With the linearization pairs ``(u_k, u_k^h)`` and ``W_k`` the mass matrix
weighted by ``psi_e'^s(u_k, u_k^h)``, the dual sweep is

    terminal   (M + tau_N K + 2 tau_N/eps**2 M) z_N = tau_N (q_N, .) + (qbar, .)
    interior   (M/tau_k + K + 2/eps**2 M) z_k = M z_{k+1}/tau_k + (q_k, .)
                                              + (tau_{k+1}/tau_k) eps**-2 W_k z_{k+1}
    initial    M z_0 = M z_1 + tau_1 (q_0, .) + tau_1 eps**-2 W_0 z_1

The step-ratio factor on the explicit term is what makes the discrete error
representation exact for the IMEX primal scheme on nonuniform grids.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from .assembly import DEFAULT_CONTEXT, Combination, FormContext, field_values, gauss_rule, \
    integration_mesh, load_from_density, load_vector, mass_matrix, stiffness_matrix
from .linalg import DEFAULT_SOLVER, SolverConfig, cg_solve
from .mesh import FeFunction, FeSpace
from .model import Problem, Qoi, psi_e_mean
from .primal import TimeGrid, Trajectory, step_matrix


@dataclass
class DiscreteQoi:
    """Weights ``q_k`` (closures or None) per node and the terminal weight ``qbar``.

    ``tau_1 (q_0, w_0) + sum_k tau_k (q_k, w_k) + (qbar, w_N)`` equals ``Q``
    applied to the piecewise-linear interpolant of ``w``.
    """

    grid: TimeGrid
    q: List[Optional[Callable]]
    qbar: object = None

    def weight(self, k: int) -> float:
        """Scaling ``tau_k`` of node ``k`` (``tau_1`` for ``k = 0``)."""
        tau = self.grid.tau
        return float(tau[0] if k == 0 else tau[k - 1])

    def apply(self, w: Sequence, order: int = 3) -> float:
        """The discrete functional evaluated on nodal data ``w_0..w_N``."""
        from .assembly import l2_inner
        total = 0.0
        for k, qk in enumerate(self.q):
            if qk is not None:
                total += self.weight(k) * l2_inner(qk, w[k], order=order)
        if self.qbar is not None:
            total += l2_inner(self.qbar, w[-1], order=order)
        return total


def _hat_weighted(q, nodes):
    def qk(x):
        return sum(c * q(x, t) for t, c in nodes)
    return qk


def discretize_qoi(qoi: Qoi, grid: TimeGrid, order: int = 5) -> DiscreteQoi:
    """``q_k = (1/tau_k) integral q N_k dt`` with Gauss quadrature on each interval."""
    N = grid.N
    if qoi.distributed is None:
        return DiscreteQoi(grid, [None] * (N + 1), qoi.terminal)
    rule = gauss_rule(order, 1)
    s, w = rule.points[:, 0], rule.weights
    tau = grid.tau
    nodes = [[] for _ in range(N + 1)]
    for i in range(N):
        ta = grid.t[i]
        for sj, wj in zip(s, w):
            t = ta + sj * tau[i]
            nodes[i].append((t, wj * tau[i] * (1.0 - sj)))  # N_i falls on (t_i, t_{i+1})
            nodes[i + 1].append((t, wj * tau[i] * sj))  # N_{i+1} rises
    out = []
    for k in range(N + 1):
        scale = tau[0] if k == 0 else tau[k - 1]
        out.append(_hat_weighted(qoi.distributed, [(t, c / scale) for t, c in nodes[k]]))
    return DiscreteQoi(grid, out, qoi.terminal)


@dataclass
class DualPair:
    """The two primal states ``(u_k, u_k^h)`` entering the mean-value linearization."""

    fine: object
    coarse: object


def _explicit_density(p: Problem, pair: Optional[DualPair], z_next: FeFunction, m, order, factor):
    """``z_next * (1 + factor * eps**-2 * psi_e'^s(pair))`` at quadrature points of ``m``."""
    z = field_values(z_next, m, order)
    if not p.nonlinear or factor == 0.0:
        return z
    if pair is None:
        raise ValueError("Allen-Cahn duals need linearization pairs")
    we = psi_e_mean(field_values(pair.fine, m, order), field_values(pair.coarse, m, order))
    return z * (1.0 + factor * p.inv_eps2 * we)


def _pair_objs(pair):
    return [] if pair is None else [pair.fine, pair.coarse]


def _q_load(space, qk, order):
    return np.zeros(space.dim) if qk is None else load_vector(space, qk, order)


def dual_terminal_solve(p: Problem, pair_N: Optional[DualPair], dq: DiscreteQoi, space: FeSpace,
                        cfg: SolverConfig = DEFAULT_SOLVER, ctx: FormContext = DEFAULT_CONTEXT) -> FeFunction:
    tau = float(dq.grid.tau[-1])
    order = ctx.space_order
    M = mass_matrix(space, order)
    a = (1.0 + 2.0 * tau * p.inv_eps2) * M + tau * stiffness_matrix(space, order)
    b = tau * _q_load(space, dq.q[-1], order)
    if dq.qbar is not None:
        b = b + load_vector(space, dq.qbar, order)
    return FeFunction(space, cg_solve(a, b, cfg))


def dual_interior_step(p: Problem, pair_k: Optional[DualPair], z_next: FeFunction, tau_k: float,
                       tau_next: float, q_k, space_k: FeSpace, cfg: SolverConfig = DEFAULT_SOLVER,
                       ctx: FormContext = DEFAULT_CONTEXT) -> FeFunction:
    if not (tau_k > 0 and tau_next > 0):
        raise ValueError("time steps must be positive")
    order = ctx.space_order
    m = integration_mesh(space_k, z_next, *_pair_objs(pair_k))
    dens = _explicit_density(p, pair_k, z_next, m, order, tau_next) / tau_k
    b = load_from_density(space_k, m, dens, order=order) + _q_load(space_k, q_k, order)
    return FeFunction(space_k, cg_solve(step_matrix(p, space_k, tau_k, ctx), b, cfg))


def dual_initial_step(p: Problem, pair_0: Optional[DualPair], z_1: FeFunction, tau_1: float, q_0,
                      space_0: FeSpace, cfg: SolverConfig = DEFAULT_SOLVER,
                      ctx: FormContext = DEFAULT_CONTEXT) -> FeFunction:
    if not tau_1 > 0:
        raise ValueError("time step must be positive")
    order = ctx.space_order
    m = integration_mesh(space_0, z_1, *_pair_objs(pair_0))
    dens = _explicit_density(p, pair_0, z_1, m, order, tau_1)
    b = load_from_density(space_0, m, dens, order=order) + tau_1 * _q_load(space_0, q_0, order)
    return FeFunction(space_0, cg_solve(mass_matrix(space_0, order), b, cfg))


def solve_backward(p: Problem, grid: TimeGrid, spaces: Sequence[FeSpace], pairs: Optional[Sequence[DualPair]],
                   dq: DiscreteQoi, cfg: SolverConfig = DEFAULT_SOLVER, ctx: FormContext = DEFAULT_CONTEXT,
                   tag: str = "dual") -> Trajectory:
    """Terminal solve, interior steps ``k = N-1..1`` and the initial mass solve."""
    N = grid.N
    if len(spaces) != N + 1:
        raise ValueError(f"need {N + 1} dual spaces, got {len(spaces)}")
    if pairs is None:
        if p.nonlinear:
            raise ValueError("Allen-Cahn duals need linearization pairs")
        pairs = [None] * (N + 1)
    if len(pairs) != N + 1:
        raise ValueError("pairs must cover indices 0..N")
    tau = grid.tau
    z = [None] * (N + 1)
    z[N] = dual_terminal_solve(p, pairs[N], dq, spaces[N], cfg, ctx)
    for k in range(N - 1, 0, -1):
        z[k] = dual_interior_step(p, pairs[k], z[k + 1], tau[k - 1], tau[k], dq.q[k], spaces[k], cfg, ctx)
    z[0] = dual_initial_step(p, pairs[0], z[1], tau[0], dq.q[0], spaces[0], cfg, ctx)
    return Trajectory(grid, z, tag)


def half_step_pairs(fine_half: Trajectory, coarse: Trajectory) -> List[DualPair]:
    """Pairs ``(u~_l, I u_{tau h}(t_l))`` on the halved grid; half nodes use the coarse average."""
    out = []
    for l, uf in enumerate(fine_half.functions):
        k, odd = divmod(l, 2)
        uc = Combination([(0.5, coarse[k]), (0.5, coarse[k + 1])]) if odd else coarse[k]
        out.append(DualPair(uf, uc))
    return out


class DualReconstruction:
    """Piecewise-constant ``z^(t)`` built from the half-step dual ``z~``.

    With ``pairing="right"`` the half-interval ``(t_l, t_{l+1/2}]`` carries
    ``z~_{l+1/2}`` and ``(t_{l+1/2}, t_{l+1}]`` carries ``z~_{l+1}``. With
    ``pairing="left"`` they carry ``z~_l`` and ``z~_{l+1/2}`` on the left-closed
    halves. In both cases ``z^(0) = z~_0``.
    """

    def __init__(self, z_half: Trajectory, grid: TimeGrid, pairing: str = "right"):
        if z_half.grid.N != 2 * grid.N:
            raise ValueError("the dual must live on the halved grid")
        if pairing not in ("left", "right"):
            raise ValueError(f"pairing must be 'left' or 'right', got {pairing!r}")
        self.z_half = z_half
        self.grid = grid
        self.pairing = pairing

    def piece(self, k: int, second_half: bool) -> FeFunction:
        """Value on the first or second half of interval ``(t_k, t_{k+1})`` (0-based)."""
        shift = 1 if self.pairing == "right" else 0
        return self.z_half[2 * k + shift + (1 if second_half else 0)]

    def __call__(self, t: float) -> FeFunction:
        hg = self.z_half.grid.t
        if t < hg[0] or t > hg[-1]:
            raise ValueError(f"t={t} outside [{hg[0]}, {hg[-1]}]")
        if self.pairing == "right":
            return self.z_half[int(np.searchsorted(hg, t, side="left"))]
        l = int(np.searchsorted(hg, t, side="right")) - 1
        return self.z_half[min(l, len(hg) - 2)]


def reconstruct_dual(z_half: Trajectory, grid: Optional[TimeGrid] = None,
                     pairing: str = "right") -> DualReconstruction:
    if grid is None:
        grid = TimeGrid(z_half.grid.t[0::2])
    return DualReconstruction(z_half, grid, pairing)
