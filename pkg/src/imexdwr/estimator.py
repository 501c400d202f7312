"""Residuals, computable error estimates and refinement indicators.

For the coarse trajectory on interval ``(t_k, t_{k+1})`` with
``du = (u_{k+1} - u_k) / tau`` and ``Iu`` the linear interpolant in time,
every residual is a functional ``w -> sum_q w_q (a w + g . grad w)`` with

    R_PDE(t)  a = f(t) - du - eps**-2 psi'(Iu(t))                           g = -grad Iu(t)
    r_h       a = fbar - du - eps**-2 psi_c'(u_{k+1}) + eps**-2 psi_e'(u_k)  g = -grad u_{k+1}
    r_tau(t)  a = -eps**-2 psi'(Iu) + eps**-2 psi_c'(u_{k+1}) - eps**-2 psi_e'(u_k)
                                                                            g = grad u_{k+1} - grad Iu
    r_f(t)    a = f(t) - fbar                                               g = 0

plus boundary densities ``g_N(t)`` (R_PDE), its interval mean (r_h) and their
difference (r_f) when a Neumann flux ``g_N`` is prescribed. Then
``R_PDE = r_h + r_tau + r_f`` pointwise in time. All estimates below
share one quadrature (3-point Gauss per half interval by default), which makes
``E_st = E_s + E_t + Osc`` an identity up to rounding.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .assembly import DEFAULT_CONTEXT, Combination, FormContext, Pointwise, boundary_field_values, \
    boundary_load, boundary_quad_data, boundary_values, field_gradients, field_values, integration_mesh, \
    l2_inner, load_from_density, load_vector, quad_data, time_nodes
from .mesh import FeFunction, FeSpace
from .model import Problem, psi_c_prime, psi_e_prime, psi_prime, time_averaged_flux, time_averaged_forcing
from .primal import TimeGrid, Trajectory
from .dual import reconstruct_dual


class StepResiduals:
    """Residual functionals of the coarse solution on one interval ``(t_a, t_b)``.

    ``u_prev`` and ``u_next`` are the coarse states at the interval ends. All
    functionals are evaluated on the overlay of the states, the test function
    and an optional extra mesh. Each density is a triple ``(a, g, b)``: volume
    density, gradient density and boundary density (None when absent).
    """

    def __init__(self, p: Problem, u_prev: FeFunction, u_next: FeFunction, t_a: float, t_b: float,
                 ctx: FormContext = DEFAULT_CONTEXT):
        if not t_b > t_a:
            raise ValueError("empty interval")
        self.p = p
        self.u_prev = u_prev
        self.u_next = u_next
        self.t_a, self.t_b = float(t_a), float(t_b)
        self.tau = self.t_b - self.t_a
        self.ctx = ctx
        self.fbar = time_averaged_forcing(p, t_a, t_b)
        self.gbar = time_averaged_flux(p, t_a, t_b)
        self._mesh_key = None
        self._data = None

    # -- quadrature-point data ------------------------------------------
    def mesh_for(self, *objs):
        return integration_mesh(self.u_prev, self.u_next, *objs)

    def data(self, mesh):
        if self._mesh_key == mesh.key:
            return self._data
        o = self.ctx.space_order
        x, w = quad_data(mesh, o)
        u0 = field_values(self.u_prev, mesh, o)
        u1 = field_values(self.u_next, mesh, o)
        d = dict(mesh=mesh, x=x, w=w, u0=u0, u1=u1,
                 g0=field_gradients(self.u_prev, mesh, o), g1=field_gradients(self.u_next, mesh, o),
                 fbar=np.zeros_like(u0) if self.fbar is None else field_values(self.fbar, mesh, o))
        d["du"] = (u1 - u0) / self.tau
        c = self.p.inv_eps2
        d["split"] = c * (psi_c_prime(u1) - psi_e_prime(u0)) if self.p.nonlinear else np.zeros_like(u0)
        if self.p.boundary_flux is not None:
            d["bx"], d["bw"], _ = boundary_quad_data(mesh, o)
            d["gbar"] = boundary_values(self.gbar, mesh, order=o)
        self._mesh_key, self._data = mesh.key, d
        return d

    def forcing(self, d, t):
        if self.p.forcing is None:
            return np.zeros_like(d["u0"])
        return np.broadcast_to(np.asarray(self.p.forcing(d["x"], t), dtype=float), d["u0"].shape)

    def flux(self, d, t):
        if self.p.boundary_flux is None:
            return None
        return np.broadcast_to(np.asarray(self.p.boundary_flux(d["bx"], t), dtype=float), d["bw"].shape)

    def interp(self, d, t):
        s = (t - self.t_a) / self.tau
        return (1 - s) * d["u0"] + s * d["u1"], (1 - s) * d["g0"] + s * d["g1"]

    # -- densities --------------------------------------------------------
    def spatial_density(self, d):
        return d["fbar"] - d["du"] - d["split"], -d["g1"], d.get("gbar")

    def pde_density(self, d, t):
        iu, gi = self.interp(d, t)
        a = self.forcing(d, t) - d["du"]
        if self.p.nonlinear:
            a = a - self.p.inv_eps2 * psi_prime(iu)
        return a, -gi, self.flux(d, t)

    def temporal_density(self, d, t):
        iu, gi = self.interp(d, t)
        a = d["split"].copy()
        if self.p.nonlinear:
            a = a - self.p.inv_eps2 * psi_prime(iu)
        return a, d["g1"] - gi, None

    def oscillation_density(self, d, t):
        gt = self.flux(d, t)
        return self.forcing(d, t) - d["fbar"], None, None if gt is None else gt - d["gbar"]

    # -- functionals ------------------------------------------------------
    def test_data(self, w, d):
        """Values, gradients and boundary values of a test field on the data mesh."""
        m, o = d["mesh"], self.ctx.space_order
        bv = boundary_field_values(w, m, o) if "bw" in d else None
        return field_values(w, m, o), field_gradients(w, m, o), bv

    @staticmethod
    def pair(d, dens, test):
        a, g, b = dens
        v, gv, bv = test
        out = np.sum(d["w"] * a * v)
        if g is not None:
            out += np.sum(d["w"] * np.sum(g * gv, axis=1))
        if b is not None:
            out += np.sum(d["bw"] * b * bv)
        return float(out)

    def _apply(self, dens, w, mesh=None):
        d = self.data(mesh if mesh is not None else self.mesh_for(w))
        return self.pair(d, dens(d), self.test_data(w, d))

    def spatial(self, w, mesh=None):
        return self._apply(self.spatial_density, w, mesh)

    def pde(self, t, w, mesh=None):
        return self._apply(lambda d: self.pde_density(d, t), w, mesh)

    def temporal(self, t, w, mesh=None):
        return self._apply(lambda d: self.temporal_density(d, t), w, mesh)

    def oscillation(self, t, w, mesh=None):
        return self._apply(lambda d: self.oscillation_density(d, t), w, mesh)

    def spatial_vector(self, space: FeSpace):
        """``<r_h, phi_i>`` for every basis function of ``space``."""
        m = self.mesh_for(space)
        d = self.data(m)
        a, g, b = self.spatial_density(d)
        o = self.ctx.space_order
        vec = load_from_density(space, m, a, g, order=o)
        if b is not None:
            vec = vec + boundary_load(space, m, b, o)
        return vec


def step_residuals(p: Problem, coarse: Trajectory, k: int, ctx: FormContext = DEFAULT_CONTEXT) -> StepResiduals:
    """Residuals of interval ``(t_{k-1}, t_k)``, ``1 <= k <= N``."""
    t = coarse.grid.t
    return StepResiduals(p, coarse[k - 1], coarse[k], t[k - 1], t[k], ctx)


def spatial_residual_apply(p: Problem, k: int, coarse: Trajectory, w, ctx: FormContext = DEFAULT_CONTEXT) -> float:
    """``<r_h^k, w>`` for the step ending at index ``k``."""
    return step_residuals(p, coarse, k, ctx).spatial(w)


# -- hierarchical surplus -----------------------------------------------
def surplus(z: FeFunction, coarse: FeSpace):
    """Hierarchical surplus of ``z`` over ``coarse`` and the mask of new (fine-only) nodes."""
    fine = z.space
    cz = FeFunction(coarse, z.evaluate(coarse.node_coords))
    s = z.coefficients - cz.evaluate(fine.node_coords)
    fkeys = fine.vertex_keys[fine.free_vertices]
    ckeys = coarse.vertex_keys[coarse.free_vertices]
    new = ~np.isin(fkeys, ckeys)
    s[~new] = 0.0
    return s, new


def node_indicators(residual_vector, z: FeFunction, coarse: FeSpace, scale: float = 1.0):
    s, _ = surplus(z, coarse)
    return np.abs(scale * residual_vector * s)


# -- report ---------------------------------------------------------------
@dataclass
class EstimateReport:
    """Estimates and indicators; per-step arrays are indexed ``k = 0..N``."""

    grid: TimeGrid
    E_st: float
    E_s: float
    E_t: float
    Osc: float
    E_hT: np.ndarray
    E_tau: np.ndarray
    E_h: np.ndarray
    dofs: np.ndarray
    node_indicators: List[np.ndarray] = field(default_factory=list)
    node_spaces: List[FeSpace] = field(default_factory=list)
    true_error: Optional[float] = None

    @property
    def effectivity(self) -> Optional[float]:
        return None if self.true_error is None else effectivity(self, self.true_error)

    @property
    def decomposition_defect(self) -> float:
        return abs(self.E_st - (self.E_s + self.E_t + self.Osc))

    def rows(self):
        t, tau = self.grid.t, np.concatenate([[0.0], self.grid.tau])
        for k in range(self.grid.N + 1):
            yield dict(k=k, t_k=t[k], tau_k=tau[k], E_hT=self.E_hT[k], E_tau=self.E_tau[k],
                       E_h=self.E_h[k], M_k=int(self.dofs[k]))

    def write_csv(self, path):
        write_indicator_csv(self, path)


INDICATOR_COLUMNS = ["k", "t_k", "tau_k", "E_hT", "E_tau", "E_h", "M_k"]


def write_indicator_csv(report: EstimateReport, path):
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=INDICATOR_COLUMNS)
        wr.writeheader()
        for row in report.rows():
            wr.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})


def effectivity(report: EstimateReport, true_error: float) -> float:
    if true_error == 0:
        raise ZeroDivisionError("effectivity undefined for zero true error")
    return report.E_st / true_error


# -- estimates --------------------------------------------------------------
def _initial_difference(p: Problem, u0_fine, u0_coarse, exact_initial: bool):
    if exact_initial:
        return Pointwise(lambda a, b: a - b, p.initial, u0_coarse)
    return Combination([(1.0, u0_fine), (-1.0, u0_coarse)])


def _initial_term(p, u0_fine, u0_coarse, z0, exact_initial, ctx):
    diff = _initial_difference(p, u0_fine, u0_coarse, exact_initial)
    objs = [z0, u0_coarse] + ([u0_fine] if u0_fine is not None else [])
    return l2_inner(diff, z0, mesh=integration_mesh(*objs), order=ctx.space_order)


def estimate_spatial(p: Problem, coarse: Trajectory, z: Trajectory, u0_fine: FeFunction,
                     ctx: FormContext = DEFAULT_CONTEXT, with_nodes: bool = True, exact_initial: bool = False):
    """``E_s``, per-step ``E^k_h`` and per-node ``E^k_i`` from the dual at whole indices.

    Returns ``(E_s, E_h, node_indicators)``.
    """
    N = coarse.grid.N
    if z.grid.N != N:
        raise ValueError("dual must be given at the coarse time nodes")
    r0 = _initial_term(p, u0_fine, coarse[0], z[0], exact_initial, ctx)
    E_h = np.zeros(N + 1)
    E_h[0] = abs(r0)
    total = r0
    nodes = []
    if with_nodes:
        diff = _initial_difference(p, u0_fine, coarse[0], exact_initial)
        vec = load_vector(z[0].space, diff, ctx.space_order, mesh=integration_mesh(z[0].space, coarse[0], diff))
        nodes.append(node_indicators(vec, z[0], coarse[0].space))
    for k in range(1, N + 1):
        res = step_residuals(p, coarse, k, ctx)
        val = res.tau * res.spatial(z[k])
        E_h[k] = abs(val)
        total += val
        if with_nodes:
            nodes.append(node_indicators(res.spatial_vector(z[k].space), z[k], coarse[k].space, res.tau))
    return total, E_h, nodes


def _interval_terms(res: StepResiduals, z_lo, z_hi, z_next, ctx):
    """Signed ``(R_PDE(z^), E_t part, Osc part, tau r_h(z_next))`` of one interval."""
    d = res.data(res.mesh_for(z_lo, z_hi, z_next))
    lo, hi, zn = (res.test_data(f, d) for f in (z_lo, z_hi, z_next))
    pair = res.pair

    def minus(x, y):
        return tuple(None if a is None else a - b for a, b in zip(x, y))

    mid = 0.5 * (res.t_a + res.t_b)
    ts, ws = time_nodes(res.t_a, res.t_b, ctx.time_order, split_at=mid)
    nh = len(ts) // 2
    rh = pair(d, res.spatial_density(d), zn)
    e_ht = e_t = osc = 0.0
    for j, (t, wt) in enumerate(zip(ts, ws)):
        zf = lo if j < nh else hi
        dens = res.pde_density(d, t)
        e_ht += wt * pair(d, dens, zf)
        e_t += wt * (pair(d, dens, minus(zf, zn)) + pair(d, res.temporal_density(d, t), zn))
        osc += wt * pair(d, res.oscillation_density(d, t), zn)
    return e_ht, e_t, osc, res.tau * rh


def estimate_all(p: Problem, coarse: Trajectory, z_half: Trajectory, u0_fine: FeFunction,
                 ctx: FormContext = DEFAULT_CONTEXT, with_nodes: bool = True, exact_initial: bool = False,
                 true_error: Optional[float] = None) -> EstimateReport:
    """All four estimates and the indicators from the half-step dual ``z~``."""
    grid = coarse.grid
    N = grid.N
    if z_half.grid.N != 2 * N:
        raise ValueError("dual must live on the halved grid")
    z_conc = Trajectory(grid, z_half.functions[0::2], tag="dual_concurrent")
    r0 = _initial_term(p, u0_fine, coarse[0], z_half[0], exact_initial, ctx)
    E_hT = np.zeros(N + 1)
    E_tau = np.zeros(N + 1)
    E_h = np.zeros(N + 1)
    E_hT[0] = E_h[0] = abs(r0)
    E_st = E_s = r0
    E_t = Osc = 0.0  # z^(0) = z~_0 = z_0, so the initial part of E_t vanishes
    nodes = []
    if with_nodes:
        diff = _initial_difference(p, u0_fine, coarse[0], exact_initial)
        s0 = z_half[0].space
        vec = load_vector(s0, diff, ctx.space_order, mesh=integration_mesh(s0, coarse[0], diff))
        nodes.append(node_indicators(vec, z_half[0], coarse[0].space))
    zhat = reconstruct_dual(z_half, grid, ctx.dual_pairing)
    for k in range(N):
        res = step_residuals(p, coarse, k + 1, ctx)
        z_next = z_conc[k + 1]
        e_ht, e_t, osc, e_h = _interval_terms(res, zhat.piece(k, False), zhat.piece(k, True), z_next, ctx)
        E_hT[k + 1], E_tau[k + 1], E_h[k + 1] = abs(e_ht), abs(e_t), abs(e_h)
        E_st += e_ht
        E_t += e_t
        Osc += osc
        E_s += e_h
        if with_nodes:
            nodes.append(node_indicators(res.spatial_vector(z_next.space), z_next, coarse[k + 1].space, res.tau))
    return EstimateReport(grid, float(E_st), float(E_s), float(E_t), float(Osc), E_hT, E_tau, E_h,
                          coarse.dofs, nodes, list(z_conc.spaces), true_error)


def estimate_spacetime(p: Problem, coarse: Trajectory, z_half: Trajectory, u0_fine: FeFunction,
                       ctx: FormContext = DEFAULT_CONTEXT):
    """``(E_st, E^k_hT)``."""
    rep = estimate_all(p, coarse, z_half, u0_fine, ctx, with_nodes=False)
    return rep.E_st, rep.E_hT


def estimate_temporal(p: Problem, coarse: Trajectory, z_half: Trajectory, u0_fine: FeFunction,
                      ctx: FormContext = DEFAULT_CONTEXT):
    """``(E_t, E^k_tau)`` with ``E^0_tau = 0``."""
    rep = estimate_all(p, coarse, z_half, u0_fine, ctx, with_nodes=False)
    return rep.E_t, rep.E_tau


def estimate_oscillation(p: Problem, coarse: Trajectory, z: Trajectory, ctx: FormContext = DEFAULT_CONTEXT) -> float:
    """``sum_k integral <f(t) - fbar_k, z_k> dt`` with ``z`` given at the coarse nodes."""
    total = 0.0
    for k in range(1, coarse.grid.N + 1):
        res = step_residuals(p, coarse, k, ctx)
        ts, ws = time_nodes(res.t_a, res.t_b, ctx.time_order, split_at=0.5 * (res.t_a + res.t_b))
        m = res.mesh_for(z[k])
        total += sum(wt * res.oscillation(t, z[k], m) for t, wt in zip(ts, ws))
    return total
