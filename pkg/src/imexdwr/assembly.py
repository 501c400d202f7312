"""Quadrature and finite-element assembly.

Every integral is evaluated on an *integration mesh* that refines all the
spaces involved (their overlay). Spaces are turned into sparse evaluation
operators ``E`` mapping coefficients to values at the quadrature points of
that mesh, so a load vector is ``E.T @ (w * g)`` and a mass matrix is
``E.T @ diag(w) @ E``. Operators are cached per (space, mesh, order).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .linalg import DEFAULT_SOLVER, SolverConfig, cg_solve
from .mesh import FeFunction, FeSpace, Mesh, MeshError, overlay_all


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor Gauss rule on the reference cell ``[0, 1]**dim``."""

    points: np.ndarray
    weights: np.ndarray
    order: int

    @property
    def dim(self):
        return self.points.shape[1]


@lru_cache(maxsize=None)
def gauss_rule(order: int, dim: int = 1) -> QuadratureRule:
    if order < 1:
        raise ValueError("quadrature order must be >= 1")
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    if dim == 1:
        pts, wts = x[:, None], w
    else:
        X, Y = np.meshgrid(x, x, indexing="ij")
        WX, WY = np.meshgrid(w, w, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()], axis=1)
        wts = (WX * WY).ravel()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(pts, wts, order)


@dataclass(frozen=True)
class FormContext:
    """Quadrature orders and the time pairing of the piecewise-constant dual.

    ``dual_pairing="right"`` gives each half-interval the dual value at its
    right end (the adjoint pairing of the implicit step); ``"left"`` uses the
    value at its left end.
    """

    space_order: int = 3
    time_order: int = 3
    dual_pairing: str = "right"

    def __post_init__(self):
        if self.space_order < 1 or self.time_order < 1:
            raise ValueError("quadrature orders must be >= 1")
        if self.dual_pairing not in ("left", "right"):
            raise ValueError(f"dual_pairing must be 'left' or 'right', got {self.dual_pairing!r}")


DEFAULT_CONTEXT = FormContext()


def quad_data(mesh: Mesh, order: int = 3):
    """Physical quadrature points and weights of a mesh: ``(x, w)``."""
    key = ("quad", order)
    hit = mesh._cache.get(key)
    if hit is None:
        rule = gauss_rule(order, mesh.dim)
        lo = mesh.cell_lower()
        h = mesh.cell_size()
        x = lo[:, None, :] + rule.points[None, :, :] * h[:, None, :]
        w = mesh.cell_measure()[:, None] * rule.weights[None, :]
        hit = (x.reshape(-1, mesh.dim), w.ravel())
        mesh._cache[key] = hit
    return hit


def eval_operators(space: FeSpace, mesh: Mesh, order: int = 3):
    """``(E, [E_x, E_y])`` evaluating a function of ``space`` at the quadrature points of ``mesh``."""
    key = ("eval", mesh.key, order)
    hit = space._cache.get(key)
    if hit is None:
        owner = space.mesh.locate_cells(mesh.cells[:, 0], mesh.cells[:, 1:])
        if np.any(owner < 0):
            raise MeshError("integration mesh must refine the space's mesh")
        x, _ = quad_data(mesh, order)
        nq = gauss_rule(order, mesh.dim).weights.size
        hit = space.basis_matrix(x, cell_index=np.repeat(owner, nq))
        if len(space._cache) > 64:
            space._cache.clear()
        space._cache[key] = hit
    return hit


def boundary_quad_data(mesh: Mesh, order: int = 3):
    """Quadrature on the domain boundary: ``(x, w, owner_cell)``.

    In 1D the boundary is the two end points (unit weight); in 2D each leaf
    edge on the boundary carries a Gauss rule.
    """
    key = ("bquad", order)
    hit = mesh._cache.get(key)
    if hit is not None:
        return hit
    lev, idx = mesh.levels, mesh.cells[:, 1:]
    nl = np.asarray(mesh.root.base_n, dtype=np.int64)[None, :] << lev[:, None]
    lo, h = mesh.cell_lower(), mesh.cell_size()
    xs, ws, owners = [], [], []
    if mesh.dim == 1:
        for side, sel in ((0.0, idx[:, 0] == 0), (1.0, idx[:, 0] == nl[:, 0] - 1)):
            c = np.nonzero(sel)[0]
            xs.append(lo[c] + side * h[c])
            ws.append(np.ones(len(c)))
            owners.append(c)
    else:
        rule = gauss_rule(order, 1)
        s, w = rule.points[:, 0], rule.weights
        for axis in (0, 1):
            other = 1 - axis
            for side, sel in ((0.0, idx[:, axis] == 0), (1.0, idx[:, axis] == nl[:, axis] - 1)):
                c = np.nonzero(sel)[0]
                pts = np.empty((len(c), len(s), 2))
                pts[:, :, axis] = (lo[c, axis] + side * h[c, axis])[:, None]
                pts[:, :, other] = lo[c, other][:, None] + s[None, :] * h[c, other][:, None]
                xs.append(pts.reshape(-1, 2))
                ws.append((h[c, other][:, None] * w[None, :]).ravel())
                owners.append(np.repeat(c, len(s)))
    hit = (np.concatenate(xs).reshape(-1, mesh.dim), np.concatenate(ws), np.concatenate(owners))
    mesh._cache[key] = hit
    return hit


def boundary_eval_operator(space: FeSpace, mesh: Mesh, order: int = 3):
    """Sparse evaluation of ``space`` functions at the boundary quadrature points of ``mesh``."""
    key = ("beval", mesh.key, order)
    hit = space._cache.get(key)
    if hit is None:
        x, _, owner = boundary_quad_data(mesh, order)
        cells = mesh.cells[owner]
        loc = space.mesh.locate_cells(cells[:, 0], cells[:, 1:])
        if np.any(loc < 0):
            raise MeshError("integration mesh must refine the space's mesh")
        hit = space.basis_matrix(x, cell_index=loc)[0]
        space._cache[key] = hit
    return hit


def boundary_values(g, mesh: Mesh, t=None, order: int = 3) -> np.ndarray:
    """Values of a boundary closure ``g(x)`` or ``g(x, t)`` at the boundary quadrature points."""
    x, _, _ = boundary_quad_data(mesh, order)
    v = g(x) if t is None else g(x, t)
    return np.broadcast_to(np.asarray(v, dtype=float), (len(x),)).copy()


def boundary_load(s: FeSpace, mesh: Mesh, density, order: int = 3) -> np.ndarray:
    """``b_i = sum_q w_q density_q phi_i`` over the boundary quadrature of ``mesh``."""
    _, w, _ = boundary_quad_data(mesh, order)
    return boundary_eval_operator(s, mesh, order).T @ (w * density)


# -- fields --------------------------------------------------------------
class Combination:
    """Linear combination ``sum(c_i * f_i)`` of FE functions on possibly different spaces."""

    def __init__(self, terms):
        self.terms = [(float(c), f) for c, f in terms]

    def __repr__(self):
        return f"Combination({self.terms!r})"


class Pointwise:
    """Pointwise nonlinear map ``func(v_1, ..., v_n)`` of field values at quadrature points."""

    def __init__(self, func: Callable, *fields):
        self.func = func
        self.fields = fields


def field_meshes(field):
    if isinstance(field, FeFunction):
        return [field.space.mesh]
    if isinstance(field, Combination):
        return [f.space.mesh for _, f in field.terms]
    if isinstance(field, Pointwise):
        return [m for f in field.fields for m in field_meshes(f)]
    return []


def integration_mesh(*objs) -> Mesh:
    meshes = []
    for o in objs:
        if isinstance(o, Mesh):
            meshes.append(o)
        elif isinstance(o, FeSpace):
            meshes.append(o.mesh)
        else:
            meshes.extend(field_meshes(o))
    if not meshes:
        raise ValueError("no mesh to integrate on")
    return overlay_all(meshes)


def field_values(field, mesh: Mesh, order: int = 3) -> np.ndarray:
    """Values of a field at the quadrature points of ``mesh``."""
    if isinstance(field, FeFunction):
        return eval_operators(field.space, mesh, order)[0] @ field.coefficients
    if isinstance(field, Combination):
        out = np.zeros(len(quad_data(mesh, order)[1]))
        for c, f in field.terms:
            out += c * (eval_operators(f.space, mesh, order)[0] @ f.coefficients)
        return out
    if isinstance(field, Pointwise):
        return field.func(*[field_values(f, mesh, order) for f in field.fields])
    if callable(field):
        x, _ = quad_data(mesh, order)
        return np.broadcast_to(np.asarray(field(x), dtype=float), (len(x),)).copy()
    return np.full(len(quad_data(mesh, order)[1]), float(field))


def boundary_field_values(field, mesh: Mesh, order: int = 3) -> np.ndarray:
    """Values of an FE field at the boundary quadrature points of ``mesh``."""
    if isinstance(field, FeFunction):
        return boundary_eval_operator(field.space, mesh, order) @ field.coefficients
    if isinstance(field, Combination):
        out = np.zeros(len(boundary_quad_data(mesh, order)[1]))
        for c, f in field.terms:
            out += c * (boundary_eval_operator(f.space, mesh, order) @ f.coefficients)
        return out
    raise TypeError("boundary values are only available for FE fields")


def field_gradients(field, mesh: Mesh, order: int = 3) -> np.ndarray:
    """Gradients of an FE field at the quadrature points, shape ``(nq, dim)``."""
    if isinstance(field, FeFunction):
        grads = eval_operators(field.space, mesh, order)[1]
        return np.stack([g @ field.coefficients for g in grads], axis=1)
    if isinstance(field, Combination):
        out = np.zeros((len(quad_data(mesh, order)[1]), mesh.dim))
        for c, f in field.terms:
            out += c * field_gradients(f, mesh, order)
        return out
    raise TypeError("gradients are only available for FE fields")


# -- matrices --------------------------------------------------------------
def _symmetrize(a):
    a = 0.5 * (a + a.T)
    a = sp.csr_matrix(a)
    a.sum_duplicates()
    a.sort_indices()
    return a


def mass_matrix(s: FeSpace, order: int = 3) -> sp.csr_matrix:
    key = ("mass", order)
    if key not in s._cache:
        E, _ = eval_operators(s, s.mesh, order)
        _, w = quad_data(s.mesh, order)
        s._cache[key] = _symmetrize(E.T @ sp.diags(w) @ E)
    return s._cache[key]


def stiffness_matrix(s: FeSpace, order: int = 3) -> sp.csr_matrix:
    key = ("stiff", order)
    if key not in s._cache:
        _, grads = eval_operators(s, s.mesh, order)
        _, w = quad_data(s.mesh, order)
        W = sp.diags(w)
        s._cache[key] = _symmetrize(sum(g.T @ W @ g for g in grads))
    return s._cache[key]


def weighted_mass_matrix(s_test: FeSpace, s_trial: FeSpace, weight=1.0, order: int = 3) -> sp.csr_matrix:
    """``A_ij = integral(weight * phi_j^trial * phi_i^test)`` assembled on the overlay."""
    if s_test.mesh.root != s_trial.mesh.root:
        raise MeshError("spaces must share a root")
    m = integration_mesh(s_test, s_trial, weight)
    Et = eval_operators(s_test, m, order)[0]
    Es = eval_operators(s_trial, m, order)[0]
    _, w = quad_data(m, order)
    a = Et.T @ sp.diags(w * field_values(weight, m, order)) @ Es
    a = sp.csr_matrix(a)
    a.sort_indices()
    return a


def load_from_density(s: FeSpace, mesh: Mesh, density, grad_density=None, order: int = 3):
    """Vector ``b_i = sum_q w_q (density_q phi_i + grad_density_q . grad phi_i)`` on ``mesh``."""
    E, grads = eval_operators(s, mesh, order)
    _, w = quad_data(mesh, order)
    b = E.T @ (w * density) if density is not None else np.zeros(s.dim)
    if grad_density is not None:
        for d, g in enumerate(grads):
            b = b + g.T @ (w * grad_density[:, d])
    return b


def load_vector(s: FeSpace, g, order: int = 3, mesh: Optional[Mesh] = None) -> np.ndarray:
    """``b_i = integral(g * phi_i)`` for a closure, constant or field ``g``."""
    m = mesh if mesh is not None else integration_mesh(s, g)
    return load_from_density(s, m, field_values(g, m, order), order=order)


def apply_weighted_mass(s_test: FeSpace, f, weight=1.0, order: int = 3, mesh: Optional[Mesh] = None):
    """Action ``integral(weight * f * phi_i)`` without forming the matrix."""
    m = mesh if mesh is not None else integration_mesh(s_test, f, weight)
    dens = field_values(f, m, order)
    if not (isinstance(weight, (int, float)) and weight == 1.0):
        dens = dens * field_values(weight, m, order)
    return load_from_density(s_test, m, dens, order=order)


def l2_project(g, s: FeSpace, cfg: SolverConfig = DEFAULT_SOLVER, order: int = 3) -> FeFunction:
    """L2 projection of a closure or field onto ``s``."""
    b = load_vector(s, g, order)
    return FeFunction(s, cg_solve(mass_matrix(s, order), b, cfg))


def l2_inner(f, g, mesh: Optional[Mesh] = None, order: int = 3) -> float:
    objs = [f, g] + ([mesh] if mesh is not None else [])
    m = integration_mesh(*objs)
    _, w = quad_data(m, order)
    return float(np.sum(w * field_values(f, m, order) * field_values(g, m, order)))


def l2_norm_sq(f, mesh: Optional[Mesh] = None, order: int = 3) -> float:
    return l2_inner(f, f, mesh, order)


def time_nodes(t_a: float, t_b: float, order: int = 3, split_at: Optional[float] = None):
    """Composite Gauss nodes and weights on ``[t_a, t_b]``, optionally split at ``split_at``."""
    if not t_b > t_a:
        raise ValueError("empty time interval")
    rule = gauss_rule(order, 1)
    pieces = [(t_a, t_b)] if split_at is None else [(t_a, split_at), (split_at, t_b)]
    if split_at is not None and not (t_a < split_at < t_b):
        raise ValueError("split point must lie inside the interval")
    ts, ws = [], []
    for a, b in pieces:
        ts.append(a + (b - a) * rule.points[:, 0])
        ws.append((b - a) * rule.weights)
    return np.concatenate(ts), np.concatenate(ws)


def time_quadrature(interval, integrand: Callable[[float], float], split_at=None, order: int = 3) -> float:
    t, w = time_nodes(interval[0], interval[1], order, split_at)
    return float(sum(wi * integrand(ti) for ti, wi in zip(t, w)))
