"""Hierarchical interval / quadtree meshes and nodal P1 / bilinear spaces.

A mesh is a set of leaf cells of a tree rooted at a tensor-product base grid.
Cells are identified by integer paths ``(level, i[, j])``: at level ``l`` the
cell ``i`` spans ``[x0 + i*h0/2**l, x0 + (i+1)*h0/2**l]``. Two meshes built
from the same base grid share a root, which makes overlays and transfers
exact.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

MAX_LEVEL = 20  # vertices are stored as integers at this resolution


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Root:
    dim: int
    origin: tuple
    extent: tuple
    base_n: tuple

    @property
    def base_h(self):
        return tuple(e / n for e, n in zip(self.extent, self.base_n))

    @property
    def measure(self):
        return float(np.prod(self.extent))


def _encode(level, idx):
    """Pack a cell path into one int64 key (level is the most significant part)."""
    level = np.asarray(level, dtype=np.int64)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape[-1] == 1:
        return (level << 50) | idx[..., 0]
    return (level << 56) | (idx[..., 0] << 28) | idx[..., 1]


def _shape(ref, dim):
    """P1 / bilinear shape values and reference gradients at local coordinates.

    Local vertex order is (0,0), (1,0), (0,1), (1,1) in 2D and (0), (1) in 1D.
    Returns ``(phi, dphi)`` with shapes ``(n, 2**dim)`` and ``(n, 2**dim, dim)``.
    """
    if dim == 1:
        xi = ref[:, 0]
        phi = np.stack([1.0 - xi, xi], axis=1)
        dphi = np.empty((len(xi), 2, 1))
        dphi[:, 0, 0] = -1.0
        dphi[:, 1, 0] = 1.0
        return phi, dphi
    xi, eta = ref[:, 0], ref[:, 1]
    phi = np.stack([(1 - xi) * (1 - eta), xi * (1 - eta), (1 - xi) * eta, xi * eta], axis=1)
    dphi = np.empty((len(xi), 4, 2))
    dphi[:, 0, 0], dphi[:, 0, 1] = -(1 - eta), -(1 - xi)
    dphi[:, 1, 0], dphi[:, 1, 1] = (1 - eta), -xi
    dphi[:, 2, 0], dphi[:, 2, 1] = -eta, (1 - xi)
    dphi[:, 3, 0], dphi[:, 3, 1] = eta, xi
    return phi, dphi


class Mesh:
    """Immutable set of leaf cells sharing a :class:`Root`.

    ``cells`` is an int64 array of shape ``(n, 1 + dim)`` holding
    ``(level, i[, j])`` per leaf, kept sorted by packed key.
    """

    def __init__(self, root: Root, cells):
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, 1 + root.dim)
        if cells[:, 0].max(initial=0) > MAX_LEVEL - 1:
            raise MeshError(f"refinement level above {MAX_LEVEL - 1}")
        keys = _encode(cells[:, 0], cells[:, 1:])
        order = np.argsort(keys, kind="stable")
        keys = keys[order]
        if len(keys) > 1 and np.any(keys[1:] == keys[:-1]):
            raise MeshError("duplicate leaf cells")
        self.root = root
        self.dim = root.dim
        self.cells = cells[order]
        self.cells.setflags(write=False)
        self._keys = keys
        self._levels = np.unique(self.cells[:, 0])
        digest = hashlib.sha1(repr(root).encode() + keys.tobytes()).hexdigest()
        self.key = digest
        self._cache = {}

    # -- identity -------------------------------------------------------
    def __eq__(self, other):
        return isinstance(other, Mesh) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        return f"Mesh(dim={self.dim}, cells={self.n_cells}, levels={self._levels.tolist()})"

    # -- geometry -------------------------------------------------------
    @property
    def n_cells(self):
        return len(self.cells)

    @property
    def levels(self):
        return self.cells[:, 0]

    def cell_size(self):
        """Per-cell edge lengths, shape ``(n, dim)``."""
        h0 = np.asarray(self.root.base_h)
        return h0[None, :] / (2.0 ** self.levels)[:, None]

    def cell_lower(self):
        h = self.cell_size()
        return np.asarray(self.root.origin)[None, :] + self.cells[:, 1:] * h

    def cell_measure(self):
        return np.prod(self.cell_size(), axis=1)

    @property
    def h(self):
        return float(self.cell_size().max())

    def cell_corner_ints(self):
        """Integer corner coordinates (resolution 2**MAX_LEVEL per base cell), shape (n, 2**dim, dim)."""
        s = np.int64(1) << (MAX_LEVEL - self.levels)
        lo = self.cells[:, 1:] * s[:, None]
        if self.dim == 1:
            return np.stack([lo, lo + s[:, None]], axis=1)
        x0, y0 = lo[:, 0], lo[:, 1]
        return np.stack(
            [np.stack([x0, y0], 1), np.stack([x0 + s, y0], 1),
             np.stack([x0, y0 + s], 1), np.stack([x0 + s, y0 + s], 1)],
            axis=1,
        )

    def int_to_coords(self, ints):
        h0 = np.asarray(self.root.base_h)
        return np.asarray(self.root.origin) + ints * (h0 / float(1 << MAX_LEVEL))

    # -- lookup ---------------------------------------------------------
    def locate_cells(self, level, idx):
        """Index of the leaf containing each given cell path, or -1.

        -1 means the queried cell is not inside a single leaf (it is coarser
        than the mesh there, or outside the domain).
        """
        level = np.asarray(level, dtype=np.int64)
        idx = np.asarray(idx, dtype=np.int64).reshape(len(level), self.dim)
        out = np.full(len(level), -1, dtype=np.int64)
        n = len(self._keys)
        for lv in self._levels:
            sel = np.nonzero((level >= lv) & (out < 0))[0]
            if len(sel) == 0:
                continue
            anc = idx[sel] >> (level[sel] - lv)[:, None]
            keys = _encode(np.full(len(sel), lv), anc)
            pos = np.minimum(np.searchsorted(self._keys, keys), n - 1)
            hit = self._keys[pos] == keys
            out[sel[hit]] = pos[hit]
        return out

    def locate_points(self, points):
        """Index of a leaf containing each point (points on shared faces pick one side)."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        out = np.full(len(pts), -1, dtype=np.int64)
        origin = np.asarray(self.root.origin)
        h0 = np.asarray(self.root.base_h)
        nb = np.asarray(self.root.base_n)
        n = len(self._keys)
        for lv in self._levels:
            sel = np.nonzero(out < 0)[0]
            if len(sel) == 0:
                break
            nl = nb << lv
            idx = np.floor((pts[sel] - origin) / (h0 / 2.0 ** lv)).astype(np.int64)
            idx = np.clip(idx, 0, nl - 1)
            keys = _encode(np.full(len(sel), lv), idx)
            pos = np.minimum(np.searchsorted(self._keys, keys), n - 1)
            hit = self._keys[pos] == keys
            out[sel[hit]] = pos[hit]
        if np.any(out < 0):
            raise MeshError("point outside the mesh domain")
        return out

    def refines(self, other: "Mesh") -> bool:
        """True if every leaf of ``self`` lies inside a leaf of ``other``."""
        if self.root != other.root:
            return False
        return bool(np.all(other.locate_cells(self.cells[:, 0], self.cells[:, 1:]) >= 0))

    def cells_touching(self, points):
        """Indices of all leaves whose closure contains any of the points."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        delta = 1e-7 * self.cell_size().min()
        lo = np.asarray(self.root.origin)
        hi = lo + np.asarray(self.root.extent)
        found = []
        offsets = [np.array(o, dtype=float) for o in np.ndindex(*(2,) * self.dim)]
        for o in offsets:
            p = np.clip(pts + (2 * o - 1) * delta, lo, hi)
            found.append(self.locate_points(p))
        return np.unique(np.concatenate(found))


def uniform_mesh(dim: int, box, cells_per_axis) -> Mesh:
    """Tensor-product mesh at level 0.

    ``box`` is ``(a, b)`` in 1D or ``((a0, b0), (a1, b1))`` in 2D;
    ``cells_per_axis`` is an int or one int per axis.
    """
    if dim not in (1, 2):
        raise MeshError("only 1D and 2D meshes are supported")
    box = np.asarray(box, dtype=float).reshape(dim, 2)
    n = np.broadcast_to(np.asarray(cells_per_axis, dtype=np.int64), (dim,))
    if np.any(n < 1):
        raise MeshError("cells_per_axis must be at least 1")
    if np.any(box[:, 1] <= box[:, 0]):
        raise MeshError("degenerate box")
    root = Root(dim, tuple(box[:, 0]), tuple(box[:, 1] - box[:, 0]), tuple(int(v) for v in n))
    grids = np.meshgrid(*[np.arange(k) for k in n], indexing="ij")
    idx = np.stack([g.ravel() for g in grids], axis=1)
    cells = np.concatenate([np.zeros((len(idx), 1), dtype=np.int64), idx], axis=1)
    return Mesh(root, cells)


def _children(cells, dim):
    lev = cells[:, :1] + 1
    base = cells[:, 1:] * 2
    out = []
    for o in np.ndindex(*(2,) * dim):
        out.append(np.concatenate([lev, base + np.asarray(o)], axis=1))
    return np.concatenate(out, axis=0)


def _split(cells, mask, dim):
    return np.concatenate([cells[~mask], _children(cells[mask], dim)], axis=0)


def _balance(root: Root, cells):
    """Split leaves until edge-adjacent leaves differ by at most one level."""
    dim = root.dim
    if dim == 1:
        return cells
    nb = np.asarray(root.base_n)
    dirs = [(1, 0), (-1, 0), (0, 1), (0, -1)]
    while True:
        mesh = Mesh(root, cells)
        lev, idx = mesh.cells[:, 0], mesh.cells[:, 1:]
        mark = np.zeros(mesh.n_cells, dtype=bool)
        deep = lev >= 2
        for d in dirs:
            nbi = idx[deep] + np.asarray(d)
            lv = lev[deep]
            inside = np.all((nbi >= 0) & (nbi < (nb[None, :] << lv[:, None])), axis=1)
            loc = mesh.locate_cells(lv[inside], nbi[inside])
            ok = loc >= 0
            coarse = mesh.levels[loc[ok]] < lv[inside][ok] - 1
            mark[loc[ok][coarse]] = True
        if not mark.any():
            return mesh.cells
        cells = _split(mesh.cells, mark, dim)


def refine(mesh: Mesh, marked_cells) -> Mesh:
    """Split the marked leaves (indices into ``mesh.cells``) and restore 2:1 balance."""
    marked = np.unique(np.asarray(list(marked_cells) if not isinstance(marked_cells, np.ndarray)
                                  else marked_cells, dtype=np.int64))
    if len(marked) == 0:
        return mesh
    if marked.min() < 0 or marked.max() >= mesh.n_cells:
        raise MeshError("marked cell index out of range")
    mask = np.zeros(mesh.n_cells, dtype=bool)
    mask[marked] = True
    cells = _split(mesh.cells, mask, mesh.dim)
    return Mesh(mesh.root, _balance(mesh.root, cells))


def uniform_refine(mesh: Mesh, times: int = 1) -> Mesh:
    cells = mesh.cells
    for _ in range(times):
        cells = _children(cells, mesh.dim)
    cache_key = ("uniform_refine", times)
    if cache_key not in mesh._cache:
        mesh._cache[cache_key] = Mesh(mesh.root, cells)
    return mesh._cache[cache_key]


def _strict_ancestors(cells):
    out = []
    lev, idx = cells[:, 0], cells[:, 1:]
    for lv in range(int(lev.max(initial=0))):
        sel = lev > lv
        if sel.any():
            out.append(_encode(np.full(sel.sum(), lv), idx[sel] >> (lev[sel] - lv)[:, None]))
    return np.unique(np.concatenate(out)) if out else np.empty(0, dtype=np.int64)


_OVERLAY_CACHE: dict = {}


def overlay(a: Mesh, b: Mesh) -> Mesh:
    """Common refinement: in every region the finer of the two meshes' leaves."""
    if a.root != b.root:
        raise MeshError("overlay requires meshes with the same root")
    if a == b:
        return a
    ck = (a.key, b.key) if a.key < b.key else (b.key, a.key)
    hit = _OVERLAY_CACHE.get(ck)
    if hit is not None:
        return hit
    if a.refines(b):
        res = a
    elif b.refines(a):
        res = b
    else:
        keep_a = ~np.isin(a._keys, _strict_ancestors(b.cells))
        keep_b = ~np.isin(b._keys, _strict_ancestors(a.cells))
        cells = np.concatenate([a.cells[keep_a], b.cells[keep_b]], axis=0)
        keys = _encode(cells[:, 0], cells[:, 1:])
        _, first = np.unique(keys, return_index=True)
        res = Mesh(a.root, cells[first])
    if len(_OVERLAY_CACHE) > 4096:
        _OVERLAY_CACHE.clear()
    _OVERLAY_CACHE[ck] = res
    return res


def overlay_all(meshes: Sequence[Mesh]) -> Mesh:
    out = meshes[0]
    for m in meshes[1:]:
        out = overlay(out, m)
    return out


class FeSpace:
    """Continuous P1 (1D) / bilinear (2D) nodal space on a mesh.

    Hanging vertices are constrained to the mean of the two endpoints of the
    coarse edge they sit on; only unconstrained vertices carry unknowns. With
    ``dirichlet=True`` boundary vertices are constrained to zero (the space is
    then a subspace of H^1_0).
    """

    degree = 1

    def __init__(self, mesh: Mesh, dirichlet: bool = False):
        self.mesh = mesh
        self.dirichlet = bool(dirichlet)
        corners = mesh.cell_corner_ints()  # (n, nv, dim)
        flat = corners.reshape(-1, mesh.dim)
        vkey = self._vkey(flat)
        self.vertex_keys, inv = np.unique(vkey, return_inverse=True)
        self.cell_vertices = inv.reshape(mesh.n_cells, -1)
        nvert = len(self.vertex_keys)
        vint = np.empty((nvert, mesh.dim), dtype=np.int64)
        vint[inv] = flat
        self.vertex_ints = vint
        self.vertex_coords = mesh.int_to_coords(vint.astype(float))

        parents = {}
        if mesh.dim == 2:
            for a, b in ((0, 1), (1, 3), (2, 3), (0, 2)):
                mid = (corners[:, a] + corners[:, b]) // 2
                mk = self._vkey(mid)
                pos = np.minimum(np.searchsorted(self.vertex_keys, mk), nvert - 1)
                hit = np.nonzero(self.vertex_keys[pos] == mk)[0]
                for c in hit:
                    parents[int(pos[c])] = (int(self.cell_vertices[c, a]), int(self.cell_vertices[c, b]))
        hanging = np.zeros(nvert, dtype=bool)
        hanging[list(parents)] = True
        self.hanging = hanging
        top = np.asarray(mesh.root.base_n, dtype=np.int64) << MAX_LEVEL
        boundary = np.any((vint == 0) | (vint == top[None, :]), axis=1)
        self.boundary = boundary
        fixed = boundary if self.dirichlet else np.zeros(nvert, dtype=bool)
        self.free_vertices = np.nonzero(~hanging & ~fixed)[0]
        dof_of = np.full(nvert, -1, dtype=np.int64)
        dof_of[self.free_vertices] = np.arange(len(self.free_vertices))
        self.dof_of_vertex = dof_of

        resolved = {}

        def resolve(v, depth=0):
            if fixed[v]:
                return {}
            if not hanging[v]:
                return {v: 1.0}
            if v in resolved:
                return resolved[v]
            if depth > 64:
                raise MeshError("cyclic hanging-node constraints")
            out = {}
            for p in parents[v]:
                for q, w in resolve(p, depth + 1).items():
                    out[q] = out.get(q, 0.0) + 0.5 * w
            resolved[v] = out
            return out

        rows = list(self.free_vertices)
        cols = list(range(len(self.free_vertices)))
        vals = [1.0] * len(rows)
        for v in parents:
            if fixed[v]:
                continue
            for q, w in resolve(v).items():
                rows.append(v)
                cols.append(int(dof_of[q]))
                vals.append(w)
        self.constraint = sp.csr_matrix((vals, (rows, cols)), shape=(nvert, len(self.free_vertices)))
        self._cache = {}

    def _vkey(self, ints):
        if self.mesh.dim == 1:
            return ints[..., 0].astype(np.int64)
        return (ints[..., 0].astype(np.int64) << 32) | ints[..., 1].astype(np.int64)

    @property
    def dim(self):
        return len(self.free_vertices)

    @property
    def node_coords(self):
        """Coordinates of the free nodes, in dof order."""
        return self.vertex_coords[self.free_vertices]

    def __repr__(self):
        bc = ", dirichlet" if self.dirichlet else ""
        return f"FeSpace({self.mesh!r}, dofs={self.dim}{bc})"

    def basis_matrix(self, points, cell_index=None):
        """Sparse matrix mapping dof coefficients to values (and gradients) at points."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.mesh.dim)
        cidx = self.mesh.locate_points(pts) if cell_index is None else cell_index
        lo = self.mesh.cell_lower()[cidx]
        h = self.mesh.cell_size()[cidx]
        ref = (pts - lo) / h
        phi, dphi = _shape(ref, self.mesh.dim)
        verts = self.cell_vertices[cidx]
        n = len(pts)
        nv = verts.shape[1]
        rows = np.repeat(np.arange(n), nv)
        nvert = len(self.vertex_keys)
        val = sp.csr_matrix((phi.ravel(), (rows, verts.ravel())), shape=(n, nvert)) @ self.constraint
        grads = []
        for d in range(self.mesh.dim):
            g = (dphi[:, :, d] / h[:, d:d + 1]).ravel()
            grads.append(sp.csr_matrix((g, (rows, verts.ravel())), shape=(n, nvert)) @ self.constraint)
        return val.tocsr(), [g.tocsr() for g in grads]

    def interpolate(self, g) -> "FeFunction":
        """Nodal interpolant of a closure ``g(x)`` with ``x`` of shape ``(n, dim)``."""
        return FeFunction(self, np.asarray(g(self.node_coords), dtype=float).reshape(-1))


def space_for(mesh: Mesh, dirichlet: bool = False) -> FeSpace:
    """Shared FeSpace per (mesh, boundary condition); spaces are immutable."""
    key = ("space", bool(dirichlet))
    sp_ = mesh._cache.get(key)
    if sp_ is None:
        sp_ = FeSpace(mesh, dirichlet)
        mesh._cache[key] = sp_
    return sp_


class FeFunction:
    def __init__(self, space: FeSpace, coefficients):
        c = np.asarray(coefficients, dtype=float)
        if c.shape != (space.dim,):
            raise ValueError(f"coefficient length {c.shape} does not match space dimension {space.dim}")
        self.space = space
        self.coefficients = c

    def __repr__(self):
        return f"FeFunction(dofs={self.space.dim})"

    def vertex_values(self):
        """Values at all mesh vertices, hanging ones included."""
        return self.space.constraint @ self.coefficients

    def evaluate(self, points):
        val, _ = self.space.basis_matrix(points)
        return val @ self.coefficients

    def gradient(self, points):
        _, grads = self.space.basis_matrix(points)
        return np.stack([g @ self.coefficients for g in grads], axis=-1)

    def __call__(self, points):
        return self.evaluate(points)


def transfer(f: FeFunction, target: FeSpace, cfg=None) -> FeFunction:
    """Move ``f`` onto ``target``.

    Nodal interpolation when ``target`` refines ``f``'s mesh (exact for nested
    spaces); otherwise L2 projection assembled on the common refinement.
    """
    if f.space.mesh.root != target.mesh.root:
        raise MeshError("transfer requires spaces with the same root")
    if target is f.space or (target.mesh == f.space.mesh and target.dirichlet == f.space.dirichlet):
        return FeFunction(target, f.coefficients.copy())
    if target.mesh.refines(f.space.mesh) and (target.dirichlet <= f.space.dirichlet):
        return FeFunction(target, f.evaluate(target.node_coords))
    from .assembly import l2_project
    return l2_project(f, target, cfg)


def write_snapshot(f: FeFunction, path, t=None):
    """Write mesh + nodal values in the plain-text snapshot format.

    Format::

        # imexdwr snapshot v1
        dim <d>
        time <t>
        nodes <n>
        <x> [<y>] <value>      (n lines, all vertices incl. hanging ones)
        cells <m>
        <v0> <v1> [<v2> <v3>]  (m lines, local order (0,0),(1,0),(0,1),(1,1))
    """
    sp_ = f.space
    vals = f.vertex_values()
    with open(path, "w") as fh:
        fh.write("# imexdwr snapshot v1\n")
        fh.write(f"dim {sp_.mesh.dim}\n")
        fh.write(f"time {'' if t is None else repr(float(t))}\n")
        fh.write(f"nodes {len(vals)}\n")
        for xy, v in zip(sp_.vertex_coords, vals):
            fh.write(" ".join(repr(float(c)) for c in xy) + f" {float(v)!r}\n")
        fh.write(f"cells {sp_.mesh.n_cells}\n")
        for row in sp_.cell_vertices:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")


def read_snapshot(path):
    """Inverse of :func:`write_snapshot`: returns ``(coords, values, cells, time)``."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    dim = int(lines[0].split()[1])
    tfield = lines[1].split()
    t = float(tfield[1]) if len(tfield) > 1 else None
    n = int(lines[2].split()[1])
    data = np.array([[float(v) for v in ln.split()] for ln in lines[3:3 + n]]).reshape(n, dim + 1)
    m = int(lines[3 + n].split()[1])
    cells = np.array([[int(v) for v in ln.split()] for ln in lines[4 + n:4 + n + m]], dtype=np.int64)
    return data[:, :dim], data[:, dim], cells, t
