import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from imexdwr.mesh import FeFunction, MeshError, overlay, overlay_all, read_snapshot, refine, space_for, transfer, \
    uniform_mesh, uniform_refine, write_snapshot


def corner_refined(n=2):
    m = uniform_mesh(2, ((0, 1), (0, 1)), n)
    return refine(m, m.locate_points(np.array([[0.01, 0.01]])))


def random_local_mesh(seed, dim=2, rounds=3):
    rng = np.random.default_rng(seed)
    box = ((0, 1), (0, 2)) if dim == 2 else (0, 1)
    m = uniform_mesh(dim, box, (2, 3) if dim == 2 else 3)
    for _ in range(rounds):
        k = rng.integers(1, max(2, m.n_cells // 3) + 1)
        m = refine(m, rng.choice(m.n_cells, size=k, replace=False))
    return m


# -- construction ---------------------------------------------------------------
def test_uniform_mesh_1d():
    m = uniform_mesh(1, (0, 1), 2)
    assert m.n_cells == 2
    np.testing.assert_allclose(m.cell_measure(), [0.5, 0.5])


@pytest.mark.parametrize("box, n, cells, h", [
    (((0, 1), (0, 2)), (4, 8), 32, 0.25),
    (((-1, 1), (-1, 1)), 16, 256, 0.125),
])
def test_uniform_mesh_2d(box, n, cells, h):
    m = uniform_mesh(2, box, n)
    assert m.n_cells == cells
    np.testing.assert_allclose(m.cell_size(), h)


@pytest.mark.parametrize("box, n", [(((0, 0), (0, 1)), 2), (((0, 1), (0, 1)), 0)])
def test_uniform_mesh_errors(box, n):
    with pytest.raises(MeshError):
        uniform_mesh(2, box, n)


# -- refinement ------------------------------------------------------------------
def test_refine_empty_is_identity():
    m = uniform_mesh(2, ((0, 1), (0, 1)), 3)
    assert refine(m, []) is m


def test_refine_1d_hand_tiling():
    m = refine(uniform_mesh(1, (0, 1), 2), [0])
    assert m.n_cells == 3
    np.testing.assert_allclose(sorted(m.cell_measure()), [0.25, 0.25, 0.5])


def test_refine_2d_corner_has_seven_leaves_and_two_hanging_nodes():
    m = corner_refined()
    assert m.n_cells == 7
    s = space_for(m)
    hang = s.vertex_coords[s.hanging]
    np.testing.assert_allclose(sorted(map(tuple, hang)), [(0.25, 0.5), (0.5, 0.25)])
    assert s.dim == 9 + 3  # 3x3 vertices plus the corner cell's free midpoints and centre


def test_refine_balance_closure():
    m = uniform_mesh(2, ((0, 1), (0, 1)), 2)
    for _ in range(3):  # keep refining the cell at the origin
        m = refine(m, m.locate_points(np.array([[1e-3, 1e-3]])))
    lev = m.levels
    # a level-3 corner cell forces its neighbours to level >= 2
    assert lev.max() == 3
    nbr = m.locate_points(np.array([[0.3, 0.05], [0.05, 0.3]]))
    assert np.all(lev[nbr] >= 1)


def test_refine_index_out_of_range():
    with pytest.raises(MeshError):
        refine(uniform_mesh(1, (0, 1), 2), [5])


@pytest.mark.parametrize("dim, box, n, cells", [(1, (0, 1), 2, 4), (2, ((0, 1), (0, 2)), (4, 8), 128)])
def test_uniform_refine_counts(dim, box, n, cells):
    assert uniform_refine(uniform_mesh(dim, box, n)).n_cells == cells


def test_uniform_refine_twice_is_factor_four():
    m = uniform_mesh(2, ((0, 1), (0, 1)), 2)
    assert uniform_refine(m, 2) == uniform_refine(uniform_refine(m))
    np.testing.assert_allclose(uniform_refine(m, 2).cell_size(), 0.125)


# -- overlay ---------------------------------------------------------------------
def test_overlay_identity_and_nesting():
    m = corner_refined()
    assert overlay(m, m) == m
    assert overlay(m, uniform_refine(m)) == uniform_refine(m)


def test_overlay_disjoint_corners():
    base = uniform_mesh(2, ((0, 1), (0, 1)), 2)
    a = refine(base, base.locate_points(np.array([[0.1, 0.1]])))
    b = refine(base, base.locate_points(np.array([[0.9, 0.9]])))
    o = overlay(a, b)
    assert o.n_cells == 4 + 4 + 2  # two split corners, two untouched cells
    assert o == overlay(b, a) == overlay_all([a, b])


def test_overlay_different_roots():
    with pytest.raises(MeshError):
        overlay(uniform_mesh(1, (0, 1), 2), uniform_mesh(1, (0, 2), 2))


@given(seed=st.integers(0, 10 ** 6), dim=st.sampled_from([1, 2]))
def test_leaf_measures_tile_root(seed, dim):
    m = random_local_mesh(seed, dim)
    assert abs(m.cell_measure().sum() - m.root.measure) <= 1e-14 * m.root.measure


@given(s1=st.integers(0, 10 ** 6), s2=st.integers(0, 10 ** 6))
def test_overlay_refines_both_and_commutes(s1, s2):
    a, b = random_local_mesh(s1), random_local_mesh(s2)
    o = overlay(a, b)
    assert o.refines(a) and o.refines(b)
    assert o == overlay(b, a)


# -- spaces and transfer -------------------------------------------------------------
@given(seed=st.integers(0, 10 ** 6))
def test_hanging_edges_are_continuous(seed):
    m = random_local_mesh(seed)
    s = space_for(m)
    rng = np.random.default_rng(seed)
    f = FeFunction(s, rng.standard_normal(s.dim))
    hmin = m.cell_size().min()
    for v in np.nonzero(s.hanging)[0]:
        x = s.vertex_coords[v]
        # the hanging edge runs along the axis in which a neighbouring vertex sits at distance h
        for d in range(2):
            e = np.zeros(2)
            e[d] = 1.0
            n = np.array([e[1], e[0]])
            pts = x + np.outer(rng.uniform(-1, 1, 10), e) * hmin
            lo = m.locate_points(np.clip(pts - 1e-3 * hmin * n, 0, [1, 2]))
            hi = m.locate_points(np.clip(pts + 1e-3 * hmin * n, 0, [1, 2]))
            on_edge = (np.abs(pts - np.clip(pts, 0, [1, 2])).max(axis=1) == 0) & (lo != hi)
            if not on_edge.any():
                continue
            p = pts[on_edge]
            a = s.basis_matrix(p, lo[on_edge])[0] @ f.coefficients
            b = s.basis_matrix(p, hi[on_edge])[0] @ f.coefficients
            # only compare where both cells actually contain the points
            inside = np.all((p >= m.cell_lower()[lo[on_edge]] - 1e-15) &
                            (p <= m.cell_lower()[lo[on_edge]] + m.cell_size()[lo[on_edge]] + 1e-15), axis=1) & \
                np.all((p >= m.cell_lower()[hi[on_edge]] - 1e-15) &
                       (p <= m.cell_lower()[hi[on_edge]] + m.cell_size()[hi[on_edge]] + 1e-15), axis=1)
            np.testing.assert_allclose(a[inside], b[inside], atol=1e-14)


@given(seed=st.integers(0, 10 ** 6))
def test_nested_transfer_is_exact(seed):
    m = random_local_mesh(seed)
    fine = refine(uniform_refine(m), [0])
    rng = np.random.default_rng(seed)
    f = FeFunction(space_for(m), rng.standard_normal(space_for(m).dim))
    g = transfer(f, space_for(fine))
    pts = rng.uniform([0, 0], [1, 2], size=(100, 2))
    np.testing.assert_allclose(g(pts), f(pts), atol=1e-13)


def test_transfer_same_space_copies():
    s = space_for(uniform_mesh(1, (0, 1), 4))
    f = FeFunction(s, np.arange(5.0))
    g = transfer(f, s)
    np.testing.assert_array_equal(g.coefficients, f.coefficients)
    assert g.coefficients is not f.coefficients


def test_transfer_reproduces_linear_on_refinement():
    m = uniform_mesh(1, (0, 1), 3)
    f = space_for(m).interpolate(lambda x: x[:, 0])
    fine = space_for(refine(uniform_refine(m), [1, 2]))
    np.testing.assert_array_equal(transfer(f, fine).coefficients, fine.node_coords[:, 0])


def test_coarsening_matches_dense_gram_oracle():
    coarse_mesh = uniform_mesh(1, (0, 1), 4)
    fine_mesh = uniform_refine(coarse_mesh)
    fs, cs = space_for(fine_mesh), space_for(coarse_mesh)
    c = np.zeros(fs.dim)
    i = int(np.argmin(np.abs(fs.node_coords[:, 0] - 0.375)))
    c[i] = 1.0
    f = FeFunction(fs, c)
    h = 0.25
    gram = np.zeros((5, 5))
    for e in range(4):
        gram[e:e + 2, e:e + 2] += h / 6 * np.array([[2, 1], [1, 2]])
    nodes = cs.node_coords[:, 0]

    def hat(j, x):
        return max(0.0, 1 - abs(x - nodes[j]) / h)
    rhs = np.array([quad(lambda x: hat(j, x) * f(np.array([[x]]))[0], 0, 1, points=[0.25, 0.375, 0.5],
                         epsabs=1e-15, epsrel=1e-15)[0] for j in range(5)])
    ref = np.linalg.solve(gram, rhs)
    np.testing.assert_allclose(transfer(f, cs).coefficients, ref, atol=1e-12)


def test_transfer_different_roots():
    f = FeFunction(space_for(uniform_mesh(1, (0, 1), 2)), np.zeros(3))
    with pytest.raises(MeshError):
        transfer(f, space_for(uniform_mesh(1, (0, 2), 2)))


def test_coefficient_length_checked():
    with pytest.raises(ValueError):
        FeFunction(space_for(uniform_mesh(1, (0, 1), 2)), np.zeros(4))


def test_dirichlet_space_drops_boundary():
    m = uniform_mesh(2, ((0, 1), (0, 1)), 4)
    assert space_for(m).dim == 25
    assert space_for(m, True).dim == 9
    f = space_for(m, True).interpolate(lambda x: np.ones(len(x)))
    assert abs(f(np.array([[0.0, 0.5]]))[0]) == 0.0


@pytest.mark.parametrize("dim", [1, 2])
def test_snapshot_round_trip(tmp_path, dim):
    m = corner_refined() if dim == 2 else refine(uniform_mesh(1, (0, 1), 3), [1])
    s = space_for(m)
    f = s.interpolate(lambda x: np.sin(x.sum(axis=1)))
    path = tmp_path / "snap.txt"
    write_snapshot(f, path, t=0.25)
    coords, values, cells, t = read_snapshot(path)
    assert t == 0.25
    np.testing.assert_array_equal(coords, s.vertex_coords)
    np.testing.assert_array_equal(values, f.vertex_values())
    np.testing.assert_array_equal(cells, s.cell_vertices)
