import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from imexdwr.assembly import FormContext, Pointwise, gauss_rule, l2_inner, l2_norm_sq, l2_project, load_vector, \
    mass_matrix, stiffness_matrix, time_quadrature, weighted_mass_matrix
from imexdwr.experiments import RING_BOX, ring_initial
from imexdwr.mesh import FeFunction, MeshError, refine, space_for, uniform_mesh, uniform_refine
from imexdwr.model import psi_mean_value


def sorted_1d(space, a):
    """Reorder a 1D operator to ascending vertex coordinates."""
    order = np.argsort(space.node_coords[:, 0])
    a = a.toarray() if hasattr(a, "toarray") else np.asarray(a)
    return a[np.ix_(order, order)] if a.ndim == 2 else a[order]


def two_cell():
    return space_for(uniform_mesh(1, (0, 1), 2))


def local_space(seed=0):
    rng = np.random.default_rng(seed)
    m = uniform_mesh(2, ((0, 1), (0, 1)), 3)
    for _ in range(2):
        m = refine(m, rng.choice(m.n_cells, size=max(1, m.n_cells // 4), replace=False))
    return space_for(m)


# -- quadrature -------------------------------------------------------------------
@pytest.mark.parametrize("order", [1, 2, 3, 4, 5])
@pytest.mark.parametrize("dim", [1, 2])
def test_gauss_rule_weights_sum_to_reference_measure(order, dim):
    assert gauss_rule(order, dim).weights.sum() == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("order", [1, 2, 3, 4, 5])
def test_gauss_rule_exactness_degree(order):
    r = gauss_rule(order, 1)
    x, w = r.points[:, 0], r.weights
    for deg in range(2 * order):
        assert np.dot(w, x ** deg) == pytest.approx(1.0 / (deg + 1), abs=1e-14)
    assert abs(np.dot(w, x ** (2 * order)) - 1.0 / (2 * order + 1)) > 1e-6


def test_form_context_validation():
    with pytest.raises(ValueError):
        FormContext(space_order=0)
    with pytest.raises(ValueError):
        FormContext(dual_pairing="middle")


# -- matrices -------------------------------------------------------------------
def test_mass_matrix_two_cells():
    s = two_cell()
    want = np.array([[2, 1, 0], [1, 4, 1], [0, 1, 2]]) / 12
    np.testing.assert_allclose(sorted_1d(s, mass_matrix(s)), want, atol=1e-15)


def test_stiffness_matrix_two_cells():
    s = two_cell()
    want = 2 * np.array([[1, -1, 0], [-1, 2, -1], [0, -1, 1]])
    np.testing.assert_allclose(sorted_1d(s, stiffness_matrix(s)), want, atol=1e-13)


def test_mass_row_sums_match_hat_integrals():
    s = space_for(uniform_mesh(1, (0, 1), 8))
    M = mass_matrix(s)
    np.testing.assert_allclose(np.asarray(M.sum(axis=1)).ravel(), load_vector(s, 1.0), atol=1e-15)
    assert M.sum() == pytest.approx(1.0, abs=1e-14)


def test_mass_single_square_cell():
    s = space_for(uniform_mesh(2, ((0, 1), (0, 1)), 1))
    one = np.ones(s.dim)
    assert one @ mass_matrix(s) @ one == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_stiffness_constants_in_kernel_and_psd(seed):
    s = local_space(seed)
    K = stiffness_matrix(s).toarray()
    np.testing.assert_allclose(K, K.T, atol=1e-14)
    np.testing.assert_allclose(K @ np.ones(s.dim), 0.0, atol=1e-12)
    ev = np.linalg.eigvalsh(K)
    assert ev[0] > -1e-12
    assert np.sum(np.abs(ev) < 1e-10) == 1


@pytest.mark.parametrize("seed", [0, 3])
def test_weighted_mass_unit_and_constant_weight(seed):
    s = local_space(seed)
    M = mass_matrix(s).toarray()
    np.testing.assert_allclose(weighted_mass_matrix(s, s, 1.0).toarray(), M, atol=1e-14)
    np.testing.assert_allclose(weighted_mass_matrix(s, s, 2.5).toarray(), 2.5 * M, atol=1e-14)


def test_weighted_mass_mean_value_weight_against_dense_oracle():
    s = two_cell()
    fine = space_for(uniform_refine(s.mesh))
    xf = fine.node_coords[:, 0]
    uf = FeFunction(fine, 0.8 * np.cos(3 * xf))
    uc = FeFunction(s, 0.5 - 0.9 * s.node_coords[:, 0])
    a = sorted_1d(s, weighted_mass_matrix(s, s, Pointwise(psi_mean_value, uf, uc)))

    xs = np.sort(s.node_coords[:, 0])
    xfs_order = np.argsort(xf)

    def hat(i, x):
        return np.interp(x, xs, np.eye(3)[i])

    def weight(x):
        return float(psi_mean_value(np.interp(x, xf[xfs_order], uf.coefficients[xfs_order]),
                                    np.interp(x, xs, 0.5 - 0.9 * xs)))

    breaks = np.linspace(0, 1, 5)
    want = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            want[i, j] = sum(quad(lambda x: weight(x) * hat(i, x) * hat(j, x), lo, hi, epsabs=1e-14,
                                  epsrel=1e-13)[0] for lo, hi in zip(breaks[:-1], breaks[1:]))
    np.testing.assert_allclose(a, want, atol=1e-13)


def test_weighted_mass_rejects_different_roots():
    a = space_for(uniform_mesh(1, (0, 1), 2))
    b = space_for(uniform_mesh(1, (0, 2), 2))
    with pytest.raises(MeshError):
        weighted_mass_matrix(a, b)


# -- loads, projection, inner products ----------------------------------------------
def test_load_vector_zero_and_one():
    s = local_space()
    np.testing.assert_array_equal(load_vector(s, 0.0), 0.0)
    assert load_vector(s, 1.0).sum() == pytest.approx(1.0, abs=1e-14)


def test_load_vector_sine_integral():
    s = space_for(uniform_mesh(1, (0, 1), 64))
    b = load_vector(s, lambda x: np.sin(np.pi * x[:, 0]))
    assert b.sum() == pytest.approx(2 / np.pi, abs=1e-8)


@pytest.mark.parametrize("seed", [0, 1])
def test_l2_project_reproduces_linears(seed):
    s = local_space(seed)
    g = lambda x: 1.5 - 2.0 * x[:, 0] + 0.5 * x[:, 1]
    np.testing.assert_allclose(l2_project(g, s).coefficients, g(s.node_coords), atol=1e-10)


def test_l2_project_identity_on_own_space(rng):
    s = local_space(2)
    f = FeFunction(s, rng.standard_normal(s.dim))
    np.testing.assert_allclose(l2_project(f, s).coefficients, f.coefficients, atol=1e-10)


def test_l2_project_ring_datum_against_dense_oracle():
    n = 16
    s = space_for(uniform_mesh(2, RING_BOX, n))
    u0 = ring_initial(0.0625)
    got = l2_project(u0, s).coefficients

    # Independent bilinear assembly on the tensor grid.
    h = 2.0 / n
    g = np.polynomial.legendre.leggauss(3)
    gx, gw = 0.5 * (g[0] + 1), 0.5 * g[1]
    phi = np.array([1 - gx, gx])
    grid_idx = lambda i, j: i * (n + 1) + j
    Md = np.zeros(((n + 1) ** 2,) * 2)
    bd = np.zeros((n + 1) ** 2)
    for ci in range(n):
        for cj in range(n):
            X = -1 + h * (ci + gx)[:, None] * np.ones(3)[None, :]
            Y = -1 + h * (cj + gx)[None, :] * np.ones(3)[:, None]
            fv = u0(np.stack([X.ravel(), Y.ravel()], axis=1)).reshape(3, 3)
            W = h * h * np.outer(gw, gw)
            loc = [(a, b) for a in (0, 1) for b in (0, 1)]
            for a, b in loc:
                pa = np.outer(phi[a], phi[b])
                I = grid_idx(ci + a, cj + b)
                bd[I] += np.sum(W * fv * pa)
                for c, d in loc:
                    Md[I, grid_idx(ci + c, cj + d)] += np.sum(W * pa * np.outer(phi[c], phi[d]))
    want = np.linalg.solve(Md, bd)
    coords = s.node_coords
    idx = np.rint((coords[:, 0] + 1) / h).astype(int) * (n + 1) + np.rint((coords[:, 1] + 1) / h).astype(int)
    np.testing.assert_allclose(got, want[idx], atol=1e-10)


def test_l2_inner_interior_hat():
    s = space_for(uniform_mesh(1, (0, 1), 8))
    i = int(np.argmin(np.abs(s.node_coords[:, 0] - 0.5)))
    c = np.zeros(s.dim)
    c[i] = 1.0
    assert l2_inner(FeFunction(s, c), 1.0) == pytest.approx(1 / 8, abs=1e-15)


def test_l2_norm_of_zero_and_sine_product():
    s = space_for(uniform_mesh(2, ((0, 1), (0, 1)), 64))
    assert l2_norm_sq(FeFunction(s, np.zeros(s.dim))) == 0.0
    val = l2_norm_sq(lambda x: np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]), mesh=s.mesh)
    assert val == pytest.approx(0.25, abs=1e-8)


def test_l2_inner_across_nested_meshes_is_exact(rng):
    coarse = local_space(1)
    fine = space_for(uniform_refine(coarse.mesh))
    f = FeFunction(coarse, rng.standard_normal(coarse.dim))
    g = FeFunction(fine, rng.standard_normal(fine.dim))
    # Represent f exactly on the fine space and compare with the fine mass matrix.
    f_fine = fine.interpolate(lambda x: f.evaluate(x)).coefficients
    want = f_fine @ mass_matrix(fine) @ g.coefficients
    assert l2_inner(f, g) == pytest.approx(want, abs=1e-12)


# -- time quadrature --------------------------------------------------------------
@pytest.mark.parametrize("integrand, interval, want, tol", [
    (lambda t: 1.0, (0, 1), 1.0, 1e-15),
    (lambda t: t ** 3, (0, 1), 0.25, 1e-15),
    (np.sin, (0, 0.1), 1 - np.cos(0.1), 1e-12),
])
def test_time_quadrature_examples(integrand, interval, want, tol):
    assert time_quadrature(interval, integrand) == pytest.approx(want, abs=tol)


def test_time_quadrature_split_is_exact_for_piecewise_constant():
    step = lambda t: 1.0 if t < 0.3 else 5.0
    assert time_quadrature((0.0, 0.6), step, split_at=0.3) == pytest.approx(0.3 + 1.5, abs=1e-15)
    with pytest.raises(ValueError):
        time_quadrature((0.0, 0.6), step, split_at=0.7)


# -- properties --------------------------------------------------------------------
@given(st.integers(0, 10_000))
def test_partition_of_unity(seed):
    s = local_space(seed % 7)
    pts = np.random.default_rng(seed).uniform(0, 1, size=(100, 2))
    E = s.basis_matrix(pts)[0]
    np.testing.assert_allclose(np.asarray(E.sum(axis=1)).ravel(), 1.0, atol=1e-13)


@given(st.integers(0, 6))
def test_assembled_matrices_are_symmetric(seed):
    s = local_space(seed)
    for a in (mass_matrix(s), stiffness_matrix(s), weighted_mass_matrix(s, s, lambda x: 1 + x[:, 0] ** 2)):
        d = a.toarray()
        np.testing.assert_allclose(d, d.T, atol=1e-14)
