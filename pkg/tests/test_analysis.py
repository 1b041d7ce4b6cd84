"""Error metrics, slope fitting, clustering, and the circle Fourier metric."""

import numpy as np
import pytest

from dynlap.analysis import (
    ConvergenceRecord,
    canonical_labels,
    eigenvector_error,
    fit_slope,
    interpolate_to_fine,
    kmeans,
    m_normalize,
    m_orthonormalize,
    shift1d_fourier_error,
    subspace_error,
)
from dynlap.circle1d import CircleSpace
from dynlap.errors import ConfigurationError, ContractViolation
from dynlap.fem import FESpace, assemble_mass
from dynlap.mesh import Domain2D, build_regular_mesh

UNIT = Domain2D(0.0, 1.0, 0.0, 1.0)


# -- interpolation ------------------------------------------------------------------


def test_interpolate_constant_exact():
    coarse = FESpace(build_regular_mesh(5, 5, UNIT), 1)
    fine = FESpace(build_regular_mesh(17, 17, UNIT), 2)
    out = interpolate_to_fine(coarse, np.full(coarse.n_dofs, 3.25), fine)
    np.testing.assert_allclose(out, 3.25, atol=1e-13)


def test_interpolate_same_space_identity():
    space = FESpace(build_regular_mesh(9, 9, UNIT), 1)
    rng = np.random.default_rng(0)
    coeffs = rng.normal(size=space.n_dofs)
    np.testing.assert_allclose(interpolate_to_fine(space, coeffs, space), coeffs, atol=1e-12)


def test_interpolate_affine_reproduction():
    coarse = FESpace(build_regular_mesh(5, 5, UNIT), 1)
    fine = FESpace(build_regular_mesh(33, 33, UNIT), 1)
    coeffs = 2 * coarse.dof_coords[:, 0] + 3 * coarse.dof_coords[:, 1] - 1
    out = interpolate_to_fine(coarse, coeffs, fine)
    expect = 2 * fine.dof_coords[:, 0] + 3 * fine.dof_coords[:, 1] - 1
    np.testing.assert_allclose(out, expect, atol=1e-10)


# -- eigenvector / subspace errors -----------------------------------------------------


def _space_and_mass(n=9, degree=1):
    space = FESpace(build_regular_mesh(n, n, UNIT), degree)
    return space, assemble_mass(space)


def test_eigenvector_error_trivial_cases():
    space, M = _space_and_mass()
    rng = np.random.default_rng(1)
    v = m_normalize(rng.normal(size=space.n_dofs), M)
    assert eigenvector_error(v, v, M) == pytest.approx(0.0, abs=1e-7)
    assert eigenvector_error(v, -v, M) == pytest.approx(0.0, abs=1e-7)
    w = rng.normal(size=space.n_dofs)
    w = w - (v @ M.matvec(w)) * v
    w = m_normalize(w, M)
    assert eigenvector_error(v, w, M) == pytest.approx(1.0, abs=1e-7)


def test_eigenvector_error_arithmetic():
    space, M = _space_and_mass()
    rng = np.random.default_rng(2)
    v = m_normalize(rng.normal(size=space.n_dofs), M)
    w = rng.normal(size=space.n_dofs)
    w = m_normalize(w - (v @ M.matvec(w)) * v, M)
    mix = m_normalize(0.8 * v + np.sqrt(1 - 0.64) * w, M)
    assert eigenvector_error(v, mix, M) == pytest.approx(0.6, abs=1e-9)


def test_eigenvector_error_requires_normalization():
    space, M = _space_and_mass()
    v = np.full(space.n_dofs, 2.0)  # L2 norm 2 on the unit square
    with pytest.raises(ContractViolation):
        eigenvector_error(v, v, M)


def test_subspace_error_basis_invariance():
    space, M = _space_and_mass(n=11)
    rng = np.random.default_rng(3)
    basis = m_orthonormalize(rng.normal(size=(space.n_dofs, 2)), M)
    theta = np.pi / 6
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    assert subspace_error(basis, basis @ rot, M) == pytest.approx(0.0, abs=1e-7)


def test_subspace_error_matches_eigenvector_error_for_m1():
    space, M = _space_and_mass()
    rng = np.random.default_rng(4)
    v = m_normalize(rng.normal(size=space.n_dofs), M)
    w = rng.normal(size=space.n_dofs)
    w = m_normalize(w - (v @ M.matvec(w)) * v, M)
    mix = m_normalize(0.8 * v + 0.6 * w, M)
    e1 = eigenvector_error(v, mix, M)
    e2 = subspace_error(v[:, None], mix[:, None], M)
    assert e2 == pytest.approx(e1, abs=1e-10)


def test_subspace_error_rejects_mismatched_dims():
    space, M = _space_and_mass()
    rng = np.random.default_rng(5)
    b1 = m_orthonormalize(rng.normal(size=(space.n_dofs, 2)), M)
    b2 = m_orthonormalize(rng.normal(size=(space.n_dofs, 3)), M)
    with pytest.raises(ConfigurationError):
        subspace_error(b1, b2, M)


def test_subspace_error_names_offending_entry():
    space, M = _space_and_mass()
    bad = np.ones((space.n_dofs, 2))
    with pytest.raises(ContractViolation, match="Gram"):
        subspace_error(bad, bad, M)


# -- slope fitting ----------------------------------------------------------------------


def test_fit_slope_exact_power_laws():
    hs = [0.5, 0.25, 0.125, 0.0625]
    rec2 = [(h, 3.0 * h**2) for h in hs]
    rec4 = [(h, 0.7 * h**4) for h in hs]
    assert fit_slope(rec2) == pytest.approx(2.0, abs=1e-12)
    assert fit_slope(rec4) == pytest.approx(4.0, abs=1e-12)


def test_fit_slope_published_p1_sequence():
    # plotted first-eigenvalue errors of the quadrature scheme, first degree
    data = [
        (0.5553603672697958, 0.05924545441242054),
        (0.2776801836348979, 0.015203604963563743),
        (0.13884009181744894, 0.003830485900351286),
        (0.06942004590872447, 0.0009595896941673767),
        (0.034710022954362235, 0.0002400225654180785),
        (0.017355011477181118, 6.0013444384765215e-5),
    ]
    assert fit_slope(data) == pytest.approx(2.0, abs=0.05)


def test_fit_slope_with_records():
    recs = [
        ConvergenceRecord("cg", 1, h, 2.0 * h**2, 1.5 * h**3) for h in (0.5, 0.25, 0.125)
    ]
    assert fit_slope(recs, "eigval_rel_err") == pytest.approx(2.0, abs=1e-10)
    assert fit_slope(recs, "eigspace_err") == pytest.approx(3.0, abs=1e-10)


def test_fit_slope_excludes_nonpositive():
    data = [(0.5, 0.25), (0.25, 0.0625), (0.125, 0.0)]
    assert fit_slope(data) == pytest.approx(2.0, abs=1e-10)
    with pytest.raises(ConfigurationError):
        fit_slope([(0.5, 0.0), (0.25, 0.0)])


# -- k-means ------------------------------------------------------------------------------


def test_kmeans_each_point_own_cluster():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0]])
    part = kmeans(pts, 4, seed=0)
    assert part.inertia == pytest.approx(0.0, abs=1e-12)
    assert len(set(part.labels)) == 4


def test_kmeans_two_blobs():
    rng = np.random.default_rng(10)
    blob_a = rng.normal(loc=(0, 0), scale=0.5, size=(80, 2))
    blob_b = rng.normal(loc=(10, 10), scale=0.5, size=(90, 2))
    feats = np.vstack([blob_a, blob_b])
    part = kmeans(feats, 2, seed=1)
    labels = canonical_labels(part.labels)
    assert set(labels[:80]) == {0}
    assert set(labels[80:]) == {1}


def test_kmeans_deterministic_per_seed():
    rng = np.random.default_rng(11)
    feats = rng.random((200, 3))
    a = kmeans(feats, 5, seed=42)
    b = kmeans(feats, 5, seed=42)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.inertia == b.inertia


def test_kmeans_permutation_up_to_relabeling():
    rng = np.random.default_rng(12)
    feats = np.vstack(
        [
            rng.normal(loc=(0, 0), scale=0.3, size=(40, 2)),
            rng.normal(loc=(5, 0), scale=0.3, size=(40, 2)),
            rng.normal(loc=(0, 5), scale=0.3, size=(40, 2)),
        ]
    )
    perm = rng.permutation(len(feats))
    a = kmeans(feats, 3, seed=7)
    b = kmeans(feats[perm], 3, seed=7)
    restored = np.empty_like(b.labels)
    restored[perm] = b.labels
    np.testing.assert_array_equal(canonical_labels(a.labels), canonical_labels(restored))


def test_kmeans_k1_single_label():
    rng = np.random.default_rng(13)
    part = kmeans(rng.random((50, 2)), 1, seed=0)
    assert set(part.labels) == {0}


def test_kmeans_k_out_of_range():
    with pytest.raises(ConfigurationError):
        kmeans(np.zeros((3, 2)), 4, seed=0)


# -- circle Fourier metric ------------------------------------------------------------------


def test_fourier_error_exact_sine():
    space = CircleSpace(64, 2)
    nodes = space.dof_nodes()
    coeffs = np.sqrt(2.0) * np.sin(2 * np.pi * nodes)
    evec, eval_rel = shift1d_fourier_error(space, coeffs, n_points=10**5)
    assert evec < 1e-4  # only the P2-interpolation residual remains
    assert eval_rel < 1e-4


def test_fourier_error_orthogonal_mode():
    space = CircleSpace(128, 2)
    coeffs = np.sqrt(2.0) * np.sin(4 * np.pi * space.dof_nodes())
    evec, _ = shift1d_fourier_error(space, coeffs, n_points=10**5)
    assert evec == pytest.approx(1.0, abs=1e-3)


def test_fourier_error_uses_supplied_eigenvalue():
    space = CircleSpace(32, 1)
    coeffs = np.sqrt(2.0) * np.sin(2 * np.pi * space.dof_nodes())
    _, eval_rel = shift1d_fourier_error(space, coeffs, mu=4 * np.pi**2 * 1.5, n_points=10**4)
    assert eval_rel == pytest.approx(0.5, abs=1e-12)


def test_fourier_error_published_value_h_2_to_7():
    # frozen pipeline value for the two-step rotation by 0.15 at 128 elements
    from dynlap.eigen import solve_smallest
    from dynlap.to import assemble_to_stiffness, nonadaptive_problem

    space = CircleSpace(128, 1)
    prob = nonadaptive_problem(space, space, lambda x: np.mod(x - 0.3, 1.0))
    D = assemble_to_stiffness(prob)
    res = solve_smallest(D, prob.M, 2)
    evec, eval_rel = shift1d_fourier_error(space, res.vectors[:, 1], mu=res.eigenvalues[1])
    assert evec == pytest.approx(8.982518446045041e-5, rel=1e-3)
    assert eval_rel == pytest.approx(8.833482455916898e-5, rel=1e-3)
