"""Transfer-operator discretization: collocation matrices and the composed form.

The pushforward of a finite-element function is approximated by nodal
interpolation on the time-1 space: row i of the collocation matrix holds the
time-0 basis evaluated at the preimage of the i-th time-1 node, so the matrix
acts on coefficient vectors as interpolation-after-transport.  The composed
stiffness is the average of the time-0 form and the pulled-back time-1 form,

    D = (D0 + A^T D1 A) / 2,

which is symmetric positive semidefinite and annihilates constants whenever
A has unit row sums and D1 annihilates constants.

The averaging factor 1/2 matches the two-instant time mean used everywhere
else in this package; dropping it would double all eigenvalues and change no
eigenvector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .circle1d import CircleSpace
from .errors import ConfigurationError, OutOfDomainError
from .fem import FESpace, IdentityField, SparseSymMatrix, assemble_mass, assemble_stiffness
from .mesh import delaunay_triangulate

#: Unit row sums (exactness on constant functions) are enforced to this level.
ROW_SUM_TOL = 1e-10

GALERKIN_SIZE_CAP = 2000


@dataclass
class CollocationMatrix:
    """Sparse interpolation-of-pushforward matrix with a variant tag."""

    matrix: sp.csr_matrix
    variant: str  # non_adaptive | adaptive | l2_galerkin_reference

    @property
    def shape(self):
        return self.matrix.shape


@dataclass
class TOProblem:
    """Everything needed to assemble the composed two-time stiffness."""

    space0: object
    space1: object
    A: CollocationMatrix
    D0: SparseSymMatrix
    D1: SparseSymMatrix
    M: SparseSymMatrix


def _dof_nodes(space):
    if isinstance(space, FESpace):
        return space.dof_coords
    return space.dof_nodes()


def collocation_matrix(space0, space1, inverse_map, variant="non_adaptive"):
    """A[i, j] = phi_j(inverse_map(p_i)) over the dof nodes p_i of space1.

    Row sums equal 1 (the basis is a partition of unity wherever the preimage
    lands), which is checked and enforced as a contract.  Preimages leaving a
    non-periodic domain raise `OutOfDomainError` listing the offending nodes.
    """
    nodes = _dof_nodes(space1)
    preimages = np.asarray(inverse_map(nodes))
    try:
        rows = space0.basis_rows(preimages)
    except OutOfDomainError as exc:
        raise OutOfDomainError(
            f"collocation preimages leave the domain: {exc}", points=exc.points
        ) from exc
    sums = np.asarray(rows.sum(axis=1)).ravel()
    worst = np.abs(sums - 1.0).max()
    if worst > ROW_SUM_TOL:
        raise ConfigurationError(
            f"collocation row sums deviate from 1 by {worst:.3e}"
        )
    return CollocationMatrix(rows.tocsr(), variant)


def adaptive_image_space(space0: FESpace, flow, seed: int = 0):
    """Time-1 space on a Delaunay triangulation of the forward node images.

    Inherently first-order: the node-image correspondence identifies time-0
    and time-1 dofs one-to-one, so the collocation matrix is the identity.
    """
    if space0.degree != 1:
        raise ConfigurationError("the adaptive image space is P1-only")
    t0, t1 = flow.default_times[0], flow.default_times[-1]
    images = flow.forward_many(space0.dof_coords, t0, t1)
    mesh1 = delaunay_triangulate(images, flow.domain, seed=seed)
    space1 = FESpace(mesh1, 1)
    if space1.n_dofs != space0.n_dofs:
        raise ConfigurationError(
            f"image triangulation lost nodes: {space1.n_dofs} != {space0.n_dofs}"
        )
    ident = sp.identity(space0.n_dofs, format="csr")
    return space1, CollocationMatrix(ident, "adaptive")


def _identity_stiffness(space, quad_order=None):
    if isinstance(space, CircleSpace):
        return space.stiffness_matrix()
    return assemble_stiffness(space, IdentityField(), quad_order)


def _mass(space):
    if isinstance(space, CircleSpace):
        return space.mass_matrix()
    return assemble_mass(space)


def build_to_problem(space0, space1, A: CollocationMatrix, quad_order=None) -> TOProblem:
    """Assemble the two static stiffness matrices and the time-0 mass matrix."""
    return TOProblem(
        space0=space0,
        space1=space1,
        A=A,
        D0=_identity_stiffness(space0, quad_order),
        D1=_identity_stiffness(space1, quad_order),
        M=_mass(space0),
    )


def nonadaptive_problem(space0, space1, inverse_map, quad_order=None) -> TOProblem:
    A = collocation_matrix(space0, space1, inverse_map, "non_adaptive")
    return build_to_problem(space0, space1, A, quad_order)


def adaptive_problem(space0: FESpace, flow, seed: int = 0) -> TOProblem:
    space1, A = adaptive_image_space(space0, flow, seed)
    return build_to_problem(space0, space1, A)


def assemble_to_stiffness(problem: TOProblem) -> SparseSymMatrix:
    """Composed stiffness (D0 + A^T D1 A) / 2 as a symmetric sparse matrix."""
    A = problem.A.matrix
    n0 = problem.D0.dimension
    n1 = problem.D1.dimension
    if A.shape != (n1, n0):
        raise ConfigurationError(
            f"collocation matrix shape {A.shape} does not match D1 ({n1}) x D0 ({n0})"
        )
    composed = 0.5 * (problem.D0.matrix + A.T @ problem.D1.matrix @ A)
    return SparseSymMatrix(composed.tocsr())


def l2_galerkin_matrix_dense(space0, space1, inverse_map, quad_order=4):
    """Dense reference for the projection-based pushforward matrix.

    Computes G^{-1} Atilde with Atilde[i, j] = <phi_i^1, phi_j^0 o T^{-1}>
    by quadrature on the time-1 mesh.  Kept dense and capped in size: the
    projected matrix has no useful sparsity even when both factors do.
    """
    if space0.n_dofs > GALERKIN_SIZE_CAP or space1.n_dofs > GALERKIN_SIZE_CAP:
        raise ConfigurationError(
            f"dense reference capped at {GALERKIN_SIZE_CAP} dofs"
        )
    if isinstance(space1, CircleSpace):
        atilde = _galerkin_rhs_1d(space0, space1, inverse_map, quad_order)
        gram = space1.mass_matrix().toarray()
    else:
        atilde = _galerkin_rhs_2d(space0, space1, inverse_map, quad_order)
        gram = assemble_mass(space1).toarray()
    return np.linalg.solve(gram, atilde)


def _galerkin_rhs_1d(space0, space1: CircleSpace, inverse_map, quad_order):
    # Gauss-Legendre on each element of the time-1 grid
    gl_x, gl_w = np.polynomial.legendre.leggauss(max(quad_order, 4))
    xi = 0.5 * (gl_x + 1.0)
    w = 0.5 * gl_w
    atilde = np.zeros((space1.n_dofs, space0.n_dofs))
    dofs1 = space1.element_dofs()
    for e in range(space1.n):
        xq = (e + xi) * space1.h
        vals1 = space1._shape_values(xi)  # (nq, nloc)
        rows0 = space0.basis_rows(np.asarray(inverse_map(xq)))  # (nq, n0)
        block = (vals1 * w[:, None]).T @ rows0.toarray() * space1.h
        atilde[dofs1[e]] += block
    return atilde


def _galerkin_rhs_2d(space0, space1: FESpace, inverse_map, quad_order):
    from .fem import _shape_table, quadrature_rule

    rule = quadrature_rule(quad_order)
    vals1, _ = _shape_table(space1.degree, rule.points)  # (nq, nloc)
    mesh = space1.mesh
    atilde = np.zeros((space1.n_dofs, space0.n_dofs))
    for t in range(mesh.n_triangles):
        pts = rule.points @ mesh.tri_coords[t]  # (nq, 2)
        rows0 = space0.basis_rows(np.asarray(inverse_map(pts))).toarray()
        area = mesh.triangle_areas[t]
        block = (vals1 * rule.weights[:, None]).T @ rows0 * area
        atilde[space1.cell_dofs[t]] += block
    return atilde
