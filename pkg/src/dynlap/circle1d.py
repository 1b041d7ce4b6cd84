"""Lagrange P1/P2 elements on the unit circle with a uniform periodic grid.

The one-dimensional analogue of the 2D machinery: used to study the
collocation transfer-operator discretization under a rigid circle rotation,
where the dynamic Laplacian coincides with the static one and the exact
eigenpairs are the first Fourier modes.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError
from .fem import SparseSymMatrix

# element matrices on [0, h], local dof order (left, right) and (left, right, mid)
_P1_MASS = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
_P1_STIFF = np.array([[1.0, -1.0], [-1.0, 1.0]])
_P2_MASS = np.array([[4.0, -1.0, 2.0], [-1.0, 4.0, 2.0], [2.0, 2.0, 16.0]]) / 30.0
_P2_STIFF = np.array([[7.0, 1.0, -8.0], [1.0, 7.0, -8.0], [-8.0, -8.0, 16.0]]) / 3.0


class CircleSpace:
    """Periodic Lagrange space on [0, 1) with `n` equal elements.

    Dof order: the n element endpoints (at i/n), then for degree 2 the n
    element midpoints (at (i + 1/2)/n).
    """

    def __init__(self, n: int, degree: int):
        if n < 3:
            raise ConfigurationError(f"need at least 3 elements, got {n}")
        if degree not in (1, 2):
            raise ConfigurationError(f"unsupported degree {degree}")
        self.n = n
        self.degree = degree
        self.h = 1.0 / n
        self.n_dofs = n if degree == 1 else 2 * n

    def dof_nodes(self):
        verts = np.arange(self.n) / self.n
        if self.degree == 1:
            return verts
        return np.concatenate([verts, verts + 0.5 / self.n])

    def element_dofs(self):
        """(n, nloc) global dof indices, local order (left, right[, mid])."""
        left = np.arange(self.n)
        right = (left + 1) % self.n
        if self.degree == 1:
            return np.column_stack([left, right])
        return np.column_stack([left, right, self.n + left])

    def mass_matrix(self) -> SparseSymMatrix:
        return self._assemble(_P1_MASS * self.h if self.degree == 1 else _P2_MASS * self.h)

    def stiffness_matrix(self) -> SparseSymMatrix:
        local = _P1_STIFF / self.h if self.degree == 1 else _P2_STIFF / self.h
        return self._assemble(local)

    def _assemble(self, local):
        dofs = self.element_dofs()
        nloc = dofs.shape[1]
        rows = np.repeat(dofs, nloc, axis=1).ravel()
        cols = np.tile(dofs, (1, nloc)).ravel()
        data = np.tile(local.ravel(), self.n)
        mat = sp.coo_matrix((data, (rows, cols)), shape=(self.n_dofs, self.n_dofs))
        return SparseSymMatrix(mat.tocsr())

    def _local_coords(self, x):
        x = np.mod(np.asarray(x, dtype=float), 1.0)
        scaled = x * self.n
        elem = np.minimum(scaled.astype(np.int64), self.n - 1)
        xi = scaled - elem
        return elem, xi

    def _shape_values(self, xi):
        if self.degree == 1:
            return np.column_stack([1.0 - xi, xi])
        return np.column_stack(
            [(1.0 - xi) * (1.0 - 2.0 * xi), xi * (2.0 * xi - 1.0), 4.0 * xi * (1.0 - xi)]
        )

    def basis_rows(self, points):
        """Sparse R with R[i, j] = phi_j(points[i]); points wrap mod 1."""
        pts = np.atleast_1d(np.asarray(points, dtype=float))
        elem, xi = self._local_coords(pts)
        values = self._shape_values(xi)
        dofs = self.element_dofs()[elem]
        nloc = dofs.shape[1]
        rows = np.repeat(np.arange(len(pts)), nloc)
        mat = sp.coo_matrix(
            (values.ravel(), (rows, dofs.ravel())), shape=(len(pts), self.n_dofs)
        )
        return mat.tocsr()

    def evaluate(self, coeffs, points):
        coeffs = np.asarray(coeffs, dtype=float)
        pts = np.atleast_1d(np.asarray(points, dtype=float))
        elem, xi = self._local_coords(pts)
        values = self._shape_values(xi)
        return np.einsum("nk,nk->n", values, coeffs[self.element_dofs()[elem]])

    def evaluate_derivative(self, coeffs, points):
        coeffs = np.asarray(coeffs, dtype=float)
        pts = np.atleast_1d(np.asarray(points, dtype=float))
        elem, xi = self._local_coords(pts)
        if self.degree == 1:
            dval = np.column_stack([-np.ones_like(xi), np.ones_like(xi)])
        else:
            dval = np.column_stack([4.0 * xi - 3.0, 4.0 * xi - 1.0, 4.0 - 8.0 * xi])
        dval /= self.h
        return np.einsum("nk,nk->n", dval, coeffs[self.element_dofs()[elem]])
