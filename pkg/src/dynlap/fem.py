"""Lagrange P1/P2 elements on triangles: quadrature, spaces, matrix assembly.

The stiffness form is `a(u, v) = int grad(u) . A(x) grad(v) dx` for a
symmetric positive-definite tensor field `A`.  With `A = I` this is the
standard Neumann Laplacian; the pulled-back mean diffusion tensor of a flow
map is produced by `cg_tensor_field`.

Assembly is element-local and pure; element contributions are merged in
element-index order, so results do not depend on any parallel schedule.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, GeometryError, NumericalError
from .mesh import Mesh

#: Chunk of elements processed per assembly batch (bounds temporary arrays).
ASSEMBLY_CHUNK = 16384


# ---------------------------------------------------------------------------
# shape functions
# ---------------------------------------------------------------------------

def shape_functions(degree: int, barycentric):
    """Values and reference gradients of the nodal basis at one barycentric point.

    Local node order: the three vertices, then (for degree 2) the midpoints of
    edges (0,1), (1,2), (2,0).  Gradients are with respect to the reference
    coordinates (xi, eta) with L0 = 1-xi-eta, L1 = xi, L2 = eta.
    """
    lam = np.asarray(barycentric, dtype=float)
    values, grads = _shape_table(degree, lam[None, :])
    return values[0], grads[0]


def _shape_table(degree, bary):
    """Vectorized shape evaluation: bary (nq, 3) -> (nq, nloc), (nq, nloc, 2)."""
    bary = np.asarray(bary, dtype=float)
    nq = bary.shape[0]
    l0, l1, l2 = bary[:, 0], bary[:, 1], bary[:, 2]
    if degree == 1:
        values = bary.copy()
        grads = np.broadcast_to(
            np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]), (nq, 3, 2)
        ).copy()
        return values, grads
    if degree == 2:
        values = np.empty((nq, 6))
        values[:, 0] = l0 * (2 * l0 - 1)
        values[:, 1] = l1 * (2 * l1 - 1)
        values[:, 2] = l2 * (2 * l2 - 1)
        values[:, 3] = 4 * l0 * l1
        values[:, 4] = 4 * l1 * l2
        values[:, 5] = 4 * l2 * l0
        grads = np.empty((nq, 6, 2))
        grads[:, 0, 0] = 1 - 4 * l0
        grads[:, 0, 1] = 1 - 4 * l0
        grads[:, 1, 0] = 4 * l1 - 1
        grads[:, 1, 1] = 0.0
        grads[:, 2, 0] = 0.0
        grads[:, 2, 1] = 4 * l2 - 1
        grads[:, 3, 0] = 4 * (l0 - l1)
        grads[:, 3, 1] = -4 * l1
        grads[:, 4, 0] = 4 * l2
        grads[:, 4, 1] = 4 * l1
        grads[:, 5, 0] = -4 * l2
        grads[:, 5, 1] = 4 * (l0 - l2)
        return values, grads
    raise ConfigurationError(f"unsupported element degree {degree} (use 1 or 2)")


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

class QuadratureRule:
    """Symmetric triangle rule; weights sum to 1 (unit reference measure)."""

    def __init__(self, order, points, weights):
        self.order = order
        self.points = np.asarray(points, dtype=float)
        self.weights = np.asarray(weights, dtype=float)

    def __len__(self):
        return len(self.weights)


def _orbit1():
    return [(1 / 3, 1 / 3, 1 / 3)]


def _orbit3(a):
    b = 1.0 - 2.0 * a
    return [(a, a, b), (a, b, a), (b, a, a)]


def _orbit6(a, b):
    c = 1.0 - a - b
    return [(a, b, c), (b, a, c), (a, c, b), (c, a, b), (b, c, a), (c, b, a)]


# Positive-weight symmetric Gauss rules, coefficients to 17 significant digits
# (orbit parameters refined against exact monomial moments).
_RULES = {
    1: [(_orbit1(), 1.0)],
    2: [(_orbit3(1 / 6), 1 / 3)],
    4: [
        (_orbit3(0.44594849091596489), 0.22338158967801147),
        (_orbit3(0.091576213509770743), 0.10995174365532187),
    ],
    5: [
        (_orbit1(), 0.225),
        (_orbit3(0.47014206410511509), 0.13239415278850618),
        (_orbit3(0.10128650732345634), 0.12593918054482715),
    ],
    6: [
        (_orbit3(0.063089014491502228), 0.050844906370206817),
        (_orbit3(0.24928674517091042), 0.11678627572637937),
        (_orbit6(0.053145049844816947, 0.31035245103378441), 0.082851075618373575),
    ],
    8: [
        (_orbit1(), 0.14431560767778717),
        (_orbit3(0.45929258829272316), 0.095091634267284625),
        (_orbit3(0.17056930775176021), 0.10321737053471825),
        (_orbit3(0.050547228317030975), 0.03245849762319808),
        (_orbit6(0.26311282963463811, 0.0083947774099576053), 0.027230314174434994),
    ],
}

# requested order -> stored rule of at least that degree, smallest point count
_ORDER_TO_RULE = {1: 1, 2: 2, 3: 4, 4: 4, 5: 5, 6: 6, 7: 8, 8: 8}


def quadrature_rule(order: int) -> QuadratureRule:
    """Symmetric Gauss rule exact for all polynomials of total degree <= order."""
    if order not in _ORDER_TO_RULE:
        raise ConfigurationError(f"quadrature order {order} not in 1..8")
    points, weights = [], []
    for orbit, w in _RULES[_ORDER_TO_RULE[order]]:
        for p in orbit:
            points.append(p)
            weights.append(w)
    return QuadratureRule(order, points, weights)


# ---------------------------------------------------------------------------
# sparse symmetric matrices
# ---------------------------------------------------------------------------

class SparseSymMatrix:
    """Symmetric sparse matrix; stores the symmetrized CSR form."""

    def __init__(self, matrix):
        matrix = sp.csr_matrix(matrix)
        if matrix.shape[0] != matrix.shape[1]:
            raise ConfigurationError(f"matrix not square: {matrix.shape}")
        asym = abs(matrix - matrix.T)
        scale = abs(matrix).max() if matrix.nnz else 0.0
        if asym.nnz and asym.max() > 1e-10 * max(scale, 1e-300):
            raise NumericalError(f"matrix asymmetric by {asym.max():.3e}")
        self.matrix = ((matrix + matrix.T) * 0.5).tocsr()
        self.dimension = matrix.shape[0]

    @property
    def shape(self):
        return self.matrix.shape

    def norm_max(self):
        return float(abs(self.matrix).max()) if self.matrix.nnz else 0.0

    def matvec(self, x):
        return self.matrix @ x

    def toarray(self):
        return self.matrix.toarray()

    def export_triplets(self, path):
        """Write `i j value` lines for the lower triangle (debug interchange)."""
        coo = sp.tril(self.matrix).tocoo()
        with open(path, "w", encoding="ascii") as f:
            for i, j, v in zip(coo.row, coo.col, coo.data):
                f.write(f"{i} {j} {float(v)!r}\n")


# ---------------------------------------------------------------------------
# tensor fields
# ---------------------------------------------------------------------------

class TensorField:
    """Map from points to symmetric positive-definite 2x2 matrices."""

    def evaluate(self, point):
        return self.evaluate_many(np.asarray(point, dtype=float)[None, :])[0]

    def evaluate_many(self, points):
        raise NotImplementedError


class IdentityField(TensorField):
    def evaluate_many(self, points):
        n = len(np.atleast_2d(points))
        out = np.zeros((n, 2, 2))
        out[:, 0, 0] = 1.0
        out[:, 1, 1] = 1.0
        return out


class ScaledIdentityField(TensorField):
    def __init__(self, factor):
        self.factor = float(factor)

    def evaluate_many(self, points):
        return IdentityField().evaluate_many(points) * self.factor


class CallableTensorField(TensorField):
    """Wraps a function point -> 2x2 array (evaluated in a loop)."""

    def __init__(self, fn):
        self.fn = fn

    def evaluate_many(self, points):
        pts = np.atleast_2d(points)
        return np.array([self.fn(p) for p in pts], dtype=float)


class PrecomputedTensorField(TensorField):
    """Tensor values bound to a fixed point sequence (cache replay)."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def evaluate_many(self, points):
        pts = np.atleast_2d(points)
        if len(pts) != len(self.values):
            raise ConfigurationError(
                f"precomputed tensor bound to {len(self.values)} points, "
                f"queried with {len(pts)}"
            )
        return self.values


class CGTensorField(TensorField):
    """Time-mean of pulled-back metric tensors inv(J) inv(J)^T along a flow.

    At the initial time the map is the identity and the summand is the
    identity matrix; other times query the flow's Jacobian.
    """

    def __init__(self, flow, times):
        if len(times) < 1:
            raise ConfigurationError("need at least one time instant")
        self.flow = flow
        self.times = list(times)

    def evaluate_many(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros((len(pts), 2, 2))
        t0 = self.times[0]
        for t in self.times:
            if t == t0:
                out[:, 0, 0] += 1.0
                out[:, 1, 1] += 1.0
                continue
            jac = self.flow.jacobian_many(pts, t0, t)
            det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
            bad = np.abs(det) < 1e-12
            if np.any(bad):
                k = int(np.nonzero(bad)[0][0])
                raise NumericalError(
                    f"singular flow Jacobian (det={det[k]:.3e}) at point "
                    f"({pts[k, 0]}, {pts[k, 1]}), time {t}"
                )
            inv = np.empty_like(jac)
            inv[:, 0, 0] = jac[:, 1, 1] / det
            inv[:, 0, 1] = -jac[:, 0, 1] / det
            inv[:, 1, 0] = -jac[:, 1, 0] / det
            inv[:, 1, 1] = jac[:, 0, 0] / det
            out += np.einsum("nij,nkj->nik", inv, inv)
        return out / len(self.times)


def cg_tensor_field(flow, times) -> TensorField:
    """Mean diffusion tensor `x -> mean_t inv(DT_t) inv(DT_t)^T` of a flow map."""
    return CGTensorField(flow, times)


def _validate_tensor_values(values, points):
    asym = np.abs(values[:, 0, 1] - values[:, 1, 0])
    scale = np.abs(values).max(axis=(1, 2)) + 1e-300
    if np.any(asym > 1e-12 * np.maximum(scale, 1.0)):
        k = int(np.argmax(asym / scale))
        raise NumericalError(
            f"tensor not symmetric at point ({points[k, 0]}, {points[k, 1]})"
        )
    det = values[:, 0, 0] * values[:, 1, 1] - values[:, 0, 1] * values[:, 1, 0]
    bad = (values[:, 0, 0] <= 0) | (det <= 0)
    if np.any(bad):
        k = int(np.nonzero(bad)[0][0])
        raise NumericalError(
            f"tensor not positive definite at point ({points[k, 0]}, {points[k, 1]}):"
            f" diag={values[k, 0, 0]:.3e}, det={det[k]:.3e}"
        )


# ---------------------------------------------------------------------------
# finite element spaces
# ---------------------------------------------------------------------------

class FESpace:
    """Lagrange space of degree 1 or 2 with a global dof map.

    Vertices identified across periodic seams share one degree of freedom, as
    do coincident edge midpoints for degree 2.
    """

    def __init__(self, mesh: Mesh, degree: int):
        if degree not in (1, 2):
            raise ConfigurationError(f"unsupported degree {degree}")
        self.mesh = mesh
        self.degree = degree
        if degree == 1:
            self.cell_dofs = mesh.vertex_class[mesh.triangles].astype(np.int64)
            self.n_dofs = mesh.n_classes
            self.dof_coords = self._vertex_class_coords()
        else:
            edge_dofs, n_edges, edge_coords = self._build_edge_dofs()
            vdofs = mesh.vertex_class[mesh.triangles]
            self.cell_dofs = np.hstack([vdofs, edge_dofs + mesh.n_classes]).astype(
                np.int64
            )
            self.n_dofs = mesh.n_classes + n_edges
            self.dof_coords = np.vstack([self._vertex_class_coords(), edge_coords])

    @property
    def n_local(self):
        return 3 if self.degree == 1 else 6

    def _vertex_class_coords(self):
        coords = np.zeros((self.mesh.n_classes, 2))
        seen = np.zeros(self.mesh.n_classes, dtype=bool)
        for v in range(self.mesh.n_vertices):
            c = self.mesh.vertex_class[v]
            if not seen[c]:
                coords[c] = self.mesh.vertices[v]
                seen[c] = True
        return coords

    def _build_edge_dofs(self):
        mesh = self.mesh
        if mesh._regular_grid is not None:
            return self._build_edge_dofs_regular()
        # generic path: key an edge by its (canonical) vertex classes and guard
        # against geometrically distinct edges joining the same class pair
        tol = 1e-9 * max(mesh.domain.width, mesh.domain.height)
        key_to_id: dict[tuple[int, int], int] = {}
        midpoints = []
        edge_dofs = np.empty((mesh.n_triangles, 3), dtype=np.int64)
        locals_ = [(0, 1), (1, 2), (2, 0)]
        for t in range(mesh.n_triangles):
            tri = mesh.triangles[t]
            for e, (u, v) in enumerate(locals_):
                cu, cv = mesh.vertex_class[tri[u]], mesh.vertex_class[tri[v]]
                key = (min(cu, cv), max(cu, cv))
                mid = 0.5 * (mesh.tri_coords[t, u] + mesh.tri_coords[t, v])
                mid = mesh.domain.wrap(mid[None, :])[0]
                if key in key_to_id:
                    eid = key_to_id[key]
                    delta = mesh.domain.minimal_image_offset(mid - midpoints[eid])
                    if np.abs(delta).max() > tol:
                        raise GeometryError(
                            "two distinct edges join the same vertex pair "
                            f"{key}; degree-2 dofs are ambiguous on this mesh"
                        )
                else:
                    eid = len(midpoints)
                    key_to_id[key] = eid
                    midpoints.append(mid)
                edge_dofs[t, e] = eid
        return edge_dofs, len(midpoints), np.array(midpoints)

    def _build_edge_dofs_regular(self):
        mesh = self.mesh
        nx, ny = mesh._regular_grid
        dom = mesh.domain
        ncx, ncy = nx - 1, ny - 1
        sx, sy = dom.width / ncx, dom.height / ncy
        xs = np.linspace(dom.x_min, dom.x_max, nx)
        ys = np.linspace(dom.y_min, dom.y_max, ny)

        rows_h = ncy if dom.periodic_y else ny
        cols_v = ncx if dom.periodic_x else nx
        n_h = ncx * rows_h
        n_v = cols_v * ncy
        n_d = ncx * ncy

        def hid(i, j):
            jj = j % ncy if dom.periodic_y else j
            return jj * ncx + i

        def vid(i, j):
            ii = i % ncx if dom.periodic_x else i
            return n_h + j * cols_v + ii

        def did(i, j):
            return n_h + n_v + j * ncx + i

        edge_dofs = np.empty((mesh.n_triangles, 3), dtype=np.int64)
        t = 0
        for j in range(ncy):
            for i in range(ncx):
                edge_dofs[t] = (hid(i, j), vid(i + 1, j), did(i, j))
                edge_dofs[t + 1] = (did(i, j), hid(i, j + 1), vid(i, j))
                t += 2

        coords = np.empty((n_h + n_v + n_d, 2))
        for j in range(rows_h):
            for i in range(ncx):
                coords[j * ncx + i] = (xs[i] + 0.5 * sx, ys[j])
        for j in range(ncy):
            for i in range(cols_v):
                coords[n_h + j * cols_v + i] = (xs[i], ys[j] + 0.5 * sy)
        for j in range(ncy):
            for i in range(ncx):
                coords[n_h + n_v + j * ncx + i] = (xs[i] + 0.5 * sx, ys[j] + 0.5 * sy)
        return edge_dofs, n_h + n_v + n_d, coords

    # -- function evaluation ------------------------------------------------

    def evaluate(self, coeffs, points):
        """Evaluate the FE function with coefficients `coeffs` at `points`."""
        from .mesh import locate_points

        coeffs = np.asarray(coeffs, dtype=float)
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        tri, lam = locate_points(self.mesh, pts)
        values, _ = _shape_table(self.degree, lam)
        return np.einsum("nk,nk->n", values, coeffs[self.cell_dofs[tri]])

    def basis_rows(self, points):
        """Sparse matrix R with R[i, j] = phi_j(points[i]) (one row per point)."""
        from .mesh import locate_points

        pts = np.atleast_2d(np.asarray(points, dtype=float))
        tri, lam = locate_points(self.mesh, pts)
        values, _ = _shape_table(self.degree, lam)
        nloc = self.n_local
        rows = np.repeat(np.arange(len(pts)), nloc)
        cols = self.cell_dofs[tri].ravel()
        data = values.ravel()
        mat = sp.coo_matrix((data, (rows, cols)), shape=(len(pts), self.n_dofs))
        return mat.tocsr()


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def quadrature_points(space: FESpace, quad_order: int):
    """Physical coordinates of all quadrature points, element-major order."""
    rule = quadrature_rule(quad_order)
    return np.einsum("qk,ekd->eqd", rule.points, space.mesh.tri_coords).reshape(-1, 2)


def default_stiffness_order(degree: int) -> int:
    """Stiffness quadrature default 2k-1, which preserves the convergence order."""
    return 2 * degree - 1


def assemble_mass(space: FESpace) -> SparseSymMatrix:
    """Exact mass matrix (quadrature of order 2k integrates the products)."""
    rule = quadrature_rule(2 * space.degree)
    values, _ = _shape_table(space.degree, rule.points)
    local = np.einsum("q,qi,qj->ij", rule.weights, values, values)
    areas = space.mesh.triangle_areas
    nloc = space.n_local
    n = space.n_dofs
    mats = []
    for lo in range(0, space.mesh.n_triangles, ASSEMBLY_CHUNK):
        hi = min(lo + ASSEMBLY_CHUNK, space.mesh.n_triangles)
        ke = areas[lo:hi, None, None] * local[None, :, :]
        dofs = space.cell_dofs[lo:hi]
        rows = np.repeat(dofs, nloc, axis=1).ravel()
        cols = np.tile(dofs, (1, nloc)).ravel()
        mats.append(sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr())
    total = mats[0]
    for m in mats[1:]:
        total = total + m
    return SparseSymMatrix(total)


def assemble_stiffness(
    space: FESpace, field: TensorField, quad_order: int | None = None
) -> SparseSymMatrix:
    """Stiffness matrix of the diffusion form for a tensor field.

    The integrand is evaluated per element with the requested quadrature rule
    (default 2k-1 for degree k) and the element matrices are summed into the
    global matrix in element-index order.
    """
    if quad_order is None:
        quad_order = default_stiffness_order(space.degree)
    rule = quadrature_rule(quad_order)
    _, grads = _shape_table(space.degree, rule.points)  # (nq, nloc, 2)
    mesh = space.mesh
    nloc = space.n_local
    n = space.n_dofs
    mats = []
    for lo in range(0, mesh.n_triangles, ASSEMBLY_CHUNK):
        hi = min(lo + ASSEMBLY_CHUNK, mesh.n_triangles)
        coords = mesh.tri_coords[lo:hi]
        a = coords[:, 0]
        jac = np.stack(
            [coords[:, 1] - a, coords[:, 2] - a], axis=2
        )  # (ne, 2, 2), columns are edge vectors
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1] / det
        inv[:, 0, 1] = -jac[:, 0, 1] / det
        inv[:, 1, 0] = -jac[:, 1, 0] / det
        inv[:, 1, 1] = jac[:, 0, 0] / det
        # physical gradient rows: g_phys = g_ref . J^{-1}
        pg = np.einsum("qic,ecd->eqid", grads, inv)
        pts = np.einsum("qk,ekd->eqd", rule.points, coords).reshape(-1, 2)
        tensor = field.evaluate_many(pts)
        _validate_tensor_values(tensor, pts)
        tensor = tensor.reshape(hi - lo, len(rule), 2, 2)
        tmp = np.einsum("eqic,eqcd->eqid", pg, tensor)
        ke = np.einsum("q,eqid,eqjd->eij", rule.weights, tmp, pg)
        ke *= (0.5 * det)[:, None, None]
        dofs = space.cell_dofs[lo:hi]
        rows = np.repeat(dofs, nloc, axis=1).ravel()
        cols = np.tile(dofs, (1, nloc)).ravel()
        mats.append(sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr())
    total = mats[0]
    for m in mats[1:]:
        total = total + m
    return SparseSymMatrix(total)
