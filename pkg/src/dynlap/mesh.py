"""Triangular meshes on rectangles, with optional periodic identification.

Two constructions are provided: regular grid meshes (every cell split along
the same lower-left to upper-right diagonal, so results are reproducible
bit-for-bit) and Delaunay triangulations of scattered points, used when the
time-1 mesh is built from images of the time-0 nodes.

Periodicity is handled by identifying boundary vertices (a quotient map on
degrees of freedom), never by duplicating elements.  The one exception is
`delaunay_triangulate`, which transiently replicates ghost copies of the
point cloud so that the triangulation closes up around the periodic seam.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay as _SciPyDelaunay
from scipy.spatial import QhullError

from .errors import ConfigurationError, GeometryError, OutOfDomainError

log = logging.getLogger(__name__)

#: Barycentric coordinates down to this value are accepted and clamped to 0,
#: so boundary points do not fail location due to floating-point drift.
BARYCENTRIC_TOL = 1e-10

#: Delaunay triangles with area below this fraction of the mean element area
#: are treated as slivers and discarded.
SLIVER_AREA_FRACTION = 1e-12


@dataclass(frozen=True)
class Domain2D:
    """Axis-aligned rectangle, optionally periodic in either direction.

    Both flags set gives a torus, exactly one gives a cylinder.
    """

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    periodic_x: bool = False
    periodic_y: bool = False

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ConfigurationError(
                f"invalid domain bounds: x [{self.x_min}, {self.x_max}], "
                f"y [{self.y_min}, {self.y_max}]"
            )

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def diameter(self) -> float:
        return float(np.hypot(self.width, self.height))

    def wrap(self, points):
        """Fold periodic coordinates into [min, max); non-periodic ones pass through."""
        pts = np.atleast_2d(np.asarray(points, dtype=float)).copy()
        if self.periodic_x:
            pts[:, 0] = self.x_min + np.mod(pts[:, 0] - self.x_min, self.width)
        if self.periodic_y:
            pts[:, 1] = self.y_min + np.mod(pts[:, 1] - self.y_min, self.height)
        return pts

    def contains(self, points, tol=0.0):
        """Boolean mask of points inside the rectangle (after wrapping)."""
        pts = self.wrap(points)
        ok = np.ones(len(pts), dtype=bool)
        if not self.periodic_x:
            ok &= (pts[:, 0] >= self.x_min - tol) & (pts[:, 0] <= self.x_max + tol)
        if not self.periodic_y:
            ok &= (pts[:, 1] >= self.y_min - tol) & (pts[:, 1] <= self.y_max + tol)
        return ok

    def minimal_image_offset(self, delta):
        """Shift `delta` (array of coordinate differences) to the nearest image."""
        d = np.asarray(delta, dtype=float).copy()
        if self.periodic_x:
            d[..., 0] -= self.width * np.round(d[..., 0] / self.width)
        if self.periodic_y:
            d[..., 1] -= self.height * np.round(d[..., 1] / self.height)
        return d


@dataclass(frozen=True)
class ElementLocation:
    """A point expressed as barycentric coordinates within one triangle."""

    triangle_index: int
    barycentric: tuple[float, float, float]


class Mesh:
    """Immutable triangulation of a `Domain2D`.

    Attributes
    ----------
    vertices : (nv, 2) float array
        Stored vertex coordinates.  On periodic domains both sides of a seam
        are stored; `periodic_pairs` records the identification.
    triangles : (nt, 3) int array
        Counter-clockwise vertex index triples.
    periodic_pairs : dict[int, int]
        Maps a duplicate boundary vertex to its canonical partner.
    vertex_class : (nv,) int array
        Canonical class index of every stored vertex after identification.
    tri_coords : (nt, 3, 2) float array
        Unfolded per-triangle geometry.  Coincides with `vertices[triangles]`
        except for triangles straddling a periodic seam, whose vertices are
        shifted to the nearest periodic image of the first vertex.
    """

    def __init__(self, vertices, triangles, domain: Domain2D, periodic_pairs=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        self.domain = domain
        self.periodic_pairs = dict(periodic_pairs or {})
        self.dropped_triangles = 0
        self._regular_grid = None  # (nx, ny) when built by build_regular_mesh
        self._buckets = None

        nv = len(self.vertices)
        if self.triangles.size and (
            self.triangles.min() < 0 or self.triangles.max() >= nv
        ):
            raise GeometryError("triangle vertex index out of range")

        self.vertex_class, self.n_classes = self._build_classes(nv)
        self.tri_coords = self._unfold_triangles()
        self._areas = 0.5 * self._signed_double_areas()
        if np.any(self._areas <= 0):
            bad = int(np.argmin(self._areas))
            raise GeometryError(
                f"triangle {bad} has non-positive area {self._areas[bad]:.3e}"
            )

    # -- construction helpers -------------------------------------------------

    def _build_classes(self, nv):
        parent = np.arange(nv)

        def root(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for a, b in self.periodic_pairs.items():
            ra, rb = root(a), root(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
        roots = np.array([root(i) for i in range(nv)])
        uniq, classes = np.unique(roots, return_inverse=True)
        return classes, len(uniq)

    def _unfold_triangles(self):
        coords = self.vertices[self.triangles]  # (nt, 3, 2)
        if self.domain.periodic_x or self.domain.periodic_y:
            anchor = coords[:, :1, :]
            delta = self.domain.minimal_image_offset(coords - anchor)
            coords = anchor + delta
        return coords

    def _signed_double_areas(self):
        a, b, c = self.tri_coords[:, 0], self.tri_coords[:, 1], self.tri_coords[:, 2]
        return (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (
            c[:, 0] - a[:, 0]
        )

    # -- basic queries ---------------------------------------------------------

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def triangle_areas(self):
        return self._areas

    def total_area(self):
        return float(np.sum(self._areas))

    def edge_lengths(self):
        c = self.tri_coords
        return np.stack(
            [
                np.linalg.norm(c[:, 1] - c[:, 0], axis=1),
                np.linalg.norm(c[:, 2] - c[:, 1], axis=1),
                np.linalg.norm(c[:, 0] - c[:, 2], axis=1),
            ],
            axis=1,
        )

    def max_diameter(self):
        return float(self.edge_lengths().max())

    def min_inscribed_diameter(self):
        el = self.edge_lengths()
        perimeter = el.sum(axis=1)
        return float((4.0 * self._areas / perimeter).min())

    def shape_regularity(self):
        """max element diameter / min inscribed-circle diameter."""
        return self.max_diameter() / self.min_inscribed_diameter()

    # -- point location ---------------------------------------------------------

    def _barycentric(self, tri_index, point):
        a = self.tri_coords[tri_index, 0]
        v0 = self.tri_coords[tri_index, 1] - a
        v1 = self.tri_coords[tri_index, 2] - a
        d = np.asarray(point, dtype=float) - a
        det = v0[0] * v1[1] - v0[1] * v1[0]
        l1 = (d[0] * v1[1] - d[1] * v1[0]) / det
        l2 = (v0[0] * d[1] - v0[1] * d[0]) / det
        return np.array([1.0 - l1 - l2, l1, l2])

    def _candidate_shifts(self):
        xs = [0.0, -self.domain.width, self.domain.width] if self.domain.periodic_x else [0.0]
        ys = [0.0, -self.domain.height, self.domain.height] if self.domain.periodic_y else [0.0]
        return [(sx, sy) for sx in xs for sy in ys]

    def _ensure_buckets(self):
        if self._buckets is not None:
            return
        lo = self.tri_coords.min(axis=1)  # (nt, 2)
        hi = self.tri_coords.max(axis=1)
        nb = max(1, int(np.sqrt(self.n_triangles)))
        bb_lo = lo.min(axis=0)
        bb_hi = hi.max(axis=0)
        span = np.maximum(bb_hi - bb_lo, 1e-300)
        grid: dict[tuple[int, int], list[int]] = {}
        ilo = np.clip(((lo - bb_lo) / span * nb).astype(int), 0, nb - 1)
        ihi = np.clip(((hi - bb_lo) / span * nb).astype(int), 0, nb - 1)
        for t in range(self.n_triangles):
            for ix in range(ilo[t, 0], ihi[t, 0] + 1):
                for iy in range(ilo[t, 1], ihi[t, 1] + 1):
                    grid.setdefault((ix, iy), []).append(t)
        self._buckets = (grid, bb_lo, span, nb)

    def _locate_bucketed(self, point):
        self._ensure_buckets()
        grid, bb_lo, span, nb = self._buckets
        # second pass widens to neighbour buckets: points exactly on a bucket
        # border can miss the covering triangle in the first pass
        for ring in (0, 1):
            for sx, sy in self._candidate_shifts():
                q = np.array([point[0] + sx, point[1] + sy])
                ix = int(np.clip((q[0] - bb_lo[0]) / span[0] * nb, 0, nb - 1))
                iy = int(np.clip((q[1] - bb_lo[1]) / span[1] * nb, 0, nb - 1))
                for dx in range(-ring, ring + 1):
                    for dy in range(-ring, ring + 1):
                        if ring and max(abs(dx), abs(dy)) < ring:
                            continue
                        for t in grid.get((ix + dx, iy + dy), ()):
                            lam = self._barycentric(t, q)
                            if lam.min() >= -BARYCENTRIC_TOL:
                                return t, lam
        return None

    def save_text(self, path):
        """Write the plain-text mesh format: a header, vertex lines, triangle lines."""
        with open(path, "w", encoding="ascii") as f:
            f.write(self._to_text())

    def _to_text(self):
        buf = io.StringIO()
        buf.write(f"vertices {self.n_vertices} triangles {self.n_triangles}\n")
        for x, y in self.vertices:
            buf.write(f"{float(x)!r} {float(y)!r}\n")
        for i, j, k in self.triangles:
            buf.write(f"{i} {j} {k}\n")
        return buf.getvalue()

    @classmethod
    def load_text(cls, path, domain: Domain2D, periodic_pairs=None):
        with open(path, "r", encoding="ascii") as f:
            return cls._from_text(f.read(), domain, periodic_pairs)

    @classmethod
    def _from_text(cls, text, domain, periodic_pairs=None):
        lines = text.strip().splitlines()
        head = lines[0].split()
        if head[0] != "vertices" or head[2] != "triangles":
            raise ConfigurationError(f"bad mesh header: {lines[0]!r}")
        nv, nt = int(head[1]), int(head[3])
        vertices = np.array(
            [[float(tok) for tok in line.split()] for line in lines[1 : 1 + nv]]
        )
        triangles = np.array(
            [[int(tok) for tok in line.split()] for line in lines[1 + nv : 1 + nv + nt]],
            dtype=np.int64,
        )
        return cls(vertices, triangles, domain, periodic_pairs)


def build_regular_mesh(nx: int, ny: int, domain: Domain2D) -> Mesh:
    """Regular triangular mesh with nx * ny grid nodes.

    Every grid cell is split along its lower-left to upper-right diagonal.
    On periodic domains the duplicate boundary nodes are recorded in
    `periodic_pairs` and collapse to one degree-of-freedom class.
    """
    if nx < 2 or ny < 2:
        raise ConfigurationError(f"need at least 2 nodes per direction, got {nx}x{ny}")
    xs = np.linspace(domain.x_min, domain.x_max, nx)
    ys = np.linspace(domain.y_min, domain.y_max, ny)
    xx, yy = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i, j):
        return j * nx + i

    tris = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    pairs = {}
    if domain.periodic_x:
        for j in range(ny):
            pairs[vid(nx - 1, j)] = vid(0, j)
    if domain.periodic_y:
        for i in range(nx):
            pairs[vid(i, ny - 1)] = vid(i, 0)

    mesh = Mesh(vertices, np.array(tris, dtype=np.int64), domain, pairs)
    mesh._regular_grid = (nx, ny)
    return mesh


def delaunay_triangulate(points, domain: Domain2D, seed: int = 0) -> Mesh:
    """Delaunay triangulation of scattered points inside `domain`.

    The returned mesh keeps the input points, in order, as its vertices.  For
    periodic directions the cloud is transiently replicated by +-period before
    triangulating, and only triangles whose centroid lies in the fundamental
    domain are kept.  A deterministic, per-point jitter of relative size 1e-12
    is applied (to the triangulation input only) so that exactly cocircular
    configurations are broken identically in every ghost copy; without it the
    replicated copies may disagree on the seam and leave gaps.
    """
    pts = domain.wrap(np.asarray(points, dtype=float))
    if len(pts) < 3:
        raise GeometryError(f"need at least 3 points, got {len(pts)}")

    scale = max(domain.width, domain.height)
    rng = np.random.default_rng(seed ^ 0x5EED)
    jitter = (rng.random(pts.shape) - 0.5) * (2e-12 * scale)

    shifts = []
    xsh = [0.0, -domain.width, domain.width] if domain.periodic_x else [0.0]
    ysh = [0.0, -domain.height, domain.height] if domain.periodic_y else [0.0]
    for sx in xsh:
        for sy in ysh:
            shifts.append((sx, sy))

    n = len(pts)
    clouds = [pts + jitter + np.array(s) for s in shifts]
    cloud = np.vstack(clouds)
    try:
        tri = _SciPyDelaunay(cloud)
    except QhullError as exc:
        raise GeometryError(f"degenerate point set: {exc}") from exc
    if tri.simplices.size == 0:
        raise GeometryError("triangulation produced no triangles (collinear points?)")

    simplices = tri.simplices
    cent = cloud[simplices].mean(axis=1)
    keep = np.ones(len(simplices), dtype=bool)
    if domain.periodic_x:
        keep &= (cent[:, 0] >= domain.x_min) & (cent[:, 0] < domain.x_max)
    if domain.periodic_y:
        keep &= (cent[:, 1] >= domain.y_min) & (cent[:, 1] < domain.y_max)
    simplices = simplices[keep]

    canon = simplices % n
    # orient counter-clockwise using the true (unjittered, unfolded) coordinates
    offs = np.array(shifts)[simplices // n]  # (nt, 3, 2)
    coords = pts[canon] + offs
    double_area = (coords[:, 1, 0] - coords[:, 0, 0]) * (
        coords[:, 2, 1] - coords[:, 0, 1]
    ) - (coords[:, 1, 1] - coords[:, 0, 1]) * (coords[:, 2, 0] - coords[:, 0, 0])
    flip = double_area < 0
    canon[flip] = canon[flip][:, ::-1]
    double_area = np.abs(double_area)

    areas = 0.5 * double_area
    mean_area = areas.mean() if len(areas) else 0.0
    good = areas > SLIVER_AREA_FRACTION * mean_area
    dropped = int(np.sum(~good))
    if dropped:
        log.warning("discarding %d sliver triangle(s) from Delaunay mesh", dropped)
    canon = canon[good]
    if len(canon) == 0:
        raise GeometryError("all points are collinear (no non-degenerate triangles)")

    mesh = Mesh(pts, canon, domain, periodic_pairs={})
    mesh.dropped_triangles = dropped
    mesh._ensure_buckets()
    return mesh


def _locate_regular(mesh: Mesh, point):
    nx, ny = mesh._regular_grid
    dom = mesh.domain
    sx = dom.width / (nx - 1)
    sy = dom.height / (ny - 1)
    x, y = point
    i = int(np.clip(np.floor((x - dom.x_min) / sx), 0, nx - 2))
    j = int(np.clip(np.floor((y - dom.y_min) / sy), 0, ny - 2))
    # two triangles per cell, lower (even) then upper (odd)
    base = 2 * (j * (nx - 1) + i)
    for t in (base, base + 1):
        lam = mesh._barycentric(t, point)
        if lam.min() >= -BARYCENTRIC_TOL:
            return t, lam
    # floating-point drift may put the point into an adjacent cell
    for dj in (-1, 0, 1):
        for di in (-1, 0, 1):
            ii, jj = i + di, j + dj
            if 0 <= ii < nx - 1 and 0 <= jj < ny - 1:
                base = 2 * (jj * (nx - 1) + ii)
                for t in (base, base + 1):
                    lam = mesh._barycentric(t, point)
                    if lam.min() >= -BARYCENTRIC_TOL:
                        return t, lam
    return None


def locate_point(mesh: Mesh, p) -> ElementLocation:
    """Find the triangle containing `p` and its barycentric coordinates.

    Periodic coordinates are wrapped first.  Regular meshes are resolved by
    direct cell-index arithmetic; Delaunay meshes through a uniform-grid
    bucket structure.  Raises `OutOfDomainError` for points outside a
    non-periodic domain.
    """
    p = np.asarray(p, dtype=float)
    q = mesh.domain.wrap(p[None, :])[0]
    if not mesh.domain.contains(q[None, :], tol=BARYCENTRIC_TOL * mesh.domain.diameter)[0]:
        raise OutOfDomainError(
            f"point ({p[0]!r}, {p[1]!r}) is outside the domain", points=p[None, :]
        )
    hit = _locate_regular(mesh, q) if mesh._regular_grid else mesh._locate_bucketed(q)
    if hit is None:
        raise OutOfDomainError(
            f"point ({p[0]!r}, {p[1]!r}) not covered by the mesh", points=p[None, :]
        )
    t, lam = hit
    lam = np.clip(lam, 0.0, None)
    lam = lam / lam.sum()
    return ElementLocation(int(t), (float(lam[0]), float(lam[1]), float(lam[2])))


def locate_points(mesh: Mesh, points):
    """Vectorized `locate_point`: returns (triangle indices, barycentric array)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    wrapped = mesh.domain.wrap(pts)
    if mesh._regular_grid is not None:
        return _locate_points_regular(mesh, pts, wrapped)
    tri = np.empty(len(pts), dtype=np.int64)
    lam = np.empty((len(pts), 3))
    for k, q in enumerate(wrapped):
        loc = locate_point(mesh, q)
        tri[k] = loc.triangle_index
        lam[k] = loc.barycentric
    return tri, lam


def _locate_points_regular(mesh: Mesh, raw, wrapped):
    nx, ny = mesh._regular_grid
    dom = mesh.domain
    sx = dom.width / (nx - 1)
    sy = dom.height / (ny - 1)
    inside = dom.contains(wrapped, tol=BARYCENTRIC_TOL * dom.diameter)
    if not inside.all():
        bad = raw[~inside]
        raise OutOfDomainError(
            f"{len(bad)} point(s) outside the domain, first is "
            f"({bad[0, 0]!r}, {bad[0, 1]!r})",
            points=bad,
        )
    fi = np.clip(np.floor((wrapped[:, 0] - dom.x_min) / sx), 0, nx - 2).astype(np.int64)
    fj = np.clip(np.floor((wrapped[:, 1] - dom.y_min) / sy), 0, ny - 2).astype(np.int64)
    # local cell coordinates in [0, 1]
    u = (wrapped[:, 0] - dom.x_min) / sx - fi
    v = (wrapped[:, 1] - dom.y_min) / sy - fj
    lower = v <= u  # below the cell diagonal -> first triangle of the cell
    tri = 2 * (fj * (nx - 1) + fi) + (~lower).astype(np.int64)
    lam = np.empty((len(wrapped), 3))
    # lower triangle (a, b, c) with a=(0,0), b=(1,0), c=(1,1): l1 = u - v, l2 = v
    lam[lower, 1] = u[lower] - v[lower]
    lam[lower, 2] = v[lower]
    # upper triangle (a, c, d) with a=(0,0), c=(1,1), d=(0,1): l1 = u, l2 = v - u
    lam[~lower, 1] = u[~lower]
    lam[~lower, 2] = v[~lower] - u[~lower]
    lam[:, 0] = 1.0 - lam[:, 1] - lam[:, 2]
    np.clip(lam, 0.0, None, out=lam)
    lam /= lam.sum(axis=1, keepdims=True)
    return tri, lam


def circumcircle_violations(mesh: Mesh, rel_tol: float = 1e-10):
    """Count (triangle, vertex) pairs violating the empty-circumcircle property.

    A vertex violates if it lies inside a triangle's circumcircle by more than
    `rel_tol` times the circumradius.  Periodic images of every vertex are
    tested as well.  Written as a direct quadratic-cost check, for validation.
    """
    violations = 0
    shifts = mesh._candidate_shifts()
    verts = mesh.vertices
    for t in range(mesh.n_triangles):
        a, b, c = mesh.tri_coords[t]
        d = 2.0 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
        ux = (
            np.dot(b - a, b + a) * (c[1] - a[1]) - np.dot(c - a, c + a) * (b[1] - a[1])
        ) / d
        uy = (
            np.dot(c - a, c + a) * (b[0] - a[0]) - np.dot(b - a, b + a) * (c[0] - a[0])
        ) / d
        center = np.array([ux, uy])
        radius = np.linalg.norm(center - a)
        tri_ids = set(int(mesh.vertex_class[v]) for v in mesh.triangles[t])
        for sx, sy in shifts:
            shifted = verts + np.array([sx, sy])
            dist = np.linalg.norm(shifted - center, axis=1)
            inside = dist < radius * (1.0 - rel_tol)
            for v in np.nonzero(inside)[0]:
                if int(mesh.vertex_class[v]) not in tri_ids:
                    violations += 1
    return violations
