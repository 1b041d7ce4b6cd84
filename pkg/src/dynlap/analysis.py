"""Error metrics against reference eigenpairs, slope fits, clustering.

Reference-grid inner products use the fine-space mass matrix, which integrates
products of fine-space functions exactly; coarse solutions enter by nodal
interpolation onto the fine degrees of freedom.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractViolation
from .fem import SparseSymMatrix

log = logging.getLogger(__name__)

FIRST_CIRCLE_EIGENVALUE = 4.0 * np.pi**2

#: Trapezoid points for the one-dimensional Fourier metric.  The integrands
#: are piecewise smooth, so 1e6 points leave quadrature error near 1e-12,
#: far below anything measured with it.
FOURIER_QUAD_POINTS = 10**6


@dataclass
class ReferenceSolution:
    """Eigenpairs on a fine space, vectors L2-normalized there."""

    space: object
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # (n_fine, m)
    provenance: str = ""


@dataclass
class ConvergenceRecord:
    scheme: str
    degree: int
    h: float
    eigval_rel_err: float
    eigspace_err: float

    def __post_init__(self):
        if self.h <= 0:
            raise ConfigurationError(f"mesh width must be positive, got {self.h}")


@dataclass
class Partition:
    """Cluster labels over a sample grid, reproducible from the seed."""

    sample_points: np.ndarray
    labels: np.ndarray
    k: int
    seed: int
    inertia: float = field(default=float("nan"))


# ---------------------------------------------------------------------------
# interpolation and subspace metrics
# ---------------------------------------------------------------------------

def interpolate_to_fine(coarse_space, coeffs, fine_space):
    """Nodal interpolation: evaluate the coarse function at the fine dof nodes."""
    return coarse_space.evaluate(np.asarray(coeffs, dtype=float), fine_space.dof_coords)


def m_normalize(vector, M: SparseSymMatrix):
    v = np.asarray(vector, dtype=float)
    norm = np.sqrt(v @ M.matvec(v))
    if norm == 0:
        raise ContractViolation("cannot normalize the zero vector")
    return v / norm


def m_orthonormalize(basis, M: SparseSymMatrix):
    """Orthonormalize the columns in the M inner product (span unchanged)."""
    basis = np.asarray(basis, dtype=float)
    gram = basis.T @ (M.matvec(basis))
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as exc:
        raise ContractViolation(f"basis is numerically M-degenerate: {exc}") from exc
    import scipy.linalg

    return scipy.linalg.solve_triangular(chol, basis.T, lower=True).T


def eigenvector_error(v_ref, v_test, M: SparseSymMatrix):
    """Distance sqrt(1 - <v_ref, v_test>^2) of L2-normalized vectors.

    Sign-invariant; 0 for aligned vectors, 1 for orthogonal ones.
    """
    for name, v in (("reference", v_ref), ("test", v_test)):
        norm = np.sqrt(np.asarray(v) @ M.matvec(np.asarray(v)))
        if abs(norm - 1.0) > 1e-6:
            raise ContractViolation(
                f"{name} vector is not L2-normalized (norm {norm!r})"
            )
    inner = np.asarray(v_ref) @ M.matvec(np.asarray(v_test))
    return float(np.sqrt(max(0.0, 1.0 - min(1.0, inner * inner))))


def subspace_error(ref_basis, test_basis, M: SparseSymMatrix):
    """sqrt(1 - sigma_min^2) of the cross-Gram matrix of two orthonormal bases.

    Invariant under orthogonal re-mixing of either basis; reduces to
    `eigenvector_error` for one-column bases.  Bases of unequal dimension are
    rejected: the worst-case-alignment formula is undefined there.
    """
    ref = np.atleast_2d(np.asarray(ref_basis, dtype=float))
    test = np.atleast_2d(np.asarray(test_basis, dtype=float))
    if ref.ndim != 2 or test.ndim != 2 or ref.shape[1] != test.shape[1]:
        raise ConfigurationError(
            f"need equal-dimension bases, got {ref.shape} and {test.shape}"
        )
    for name, basis in (("reference", ref), ("test", test)):
        gram = basis.T @ M.matvec(basis)
        dev = np.abs(gram - np.eye(basis.shape[1]))
        if dev.max() > 1e-6:
            i, j = np.unravel_index(np.argmax(dev), dev.shape)
            raise ContractViolation(
                f"{name} basis not M-orthonormal: Gram[{i},{j}] = {gram[i, j]!r}"
            )
    cross = ref.T @ M.matvec(test)
    sigma_min = np.linalg.svd(cross, compute_uv=False).min()
    return float(np.sqrt(max(0.0, 1.0 - min(1.0, sigma_min) ** 2)))


def fit_slope(records, error_field="eigspace_err"):
    """Least-squares slope of log(error) against log(h).

    `records` may be `ConvergenceRecord`s (read `error_field`) or (h, error)
    pairs.  Non-positive errors are excluded with a warning since their
    logarithm is undefined.
    """
    pairs = []
    for r in records:
        if isinstance(r, ConvergenceRecord):
            pairs.append((r.h, getattr(r, error_field)))
        else:
            pairs.append((float(r[0]), float(r[1])))
    kept = [(h, e) for h, e in pairs if e > 0]
    if len(kept) < len(pairs):
        log.warning("fit_slope: excluded %d non-positive error(s)", len(pairs) - len(kept))
    if len({h for h, _ in kept}) < 2:
        raise ConfigurationError("need at least two distinct mesh widths")
    xs = np.log([h for h, _ in kept])
    ys = np.log([e for _, e in kept])
    slope, _ = np.polyfit(xs, ys, 1)
    return float(slope)


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------

def kmeans(features, k, seed, sample_points=None, max_iter=300):
    """Lloyd iterations from k-means++ seeding with a seeded generator.

    Deterministic per seed.  An emptied cluster is re-seeded at the point
    farthest from its assigned centroid.  The objective never increases.
    """
    feats = np.atleast_2d(np.asarray(features, dtype=float))
    n = len(feats)
    if not 1 <= k <= n:
        raise ConfigurationError(f"need 1 <= k <= {n}, got k={k}")
    rng = np.random.default_rng(seed)

    centroids = _kmeans_pp_seed(feats, k, rng)
    labels = None
    previous_inertia = np.inf
    for _iteration in range(max_iter):
        dist2 = ((feats[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = dist2.argmin(axis=1)
        inertia = dist2[np.arange(n), new_labels].sum()
        assert inertia <= previous_inertia + 1e-9 * max(1.0, previous_inertia)
        previous_inertia = inertia
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            members = feats[labels == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
            else:
                farthest = int(np.argmax(dist2[np.arange(n), labels]))
                centroids[c] = feats[farthest]
                labels[farthest] = c
    pts = feats if sample_points is None else np.asarray(sample_points)
    return Partition(pts, labels, k, seed, inertia=float(previous_inertia))


def _kmeans_pp_seed(feats, k, rng):
    n = len(feats)
    centroids = np.empty((k, feats.shape[1]))
    centroids[0] = feats[rng.integers(n)]
    closest = ((feats - centroids[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = closest.sum()
        if total <= 0:
            centroids[c] = feats[rng.integers(n)]
            continue
        r = rng.random() * total
        idx = int(np.searchsorted(np.cumsum(closest), r))
        idx = min(idx, n - 1)
        centroids[c] = feats[idx]
        closest = np.minimum(closest, ((feats - centroids[c]) ** 2).sum(axis=1))
    return centroids


def canonical_labels(labels):
    """Relabel clusters by first appearance, for permutation-safe comparison."""
    labels = np.asarray(labels)
    mapping = {}
    out = np.empty_like(labels)
    for i, lab in enumerate(labels):
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out[i] = mapping[lab]
    return out


# ---------------------------------------------------------------------------
# one-dimensional Fourier metric
# ---------------------------------------------------------------------------

def shift1d_fourier_error(space, coeffs, mu=None, n_points=FOURIER_QUAD_POINTS):
    """Eigenpair errors of a circle eigenvector against the first Fourier modes.

    Projects the (L2-normalized) function onto the span of sin(2 pi x) and
    cos(2 pi x) and returns the L2 distance to that projection together with
    the relative eigenvalue error against 4 pi^2.  With `mu` omitted the
    eigenvalue is estimated by a Rayleigh quotient from the sampled values.

    All integrals use the trapezoid rule with `n_points` points on the
    periodic unit interval (where it reduces to the plain sample mean).
    """
    x = np.arange(n_points) / n_points
    values = space.evaluate(np.asarray(coeffs, dtype=float), x)
    norm = np.sqrt(np.mean(values**2))
    if norm == 0:
        raise ContractViolation("cannot normalize the zero function")
    if abs(norm - 1.0) > 1e-3:
        log.debug("renormalizing input (L2 norm %r)", norm)
    values = values / norm
    sin_basis = np.sqrt(2.0) * np.sin(2 * np.pi * x)
    cos_basis = np.sqrt(2.0) * np.cos(2 * np.pi * x)
    a = np.mean(values * sin_basis)
    b = np.mean(values * cos_basis)
    residual = values - a * sin_basis - b * cos_basis
    eigvec_error = float(np.sqrt(np.mean(residual**2)))
    if mu is None:
        deriv = (np.roll(values, -1) - np.roll(values, 1)) * (n_points / 2.0)
        mu = float(np.mean(deriv**2))
    eigval_rel_error = abs(mu - FIRST_CIRCLE_EIGENVALUE) / FIRST_CIRCLE_EIGENVALUE
    return eigvec_error, float(eigval_rel_error)


# ---------------------------------------------------------------------------
# CSV serialization
# ---------------------------------------------------------------------------

CSV_HEADER = "scheme,degree,h,eigval_rel_err,eigspace_err"


def records_to_csv(records, path, comments=()):
    """Write convergence records; `comments` become leading '#' lines."""
    with open(path, "w", encoding="ascii", newline="\n") as f:
        for line in comments:
            f.write(f"# {line}\n")
        f.write(CSV_HEADER + "\n")
        for r in records:
            f.write(
                f"{r.scheme},{r.degree},{float(r.h)!r},"
                f"{float(r.eigval_rel_err)!r},{float(r.eigspace_err)!r}\n"
            )


def partition_to_csv(partition: Partition, path, comments=()):
    with open(path, "w", encoding="ascii", newline="\n") as f:
        for line in comments:
            f.write(f"# {line}\n")
        f.write("x,y,label\n")
        for (x, y), lab in zip(partition.sample_points, partition.labels):
            f.write(f"{float(x)!r},{float(y)!r},{int(lab)}\n")
