"""Generalized symmetric eigensolvers for the smallest eigenvalues.

`solve_smallest` runs shift-invert Lanczos with a tiny negative shift, which
keeps the factorized matrix positive definite for a positive-semidefinite
stiffness matrix.  `dense_solve` reduces to a standard symmetric problem via
Cholesky and serves as the oracle for cross-checking on small problems.

Reported dynamic-Laplacian eigenvalues are the negatives of the generalized
eigenvalues returned here: the assembled forms are positive, the operator's
spectrum is 0 >= lambda_0 >= lambda_1 >= ...
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, NumericalError
from .fem import SparseSymMatrix

DENSE_LIMIT = 2000

#: Relative tolerances promised on every returned result.
ORTHONORMALITY_TOL = 1e-8
RESIDUAL_TOL = 1e-8


@dataclass
class EigenResult:
    """Ascending eigenvalues with M-orthonormal coefficient vectors."""

    eigenvalues: np.ndarray
    vectors: np.ndarray  # (n, k), column j pairs with eigenvalues[j]
    residuals: np.ndarray

    def __post_init__(self):
        order = np.argsort(self.eigenvalues)
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=float)[order]
        self.vectors = np.asarray(self.vectors, dtype=float)[:, order]
        self.residuals = np.asarray(self.residuals, dtype=float)[order]

    @property
    def k(self):
        return len(self.eigenvalues)


def _as_matrix(m):
    return m.matrix if isinstance(m, SparseSymMatrix) else m


def _norm_max(m):
    if hasattr(m, "nnz"):
        return float(abs(m).max()) if m.nnz else 0.0
    arr = np.asarray(m)
    return float(np.abs(arr).max()) if arr.size else 0.0


def _finalize(D, M, values, vectors):
    """Enforce M-orthonormality, compute residuals, check the promised bounds."""
    Dm, Mm = _as_matrix(D), _as_matrix(M)
    gram = vectors.T @ (Mm @ vectors)
    dev = np.abs(gram - np.eye(len(values))).max()
    if dev > 1e-12:
        # re-orthonormalize in the M inner product (stable for tiny deviations)
        try:
            chol = np.linalg.cholesky(gram)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"returned vectors are M-degenerate: {exc}") from exc
        vectors = scipy.linalg.solve_triangular(
            chol, vectors.T, lower=True
        ).T
        gram = vectors.T @ (Mm @ vectors)
        dev = np.abs(gram - np.eye(len(values))).max()
    if dev > ORTHONORMALITY_TOL:
        raise NumericalError(f"M-orthonormality violated by {dev:.3e}")
    norm_d = _norm_max(Dm)
    norm_m = _norm_max(Mm)
    residuals = np.empty(len(values))
    for j, mu in enumerate(values):
        r = Dm @ vectors[:, j] - mu * (Mm @ vectors[:, j])
        residuals[j] = np.linalg.norm(r)
        bound = RESIDUAL_TOL * (norm_d + abs(mu) * norm_m)
        if residuals[j] > max(bound, 1e-300):
            raise NumericalError(
                f"eigenpair {j} residual {residuals[j]:.3e} exceeds bound {bound:.3e}"
            )
    return EigenResult(np.asarray(values, dtype=float), vectors, residuals)


def solve_smallest(D, M, k: int, seed: int = 0) -> EigenResult:
    """k smallest eigenpairs of D u = mu M u via shift-invert Lanczos.

    Deterministic for a fixed seed (the Lanczos starting vector is drawn from
    a seeded generator).  Raises `NumericalError` on factorization breakdown
    or non-convergence instead of returning silently wrong answers.
    """
    Dm = _as_matrix(D).tocsc()
    Mm = _as_matrix(M).tocsc()
    n = Dm.shape[0]
    if k >= n:
        raise ConfigurationError(f"need k < dimension, got k={k}, n={n}")
    norm_d = _norm_max(Dm) or 1.0
    sigma = -1e-8 * max(norm_d, 1e-300)
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n)
    try:
        values, vectors = spla.eigsh(Dm, k=k, M=Mm, sigma=sigma, which="LM", v0=v0)
    except spla.ArpackNoConvergence as exc:
        raise NumericalError(
            f"Lanczos did not converge: {len(exc.eigenvalues)} of {k} pairs "
            f"found (residual tolerance not reached)"
        ) from exc
    except RuntimeError as exc:
        raise NumericalError(
            f"factorization of the shifted matrix failed ({exc}); "
            f"adjust the shift or check that M is positive definite"
        ) from exc
    return _finalize(D, M, values, vectors)


def dense_solve(D, M, k: int) -> EigenResult:
    """Oracle: full generalized eigendecomposition (Cholesky reduction).

    Limited to dimension 2000 so it cannot be misused as the production path.
    """
    Dm, Mm = _as_matrix(D), _as_matrix(M)
    n = Dm.shape[0]
    if n > DENSE_LIMIT:
        raise ConfigurationError(f"dense oracle capped at {DENSE_LIMIT}, got {n}")
    if k > n:
        raise ConfigurationError(f"need k <= dimension, got k={k}, n={n}")
    dense_d = Dm.toarray() if hasattr(Dm, "toarray") else np.asarray(Dm)
    dense_m = Mm.toarray() if hasattr(Mm, "toarray") else np.asarray(Mm)
    values, vectors = scipy.linalg.eigh(
        dense_d, dense_m, subset_by_index=[0, k - 1]
    )
    return _finalize(D, M, values, vectors)
