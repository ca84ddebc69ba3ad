"""Dense linear-algebra primitives: PSD factorization, polar factor,
orthogonal Procrustes and weighted least squares.

All tolerances are module constants so every caller agrees on them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConfigError, NumericalError

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-8
ORTHOGONALITY_TOL = 1e-10
RANK_TOL = 1e-12
LSTSQ_SINGULAR_TOL = 1e-10
# eigenvector components below this magnitude are skipped by the sign convention
SIGN_ZERO_TOL = 1e-12


@dataclass(frozen=True)
class Factorization:
    """Rank-r PSD factor ``X`` of a symmetric matrix, ``S ~ X X^T``.

    ``eigvals`` holds the r algebraically largest eigenvalues (descending,
    before clipping); columns of ``X`` belonging to negative eigenvalues
    are zero.
    """

    X: np.ndarray
    eigvals: np.ndarray
    clipped_count: int

    @property
    def rank(self) -> int:
        return self.X.shape[1]


def as_symmetric(A, name="matrix") -> np.ndarray:
    """Validate ``A`` as finite, square and symmetric; return ``(A + A^T)/2``."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigError(f"{name} must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ConfigError(f"{name} contains non-finite entries")
    gap = np.abs(A - A.T)
    bound = SYMMETRY_TOL * (1.0 + np.abs(A))
    if np.any(gap > bound):
        i, j = np.unravel_index(np.argmax(gap - bound), A.shape)
        raise ConfigError(
            f"{name} is not symmetric: |a[{i},{j}] - a[{j},{i}]| = {gap[i, j]:.3g}"
        )
    return (A + A.T) / 2.0


def canonical_signs(V: np.ndarray) -> np.ndarray:
    """Flip columns of ``V`` so the first nonzero entry of each is positive."""
    V = np.array(V, dtype=float, copy=True)
    for c in range(V.shape[1]):
        nz = np.flatnonzero(np.abs(V[:, c]) > SIGN_ZERO_TOL)
        if nz.size and V[nz[0], c] < 0:
            V[:, c] = -V[:, c]
    return V


def truncated_psd_factorization(S, r: int) -> Factorization:
    """Best rank-``r`` PSD factor of a symmetric matrix.

    Keeps the eigenvectors of the ``r`` algebraically largest eigenvalues and
    returns ``X = U diag(max(d, 0))^{1/2}``. Negative eigenvalues among the
    top ``r`` are clipped to zero and counted.

    Parameters
    ----------
    S : (n, n) array_like
        Symmetric matrix.
    r : int
        Target rank, ``1 <= r <= n``.

    Returns
    -------
    Factorization
    """
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    if S.ndim != 2 or S.shape[1] != n:
        raise ConfigError(f"expected a square matrix, got shape {S.shape}")
    if not 1 <= r <= n:
        raise ConfigError(f"rank r={r} must lie in [1, {n}]")
    if not np.all(np.isfinite(S)):
        raise ConfigError("matrix contains non-finite entries")
    try:
        if r < n:
            d, U = scipy.linalg.eigh(S, subset_by_index=[n - r, n - 1])
        else:
            d, U = scipy.linalg.eigh(S)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise NumericalError(
            f"eigensolver failed on {n}x{n} matrix "
            f"(fro={np.linalg.norm(S):.3g}, max|a|={np.abs(S).max():.3g}): {exc}"
        ) from exc
    d = d[::-1]
    U = canonical_signs(U[:, ::-1])
    clipped = int(np.sum(d < 0))
    if clipped:
        logger.info("clipped %d negative eigenvalue(s) out of top %d", clipped, r)
    X = U * np.sqrt(np.clip(d, 0.0, None))
    return Factorization(X=X, eigvals=d, clipped_count=clipped)


def _orthogonal_from_svd(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    U, s, Vt = np.linalg.svd(A)
    return U @ Vt, s


def polar_factor(A, strict: bool = True) -> np.ndarray:
    """Orthogonal factor ``Q`` of the polar decomposition ``A = Q H``.

    Computed as ``U V^T`` from the SVD ``A = U diag(s) V^T``. With
    ``strict=True`` a numerically rank-deficient ``A`` is rejected because
    the factor is then not unique; with ``strict=False`` one valid
    minimizer is returned anyway.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigError(f"polar factor needs a square matrix, got {A.shape}")
    Q, s = _orthogonal_from_svd(A)
    if strict:
        ratio = s[-1] / s[0] if s[0] > 0 else 0.0
        if not ratio > RANK_TOL:
            raise NumericalError(
                f"matrix is rank deficient (smallest/largest singular value = {ratio:.3g})"
            )
    return Q


def procrustes(X_from, X_to, strict: bool = True) -> np.ndarray:
    """Orthogonal ``Q`` minimizing ``||X_to - X_from Q||_F``."""
    X_from = np.asarray(X_from, dtype=float)
    X_to = np.asarray(X_to, dtype=float)
    if X_from.shape != X_to.shape:
        raise ConfigError(f"shape mismatch: {X_from.shape} vs {X_to.shape}")
    return polar_factor(X_from.T @ X_to, strict=strict)


def solve_normal_equations(gram, rhs) -> np.ndarray:
    """Solve ``gram @ b = rhs`` for a symmetric PSD ``gram``.

    Falls back to the pseudo-inverse (minimum-norm solution) when the
    smallest eigenvalue is below ``LSTSQ_SINGULAR_TOL * trace``.
    """
    gram = np.asarray(gram, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    trace = float(np.trace(gram))
    if trace <= 0:
        return np.zeros((gram.shape[0],) + rhs.shape[1:])
    evals, evecs = np.linalg.eigh(gram)
    cutoff = LSTSQ_SINGULAR_TOL * trace
    if evals[0] > cutoff:
        return scipy.linalg.solve(gram, rhs, assume_a="pos")
    logger.debug("singular normal equations, using minimum-norm solution")
    keep = evals > cutoff
    inv = np.zeros_like(evals)
    inv[keep] = 1.0 / evals[keep]
    proj = evecs.T @ rhs
    return evecs @ (inv * proj.T).T


def least_squares(design, response, row_weights=None) -> np.ndarray:
    """Weighted least squares ``argmin_b sum_i w_i (y_i - d_i^T b)^2``.

    ``response`` may be a vector or an ``(m, p)`` matrix of stacked
    responses sharing one design. Returns the minimum-norm solution when
    the weighted Gram matrix is singular.
    """
    D = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    if D.ndim != 2 or D.shape[0] < 1:
        raise ConfigError(f"design must be a nonempty 2-D array, got {D.shape}")
    if y.shape[0] != D.shape[0]:
        raise ConfigError(f"response has {y.shape[0]} rows, design has {D.shape[0]}")
    if row_weights is None:
        w = np.ones(D.shape[0])
    else:
        w = np.asarray(row_weights, dtype=float)
        if w.shape != (D.shape[0],):
            raise ConfigError("row_weights must have one entry per design row")
        if np.any(w < 0):
            raise ConfigError("row_weights must be nonnegative")
    if not np.any(w > 0):
        raise ConfigError("all row weights are zero")
    Dw = D * w[:, None]
    return solve_normal_equations(Dw.T @ D, Dw.T @ y)


def max_orthogonality_error(Q) -> float:
    Q = np.asarray(Q, dtype=float)
    return float(np.abs(Q.T @ Q - np.eye(Q.shape[1])).max())
