"""Dense SPD linear algebra: jittered Cholesky, solves, log-determinants."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .exceptions import DimensionError, NotPositiveDefiniteError

DEFAULT_JITTER = (0.0, 1e-10, 1e-8, 1e-6, 1e-4)

SYMMETRY_TOL = 1e-8


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower factor ``L`` with ``L @ L.T == K + jitter_used * I``."""

    lower: np.ndarray
    jitter_used: float = 0.0

    @property
    def n(self):
        return self.lower.shape[0]


def jitter_schedule(floor=0.0, schedule=DEFAULT_JITTER):
    """Return ``schedule`` restricted to jitters >= ``floor``.

    ``floor`` is always included so an escalated floor outside the default
    schedule is still attempted.
    """
    kept = [j for j in schedule if j >= floor]
    if not kept or kept[0] != floor:
        kept.insert(0, floor)
    return tuple(kept)


def cholesky(K, jitter_schedule=DEFAULT_JITTER):
    """Factor a symmetric matrix, adding the smallest workable diagonal jitter.

    Args:
        K: (n, n) symmetric matrix. It is symmetrized as ``(K + K.T) / 2``.
        jitter_schedule: increasing jitters to try in order.

    Returns:
        CholeskyFactor for the first jitter that succeeds.

    Raises:
        DimensionError: if K is not square.
        NotPositiveDefiniteError: if every jitter fails.
    """
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise DimensionError(f"cholesky: expected a square matrix, got shape {K.shape}")
    scale = max(1.0, float(np.max(np.abs(K)))) if K.size else 1.0
    if K.size and np.max(np.abs(K - K.T)) > SYMMETRY_TOL * scale:
        raise DimensionError("cholesky: matrix is not symmetric")
    K = 0.5 * (K + K.T)
    if not np.all(np.isfinite(K)):
        raise NotPositiveDefiniteError("cholesky: matrix has non-finite entries")
    n = K.shape[0]
    jitter = None
    for jitter in jitter_schedule:
        A = K + jitter * np.eye(n) if jitter else K
        try:
            L = la.cholesky(A, lower=True, check_finite=False)
        except la.LinAlgError:
            continue
        # LAPACK can return a tiny or zero pivot without raising.
        if np.all(np.diag(L) > 0.0) and np.all(np.isfinite(L)):
            return CholeskyFactor(L, float(jitter))
    raise NotPositiveDefiniteError(
        f"cholesky: not positive definite (last jitter tried: {jitter})", last_jitter=jitter
    )


def solve(factor, B):
    """Solve ``(K + jitter I) X = B`` using the factor."""
    B = np.asarray(B, dtype=np.float64)
    if B.shape[0] != factor.n:
        raise DimensionError(
            f"solve: right-hand side has {B.shape[0]} rows, factor is {factor.n}x{factor.n}"
        )
    return la.cho_solve((factor.lower, True), B, check_finite=False)


def solve_lower(factor, B):
    """Return ``L^{-1} B`` (forward substitution only)."""
    B = np.asarray(B, dtype=np.float64)
    if B.shape[0] != factor.n:
        raise DimensionError(
            f"solve_lower: right-hand side has {B.shape[0]} rows, factor is {factor.n}x{factor.n}"
        )
    return la.solve_triangular(factor.lower, B, lower=True, check_finite=False)


def logdet(factor):
    return 2.0 * float(np.sum(np.log(np.diag(factor.lower))))


def inverse(factor):
    """Explicit inverse; only meant for small matrices."""
    return solve(factor, np.eye(factor.n))
