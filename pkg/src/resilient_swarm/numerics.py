"""Small dense linear-algebra kernels used across the simulator.

Matrices are plain ``numpy.ndarray`` objects. Everything here is a pure
function of its inputs.
"""
from __future__ import annotations

import numpy as np


class NumericsError(RuntimeError):
    """Raised when a numerical routine cannot produce a trustworthy result."""


class DimensionError(NumericsError, ValueError):
    pass


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Coerce ``m`` to a finite 2-D float array (scalars become 1x1)."""
    arr = np.atleast_2d(np.asarray(m, dtype=float))
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"{name} has non-finite entries")
    return arr


def _require_square(m: np.ndarray, name: str) -> None:
    if m.shape[0] != m.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {m.shape}")


def dare_residual(P, A, C, Q, R) -> float:
    """Frobenius norm of ``A[P - PC'(CPC'+R)^-1 CP]A' + Q - P``."""
    P, A, C, Q, R = (as_matrix(v) for v in (P, A, C, Q, R))
    S = C @ P @ C.T + R
    inner = P - P @ C.T @ np.linalg.solve(S, C @ P)
    return float(np.linalg.norm(A @ inner @ A.T + Q - P, ord="fro"))


def solve_dare(A, C, Q, R, tol: float = 1e-14, max_iter: int = 100_000) -> np.ndarray:
    """Steady-state prediction covariance of the Kalman filter.

    Iterates ``P <- A[P - PC'(CPC'+R)^-1 CP]A' + Q`` from ``P = Q`` until the
    fixed-point residual drops below ``tol``. ``P`` is symmetrized every
    iteration.

    Raises:
        NumericsError: "innovation covariance singular" when ``CPC'+R`` cannot
            be inverted, "DARE diverged" when ``max_iter`` is exhausted or the
            iterate blows up.
    """
    A, C, Q, R = (as_matrix(v, n) for v, n in ((A, "A"), (C, "C"), (Q, "Q"), (R, "R")))
    _require_square(A, "A")
    _require_square(Q, "Q")
    _require_square(R, "R")
    n = A.shape[0]
    if C.shape[1] != n or Q.shape[0] != n or R.shape[0] != C.shape[0]:
        raise DimensionError(
            f"non-conformable DARE inputs: A{A.shape} C{C.shape} Q{Q.shape} R{R.shape}"
        )

    P = Q.copy()
    for _ in range(max_iter):
        S = C @ P @ C.T + R
        if np.linalg.cond(S) > 1e14:
            raise NumericsError("innovation covariance singular")
        with np.errstate(over="ignore", invalid="ignore"):
            P_next = A @ (P - P @ C.T @ np.linalg.solve(S, C @ P)) @ A.T + Q
            P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            raise NumericsError("DARE diverged: non-finite iterate")
        P = P_next
        if dare_residual(P, A, C, Q, R) < tol:
            return P
    raise NumericsError(f"DARE diverged: no convergence within {max_iter} iterations")


def eigenvalues(M) -> np.ndarray:
    """Complex eigenvalues of a square matrix (LAPACK Hessenberg-QR)."""
    M = as_matrix(M, "M")
    _require_square(M, "M")
    return np.linalg.eigvals(M)


def spectral_radius(M, tol: float = 1e-12) -> float:
    """Largest eigenvalue magnitude of ``M``.

    Magnitudes below ``tol`` are reported as exactly zero, which keeps
    nilpotent inputs from returning round-off noise.
    """
    rho = float(np.max(np.abs(eigenvalues(M)))) if np.size(M) else 0.0
    return 0.0 if rho < tol else rho


def max_real_part(M) -> float:
    return float(np.max(eigenvalues(M).real))


def invert(M, cond_limit: float = 1e12) -> np.ndarray:
    """Inverse of a well-conditioned square matrix.

    Raises:
        NumericsError: if ``M`` is singular or its 2-norm condition number
            exceeds ``cond_limit``; the message carries the estimate.
    """
    M = as_matrix(M, "M")
    _require_square(M, "M")
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > cond_limit:
        raise NumericsError(f"matrix is singular or ill-conditioned (cond={cond:.3e})")
    return np.linalg.inv(M)
