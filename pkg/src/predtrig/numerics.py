"""Dense matrix helpers and the two Riccati fixed-point solvers."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, SolverError

RTOL = 1e-12
MAX_ITER = 100_000


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce scalars and 1-d inputs to a 2-d float array."""
    m = np.atleast_2d(np.asarray(a, dtype=float))
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-d, got shape {m.shape}")
    return m


def as_vector(a, name: str = "vector") -> np.ndarray:
    v = np.atleast_1d(np.asarray(a, dtype=float))
    if v.ndim != 1:
        raise DimensionError(f"{name} must be 1-d, got shape {v.shape}")
    return v


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def is_symmetric_psd(P: np.ndarray, tol: float = 1e-9) -> bool:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        return False
    if np.max(np.abs(P - P.T), initial=0.0) > tol:
        return False
    return bool(np.min(np.linalg.eigvalsh(symmetrize(P)), initial=0.0) >= -tol)


def psd_sqrt(P: np.ndarray) -> np.ndarray:
    """Return S with S @ S.T == P for a symmetric PSD matrix (singular allowed)."""
    w, V = np.linalg.eigh(symmetrize(as_matrix(P)))
    return V * np.sqrt(np.clip(w, 0.0, None))


def spectral_radius(M) -> float:
    M = np.asarray(M, dtype=float)
    if M.ndim == 0:
        return float(abs(M))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"spectral radius needs a square matrix, got {M.shape}")
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def _converged(new: np.ndarray, old: np.ndarray, rtol: float) -> bool:
    scale = max(1.0, float(np.max(np.abs(new))))
    return float(np.max(np.abs(new - old))) <= rtol * scale


def solve_lqr(A, B, Q, R, *, rtol: float = RTOL, max_iter: int = MAX_ITER) -> np.ndarray:
    """Infinite-horizon discrete LQR gain F for the law u = F x.

    Iterates the Riccati map from P = Q until the relative change drops
    below ``rtol``. Raises SolverError if the cap is hit or the resulting
    closed loop A + B F is not Schur stable.
    """
    A, B, Q, R = (as_matrix(M, name) for M, name in ((A, "A"), (B, "B"), (Q, "Q"), (R, "R")))
    n, p = B.shape
    if A.shape != (n, n) or Q.shape != (n, n) or R.shape != (p, p):
        raise DimensionError(f"inconsistent LQR shapes A{A.shape} B{B.shape} Q{Q.shape} R{R.shape}")

    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        K = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_new = symmetrize(Q + A.T @ P @ A - A.T @ P @ B @ K)
        if not np.all(np.isfinite(P_new)) or np.max(np.abs(P_new)) > 1e150:
            raise SolverError("LQR Riccati iteration diverged; is (A, B) stabilizable?")
        if _converged(P_new, P, rtol):
            P = P_new
            break
        P = P_new
    else:
        raise SolverError(f"LQR Riccati iteration did not converge in {max_iter} steps")

    F = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    if spectral_radius(A + B @ F) >= 1.0:
        raise SolverError("LQR closed loop is not stable; is (A, B) stabilizable?")
    return F


def posterior_variance_update(P, A, H, Q, R) -> np.ndarray:
    """One Kalman predict + correct step on the covariance (Joseph form)."""
    prior = symmetrize(A @ P @ A.T + Q)
    S = H @ prior @ H.T + R
    L = np.linalg.solve(S, H @ prior).T
    I_LH = np.eye(prior.shape[0]) - L @ H
    return symmetrize(I_LH @ prior @ I_LH.T + L @ R @ L.T)


def steady_state_posterior_variance(model, *, rtol: float = RTOL, max_iter: int = MAX_ITER) -> np.ndarray:
    """Fixed point of the posterior covariance recursion of a Kalman filter."""
    A, H, Q, R = model.A, model.H, model.Q, model.R
    P = np.asarray(model.X0, dtype=float).copy()
    for _ in range(max_iter):
        P_new = posterior_variance_update(P, A, H, Q, R)
        if not np.all(np.isfinite(P_new)) or np.max(np.abs(P_new)) > 1e150:
            raise SolverError("variance recursion diverged; is (A, H) detectable?")
        if _converged(P_new, P, rtol):
            return P_new
        P = P_new
    raise SolverError(f"variance recursion did not converge in {max_iter} steps")
