"""Steady-state Kalman predictor and residual generation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import solve_dare
from .plant import DivergenceError, RobotModel


@dataclass(frozen=True, eq=False)
class EstimatorState:
    x_hat: np.ndarray
    L: np.ndarray
    P: np.ndarray


def steady_state_gain(m: RobotModel) -> tuple[np.ndarray, np.ndarray]:
    """``(L, P)`` with ``P`` from the DARE and ``L = PC'(CPC' + R)^-1``."""
    P = solve_dare(m.A, m.C, m.Qw, m.Rv)
    S = m.C @ P @ m.C.T + m.Rv
    L = np.linalg.solve(S.T, (P @ m.C.T).T).T
    return L, P


def make_estimator(m: RobotModel, x0) -> EstimatorState:
    L, P = steady_state_gain(m)
    return EstimatorState(x_hat=np.asarray(x0, dtype=float).copy(), L=L, P=P)


def residual(e: EstimatorState, m: RobotModel, y_received) -> np.ndarray:
    return np.asarray(y_received, dtype=float) - m.C @ e.x_hat


def predict_update(e: EstimatorState, m: RobotModel, u, y_received):
    """One predictor step; the residual is formed against the prior estimate.

    Returns ``(new_state, r)`` with ``r = y - C x_hat`` and
    ``x_hat+ = A x_hat + B u + L r``.
    """
    r = residual(e, m, y_received)
    with np.errstate(invalid="ignore", over="ignore"):
        x_next = m.A @ e.x_hat + m.B @ np.asarray(u, dtype=float) + e.L @ r
    if not np.all(np.isfinite(x_next)):
        raise DivergenceError(f"estimator diverged: x_hat={x_next}")
    return EstimatorState(x_hat=x_next, L=e.L, P=e.P), r


def error_dynamics(m: RobotModel, L: np.ndarray) -> np.ndarray:
    """``A - LC``, the noise-free estimation-error transition matrix."""
    return m.A - L @ m.C
