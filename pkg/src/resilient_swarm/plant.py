"""Robot dynamics, sensing, and the attacked measurement channel.

Each robot is ``x+ = A x + B u + w`` with ``y = C x + v``. The delivered
measurement is ``(1 - p) y + p y_prev + alpha``: a deception attack adds a
constant ``alpha``, a DoS attack replays the previous delivered sample with
probability ``p`` each step.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .numerics import as_matrix


class DivergenceError(RuntimeError):
    pass


def noise_factor(cov: np.ndarray) -> np.ndarray:
    """Matrix ``S`` with ``S S' = cov``; tolerates singular PSD covariances."""
    cov = as_matrix(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
        if vals.min() < -1e-12 * max(1.0, abs(vals).max()):
            raise ValueError("covariance is not positive semidefinite")
        return vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None)))


@dataclass(frozen=True, eq=False)
class RobotModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Qw: np.ndarray
    Rv: np.ndarray
    dt: float

    def __post_init__(self):
        for name in ("A", "B", "C", "Qw", "Rv"):
            object.__setattr__(self, name, as_matrix(getattr(self, name), name))
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.B.shape[0] != n or self.C.shape[1] != n:
            raise ValueError("non-conformable A, B, C")
        if self.Qw.shape != (n, n) or self.Rv.shape != (self.C.shape[0],) * 2:
            raise ValueError("noise covariance shape mismatch")
        for name in ("Qw", "Rv"):
            m = getattr(self, name)
            if not np.allclose(m, m.T):
                raise ValueError(f"{name} must be symmetric")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_out(self) -> int:
        return self.C.shape[0]

    @cached_property
    def process_factor(self) -> np.ndarray:
        return noise_factor(self.Qw)

    @cached_property
    def measurement_factor(self) -> np.ndarray:
        return noise_factor(self.Rv)

    def continuous(self) -> tuple[np.ndarray, np.ndarray]:
        """Forward-Euler continuous counterpart ``((A - I)/dt, B/dt)``."""
        return (self.A - np.eye(self.n)) / self.dt, self.B / self.dt


def single_integrator(dt: float = 0.033, q: float = 1e-4, r: float = 1e-2) -> RobotModel:
    """Planar single integrator with per-axis noise variances ``q`` and ``r``."""
    eye = np.eye(2)
    return RobotModel(A=eye, B=dt * eye, C=eye, Qw=q * eye, Rv=r * eye, dt=dt)


@dataclass
class RobotState:
    x: np.ndarray
    last_y: np.ndarray


def initial_state(m: RobotModel, x0) -> RobotState:
    x0 = np.asarray(x0, dtype=float)
    return RobotState(x=x0.copy(), last_y=m.C @ x0)


def step_dynamics(m: RobotModel, s: RobotState, u, rng: np.random.Generator) -> RobotState:
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise DivergenceError(f"state diverged: non-finite input {u}")
    w = m.process_factor @ rng.standard_normal(m.n)
    x = m.A @ s.x + m.B @ u + w
    if not np.all(np.isfinite(x)):
        raise DivergenceError(f"state diverged: x={x}, u={u}")
    return RobotState(x=x, last_y=s.last_y)


def measure(m: RobotModel, s: RobotState, rng: np.random.Generator) -> np.ndarray:
    y = m.C @ s.x + m.measurement_factor @ rng.standard_normal(m.n_out)
    if not np.all(np.isfinite(y)):
        raise DivergenceError(f"measurement diverged: y={y}")
    return y


class AttackKind(str, enum.Enum):
    DECEPTION = "deception"
    DOS = "dos"


@dataclass(frozen=True)
class AttackSpec:
    """One attack campaign against a fixed target set.

    ``alpha_values`` maps each target to its constant bias; it is filled by
    :meth:`with_alphas` at run start unless given explicitly.
    """

    kind: AttackKind
    targets: tuple[int, ...]
    start_step: int
    alpha_bounds: tuple[float, float] = (0.4, 0.6)
    delay_prob: float = 0.95
    alpha_values: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", AttackKind(self.kind))
        object.__setattr__(self, "targets", tuple(sorted(int(t) for t in self.targets)))
        lo, hi = self.alpha_bounds
        if lo > hi:
            raise ValueError("alpha_bounds must be ordered (low, high)")
        if not 0.0 <= self.delay_prob <= 1.0:
            raise ValueError("delay_prob must lie in [0, 1]")
        if self.start_step < 0:
            raise ValueError("start_step must be nonnegative")

    def with_alphas(self, rng: np.random.Generator, dim: int) -> "AttackSpec":
        """Draw one time-invariant bias per target (deception only)."""
        if self.kind is not AttackKind.DECEPTION:
            return self
        lo, hi = self.alpha_bounds
        alphas = {t: rng.uniform(lo, hi, size=dim) for t in self.targets}
        alphas.update({int(k): np.asarray(v, float) for k, v in self.alpha_values.items()})
        return replace(self, alpha_values=alphas)

    def active(self, robot: int, k: int) -> bool:
        return k >= self.start_step and robot in self.targets


def attack_channel(y_k, y_prev, k: int, spec: AttackSpec | None, robot: int,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """Delivered measurement for ``robot`` at step ``k``.

    ``y_prev`` is the previously delivered sample; replaying it on consecutive
    Bernoulli successes holds the robot's view frozen.
    """
    y_k = np.asarray(y_k, dtype=float)
    if spec is None or not spec.active(robot, k):
        return y_k
    if spec.kind is AttackKind.DECEPTION:
        return y_k + np.asarray(spec.alpha_values[robot], dtype=float)
    stale = rng.random() < spec.delay_prob
    return np.array(y_prev, dtype=float) if stale else y_k
