"""Consensus control laws and gain design.

Three protocols are available to each robot:

* baseline: ``u_i = K sum_j a_ij (xhat_j - xhat_i)``
* weighted bearing: ``u_i = (g/|N_i|) sum_j w_ij (x_j - x_i)`` with
  ``w_ij = 1/(gamma_ij - gamma_tau)`` from received signal strength
* leader-follower (followers only): an internal controller state ``v``
  with ``v' = (A+BF) v + cL sum_j a_ij [C(v_i - v_j) - (y_i - y_j)]``,
  ``u_i = F v_i``, forward-Euler discretized.

Relative terms use the attractive orientation ``(x_j - x_i)``; the literal
``(x_i - x_j)`` orientation is available through ``sign="literal"``.

Per-robot functions mirror the math one robot at a time; the ``team_*``
functions compute every robot's input in one vectorized pass for the
simulation loop.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .numerics import invert, max_real_part, spectral_radius
from .plant import RobotModel
from .topology import LeaderFollowerPartition, Topology

log = logging.getLogger(__name__)


class GainDesignError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class GainSet:
    K: np.ndarray
    F: np.ndarray
    L_obs: np.ndarray
    Q_lmi: np.ndarray
    c: float

    def __post_init__(self):
        if self.c <= 0:
            raise GainDesignError("coupling gain c must be positive")


@dataclass(frozen=True)
class RssModel:
    gamma0: float = -40.0
    d0: float = 1.0
    path_exponent: float = 2.0
    gamma_tau: float = -45.0

    def __post_init__(self):
        if self.path_exponent <= 0 or self.d0 <= 0:
            raise ValueError("path_exponent and d0 must be positive")


def _sign(sign: str) -> float:
    if sign == "attractive":
        return 1.0
    if sign == "literal":
        return -1.0
    raise ValueError(f"unknown sign convention {sign!r}")


def saturate(u, u_max: float) -> np.ndarray:
    return np.clip(np.asarray(u, dtype=float), -u_max, u_max)


# --- baseline --------------------------------------------------------------

def baseline_consensus(i: int, estimates, t: Topology, g: GainSet, sign: str = "attractive"):
    """Baseline input for robot ``i`` from its neighbours' state estimates.

    Rows of ``estimates`` that are NaN count as missing data for this step and
    the corresponding edge is skipped.
    """
    est = np.asarray(estimates, dtype=float)
    acc = np.zeros(est.shape[1])
    for j in t.neighbors(i):
        if not np.all(np.isfinite(est[j])):
            log.info("robot %d: no data from neighbour %d, edge skipped", i, j)
            continue
        acc += est[j] - est[i]
    return _sign(sign) * (g.K @ acc)


def team_baseline(estimates: np.ndarray, adjacency: np.ndarray, K: np.ndarray,
                  sign: str = "attractive") -> np.ndarray:
    diff = adjacency @ estimates - adjacency.sum(axis=1)[:, None] * estimates
    return _sign(sign) * diff @ K.T


# --- weighted bearing ------------------------------------------------------

def rss(model: RssModel, d) -> np.ndarray:
    """Log-distance path loss ``gamma0 - 10 n log10(d/d0)`` in dBm."""
    d = np.asarray(d, dtype=float)
    floor = model.d0 / 100.0
    if np.any(d < floor):
        log.debug("rss: distance below %.4g m clamped", floor)
    d = np.maximum(d, floor)
    return model.gamma0 - 10.0 * model.path_exponent * np.log10(d / model.d0)


def rss_weight(model: RssModel, d) -> np.ndarray:
    """``1/(gamma - gamma_tau)``; zero where the signal is at or below threshold."""
    margin = rss(model, d) - model.gamma_tau
    with np.errstate(divide="ignore"):
        return np.where(margin > 0, 1.0 / np.where(margin > 0, margin, 1.0), 0.0)


def weighted_bearing(i: int, positions, rssm: RssModel, t: Topology, gain: float = 1.0,
                     normalization: str = "degree", sign: str = "attractive") -> np.ndarray:
    pos = np.asarray(positions, dtype=float)
    nbrs = t.neighbors(i)
    acc = np.zeros(pos.shape[1])
    used = 0
    for j in nbrs:
        w = float(rss_weight(rssm, np.linalg.norm(pos[j] - pos[i])))
        if w <= 0:
            log.info("robot %d: neighbour %d below RSS threshold, dropped", i, j)
            continue
        acc += w * (pos[j] - pos[i])
        used += 1
    if used == 0:
        return acc
    denom = used if normalization == "degree" else len(pos)
    return _sign(sign) * gain * acc / denom


def team_weighted_bearing(positions: np.ndarray, adjacency: np.ndarray, distances: np.ndarray,
                          rssm: RssModel, gain: float = 1.0, normalization: str = "degree",
                          sign: str = "attractive") -> np.ndarray:
    W = adjacency * rss_weight(rssm, distances)
    count = np.count_nonzero(W, axis=1).astype(float)
    acc = W @ positions - W.sum(axis=1)[:, None] * positions
    if normalization == "degree":
        denom = np.where(count > 0, count, 1.0)
    else:
        denom = np.full_like(count, float(len(positions)))
    return _sign(sign) * gain * acc / denom[:, None]


# --- leader-follower -------------------------------------------------------

@dataclass
class FollowerInternalState:
    x_internal: np.ndarray
    last_u: np.ndarray = field(default=None)
    stranded: bool = False

    def __post_init__(self):
        self.x_internal = np.asarray(self.x_internal, dtype=float)
        if self.last_u is None:
            self.last_u = np.zeros_like(self.x_internal)


def follower_control(fs: FollowerInternalState, i: int, internal_states, outputs,
                     t: Topology, g: GainSet, m: RobotModel):
    """Advance follower ``i``'s controller one Euler step and return its input.

    ``internal_states`` holds every robot's controller state (zeros for
    leaders); ``outputs`` every robot's delivered measurement. A follower with
    no neighbours holds its last input and is flagged stranded.
    """
    nbrs = t.neighbors(i)
    if len(nbrs) == 0:
        return FollowerInternalState(fs.x_internal.copy(), fs.last_u.copy(), True), fs.last_u.copy()
    v = np.asarray(internal_states, dtype=float)
    y = np.asarray(outputs, dtype=float)
    Ac, Bc = m.continuous()
    coupling = np.zeros(m.n_out)
    for j in nbrs:
        coupling += m.C @ (fs.x_internal - v[j]) - (y[i] - y[j])
    vdot = (Ac + Bc @ g.F) @ fs.x_internal + g.c * (g.L_obs @ coupling)
    x_next = fs.x_internal + m.dt * vdot
    u = g.F @ x_next
    return FollowerInternalState(x_next, u, False), u


def team_follower_step(v: np.ndarray, outputs: np.ndarray, adjacency: np.ndarray,
                       g: GainSet, m: RobotModel) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`follower_control` for rows whose adjacency is nonzero.

    Returns ``(v_next, u)`` for every row; callers keep only follower rows.
    """
    Ac, Bc = m.continuous()
    E = v @ m.C.T - outputs
    coupling = adjacency.sum(axis=1)[:, None] * E - adjacency @ E
    vdot = v @ (Ac + Bc @ g.F).T + g.c * coupling @ g.L_obs.T
    v_next = v + m.dt * vdot
    return v_next, v_next @ g.F.T


# --- gain design -----------------------------------------------------------

def design_gains(m: RobotModel, k_p: float = 0.5, k_f: float = 1.0, c: float = 1.0) -> GainSet:
    """Baseline, follower, and observer gains for the (identical) robot model.

    ``Q_lmi = I`` is accepted when ``Ac'Q + QAc - 2C'C`` is negative definite,
    giving ``L_obs = -Q^-1 C'``. ``F = -k_f I`` must make the discrete
    ``A + BF`` a contraction.
    """
    Ac, _ = m.continuous()
    Q = np.eye(m.n)
    lmi = Ac.T @ Q + Q @ Ac - 2.0 * m.C.T @ m.C
    if np.linalg.eigvalsh(0.5 * (lmi + lmi.T)).max() >= 0:
        raise GainDesignError("Q = I does not satisfy the observer LMI for this model")
    L_obs = -invert(Q) @ m.C.T
    F = -k_f * np.eye(m.B.shape[1])
    rho = spectral_radius(m.A + m.B @ F)
    if rho >= 1.0:
        raise GainDesignError(f"A + BF is not stable (spectral radius {rho:.4f})")
    return GainSet(K=k_p * np.eye(m.B.shape[1]), F=F, L_obs=L_obs, Q_lmi=Q, c=float(c))


def error_dynamics_matrix(p: LeaderFollowerPartition, g: GainSet, m: RobotModel) -> np.ndarray:
    """Continuous-time matrix ``I_M kron W1 + c L1 kron W2`` of the tracking error."""
    Ac, Bc = m.continuous()
    n = m.n
    if g.F.shape != (Bc.shape[1], n) or g.L_obs.shape != (n, m.n_out):
        raise ValueError("gain dimensions do not match the robot model")
    BF = Bc @ g.F
    LC = g.L_obs @ m.C
    W1 = np.block([[Ac, BF], [np.zeros((n, n)), Ac + BF]])
    W2 = np.block([[np.zeros((n, n)), np.zeros((n, n))], [-LC, LC]])
    return np.kron(np.eye(p.m), W1) + g.c * np.kron(p.L1, W2)


def discretized_error_matrix(p: LeaderFollowerPartition, g: GainSet, m: RobotModel) -> np.ndarray:
    M = error_dynamics_matrix(p, g, m)
    return np.eye(M.shape[0]) + m.dt * M


@dataclass(frozen=True)
class StabilityCheck:
    spectral_radius: float
    max_real_part: float
    c: float

    @property
    def stable(self) -> bool:
        return self.spectral_radius < 1.0 and self.max_real_part < 0.0


def check_error_dynamics(p: LeaderFollowerPartition, g: GainSet, m: RobotModel) -> StabilityCheck:
    M = error_dynamics_matrix(p, g, m)
    rho = spectral_radius(np.eye(M.shape[0]) + m.dt * M)
    return StabilityCheck(rho, max_real_part(M), g.c)


def feasible_coupling(p: LeaderFollowerPartition, g: GainSet, m: RobotModel,
                      max_halvings: int = 20) -> GainSet:
    """Return ``g`` with ``c`` halved until the discretized error dynamics contract.

    Raises:
        GainDesignError: "coupling gain infeasible" naming the smallest
            L1 eigenvalue when no tried ``c`` works.
    """
    trial = g
    for _ in range(max_halvings + 1):
        if check_error_dynamics(p, trial, m).stable:
            return trial
        trial = GainSet(trial.K, trial.F, trial.L_obs, trial.Q_lmi, trial.c / 2.0)
    lam = np.linalg.eigvals(p.L1)
    worst = lam[np.argmin(lam.real)]
    raise GainDesignError(f"coupling gain infeasible (L1 eigenvalue {worst:.6g})")


def max_stable_coupling(n_robots: int, m: RobotModel, margin: float = 0.9) -> float:
    """Topology-independent coupling bound from Gershgorin: ``c dt 2(N-1) < 2``."""
    return margin * 2.0 / (m.dt * 2.0 * max(n_robots - 1, 1))


def coupling_for_team(n_robots: int, m: RobotModel, c: float) -> float:
    return min(c, max_stable_coupling(n_robots, m))

