"""Protocol switching, collision clamp, and team-level metrics."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .plant import AttackKind
from .topology import Topology, pairwise_distances, stranded_followers


class Mode(str, enum.Enum):
    BASELINE = "baseline"
    WEIGHTED_BEARING = "weighted"
    LEADER = "leader"
    FOLLOWER = "follower"

    @property
    def rank(self) -> int:
        return {"baseline": 0, "weighted": 1, "leader": 2, "follower": 2}[self.value]


# Allowed one-way moves; LEADER/FOLLOWER are the two roles of leader-follower mode.
_ALLOWED = {
    Mode.BASELINE: {Mode.WEIGHTED_BEARING, Mode.LEADER, Mode.FOLLOWER},
    Mode.WEIGHTED_BEARING: {Mode.LEADER, Mode.FOLLOWER},
    Mode.LEADER: {Mode.FOLLOWER},
    Mode.FOLLOWER: set(),
}


def transition_allowed(old: Mode, new: Mode) -> bool:
    return old == new or new in _ALLOWED[old]


@dataclass(frozen=True)
class TeamStatus:
    modes: tuple[Mode, ...]
    compromised: frozenset = frozenset()
    followers: tuple[int, ...] = ()
    deception_seen: bool = False
    stranded: tuple[int, ...] = ()
    consensus_reached: bool = False
    phi: tuple[float, ...] = ()
    transitions: tuple = field(default=())

    @classmethod
    def initial(cls, n: int) -> "TeamStatus":
        return cls(modes=(Mode.BASELINE,) * n)

    @property
    def leader_protocol(self) -> Mode:
        """Protocol leaders run among themselves in leader-follower mode."""
        return Mode.WEIGHTED_BEARING if self.deception_seen else Mode.BASELINE

    @property
    def leader_follower_active(self) -> bool:
        return bool(self.followers)


def step_supervisor(status: TeamStatus, alarms, t: Topology, k: int = 0) -> TeamStatus:
    """Apply this step's alarms to the team's protocol selection.

    ``alarms`` holds one ``Alarm | None`` per robot (latched alarms may be
    repeated; the update is idempotent). Any deception alarm moves every
    baseline robot to weighted bearing. Any DoS alarm puts the whole team in
    leader-follower mode with DoS-alarmed robots as followers.
    """
    n = len(status.modes)
    compromised = set(status.compromised)
    dos = set(status.followers)
    deception_seen = status.deception_seen
    for i, a in enumerate(alarms):
        if a is None:
            continue
        compromised.add(i)
        if a.kind is AttackKind.DOS:
            dos.add(i)
        else:
            deception_seen = True

    modes = list(status.modes)
    if dos:
        for i in range(n):
            modes[i] = Mode.FOLLOWER if i in dos else Mode.LEADER
    elif deception_seen:
        modes = [Mode.WEIGHTED_BEARING if m is Mode.BASELINE else m for m in modes]

    changes = tuple((k, i, old, new) for i, (old, new) in enumerate(zip(status.modes, modes))
                    if old is not new)
    for _, i, old, new in changes:
        if not transition_allowed(old, new):
            raise AssertionError(f"illegal mode transition for robot {i}: {old} -> {new}")
    followers = tuple(sorted(dos))
    stranded = tuple(stranded_followers(t, followers)) if followers else ()
    return replace(status, modes=tuple(modes), compromised=frozenset(compromised),
                   followers=followers, deception_seen=deception_seen, stranded=stranded,
                   transitions=status.transitions + changes)


def collision_clamp(positions, proposed_u, min_dist: float, dt: float,
                    max_passes: int | None = None, speed_tol: float = 1e-9) -> np.ndarray:
    """Zero the approach component of any pair predicted to come closer than ``min_dist``.

    Inputs are velocities applied over ``dt``. Passes repeat until no pair
    approaches faster than ``speed_tol`` (at most ``N^2`` passes); if that
    budget runs out, robots still in a freshly created violation are halted.
    """
    if min_dist <= 0:
        raise ValueError("min_dist must be positive")
    p = np.asarray(positions, dtype=float)
    u = np.array(proposed_u, dtype=float)
    n = len(p)
    if n < 2:
        return u
    diff = p[None, :, :] - p[:, None, :]          # diff[i, j] = p_j - p_i
    dist = np.linalg.norm(diff, axis=2)
    np.fill_diagonal(dist, np.inf)
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = diff / dist[:, :, None]
    iu, ju = np.triu_indices(n, 1)
    passes = max_passes if max_passes is not None else n * n
    for _ in range(passes):
        nxt = p + dt * u
        d_next = np.linalg.norm(nxt[iu] - nxt[ju], axis=1)
        changed = False
        for idx in np.flatnonzero(d_next < min_dist):
            i, j = iu[idx], ju[idx]
            e = unit[i, j]
            a_i = u[i] @ e
            a_j = -(u[j] @ e)
            if a_i > speed_tol:
                u[i] -= a_i * e
                changed = True
            if a_j > speed_tol:
                u[j] += a_j * e
                changed = True
        if not changed:
            return u
    nxt = p + dt * u
    d_next = np.linalg.norm(nxt[iu] - nxt[ju], axis=1)
    bad = (d_next < min_dist) & (dist[iu, ju] >= min_dist)
    for idx in np.flatnonzero(bad):
        u[iu[idx]] = 0.0
        u[ju[idx]] = 0.0
    return u


def max_pairwise_distance(positions) -> float:
    p = np.asarray(positions, dtype=float)
    if len(p) < 2:
        return 0.0
    return float(pairwise_distances(p).max())


def consensus_reached(positions, threshold: float) -> bool:
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    return max_pairwise_distance(positions) <= threshold


def performance_terms(estimates, states, desired):
    """``(estimation_term, tracking_term)``; the first is a team average shared by all robots."""
    est = np.asarray(estimates, dtype=float)
    x = np.asarray(states, dtype=float)
    xd = np.broadcast_to(np.asarray(desired, dtype=float), x.shape)
    est_term = float(np.linalg.norm(est - x, axis=1).mean())
    track = np.linalg.norm(xd - x, axis=1)
    return est_term, track


def performance_phi(estimates, states, desired) -> np.ndarray:
    est_term, track = performance_terms(estimates, states, desired)
    return est_term + track
