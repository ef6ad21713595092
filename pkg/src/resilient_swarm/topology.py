"""Proximity interaction graph, Laplacian, and leader/follower partition."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from .numerics import NumericsError, invert


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class Topology:
    """Undirected 0/1 proximity graph over ``n`` robots."""

    adjacency: np.ndarray
    sensor_range: float

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=float)
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])

    def degree(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def edges(self) -> list[tuple[int, int]]:
        iu, ju = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(iu.tolist(), ju.tolist()))


def pairwise_distances(positions) -> np.ndarray:
    p = np.asarray(positions, dtype=float)
    diff = p[:, None, :] - p[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def build_proximity_graph(positions, sensor_range: float) -> Topology:
    """Edge between every pair no farther apart than ``sensor_range``."""
    if sensor_range <= 0:
        raise ValueError("sensor_range must be positive")
    p = np.asarray(positions, dtype=float)
    if not np.all(np.isfinite(p)):
        raise ValueError("positions must be finite")
    adj = (pairwise_distances(p) <= sensor_range).astype(float)
    np.fill_diagonal(adj, 0.0)
    return Topology(adj, float(sensor_range))


def laplacian(t: Topology) -> np.ndarray:
    adj = t.adjacency
    return np.diag(adj.sum(axis=1)) - adj


def component_labels(t: Topology) -> np.ndarray:
    _, labels = connected_components(t.adjacency, directed=False)
    return labels


def reach_labels(adjacency: np.ndarray) -> np.ndarray:
    """Component label per node (smallest member index) by boolean closure.

    Cheaper than a sparse-graph call for the small dense graphs of a swarm.
    """
    R = (np.asarray(adjacency) != 0) | np.eye(len(adjacency), dtype=bool)
    while True:
        nxt = (R.astype(np.int32) @ R.astype(np.int32)) > 0
        if np.array_equal(nxt, R):
            return R.argmax(axis=1)
        R = nxt


def is_connected(t: Topology) -> bool:
    if t.n <= 1:
        return True
    count, _ = connected_components(t.adjacency, directed=False)
    return count == 1


def follower_has_leader_path(t: Topology, followers) -> bool:
    """True when every follower shares a connected component with some leader."""
    fset = set(int(f) for f in followers)
    labels = component_labels(t)
    leader_components = {labels[i] for i in range(t.n) if i not in fset}
    return all(labels[f] in leader_components for f in fset)


def stranded_followers(t: Topology, followers) -> list[int]:
    fset = set(int(f) for f in followers)
    labels = component_labels(t)
    leader_components = {labels[i] for i in range(t.n) if i not in fset}
    return sorted(f for f in fset if labels[f] not in leader_components)


@dataclass(frozen=True)
class LeaderFollowerPartition:
    followers: tuple[int, ...]
    leaders: tuple[int, ...]
    L1: np.ndarray
    L2: np.ndarray
    permutation: tuple[int, ...] = field(default=())

    @property
    def m(self) -> int:
        return len(self.followers)


def partition(t: Topology, followers) -> LeaderFollowerPartition:
    """Reorder the Laplacian followers-first and cut out the follower rows.

    Followers and leaders are each kept in ascending index order so the
    extracted blocks are reproducible.
    """
    fs = sorted(set(int(f) for f in followers))
    if any(f < 0 or f >= t.n for f in fs):
        raise PartitionError(f"follower index out of range for n={t.n}: {fs}")
    if not fs or len(fs) == t.n:
        raise PartitionError("degenerate partition: need at least one follower and one leader")
    ls = [i for i in range(t.n) if i not in set(fs)]
    lap = laplacian(t)
    L1 = lap[np.ix_(fs, fs)]
    L2 = lap[np.ix_(fs, ls)]
    return LeaderFollowerPartition(tuple(fs), tuple(ls), L1, L2, tuple(fs + ls))


@dataclass(frozen=True)
class PartitionReport:
    eigs_ok: bool
    nonneg_ok: bool
    rowsum_ok: bool
    min_real_part: float
    min_entry: float
    max_rowsum_dev: float

    @property
    def ok(self) -> bool:
        return self.eigs_ok and self.nonneg_ok and self.rowsum_ok


def verify_partition(p: LeaderFollowerPartition, tol: float = 1e-9) -> PartitionReport:
    """Check the three structural properties a valid leader set guarantees.

    eigenvalues of L1 have positive real parts; ``-L1^-1 L2`` is entrywise
    nonnegative with unit row sums. A singular L1 (some follower cut off from
    every leader) comes back as a failed report, not an exception.
    """
    eig = np.linalg.eigvals(p.L1)
    min_re = float(eig.real.min())
    eigs_ok = min_re > tol
    try:
        H = -invert(p.L1) @ p.L2
    except NumericsError:
        return PartitionReport(False, False, False, min_re, float("nan"), float("nan"))
    min_entry = float(H.min())
    dev = float(np.abs(H.sum(axis=1) - 1.0).max())
    return PartitionReport(eigs_ok, min_entry >= -tol, dev <= tol, min_re, min_entry, dev)
