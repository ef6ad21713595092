"""Deterministic seeded simulation of one scenario.

Per-step order: measure, attack channel, estimate, detect, supervise,
control, clamp, integrate, rebuild topology. Every robot is processed in
one vectorized pass per stage; the per-robot functions in ``control`` and
``detector`` compute the same quantities one robot at a time.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ..control import (
    check_error_dynamics,
    feasible_coupling,
    saturate,
    team_baseline,
    team_follower_step,
    team_weighted_bearing,
)
from ..detector import TeamDetector
from ..estimator import steady_state_gain
from ..plant import AttackKind, DivergenceError, single_integrator
from ..supervisor import Mode, TeamStatus, collision_clamp, step_supervisor
from ..topology import Topology, pairwise_distances, partition, reach_labels
from .config import ScenarioConfig

log = logging.getLogger(__name__)

_ALARM_NAMES = {0: "", 1: "deception", 2: "dos"}


class InitializationError(RuntimeError):
    pass


@dataclass
class TrajectoryLog:
    """Per-step, per-robot record. Arrays share a leading ``steps * n`` axis."""

    n_robots: int
    dt: float
    step: np.ndarray
    time_s: np.ndarray
    robot: np.ndarray
    x: np.ndarray
    xhat: np.ndarray
    y_recv: np.ndarray
    res_norm: np.ndarray
    s_dec: np.ndarray
    s_dos: np.ndarray
    mode: np.ndarray
    alarm: np.ndarray
    u: np.ndarray
    phi: np.ndarray
    phi_est: np.ndarray
    phi_track: np.ndarray
    edges: list = field(default_factory=list)

    @property
    def rows(self) -> int:
        return len(self.step)

    @classmethod
    def empty(cls, n: int = 0, dt: float = 0.0) -> "TrajectoryLog":
        z1 = np.zeros(0)
        z2 = np.zeros((0, 2))
        zi = np.zeros(0, dtype=np.int64)
        return cls(n, dt, zi, z1, zi, z2, z2, z2, z1, z1, z1, np.zeros(0, dtype="<U8"),
                   np.zeros(0, dtype="<U9"), z2, z1, z1, z1, [])

    def positions_by_robot(self) -> np.ndarray:
        """True positions reshaped to ``(steps, n, 2)``."""
        return self.x.reshape(-1, self.n_robots, 2)


@dataclass
class RunSummary:
    seed: int
    n_robots: int
    steps: int
    duration_s: float
    consensus_reached: bool
    consensus_step: int | None
    consensus_time_s: float | None
    attacked: dict                    # robot -> expected attack kind
    alarms: dict                      # robot -> (kind, k_alpha)
    detection_latency_s: dict         # attacked robot -> seconds, None if undetected
    all_detected: bool
    kinds_correct: bool
    false_alarms: list
    connected_throughout: bool
    stranded_ever: list
    followers: list
    leaders: list
    switch_checks: list               # (step, spectral_radius, max_real_part, c) per partition change
    transitions: list
    attack_start_steps: list
    failure: str | None = None
    phi_final: list = field(default_factory=list)

    @property
    def detection_completed(self) -> bool:
        return self.all_detected and self.kinds_correct

    @property
    def any_switch(self) -> bool:
        return bool(self.transitions)

    def summary_lines(self) -> list[str]:
        lat = ",".join(f"{r}:{v:.3f}" if v is not None else f"{r}:none"
                       for r, v in sorted(self.detection_latency_s.items()))
        return [
            f"seed={self.seed}",
            f"steps={self.steps}",
            f"consensus={str(self.consensus_reached).lower()}",
            f"consensus_step={self.consensus_step if self.consensus_step is not None else 'none'}",
            f"consensus_time_s={self.consensus_time_s:.3f}" if self.consensus_time_s is not None
            else "consensus_time_s=none",
            f"detection_latency_s={lat or 'none'}",
            f"all_detected={str(self.all_detected).lower()}",
            f"false_alarms={','.join(map(str, self.false_alarms)) or 'none'}",
            f"connected_throughout={str(self.connected_throughout).lower()}",
            f"stranded={','.join(map(str, self.stranded_ever)) or 'none'}",
            f"failure={self.failure or 'none'}",
        ]


@dataclass
class RunResult:
    log: TrajectoryLog
    summary: RunSummary


def sample_initial_positions(cfg: ScenarioConfig, rng: np.random.Generator,
                             max_tries: int = 10_000) -> np.ndarray:
    """Uniform positions in the arena (centred at the origin) with spacing and neighbour constraints."""
    w, h = cfg.arena
    n = cfg.n_robots
    for _ in range(max_tries):
        pts = np.empty((n, 2))
        placed = 0
        attempts = 0
        while placed < n and attempts < 200 * n:
            attempts += 1
            p = rng.uniform((-w / 2, -h / 2), (w / 2, h / 2))
            if placed and np.min(np.linalg.norm(pts[:placed] - p, axis=1)) < cfg.min_dist:
                continue
            pts[placed] = p
            placed += 1
        if placed < n:
            continue
        d = pairwise_distances(pts)
        np.fill_diagonal(d, np.inf)
        if np.all(d.min(axis=1) <= cfg.sensor_range):
            return pts
    raise InitializationError("could not sample a valid initial configuration")


def validate_initial_positions(cfg: ScenarioConfig, pts: np.ndarray) -> None:
    d = pairwise_distances(pts)
    np.fill_diagonal(d, np.inf)
    if d.min() < cfg.min_dist:
        raise InitializationError(f"initial positions closer than min_dist={cfg.min_dist}")
    lonely = np.flatnonzero(d.min(axis=1) > cfg.sensor_range)
    if lonely.size:
        raise InitializationError(f"robots without a neighbour at t=0: {lonely.tolist()}")


def _alarm_objects(det: TeamDetector, n: int):
    return [det.alarm(i) for i in range(n)]


@lru_cache(maxsize=16)
def _filter_gain(dt: float, q: float, r: float) -> np.ndarray:
    # every run with the same noise model shares one DARE solve
    L, _ = steady_state_gain(single_integrator(dt, q, r))
    L.setflags(write=False)
    return L


def run_scenario(cfg: ScenarioConfig) -> RunResult:
    """Simulate ``cfg``; the result is a pure function of the config (seed included)."""
    n = cfg.n_robots
    m = cfg.model()
    gains = cfg.gain_set()
    rssm = cfg.rss_model()
    ctl = cfg.control
    L = _filter_gain(cfg.dt, cfg.noise.q, cfg.noise.r)
    A, B, C = m.A, m.B, m.C
    Rf, Qf = m.measurement_factor, m.process_factor

    init_ss, attack_ss, noise_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    if cfg.initial_positions is not None:
        x = np.asarray(cfg.initial_positions, dtype=float).copy()
        validate_initial_positions(cfg, x)
    else:
        x = sample_initial_positions(cfg, np.random.default_rng(init_ss))
    attack_rng = np.random.default_rng(attack_ss)
    rng = np.random.default_rng(noise_ss)
    specs = [s.with_alphas(attack_rng, m.n_out) for s in cfg.attack_specs()]

    attacked: dict[int, AttackKind] = {}
    for s in specs:
        for t in s.targets:
            attacked.setdefault(t, s.kind)

    x_hat = x.copy()
    last_recv = x @ C.T
    v = np.zeros((n, m.n))
    u_prev = np.zeros((n, m.B.shape[1]))
    desired = x.mean(axis=0)
    det = TeamDetector(n, cfg.detector_params())
    status = TeamStatus.initial(n)

    max_steps = int(round(cfg.max_duration / cfg.dt))
    settle_steps = int(round(cfg.settle_time / cfg.dt))
    last_start = max((s.start_step for s in specs), default=0)
    earliest_stop = last_start + int(round(cfg.attack_grace / cfg.dt)) if specs else 0

    rec: dict[str, list] = {k: [] for k in ("x", "xhat", "y", "res", "sdec", "sdos", "mode",
                                            "alarm", "u", "phi", "pest", "ptrack")}
    edges_log = []
    connected_all = True
    stranded_ever: set[int] = set()
    switch_checks = []
    inside_since: int | None = None
    failure = None
    mode_codes = np.array([md.value for md in status.modes], dtype="<U8")
    deception_flagged = np.zeros(n, dtype=bool)
    k = 0
    steps_run = 0
    phi = np.zeros(n)

    for k in range(max_steps):
        dist = pairwise_distances(x)
        adj = (dist <= cfg.sensor_range).astype(float)
        np.fill_diagonal(adj, 0.0)
        labels = reach_labels(adj)
        if labels.any():
            connected_all = False

        # measure + attack channel
        y = x @ C.T + rng.standard_normal((n, m.n_out)) @ Rf.T
        y_recv = y.copy()
        for s in specs:
            if k < s.start_step:
                continue
            idx = np.asarray(s.targets)
            if s.kind is AttackKind.DECEPTION:
                y_recv[idx] += np.stack([s.alpha_values[t] for t in s.targets])
            else:
                stale = rng.random(len(idx)) < s.delay_prob
                y_recv[idx[stale]] = last_recv[idx[stale]]

        # estimate + detect
        r = y_recv - x_hat @ C.T
        res_norm = np.linalg.norm(r, axis=1)
        z = (np.linalg.norm(y_recv - last_recv, axis=1) <= det.p.tol).astype(np.int8)
        fired = det.update(res_norm, z, k)
        alarm_col = np.full(n, "", dtype="<U9")

        # supervise
        if fired.size:
            for i in fired:
                alarm_col[i] = _ALARM_NAMES[int(det.kind[i])]
            deception_flagged |= det.kind == TeamDetector.DECEPTION
            topo = Topology(adj, cfg.sensor_range)
            prev_followers = status.followers
            status = step_supervisor(status, _alarm_objects(det, n), topo, k)
            mode_codes = np.array([md.value for md in status.modes], dtype="<U8")
            if status.followers != prev_followers:
                newly = set(status.followers) - set(prev_followers)
                v[list(newly)] = 0.0
                if status.stranded:
                    switch_checks.append((k, float("nan"), float("nan"), gains.c))
                else:
                    part = partition(topo, status.followers)
                    gains = feasible_coupling(part, gains, m)
                    chk = check_error_dynamics(part, gains, m)
                    switch_checks.append((k, chk.spectral_radius, chk.max_real_part, chk.c))

        # control
        u = np.zeros((n, m.B.shape[1]))
        if status.leader_follower_active:
            fmask = mode_codes == Mode.FOLLOWER.value
            lmask = ~fmask
            adj_ll = adj * np.outer(lmask, lmask)
            if status.leader_protocol is Mode.BASELINE:
                u_lead = team_baseline(x_hat, adj_ll, gains.K, ctl.sign)
            else:
                u_lead = team_weighted_bearing(x, adj_ll, dist, rssm, ctl.bearing_gain,
                                               ctl.bearing_normalization, ctl.sign)
            u[lmask] = u_lead[lmask]

            # followers ignore deception-flagged neighbours unless nothing else is in range
            adj_f = adj * fmask[:, None]
            trusted = adj_f * ~deception_flagged[None, :]
            has_trusted = trusted.sum(axis=1) > 0
            adj_f = np.where(has_trusted[:, None], trusted, adj_f)
            v[lmask] = 0.0
            # the coupling only needs output differences, taken from onboard relative sensing
            v_next, u_f = team_follower_step(v, x @ C.T, adj_f, gains, m)
            isolated = fmask & (adj_f.sum(axis=1) == 0)
            active = fmask & ~isolated
            v[active] = v_next[active]
            u[active] = u_f[active]
            u[isolated] = u_prev[isolated]
            fl = np.flatnonzero(fmask)
            lonely = set(np.flatnonzero(isolated).tolist())
            lonely |= {int(f) for f in fl if not np.any(lmask[labels == labels[f]])}
            stranded_ever |= lonely
        else:
            base = mode_codes == Mode.BASELINE.value
            if base.any():
                u[base] = team_baseline(x_hat, adj, gains.K, ctl.sign)[base]
            wb = ~base
            if wb.any():
                u[wb] = team_weighted_bearing(x, adj, dist, rssm, ctl.bearing_gain,
                                              ctl.bearing_normalization, ctl.sign)[wb]

        u = saturate(u, ctl.u_max)
        if cfg.collision_avoidance:
            u = collision_clamp(x, u, cfg.min_dist, cfg.dt)

        est_err = np.linalg.norm(x_hat - x, axis=1)
        track = np.linalg.norm(desired - x, axis=1)
        phi = est_err.mean() + track
        if cfg.record:
            rec["x"].append(x.copy())
            rec["xhat"].append(x_hat.copy())
            rec["y"].append(y_recv)
            rec["res"].append(res_norm)
            rec["sdec"].append(det.S_dec.copy())
            rec["sdos"].append(det.S_dos.copy())
            rec["mode"].append(mode_codes.copy())
            rec["alarm"].append(alarm_col)
            rec["u"].append(u.copy())
            rec["phi"].append(phi)
            rec["pest"].append(np.full(n, est_err.mean()))
            rec["ptrack"].append(track)
            iu, ju = np.nonzero(np.triu(adj, 1))
            edges_log.append(list(zip(iu.tolist(), ju.tolist())))

        # consensus bookkeeping uses the positions this step started from
        inside = bool(dist.max() <= cfg.consensus_threshold)
        if inside:
            if inside_since is None:
                inside_since = k
        else:
            inside_since = None

        steps_run = k + 1
        if inside and k >= earliest_stop and k - inside_since >= settle_steps:
            break

        # integrate
        x_hat = x_hat @ A.T + u @ B.T + r @ L.T
        x = x @ A.T + u @ B.T + rng.standard_normal((n, m.n)) @ Qf.T
        last_recv = y_recv
        u_prev = u
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(x_hat))):
            failure = f"state diverged at step {k}"
            log.error("run seed=%d: %s", cfg.seed, failure)
            break

    reached = inside_since is not None and failure is None
    summary = _summarize(cfg, specs, attacked, det, status, steps_run, reached, inside_since,
                         connected_all, stranded_ever, switch_checks, failure, phi)
    log_ = _build_log(cfg, rec, edges_log) if cfg.record else TrajectoryLog.empty(n, cfg.dt)
    return RunResult(log_, summary)


def _summarize(cfg, specs, attacked, det, status, steps_run, reached, inside_since,
               connected_all, stranded_ever, switch_checks, failure, phi) -> RunSummary:
    start_of = {}
    for s in specs:
        for t in s.targets:
            start_of.setdefault(t, s.start_step)
    alarms = {}
    for i in range(cfg.n_robots):
        a = det.alarm(i)
        if a is not None:
            alarms[i] = (a.kind.value, a.k_alpha)
    latency = {}
    kinds_ok = True
    for t, kind in attacked.items():
        a = alarms.get(t)
        if a is None or a[1] < start_of[t]:
            latency[t] = None
        else:
            latency[t] = (a[1] - start_of[t]) * cfg.dt
        if a is None or a[0] != kind.value:
            kinds_ok = False
    all_detected = all(v is not None for v in latency.values())
    false_alarms = sorted(i for i in alarms if i not in attacked
                          or alarms[i][1] < start_of.get(i, 0))
    followers = list(status.followers)
    return RunSummary(
        seed=cfg.seed,
        n_robots=cfg.n_robots,
        steps=steps_run,
        duration_s=steps_run * cfg.dt,
        consensus_reached=reached,
        consensus_step=inside_since if reached else None,
        consensus_time_s=inside_since * cfg.dt if reached else None,
        attacked={t: k.value for t, k in attacked.items()},
        alarms=alarms,
        detection_latency_s=latency,
        all_detected=all_detected,
        kinds_correct=kinds_ok,
        false_alarms=false_alarms,
        connected_throughout=connected_all,
        stranded_ever=sorted(stranded_ever),
        followers=followers,
        leaders=[i for i in range(cfg.n_robots) if i not in set(followers)] if followers else [],
        switch_checks=switch_checks,
        transitions=[(k, i, o.value, nw.value) for k, i, o, nw in status.transitions],
        attack_start_steps=[s.start_step for s in specs],
        failure=failure,
        phi_final=np.asarray(phi).tolist(),
    )


def _build_log(cfg: ScenarioConfig, rec, edges_log) -> TrajectoryLog:
    n = cfg.n_robots
    steps = len(rec["x"])
    if steps == 0:
        return TrajectoryLog.empty(n, cfg.dt)
    step = np.repeat(np.arange(steps), n)
    return TrajectoryLog(
        n_robots=n,
        dt=cfg.dt,
        step=step,
        time_s=step * cfg.dt,
        robot=np.tile(np.arange(n), steps),
        x=np.concatenate(rec["x"]),
        xhat=np.concatenate(rec["xhat"]),
        y_recv=np.concatenate(rec["y"]),
        res_norm=np.concatenate(rec["res"]),
        s_dec=np.concatenate(rec["sdec"]),
        s_dos=np.concatenate(rec["sdos"]),
        mode=np.concatenate(rec["mode"]),
        alarm=np.concatenate(rec["alarm"]),
        u=np.concatenate(rec["u"]),
        phi=np.concatenate(rec["phi"]),
        phi_est=np.concatenate(rec["pest"]),
        phi_track=np.concatenate(rec["ptrack"]),
        edges=edges_log,
    )
