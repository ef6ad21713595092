"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL | evidence`` line; the lines
are repeated in the pytest terminal summary.
"""

import math
import statistics
import time

import numpy as np
import pytest

from resilient_swarm.cli import resolve_config
from resilient_swarm.control import design_gains, team_follower_step
from resilient_swarm.detector import (
    DetectorParams,
    DetectorState,
    TeamDetector,
    bernoulli_cusum_update,
    cusum_update,
    detect_step,
    simulate_attack_free_residuals,
)
from resilient_swarm.numerics import dare_residual, solve_dare
from resilient_swarm.plant import single_integrator
from resilient_swarm.simkit import run_scenario
from resilient_swarm.simkit.io import trajectory_csv_text, write_summary
from resilient_swarm.simkit.montecarlo import monte_carlo
from resilient_swarm.topology import build_proximity_graph, is_connected, partition, verify_partition

GATED_RUNS = 100          # connected runs collected for the single-attack scenarios
SEED_BUDGET = 200         # give up collecting after this many seeds
_cache: dict = {}


def gated_runs(name: str):
    """First ``GATED_RUNS`` seeds whose proximity graph stays connected throughout."""
    if name not in _cache:
        base = resolve_config(name)
        kept, tried = [], 0
        for seed in range(SEED_BUDGET):
            tried += 1
            s = run_scenario(base.with_overrides(seed=seed, record=False)).summary
            if s.connected_throughout:
                kept.append(s)
                if len(kept) == GATED_RUNS:
                    break
        _cache[name] = (kept, tried)
    return _cache[name]


def reached_median(summaries) -> float:
    times = [s.consensus_time_s for s in summaries if s.consensus_reached]
    return statistics.median(times) if times else math.inf


# --- 1 ----------------------------------------------------------------------

def test_criterion_1_dare(report):
    t0 = time.perf_counter()
    q, r = 1e-4, 1e-2
    closed = (q + math.sqrt(q * q + 4 * q * r)) / 2
    P1 = solve_dare([[1.0]], [[1.0]], [[q]], [[r]])
    err = abs(P1[0, 0] - closed)
    m = single_integrator()
    P2 = solve_dare(m.A, m.C, m.Qw, m.Rv)
    res = dare_residual(P2, m.A, m.C, m.Qw, m.Rv)
    elapsed = time.perf_counter() - t0
    ok = err <= 1e-12 and res < 1e-10 and elapsed < 1.0 and abs(closed - 1.05125e-3) < 1e-7
    report("criterion 1", ok, f"scalar_err={err:.2e} residual_2d={res:.2e} runtime={elapsed:.3f}s")
    assert ok


# --- 2 ----------------------------------------------------------------------

def test_criterion_2_no_attack(report):
    t0 = time.perf_counter()
    base = resolve_config("no_attack")
    runs = [run_scenario(base.with_overrides(seed=s, record=False)).summary for s in range(100)]
    elapsed = time.perf_counter() - t0
    reached = [s for s in runs if s.consensus_reached and s.consensus_time_s < 60.0]
    quiet = [s for s in reached if not s.any_switch]
    ok = len(reached) >= 95 and len(quiet) >= 95 and elapsed < 60.0
    report("criterion 2", ok, f"reached<60s={len(reached)}/100 no_switch={len(quiet)}/{len(reached)} "
                              f"connected={sum(s.connected_throughout for s in runs)}/100 "
                              f"median={reached_median(runs):.2f}s runtime={elapsed:.1f}s")
    assert ok


# --- 3 ----------------------------------------------------------------------

def test_criterion_3_deception(report):
    t0 = time.perf_counter()
    runs, tried = gated_runs("deception_8robots")
    elapsed = time.perf_counter() - t0
    cfg = resolve_config("deception_8robots")
    spec = cfg.attacks[0]
    detected = [s for s in runs
                if s.detection_completed
                and all(s.alarms[t][0] == "deception" for t in spec.targets)
                and all(v is not None and v <= 3.0 for v in s.detection_latency_s.values())]
    clean = [s for s in runs if not s.false_alarms]
    reached = [s for s in runs if s.consensus_reached]
    ok = (len(runs) == GATED_RUNS and len(detected) == len(runs) and len(clean) == len(runs)
          and len(reached) >= 90 and spec.alpha_bounds[0] >= 0.2 and elapsed < 120.0)
    worst = max(v for s in runs for v in s.detection_latency_s.values() if v is not None)
    report("criterion 3", ok, f"connected={len(runs)}/{tried} seeds detected={len(detected)} "
                              f"no_false_alarm={len(clean)} reached={len(reached)} "
                              f"worst_latency={worst:.2f}s median={reached_median(runs):.2f}s "
                              f"runtime={elapsed:.1f}s")
    assert ok


# --- 4 ----------------------------------------------------------------------

def test_criterion_4_dos(report):
    t0 = time.perf_counter()
    runs, tried = gated_runs("dos_8robots")
    elapsed = time.perf_counter() - t0
    cfg = resolve_config("dos_8robots")
    targets = sorted(cfg.attacks[0].targets)
    clean = sorted(set(range(cfg.n_robots)) - set(targets))
    assert cfg.attacks[0].delay_prob == 0.95
    kinds_ok = [s for s in runs if all(t in s.alarms and s.alarms[t][0] == "dos" for t in targets)]
    roles_ok = [s for s in runs if s.followers == targets and s.leaders == clean]
    reached = [s for s in runs if s.consensus_reached]
    ok = (len(runs) == GATED_RUNS and len(kinds_ok) == len(runs) and len(roles_ok) == len(runs)
          and len(reached) >= 90)
    report("criterion 4", ok, f"connected={len(runs)}/{tried} seeds dos_alarms={len(kinds_ok)} "
                              f"roles_exact={len(roles_ok)} reached={len(reached)} "
                              f"clean_false_alarm_runs={sum(bool(s.false_alarms) for s in runs)} "
                              f"median={reached_median(runs):.2f}s runtime={elapsed:.1f}s")
    assert ok


# --- 5 ----------------------------------------------------------------------

def test_criterion_5_sequential(report):
    base = resolve_config("sequential_8robots")
    kinds = {a.kind: set(a.targets) for a in base.attacks}
    starts = {a.kind: a.start_time for a in base.attacks}
    assert starts["dos"] >= 8.0 and not (kinds["deception"] & kinds["dos"])
    runs = [run_scenario(base.with_overrides(seed=s, record=False)).summary for s in range(50)]
    in_order = 0
    for s in runs:
        dec = [k for r, (kind, k) in s.alarms.items() if kind == "deception" and r in kinds["deception"]]
        dos = [k for r, (kind, k) in s.alarms.items() if kind == "dos" and r in kinds["dos"]]
        if s.detection_completed and dec and dos and max(dec) < min(dos):
            in_order += 1
    med_seq = reached_median(runs)
    med_dec = reached_median(gated_runs("deception_8robots")[0])
    med_dos = reached_median(gated_runs("dos_8robots")[0])
    ok = in_order == len(runs) and med_seq > med_dec and med_seq > med_dos
    report("criterion 5", ok, f"ordered_detection={in_order}/50 median_seq={med_seq:.2f}s "
                              f"median_dec={med_dec:.2f}s median_dos={med_dos:.2f}s "
                              f"reached={sum(s.consensus_reached for s in runs)}/50")
    assert ok


# --- 6 ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def mc_stats():
    base = resolve_config("montecarlo_base")
    t0 = time.perf_counter()
    stats = monte_carlo(base, [8, 12, 16, 20, 24], [25, 50, 75], ["deception", "dos"], 100)
    return stats, time.perf_counter() - t0


def test_criterion_6_monte_carlo(report, mc_stats):
    stats, elapsed = mc_stats
    records = list(stats.records())
    gated = [r for r in records if r.gated]
    partial = [r for r in records if r.error is None and not r.connected]
    rows = stats.rows()
    # disconnected runs are reported as partial and never folded into the success count
    books_ok = (sum(row["partial"] for row in rows) == len(partial)
                and all(row["successes"] + row["partial"] + row["errors"] <= row["runs"] for row in rows))
    ok = len(records) == 3000 and stats.violations == 0 and books_ok and elapsed < 600.0
    worst = min(rows, key=lambda row: row["consensus_rate"])
    report("criterion 6", ok, f"runs={len(records)} gated={len(gated)} violations={stats.violations} "
                              f"partial={len(partial)} errors={sum(r.error is not None for r in records)} "
                              f"lowest_rate=N{worst['n']}/{worst['fraction']}%/{worst['kind']}:"
                              f"{worst['consensus_rate']:.2f} runtime={elapsed:.0f}s")
    assert ok


# --- 7 ----------------------------------------------------------------------

def test_criterion_7_partition(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    checked = 0
    worst_eig, worst_entry, worst_row = math.inf, math.inf, 0.0
    while checked < 250:
        n = int(rng.integers(2, 13))
        t = build_proximity_graph(rng.uniform(0, 1.2, size=(n, 2)), 0.6)
        if not is_connected(t):
            continue
        m = int(rng.integers(1, n))
        followers = sorted(rng.choice(n, size=m, replace=False).tolist())
        rep = verify_partition(partition(t, followers))
        worst_eig = min(worst_eig, rep.min_real_part)
        worst_entry = min(worst_entry, rep.min_entry)
        worst_row = max(worst_row, rep.max_rowsum_dev)
        checked += 1
    elapsed = time.perf_counter() - t0
    ok = worst_eig > 0 and worst_entry >= -1e-9 and worst_row <= 1e-9 and elapsed < 10.0
    report("criterion 7", ok, f"graphs={checked} min_re_eig={worst_eig:.3e} min_entry={worst_entry:.2e} "
                              f"max_rowsum_dev={worst_row:.2e} runtime={elapsed:.2f}s")
    assert ok


# --- 8 ----------------------------------------------------------------------

def two_robot_error_time(limit_s: float = 60.0) -> float:
    m = single_integrator()
    g = design_gains(m)
    adj = np.array([[0.0, 1.0], [1.0, 0.0]])
    x = np.array([[0.0, 0.0], [0.6, -0.3]])     # robot 0 leads and holds position
    v = np.zeros((2, 2))
    for k in range(int(limit_s / m.dt) + 1):
        eps = np.concatenate([x[1] - x[0], v[1]])
        if np.linalg.norm(eps) < 1e-3:
            return k * m.dt
        v_next, u = team_follower_step(v, x @ m.C.T, adj, g, m)
        v[1] = v_next[1]
        x[1] = x[1] + m.dt * u[1]
    return math.inf


def test_criterion_8_error_dynamics(report, mc_stats):
    rhos = []
    for name in ("dos_8robots",):
        rhos += [rho for s in gated_runs(name)[0] for _, rho, _, _ in s.switch_checks if np.isfinite(rho)]
    seq = resolve_config("sequential_8robots")
    for seed in range(50):
        s = run_scenario(seq.with_overrides(seed=seed, record=False)).summary
        rhos += [rho for _, rho, _, _ in s.switch_checks if np.isfinite(rho)]
    stats, _ = mc_stats
    rhos += [r.worst_rho for r in stats.records() if r.worst_rho is not None]
    t_conv = two_robot_error_time()
    ok = bool(rhos) and max(rhos) < 1.0 and t_conv <= 60.0
    report("criterion 8", ok, f"accepted_pairs={len(rhos)} max_rho={max(rhos):.6f} "
                              f"two_robot_eps<1e-3_at={t_conv:.2f}s")
    assert ok


# --- 9 ----------------------------------------------------------------------

def brute_force(norms, z, p):
    S_dec = S_dos = 0.0
    alarm = None
    out = []
    up, down = math.log(p.mu1 / p.mu0), math.log((1 - p.mu1) / (1 - p.mu0))
    for k, (a, zk) in enumerate(zip(norms, z)):
        if alarm is None:
            s1 = max(0.0, S_dec + a - p.drift)
            s2 = max(0.0, S_dos + (up if zk else down))
            if s2 > p.tau_dos:
                alarm, s2 = ("dos", k), 0.0
                if s1 > p.tau_dec:
                    s1 = 0.0
            elif s1 > p.tau_dec:
                alarm, s1 = ("deception", k), 0.0
            S_dec, S_dos = s1, s2
        out.append((S_dec, S_dos, alarm))
    return out


def recurrences_match(seed: int, latch: bool = True) -> bool:
    rng = np.random.default_rng(seed)
    # unreachable thresholds keep both statistics running over the whole stream
    scale = 1.0 if latch else 1e12
    p = DetectorParams(tau_dec=float(rng.uniform(1, 40)) * scale, drift=float(rng.uniform(0, 0.5)),
                       tau_dos=float(rng.uniform(3, 60)) * scale, mu0=0.01, mu1=0.9)
    n = 10_000
    norms = np.abs(rng.normal(0.15, 0.2, size=n))
    z = (rng.random(n) < 0.12).astype(int)
    d = DetectorState(p)
    for k, (exp, a, zk) in enumerate(zip(brute_force(norms, z, p), norms, z)):
        d = detect_step(d, [a, 0.0], int(zk), k)
        got = None if d.alarm is None else (d.alarm.kind.value, d.alarm.k_alpha)
        if (d.S_dec, d.S_dos, got) != exp:
            return False
    return True


def calibrated_far(p: DetectorParams, horizon: int = 1000, robots: int = 8, seeds: int = 100):
    m = single_integrator()
    alarms = 0
    for seed in range(10_000, 10_000 + seeds):
        norms, steps = simulate_attack_free_residuals(m, horizon, robots, np.random.default_rng(seed))
        z = (steps <= p.tol).astype(np.int8)
        team = TeamDetector(robots, p)
        for k in range(horizon):
            team.update(norms[:, k], z[:, k], k)
        alarms += int(np.count_nonzero(team.kind))
    return alarms / (robots * seeds)


def latency_bound_holds(rng) -> bool:
    tau = float(rng.uniform(0.01, 10))
    drift = float(rng.uniform(0, 1))
    a = drift + float(rng.uniform(0.01, 2))
    d = DetectorState(DetectorParams(tau_dec=tau, drift=drift, tau_dos=1e9, mu0=0.01, mu1=0.9))
    k = 0
    while d.alarm is None:
        d = cusum_update(d, [a, 0.0], k)
        k += 1
    return d.alarm.k_alpha <= math.ceil(tau / (a - drift))


def test_criterion_9_detector(report):
    exact = all(recurrences_match(s, latch) for s in range(3) for latch in (True, False))
    p = DetectorParams()
    far = calibrated_far(p)
    target = 0.005                              # per-horizon rate the defaults were fitted to
    rng = np.random.default_rng(9)
    bound = sum(latency_bound_holds(rng) for _ in range(50))
    # Bernoulli LLR alone must also agree on a pure staleness stream
    d = DetectorState(DetectorParams(mu0=0.01, mu1=0.9))
    d = bernoulli_cusum_update(bernoulli_cusum_update(d, 1, 0), 1, 1)
    ok = exact and far <= 2 * target and bound == 50 and d.alarm is not None and d.alarm.k_alpha == 1
    report("criterion 9", ok, f"brute_force_exact={exact} far={far:.4f} (target {target}) "
                              f"latency_bound={bound}/50")
    assert ok


# --- 10 ---------------------------------------------------------------------

BUNDLED = ["no_attack", "deception_8robots", "dos_8robots", "sequential_8robots",
           "extreme_24robots", "montecarlo_base"]


def test_criterion_10_determinism(report, tmp_path):
    identical = []
    for name in BUNDLED:
        cfg = resolve_config(name).with_overrides(record=True)
        a = trajectory_csv_text(run_scenario(cfg).log)
        b = trajectory_csv_text(run_scenario(cfg).log)
        identical.append(a == b and a.count("\n") > 1)
    base = resolve_config("montecarlo_base").with_overrides(max_duration=30.0)
    outs = []
    for jobs in (1, 2, 3):
        stats = monte_carlo(base, [8, 12], [25, 75], ["deception", "dos"], 4, parallelism=jobs)
        path = tmp_path / f"mc_{jobs}.csv"
        write_summary(stats, path)
        outs.append(path.read_bytes())
    jobs_ok = outs[0] == outs[1] == outs[2]
    ok = all(identical) and jobs_ok
    report("criterion 10", ok, f"byte_identical={sum(identical)}/{len(BUNDLED)} scenarios "
                               f"jobs_invariant={jobs_ok}")
    assert ok
