"""Monte Carlo sweep over team size, compromised fraction, and attack kind.

Every run's seed is derived from ``(base seed, cell index, run index)`` with
a splitmix64 mix, so results do not depend on how runs are scheduled across
worker processes. Aggregation sorts run records by index before merging.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import ScenarioConfig
from .run import run_scenario

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
KINDS = ("deception", "dos", "none")


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix_seed(base: int, cell: int, run: int) -> int:
    """Chain splitmix64 over the three indices.

    Each stage is a bijection, so collisions need two (cell, run) pairs to meet
    after the final xor: negligible for grids of realistic size.
    """
    h = splitmix64(base & MASK64)
    h = splitmix64(h ^ (cell & MASK64))
    return splitmix64(h ^ (run & MASK64))


@dataclass(frozen=True)
class Cell:
    n: int
    fraction: int          # percent of the team compromised
    kind: str

    @property
    def n_targets(self) -> int:
        if self.kind == "none":
            return 0
        return max(1, int(round(self.n * self.fraction / 100.0)))


def grid_cells(ns, fractions, kinds) -> list[Cell]:
    for k in kinds:
        if k not in KINDS:
            raise ValueError(f"unknown attack kind {k!r}")
    return [Cell(int(n), int(f), k) for n in ns for f in fractions for k in kinds]


@dataclass(frozen=True)
class RunRecord:
    cell: int
    run: int
    seed: int
    targets: tuple[int, ...]
    reached: bool = False
    consensus_time_s: float | None = None
    detection_completed: bool = False
    connected: bool = False
    stranded: bool = False
    false_alarm: bool = False
    worst_rho: float | None = None    # largest error-dynamics spectral radius over accepted switches
    error: str | None = None

    @property
    def gated(self) -> bool:
        """Run falls under the guarantee: attacks identified and graph stayed connected."""
        return self.error is None and self.detection_completed and self.connected

    @property
    def violation(self) -> bool:
        return self.gated and not self.reached


def wilson_interval(successes: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = successes / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass
class CellStats:
    cell: Cell
    records: list = field(default_factory=list)

    @property
    def runs(self) -> int:
        return len(self.records)

    def _count(self, pred) -> int:
        return sum(1 for r in self.records if pred(r))

    @property
    def successes(self) -> int:
        # a run that lost connectivity is partial even if it happened to converge
        return self._count(lambda r: r.reached and r.connected and r.error is None)

    @property
    def violations(self) -> int:
        return self._count(lambda r: r.violation)

    def row(self) -> dict:
        times = np.array([r.consensus_time_s for r in self.records if r.reached], dtype=float)
        lo, hi = wilson_interval(self.successes, self.runs)
        has = times.size > 0
        return {
            "n": self.cell.n,
            "fraction": self.cell.fraction,
            "kind": self.cell.kind,
            "runs": self.runs,
            "successes": self.successes,
            "reached": self._count(lambda r: r.reached),
            "consensus_rate": self.successes / self.runs if self.runs else 0.0,
            "ci_low": lo,
            "ci_high": hi,
            "mean_time_s": float(times.mean()) if has else float("nan"),
            "p50_time_s": float(np.percentile(times, 50)) if has else float("nan"),
            "p90_time_s": float(np.percentile(times, 90)) if has else float("nan"),
            "detection_completed": self._count(lambda r: r.detection_completed),
            "connected": self._count(lambda r: r.connected),
            "partial": self._count(lambda r: r.error is None and not r.connected),
            "stranded": self._count(lambda r: r.stranded),
            "false_alarm_runs": self._count(lambda r: r.false_alarm),
            "gated": self._count(lambda r: r.gated),
            "violations": self.violations,
            "errors": self._count(lambda r: r.error is not None),
        }


@dataclass
class MonteCarloStats:
    cells: list[CellStats]

    def rows(self) -> list[dict]:
        return [c.row() for c in self.cells]

    @property
    def violations(self) -> int:
        return sum(c.violations for c in self.cells)

    def records(self):
        for c in self.cells:
            yield from c.records


def cell_config(base: ScenarioConfig, cell: Cell, seed: int, targets) -> ScenarioConfig:
    data = base.model_dump()
    data["seed"] = seed
    data["n_robots"] = cell.n
    data["initial_positions"] = None
    data["record"] = False
    template = base.attacks[0].model_dump() if base.attacks else {}
    template.pop("alpha", None)
    data["attacks"] = [] if cell.kind == "none" else [
        {**template, "kind": cell.kind, "targets": [int(t) for t in targets]}]
    return ScenarioConfig.model_validate(data)


def draw_targets(cell: Cell, seed: int) -> tuple[int, ...]:
    rng = np.random.default_rng([seed, 0x7A])
    return tuple(sorted(int(t) for t in rng.choice(cell.n, size=cell.n_targets, replace=False)))


def worst_switch_rho(checks) -> float | None:
    rhos = [rho for _, rho, _, _ in checks if np.isfinite(rho)]
    return max(rhos) if rhos else None


def _one_run(args) -> RunRecord:
    base_json, cell, ci, ri, seed = args
    base = ScenarioConfig.model_validate_json(base_json)
    targets = draw_targets(cell, seed)
    try:
        s = run_scenario(cell_config(base, cell, seed, targets)).summary
    except Exception as exc:  # recorded, not fatal to the sweep
        log.warning("cell %d run %d failed: %s", ci, ri, exc)
        return RunRecord(ci, ri, seed, targets, error=f"{type(exc).__name__}: {exc}")
    return RunRecord(
        ci, ri, seed, targets,
        reached=s.consensus_reached,
        consensus_time_s=s.consensus_time_s,
        detection_completed=s.detection_completed,
        connected=s.connected_throughout,
        stranded=bool(s.stranded_ever),
        false_alarm=bool(s.false_alarms),
        worst_rho=worst_switch_rho(s.switch_checks),
        error=s.failure,
    )


def monte_carlo(base: ScenarioConfig, ns, fractions, kinds, runs_per_cell: int,
                parallelism: int = 1) -> MonteCarloStats:
    if runs_per_cell < 1:
        raise ValueError("runs_per_cell must be at least 1")
    if parallelism < 1:
        raise ValueError("parallelism must be at least 1")
    cells = grid_cells(ns, fractions, kinds)
    base_json = base.model_dump_json()
    tasks = [(base_json, cell, ci, ri, mix_seed(base.seed, ci, ri))
             for ci, cell in enumerate(cells) for ri in range(runs_per_cell)]
    if parallelism == 1:
        records = [_one_run(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            records = list(pool.map(_one_run, tasks, chunksize=max(1, len(tasks) // (8 * parallelism))))
    records.sort(key=lambda r: (r.cell, r.run))
    stats = [CellStats(c) for c in cells]
    for r in records:
        stats[r.cell].records.append(r)
    return MonteCarloStats(stats)
