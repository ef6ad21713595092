"""Scenario configuration, seeded run loop, persistence, and Monte Carlo sweeps."""
from .config import ConfigError, ScenarioConfig, load_config, validate_config
from .io import read_csv, render_svg, write_csv, write_summary
from .montecarlo import MonteCarloStats, monte_carlo
from .run import RunResult, RunSummary, TrajectoryLog, run_scenario

__all__ = [
    "ConfigError",
    "MonteCarloStats",
    "RunResult",
    "RunSummary",
    "ScenarioConfig",
    "TrajectoryLog",
    "load_config",
    "monte_carlo",
    "read_csv",
    "render_svg",
    "run_scenario",
    "validate_config",
    "write_csv",
    "write_summary",
]
