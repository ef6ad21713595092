"""Command-line front end.

Exit codes: 0 success, 1 invalid input, 2 runtime failure, 3 check failure.
Standard output is ``key=value`` lines so results can be grepped.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .control import GainDesignError, check_error_dynamics, feasible_coupling
from .detector import calibrate_thresholds
from .numerics import dare_residual, spectral_radius
from .estimator import steady_state_gain
from .simkit.config import ConfigError, ScenarioConfig, load_config, validate_config
from .simkit.io import render_svg, write_csv, write_edges, write_run_summary, write_summary
from .simkit.montecarlo import monte_carlo
from .simkit.run import run_scenario
from .topology import build_proximity_graph, is_connected, partition, verify_partition

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3
OUT_ENV = "RESILIENT_SWARM_OUT"

log = logging.getLogger("resilient_swarm")


def bundled_scenarios() -> list[str]:
    root = resources.files("resilient_swarm") / "scenarios"
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".json"))


def resolve_config(ref: str | None) -> ScenarioConfig:
    """Load a config path, or a bundled scenario by file name (``.json`` optional)."""
    if ref is None:
        return validate_config({})
    path = Path(ref)
    if path.exists():
        return load_config(path)
    name = ref if ref.endswith(".json") else ref + ".json"
    res = resources.files("resilient_swarm") / "scenarios" / name
    if res.is_file():
        return validate_config(json.loads(res.read_text(encoding="utf-8")))
    raise ConfigError([("<file>", f"config not found: {ref} (bundled: {', '.join(bundled_scenarios())})")])


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV, "out"))


def _csv_list(text: str, cast) -> list:
    try:
        return [cast(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError([("<args>", f"cannot parse list {text!r}")]) from None


def _emit(**kv) -> None:
    for k, v in kv.items():
        print(f"{k}={v}")


def _overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    return cfg.with_overrides(seed=getattr(args, "seed", None),
                              max_duration=getattr(args, "duration", None))


# --- commands ---------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = _overrides(resolve_config(args.config), args)
    out = _out_dir(args)
    result = run_scenario(cfg)
    stem = cfg.name
    write_csv(result.log, out / f"{stem}_trajectory.csv")
    write_edges(result.log, out / f"{stem}_edges.csv")
    write_run_summary(result.summary, out / f"{stem}_summary.txt")
    if not args.no_svg:
        render_svg(result.log, out / f"{stem}_trajectory.svg")
    _emit(scenario=stem)
    for line in result.summary.summary_lines():
        print(line)
    _emit(out_dir=out)
    return EXIT_RUNTIME if result.summary.failure else EXIT_OK


def cmd_montecarlo(args) -> int:
    base = _overrides(resolve_config(args.config or "montecarlo_base"), args)
    ns = _csv_list(args.n, int)
    fractions = _csv_list(args.fractions, int)
    kinds = _csv_list(args.kinds, str)
    stats = monte_carlo(base, ns, fractions, kinds, args.runs, args.jobs)
    out = _out_dir(args)
    write_summary(stats, out / "montecarlo_summary.csv")
    for row in stats.rows():
        print(f"cell=N{row['n']}_{row['fraction']}pct_{row['kind']} runs={row['runs']} "
              f"consensus_rate={row['consensus_rate']:.3f} detected={row['detection_completed']} "
              f"partial={row['partial']} stranded={row['stranded']} violations={row['violations']} "
              f"errors={row['errors']}")
    _emit(violations=stats.violations, out_dir=out)
    return EXIT_CHECK if stats.violations else EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = resolve_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seed
    cal = calibrate_thresholds(cfg.model(), args.horizon, args.target_far, args.runs,
                               np.random.default_rng(seed))
    params = cal.params(cfg.detector_params())
    out = Path(args.out) if args.out else _out_dir(args) / "detector.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    params.to_json(out)
    _emit(tau_dec=repr(params.tau_dec), drift=repr(params.drift), mu0=repr(params.mu0),
          empirical_far=f"{cal.empirical_far:.4f}", out=out)
    return EXIT_OK


def verify_checks(cfg: ScenarioConfig, graphs: int = 200, seed: int = 0):
    """Yield ``(name, ok, evidence)`` for each invariant suite."""
    m = cfg.model()
    L, P = steady_state_gain(m)
    res = dare_residual(P, m.A, m.C, m.Qw, m.Rv)
    yield "dare_residual", res < 1e-10, f"{res:.3e}"
    rho_est = spectral_radius(m.A - L @ m.C)
    yield "estimator_stable", rho_est < 1.0, f"rho={rho_est:.6f}"
    try:
        gains = cfg.gain_set()
    except GainDesignError as exc:
        yield "gain_design", False, str(exc)
        return
    rho_f = spectral_radius(m.A + m.B @ gains.F)
    yield "gain_design", rho_f < 1.0, f"rho(A+BF)={rho_f:.6f}"

    rng = np.random.default_rng(seed)
    part_ok, stab_ok, worst, tried = True, True, 0.0, 0
    while tried < graphs:
        n = int(rng.integers(2, 13))
        pts = rng.uniform(0.0, 1.0, size=(n, 2))
        t = build_proximity_graph(pts, 0.5)
        if not is_connected(t):
            continue
        k = int(rng.integers(1, n))
        followers = rng.choice(n, size=k, replace=False)
        p = partition(t, followers)
        part_ok &= verify_partition(p).ok
        tried += 1
        try:
            chk = check_error_dynamics(p, feasible_coupling(p, gains, m), m)
        except GainDesignError:
            stab_ok = False
            continue
        stab_ok &= chk.stable
        worst = max(worst, chk.spectral_radius)
    yield "partition_properties", part_ok, f"graphs={tried}"
    yield "error_dynamics_stable", stab_ok, f"max_rho={worst:.6f}"


def cmd_verify(args) -> int:
    cfg = resolve_config(args.config)
    failed = []
    for name, ok, evidence in verify_checks(cfg, args.graphs):
        print(f"check={name} ok={str(bool(ok)).lower()} evidence={evidence}")
        if not ok:
            failed.append(name)
    _emit(failed=",".join(failed) or "none")
    return EXIT_CHECK if failed else EXIT_OK


# --- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="resilient-swarm", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        p.add_argument("--config", required=config_required,
                       help="scenario JSON path or bundled scenario name")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("run", help="simulate one scenario")
    common(p, config_required=True)
    p.add_argument("--duration", type=float, help="override max_duration (s)")
    p.add_argument("--no-svg", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("montecarlo", help="sweep team size, fraction, and attack kind")
    common(p)
    p.add_argument("--duration", type=float)
    p.add_argument("--n", default="8,12,16,20,24")
    p.add_argument("--fractions", default="25,50,75")
    p.add_argument("--kinds", default="deception,dos")
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("calibrate", help="fit detector thresholds to attack-free residuals")
    common(p)
    p.add_argument("--runs", type=int, default=2000)
    p.add_argument("--horizon", type=int, default=1000)
    p.add_argument("--target-far", type=float, default=0.005)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("verify", help="check numerical and graph invariants")
    common(p)
    p.add_argument("--graphs", type=int, default=200)
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for loc, msg in exc.errors:
            print(f"error field={loc} message={msg}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, OSError) as exc:
        print(f"error message={exc}", file=sys.stderr)
        return EXIT_INVALID if isinstance(exc, ValueError) else EXIT_RUNTIME
    except Exception as exc:
        print(f"error message={type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
