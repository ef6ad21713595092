"""Residual-based attack detection and attack-type classification.

Deception: CUSUM over the residual norm with a drift term,
``S <- max(0, S + |r| - drift)``, alarming when ``S > tau_dec``.
DoS: CUSUM over Bernoulli log-likelihood ratios of a staleness indicator
``z`` (1 when a delivered sample repeats the previous one).

Each robot carries its own :class:`DetectorState`; the first alarm latches.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .estimator import steady_state_gain
from .plant import AttackKind, RobotModel


class DetectorConfigError(ValueError):
    pass


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class DetectorParams:
    # Defaults come from calibrate_thresholds(single_integrator(), horizon=1000,
    # target_far=0.005, runs=2000, rng=default_rng(20240)); see tests/test_detector.py.
    tau_dec: float = 0.18298051920278657
    drift: float = 0.3381966224986366
    tau_dos: float = 8.0
    mu0: float = 1e-6
    mu1: float = 0.9
    tol: float = 1e-6

    def __post_init__(self):
        if not (0.0 < self.mu0 < 1.0 and 0.0 < self.mu1 < 1.0):
            raise DetectorConfigError(f"mu0, mu1 must lie in (0, 1): {self.mu0}, {self.mu1}")
        if self.mu0 >= self.mu1:
            raise DetectorConfigError("mu0 must be smaller than mu1")
        if self.tau_dec <= 0 or self.tau_dos <= 0 or self.drift < 0 or self.tol < 0:
            raise DetectorConfigError("thresholds must be positive and drift, tol nonnegative")

    def llr(self, z: int) -> float:
        if z:
            return math.log(self.mu1 / self.mu0)
        return math.log((1.0 - self.mu1) / (1.0 - self.mu0))

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, path) -> "DetectorParams":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise DetectorConfigError(f"unknown detector fields: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class Alarm:
    kind: AttackKind
    k_alpha: int


@dataclass(frozen=True)
class DetectorState:
    params: DetectorParams = field(default_factory=DetectorParams)
    S_dec: float = 0.0
    S_dos: float = 0.0
    alarm: Alarm | None = None


def cusum_update(d: DetectorState, r, k: int) -> DetectorState:
    """Deception CUSUM step; latches ``Alarm(DECEPTION, k)`` and resets S on crossing."""
    if d.alarm is not None:
        return d
    S = max(0.0, d.S_dec + float(np.linalg.norm(r)) - d.params.drift)
    if S > d.params.tau_dec:
        return replace(d, S_dec=0.0, alarm=Alarm(AttackKind.DECEPTION, k))
    return replace(d, S_dec=S)


def staleness_indicator(y_k, y_prev, tol: float) -> int:
    return int(np.linalg.norm(np.asarray(y_k, float) - np.asarray(y_prev, float)) <= tol)


def bernoulli_cusum_update(d: DetectorState, z: int, k: int) -> DetectorState:
    """DoS CUSUM step. A deception alarm from the same step is overridden."""
    same_step_deception = (
        d.alarm is not None and d.alarm.kind is AttackKind.DECEPTION and d.alarm.k_alpha == k
    )
    if d.alarm is not None and not same_step_deception:
        return d
    S = max(0.0, d.S_dos + d.params.llr(z))
    if S > d.params.tau_dos:
        return replace(d, S_dos=0.0, alarm=Alarm(AttackKind.DOS, k))
    return replace(d, S_dos=S)


def detect_step(d: DetectorState, r, z: int, k: int) -> DetectorState:
    return bernoulli_cusum_update(cusum_update(d, r, k), z, k)


def classify(d: DetectorState) -> Alarm | None:
    return d.alarm


class TeamDetector:
    """Array form of :func:`detect_step` for all robots at once.

    Alarm codes: 0 none, 1 deception, 2 DoS.
    """

    NONE, DECEPTION, DOS = 0, 1, 2

    def __init__(self, n: int, params: DetectorParams):
        self.p = params
        self.S_dec = np.zeros(n)
        self.S_dos = np.zeros(n)
        self.kind = np.zeros(n, dtype=np.int8)
        self.k_alpha = np.full(n, -1, dtype=np.int64)
        self._llr1 = math.log(params.mu1 / params.mu0)
        self._llr0 = math.log((1.0 - params.mu1) / (1.0 - params.mu0))

    def update(self, res_norm: np.ndarray, z: np.ndarray, k: int) -> np.ndarray:
        """Advance both statistics; returns indices that alarmed at step ``k``."""
        live = self.kind == self.NONE
        S_dec = np.maximum(0.0, self.S_dec + res_norm - self.p.drift)
        S_dos = np.maximum(0.0, self.S_dos + np.where(z > 0, self._llr1, self._llr0))
        dec_hit = live & (S_dec > self.p.tau_dec)
        dos_hit = live & (S_dos > self.p.tau_dos)
        self.S_dec = np.where(live, np.where(dec_hit, 0.0, S_dec), self.S_dec)
        self.S_dos = np.where(live, np.where(dos_hit, 0.0, S_dos), self.S_dos)
        self.kind[dec_hit] = self.DECEPTION
        self.kind[dos_hit] = self.DOS
        fired = dec_hit | dos_hit
        self.k_alpha[fired] = k
        return np.flatnonzero(fired)

    def alarm(self, i: int) -> Alarm | None:
        if self.kind[i] == self.NONE:
            return None
        kind = AttackKind.DECEPTION if self.kind[i] == self.DECEPTION else AttackKind.DOS
        return Alarm(kind, int(self.k_alpha[i]))


def simulate_attack_free_residuals(m: RobotModel, horizon: int, runs: int,
                                   rng: np.random.Generator):
    """Residual norms and staleness indicators of an unattacked, stationary robot.

    Residual statistics of a linear predictor do not depend on the (known)
    control input, so ``u = 0`` suffices. Returns arrays of shape
    ``(runs, horizon)``: residual norms and the successive-measurement distance.
    """
    if not (np.any(m.Qw) or np.any(m.Rv)):
        # noiseless: residuals vanish for any gain and the DARE is degenerate
        L = np.zeros((m.n, m.n_out))
    else:
        L, _ = steady_state_gain(m)
    n, p = m.n, m.n_out
    x = np.zeros((runs, n))
    x_hat = np.zeros((runs, n))
    y_prev = x @ m.C.T
    norms = np.empty((runs, horizon))
    gaps = np.empty((runs, horizon))
    for k in range(horizon):
        y = x @ m.C.T + rng.standard_normal((runs, p)) @ m.measurement_factor.T
        r = y - x_hat @ m.C.T
        norms[:, k] = np.linalg.norm(r, axis=1)
        gaps[:, k] = np.linalg.norm(y - y_prev, axis=1)
        y_prev = y
        x_hat = x_hat @ m.A.T + r @ L.T
        x = x @ m.A.T + rng.standard_normal((runs, n)) @ m.process_factor.T
    return norms, gaps


def cusum_path_max(norms: np.ndarray, drift: float) -> np.ndarray:
    """Per-row maximum of the un-reset deception statistic."""
    S = np.zeros(norms.shape[0])
    peak = np.zeros(norms.shape[0])
    for k in range(norms.shape[1]):
        S = np.maximum(0.0, S + norms[:, k] - drift)
        np.maximum(peak, S, out=peak)
    return peak


@dataclass(frozen=True)
class Calibration:
    tau_dec: float
    drift: float
    mu0: float
    tol: float
    empirical_far: float
    runs: int
    horizon: int

    def params(self, base: DetectorParams | None = None) -> DetectorParams:
        base = base or DetectorParams()
        return replace(base, tau_dec=self.tau_dec, drift=self.drift, mu0=self.mu0, tol=self.tol)


def calibrate_thresholds(m: RobotModel, horizon: int, target_far: float, runs: int,
                         rng: np.random.Generator, tol: float = 1e-6,
                         drift_sigmas: float = 3.0) -> Calibration:
    """Fit detector thresholds to simulated attack-free residuals.

    ``drift = mean|r| + drift_sigmas * std|r|``; ``tau_dec`` is the smallest
    level whose per-horizon exceedance frequency over the ``runs`` streams is
    at most ``target_far``. ``mu0`` is the Laplace-smoothed frequency of
    repeated measurements, floored at 1e-6 and capped at 0.5.
    """
    if runs < 30:
        raise CalibrationError(f"need at least 30 calibration runs, got {runs}")
    if not 0.0 < target_far < 1.0:
        raise CalibrationError("target_far must lie in (0, 1)")
    norms, gaps = simulate_attack_free_residuals(m, horizon, runs, rng)
    drift = float(norms.mean() + drift_sigmas * norms.std())
    peaks = np.sort(cusum_path_max(norms, drift))
    # smallest tau with count(peaks > tau) <= target_far * runs
    allowed = int(math.floor(target_far * runs))
    tau = float(peaks[runs - 1 - allowed]) if allowed < runs else 0.0
    tau = max(tau, 1e-9)
    far = float(np.mean(peaks > tau))
    stale = int(np.count_nonzero(gaps <= tol))
    mu0 = min(max((stale + 1) / (gaps.size + 2), 1e-6), 0.5)
    return Calibration(tau, drift, mu0, tol, far, runs, horizon)
