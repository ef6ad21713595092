"""Scenario configuration: JSON schema, validation, and conversion to runtime objects.

Unknown keys are rejected at every nesting level so a typo in an attack
block fails loudly instead of silently falling back to a default.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..control import GainSet, RssModel, coupling_for_team, design_gains
from ..detector import DetectorParams
from ..plant import AttackKind, AttackSpec, RobotModel, single_integrator


class ConfigError(ValueError):
    """Scenario validation failure; ``errors`` lists ``(field, message)`` pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{loc}: {msg}" for loc, msg in self.errors))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class AttackConfig(_Strict):
    kind: Literal["deception", "dos"]
    targets: list[int] = Field(min_length=1)
    start_time: float = Field(3.0, ge=0.0)
    alpha_bounds: tuple[float, float] = (0.4, 0.6)
    delay_prob: float = Field(0.95, ge=0.0, le=1.0)
    alpha: Optional[list[list[float]]] = None

    @field_validator("alpha_bounds")
    @classmethod
    def _ordered(cls, v):
        if v[0] > v[1]:
            raise ValueError("alpha_bounds must be (low, high)")
        return v


class GainConfig(_Strict):
    k_p: float = Field(0.06, gt=0)
    k_f: float = Field(1.0, gt=0)
    c: float = Field(1.0, gt=0)


class ControlConfig(_Strict):
    u_max: float = Field(0.2, gt=0)
    bearing_gain: float = Field(3.0, gt=0)
    bearing_normalization: Literal["degree", "n"] = "degree"
    sign: Literal["attractive", "literal"] = "attractive"


class RssConfig(_Strict):
    gamma0: float = -40.0
    d0: float = Field(1.0, gt=0)
    path_exponent: float = Field(2.0, ge=2.0)
    gamma_tau: float = -45.0


class DetectorConfig(_Strict):
    tau_dec: float = DetectorParams.tau_dec
    drift: float = DetectorParams.drift
    tau_dos: float = DetectorParams.tau_dos
    mu0: float = DetectorParams.mu0
    mu1: float = DetectorParams.mu1
    tol: float = DetectorParams.tol


class NoiseConfig(_Strict):
    q: float = Field(1e-4, ge=0)
    r: float = Field(1e-2, ge=0)


class ScenarioConfig(_Strict):
    name: str = "scenario"
    seed: int = Field(0, ge=0, lt=2**64)
    n_robots: int = Field(8, ge=2)
    arena: tuple[float, float] = (1.6, 1.0)
    sensor_range: float = Field(0.8, gt=0)
    dt: float = Field(0.033, gt=0)
    max_duration: float = Field(120.0, gt=0)
    settle_time: float = Field(2.0, ge=0)
    attack_grace: float = Field(3.0, ge=0)
    consensus_threshold: float = Field(0.4, gt=0)
    min_dist: float = Field(0.1, gt=0)
    collision_avoidance: bool = True
    initial_positions: Optional[list[tuple[float, float]]] = None
    attacks: list[AttackConfig] = Field(default_factory=list)
    gains: GainConfig = GainConfig()
    control: ControlConfig = ControlConfig()
    rss: RssConfig = RssConfig()
    detector: DetectorConfig = DetectorConfig()
    noise: NoiseConfig = NoiseConfig()
    record: bool = True

    @field_validator("arena")
    @classmethod
    def _arena_positive(cls, v):
        if v[0] <= 0 or v[1] <= 0:
            raise ValueError("arena dimensions must be positive")
        return v

    @model_validator(mode="after")
    def _cross_checks(self):
        for a in self.attacks:
            bad = [t for t in a.targets if t < 0 or t >= self.n_robots]
            if bad:
                raise ValueError(f"attack targets {bad} out of range for n_robots={self.n_robots}")
            if a.alpha is not None and len(a.alpha) != len(a.targets):
                raise ValueError("alpha must list one vector per target")
        if self.initial_positions is not None and len(self.initial_positions) != self.n_robots:
            raise ValueError("initial_positions must have n_robots entries")
        # rejection sampling cannot succeed if robots do not fit at min_dist
        w, h = self.arena
        if self.n_robots * self.min_dist ** 2 > 0.5 * w * h:
            raise ValueError("arena too small for n_robots at min_dist spacing")
        return self

    # --- runtime objects ---------------------------------------------------

    def model(self) -> RobotModel:
        return single_integrator(self.dt, self.noise.q, self.noise.r)

    def gain_set(self) -> GainSet:
        m = self.model()
        c = coupling_for_team(self.n_robots, m, self.gains.c)
        return design_gains(m, self.gains.k_p, self.gains.k_f, c)

    def rss_model(self) -> RssModel:
        return RssModel(**self.rss.model_dump())

    def detector_params(self) -> DetectorParams:
        return DetectorParams(**self.detector.model_dump())

    def start_step(self, start_time: float) -> int:
        """First step whose clock reading reaches ``start_time``."""
        return int(math.ceil(start_time / self.dt - 1e-9))

    def attack_specs(self) -> list[AttackSpec]:
        specs = []
        for a in self.attacks:
            alphas = {}
            if a.alpha is not None:
                alphas = {t: np.asarray(v, float) for t, v in zip(a.targets, a.alpha)}
            specs.append(AttackSpec(AttackKind(a.kind), tuple(a.targets), self.start_step(a.start_time),
                                    tuple(a.alpha_bounds), a.delay_prob, alphas))
        return specs

    def with_overrides(self, **kw) -> "ScenarioConfig":
        data = self.model_dump()
        data.update({k: v for k, v in kw.items() if v is not None})
        return validate_config(data)


def _format_errors(exc: ValidationError):
    out = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        out.append((loc, err["msg"]))
    return out


def validate_config(data: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError([("<file>", f"config not found: {path}")]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([("<file>", f"{path}: invalid JSON ({exc})")]) from None
    if not isinstance(data, dict):
        raise ConfigError([("<root>", "top-level JSON value must be an object")])
    return validate_config(data)


def config_schema() -> dict:
    return ScenarioConfig.model_json_schema()
