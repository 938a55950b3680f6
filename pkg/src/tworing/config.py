"""Flat scenario configuration with YAML load/save."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import yaml

from .cf_models import KMH, DriverParams
from .network import GeometryConfig, VehicleClass

MIX_TOL = 1e-9


class ConfigError(ValueError):
    """Invalid scenario configuration; ``keys`` names the offending entries."""

    def __init__(self, message: str, keys: tuple[str, ...] = ()):
        super().__init__(message)
        self.keys = keys


@dataclass(frozen=True)
class ScenarioConfig:
    """Every knob of one experiment. Defaults reproduce the reference setup.

    ``turn_probability`` has no default and must be given explicitly.
    Reaction-time scale and shape are assumptions, only the mean is fixed.
    """

    turn_probability: Optional[float] = None
    name: str = "custom"
    # geometry
    ring_radius_m: float = 50.0
    connector_length_m: float = 100.0
    speed_limit_mps: float = 30.0 * KMH
    return_fraction: float = 0.25
    # demand
    demand_veh_per_h: float = 180.0
    horizon_s: float = 1800.0
    # fleet
    mix_hv: float = 1.0
    mix_connected_hv: float = 0.0
    mix_av: float = 0.0
    mix_cav: float = 0.0
    vehicle_length_m: float = 5.0
    hv_desired_speed_mps: float = 120.0 * KMH
    hv_safe_headway_s: float = 1.5
    hv_max_accel_mps2: float = 1.5
    hv_comfort_decel_mps2: float = 2.0
    hv_jam_gap_m: float = 2.0
    av_desired_speed_mps: float = 120.0 * KMH
    av_safe_headway_s: float = 0.5
    av_max_accel_mps2: float = 1.5
    av_comfort_decel_mps2: float = 2.0
    av_jam_gap_m: float = 0.5
    # human factors
    reaction_time_mean_s: float = 1.2
    reaction_time_scale_s: float = 0.3
    reaction_time_shape: float = 3.0
    reaction_time_min_s: float = 0.3
    reaction_time_max_s: float = 3.0
    noise_sd_mps2: float = 0.2
    anticipated_leaders: int = 3
    # cooperation
    detection_range_m: float = 30.0
    merge_zone_length_m: Optional[float] = None
    lambda_t: float = 2.0
    lambda_s_floor: float = 0.4
    emergency_decel_mps2: float = 9.0
    # execution
    dt_s: float = 0.1
    replications: int = 6
    base_seed: int = 0
    output_dir: str = "out"

    def __post_init__(self):
        validate(self)

    # -- derived views ---------------------------------------------------

    @property
    def mix(self) -> dict[VehicleClass, float]:
        return {
            VehicleClass.HV: self.mix_hv,
            VehicleClass.CONNECTED_HV: self.mix_connected_hv,
            VehicleClass.AV: self.mix_av,
            VehicleClass.CAV: self.mix_cav,
        }

    @property
    def geometry(self) -> GeometryConfig:
        return GeometryConfig(
            ring_radius=self.ring_radius_m,
            connector_length=self.connector_length_m,
            speed_limit=self.speed_limit_mps,
            turn_probability=self.turn_probability,
            detection_range=self.detection_range_m,
            merge_zone_length=self.merge_zone_length_m,
            return_fraction=self.return_fraction,
        )

    @property
    def hv_params(self) -> DriverParams:
        return DriverParams(self.hv_desired_speed_mps, self.hv_safe_headway_s, self.hv_max_accel_mps2,
                            self.hv_comfort_decel_mps2, self.hv_jam_gap_m)

    @property
    def av_params(self) -> DriverParams:
        return DriverParams(self.av_desired_speed_mps, self.av_safe_headway_s, self.av_max_accel_mps2,
                            self.av_comfort_decel_mps2, self.av_jam_gap_m)

    def params_for(self, cls: VehicleClass) -> DriverParams:
        return self.hv_params if cls.is_human else self.av_params

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_POSITIVE = (
    "ring_radius_m", "connector_length_m", "speed_limit_mps", "horizon_s", "vehicle_length_m",
    "hv_desired_speed_mps", "hv_safe_headway_s", "hv_max_accel_mps2", "hv_comfort_decel_mps2", "hv_jam_gap_m",
    "av_desired_speed_mps", "av_safe_headway_s", "av_max_accel_mps2", "av_comfort_decel_mps2", "av_jam_gap_m",
    "reaction_time_mean_s", "reaction_time_scale_s", "reaction_time_max_s", "detection_range_m",
    "lambda_t", "lambda_s_floor", "emergency_decel_mps2", "dt_s",
)
_NON_NEGATIVE = ("demand_veh_per_h", "mix_hv", "mix_connected_hv", "mix_av", "mix_cav",
                 "noise_sd_mps2", "reaction_time_min_s", "replications", "base_seed")


def validate(cfg: ScenarioConfig) -> None:
    """Raise ``ConfigError`` naming the offending keys."""
    if cfg.turn_probability is None:
        raise ConfigError("turn_probability must be given explicitly", ("turn_probability",))
    for name in _POSITIVE + _NON_NEGATIVE + ("turn_probability",):
        value = getattr(cfg, name)
        if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
            raise ConfigError(f"{name} must be a finite number, got {value!r}", (name,))
    for name in _POSITIVE:
        if getattr(cfg, name) <= 0:
            raise ConfigError(f"{name} must be positive, got {getattr(cfg, name)}", (name,))
    for name in _NON_NEGATIVE:
        if getattr(cfg, name) < 0:
            raise ConfigError(f"{name} must be non-negative, got {getattr(cfg, name)}", (name,))
    if not 0.0 <= cfg.turn_probability <= 1.0:
        raise ConfigError("turn_probability must lie in [0, 1]", ("turn_probability",))
    mix_keys = ("mix_hv", "mix_connected_hv", "mix_av", "mix_cav")
    total = sum(getattr(cfg, k) for k in mix_keys)
    if abs(total - 1.0) > MIX_TOL:
        raise ConfigError(f"mix fractions sum to {total:.12g}, expected 1", mix_keys)
    if not cfg.lambda_s_floor <= 1.0:
        raise ConfigError("lambda_s_floor must not exceed 1", ("lambda_s_floor",))
    if not cfg.reaction_time_min_s < cfg.reaction_time_mean_s < cfg.reaction_time_max_s:
        raise ConfigError("reaction-time bounds must bracket the mean",
                          ("reaction_time_min_s", "reaction_time_mean_s", "reaction_time_max_s"))
    if cfg.mix_hv + cfg.mix_connected_hv > 0 and cfg.reaction_time_min_s < cfg.dt_s:
        raise ConfigError("reaction_time_min_s must be at least dt_s", ("reaction_time_min_s", "dt_s"))
    if not isinstance(cfg.anticipated_leaders, int) or cfg.anticipated_leaders < 1:
        raise ConfigError("anticipated_leaders must be a positive integer", ("anticipated_leaders",))
    if cfg.merge_zone_length_m is not None and not cfg.merge_zone_length_m > 0:
        raise ConfigError("merge_zone_length_m must be positive", ("merge_zone_length_m",))
    if cfg.horizon_s < cfg.dt_s:
        raise ConfigError("horizon_s must be at least dt_s", ("horizon_s", "dt_s"))
    try:
        from .network import build_two_ring
        build_two_ring(cfg.geometry)
    except ValueError as exc:
        raise ConfigError(str(exc), ("ring_radius_m", "connector_length_m", "return_fraction",
                                     "merge_zone_length_m", "detection_range_m")) from exc


_FIELD_TYPES = {f.name: f.type for f in fields(ScenarioConfig)}


def from_dict(data: dict) -> ScenarioConfig:
    unknown = sorted(set(data) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(unknown)}", tuple(unknown))
    clean = {}
    for key, value in data.items():
        if key in ("name", "output_dir"):
            clean[key] = str(value)
        elif key in ("replications", "base_seed", "anticipated_leaders"):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{key} must be an integer, got {value!r}", (key,))
            clean[key] = value
        elif value is None and key == "merge_zone_length_m":
            clean[key] = None
        else:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{key} must be a number, got {value!r}", (key,))
            clean[key] = float(value)
    if "turn_probability" not in clean:
        raise ConfigError("turn_probability must be given explicitly", ("turn_probability",))
    return ScenarioConfig(**clean)


def load_config(path) -> ScenarioConfig:
    """Read a flat YAML mapping of config keys.

    Raises:
        ConfigError: missing file, parse error, unknown key or invalid value.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a flat key: value mapping")
    return from_dict(data)


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def save_config(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(dump_config(cfg))
