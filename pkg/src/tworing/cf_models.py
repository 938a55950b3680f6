"""Longitudinal acceleration laws.

* IDM for automated vehicles.
* HDM (reaction delay, white acceleration noise, temporal and multi-vehicle
  anticipation) wrapped around the IDM for human drivers.
* Cooperative IDM factors for connected automated vehicles near a merge.

The array kernels (``idm_acceleration`` and friends) broadcast over numpy
arrays and are what the simulation engine calls; the dataclass-based
functions are thin scalar front ends over them.

A non-positive gap makes the interaction term undefined. Instead of raising,
the kernels return ``-inf`` there; callers cap it at their emergency
deceleration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

ACCEL_EXPONENT = 4
# Braking cap applied by the engine when a law signals -inf.
EMERGENCY_DECEL = 9.0


@dataclass(frozen=True)
class DriverParams:
    """IDM parameter set; speeds in m/s, gaps in m."""

    desired_speed: float
    safe_headway: float
    max_accel: float = 1.5
    comfort_decel: float = 2.0
    jam_gap: float = 2.0
    accel_exponent: int = ACCEL_EXPONENT

    def __post_init__(self):
        for name in ("desired_speed", "safe_headway", "max_accel", "comfort_decel", "jam_gap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.accel_exponent != ACCEL_EXPONENT:
            raise ValueError("accel_exponent is fixed at 4")

    def limited(self, speed_limit: float) -> "DriverParams":
        """Copy whose desired speed does not exceed ``speed_limit``."""
        return replace(self, desired_speed=min(self.desired_speed, speed_limit))


KMH = 1.0 / 3.6

HV_PARAMS = DriverParams(desired_speed=120 * KMH, safe_headway=1.5, max_accel=1.5, comfort_decel=2.0, jam_gap=2.0)
AV_PARAMS = DriverParams(desired_speed=120 * KMH, safe_headway=0.5, max_accel=1.5, comfort_decel=2.0, jam_gap=0.5)


@dataclass(frozen=True)
class HumanFactors:
    reaction_time: float = 1.2
    noise_sd: float = 0.2
    anticipated_leaders: int = 3

    def __post_init__(self):
        if self.reaction_time < 0 or self.noise_sd < 0:
            raise ValueError("reaction_time and noise_sd must be non-negative")
        if self.anticipated_leaders < 1:
            raise ValueError("anticipated_leaders must be at least 1")


@dataclass(frozen=True)
class LeaderObservation:
    """What a driver sees of one leader.

    ``speed_difference`` is own speed minus leader speed. The gap may be
    negative for virtual leaders at a merge.
    """

    net_gap: float
    speed_difference: float
    leader_speed: float = 0.0


@dataclass(frozen=True)
class DelayedState:
    """Quantities observed ``reaction_time`` seconds ago.

    ``gaps`` and ``speed_differences`` hold one entry per anticipated leader,
    ordered from the nearest outwards; gaps are cumulative net gaps.
    """

    speed: float
    accel: float
    gaps: Sequence[float]
    speed_differences: Sequence[float]


@dataclass(frozen=True)
class CooperationState:
    active: bool = False
    distance_to_merge: float = math.inf
    detection_range: float = 30.0
    lambda_t: float = 1.0
    lambda_s: float = 1.0
    lambda_a: float = 1.0
    lambda_b: float = 1.0


# -- array kernels -----------------------------------------------------------

def desired_gap(v, dv, jam_gap, headway, max_accel, comfort_decel):
    """IDM desired gap, floored at the jam gap."""
    s_star = jam_gap + headway * v + v * dv / (2.0 * np.sqrt(max_accel * comfort_decel))
    return np.maximum(s_star, jam_gap)


def idm_acceleration(v, gap, dv, desired_speed, headway, max_accel, comfort_decel, jam_gap):
    """IDM acceleration; ``-inf`` where ``gap <= 0``."""
    v = np.asarray(v, dtype=float)
    gap = np.asarray(gap, dtype=float)
    s_star = desired_gap(v, dv, jam_gap, headway, max_accel, comfort_decel)
    with np.errstate(divide="ignore", invalid="ignore"):
        acc = max_accel * (1.0 - _pow4(v / desired_speed) - _sq(s_star / gap))
    acc = np.where(gap > 0, acc, -np.inf)
    return acc if acc.ndim else float(acc)


def hdm_acceleration(v_delayed, a_delayed, gaps_delayed, dv_delayed, reaction_time,
                     desired_speed, headway, max_accel, comfort_decel, jam_gap, noise=0.0):
    """HDM acceleration from delayed observations.

    ``gaps_delayed`` and ``dv_delayed`` carry the leader index on their last
    axis; missing leaders are marked with ``inf`` gaps and contribute nothing.
    Anticipated own speed uses constant acceleration, anticipated gaps use
    constant speeds, speed differences are taken as observed.
    """
    v_delayed = np.asarray(v_delayed, dtype=float)
    gaps = np.asarray(gaps_delayed, dtype=float)
    dv = np.asarray(dv_delayed, dtype=float)
    tr = np.asarray(reaction_time, dtype=float)

    v_ant = np.maximum(v_delayed + tr * np.asarray(a_delayed, dtype=float), 0.0)
    with np.errstate(invalid="ignore"):
        s_ant = gaps - tr[..., None] * dv
    s_ant = np.where(np.isinf(gaps), np.inf, s_ant)

    s_star = desired_gap(v_ant[..., None], dv, _col(jam_gap), _col(headway), _col(max_accel), _col(comfort_decel))
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = _sq(s_star / s_ant)
    terms = np.where(np.isinf(s_ant), 0.0, terms)
    terms = np.where(s_ant > 0, terms, np.inf)
    # same association as the IDM, so one leader without delay gives identical bits
    acc = max_accel * (1.0 - _pow4(v_ant / desired_speed) - terms.sum(axis=-1)) + noise
    acc = np.where(np.isfinite(acc), acc, -np.inf)
    return acc if np.ndim(acc) else float(acc)


# Explicit products rather than ``**``: identical results whichever numpy
# code path (vectorised body or scalar tail) evaluates an element.
def _sq(x):
    return x * x


def _pow4(x):
    x2 = x * x
    return x2 * x2


def _col(x):
    x = np.asarray(x, dtype=float)
    return x[..., None] if x.ndim else x


def cidm_scale(conflict, distance_to_merge, detection_range, lambda_t_active=2.0, lambda_s_floor=0.4):
    """Vectorised cooperative factors ``(lambda_t, lambda_s)``."""
    conflict = np.asarray(conflict, dtype=bool)
    d = np.asarray(distance_to_merge, dtype=float)
    active = conflict & (d <= detection_range)
    with np.errstate(invalid="ignore"):
        ls = np.maximum(lambda_s_floor, _sq(d / detection_range))
    lambda_s = np.where(active, ls, 1.0)
    lambda_t = np.where(active, lambda_t_active, 1.0)
    return lambda_t, lambda_s


# -- scalar front ends -------------------------------------------------------

def idm_desired_gap(p: DriverParams, v: float, dv: float) -> float:
    if v < 0:
        raise ValueError("speed must be non-negative")
    return float(desired_gap(v, dv, p.jam_gap, p.safe_headway, p.max_accel, p.comfort_decel))


def idm_accel(p: DriverParams, v: float, obs: LeaderObservation) -> float:
    """IDM acceleration against one leader.

    Returns ``-inf`` when ``obs.net_gap <= 0`` (emergency braking).
    """
    return idm_acceleration(v, obs.net_gap, obs.speed_difference, p.desired_speed,
                            p.safe_headway, p.max_accel, p.comfort_decel, p.jam_gap)


def hdm_accel(p: DriverParams, h: HumanFactors, delayed: DelayedState,
              rng: Optional[np.random.Generator] = None) -> float:
    """HDM acceleration for one driver.

    Only the first ``h.anticipated_leaders`` entries of the delayed leader
    arrays are used. Noise is drawn from ``rng`` when ``h.noise_sd > 0``.
    """
    k = h.anticipated_leaders
    gaps = np.full(k, np.inf)
    dvs = np.zeros(k)
    n = min(k, len(delayed.gaps))
    if n < 1:
        raise ValueError("at least one leader observation is required")
    gaps[:n] = np.asarray(delayed.gaps[:n], dtype=float)
    dvs[:n] = np.asarray(delayed.speed_differences[:n], dtype=float)
    noise = 0.0
    if h.noise_sd > 0:
        if rng is None:
            raise ValueError("rng required when noise_sd > 0")
        noise = rng.normal(0.0, h.noise_sd)
    return hdm_acceleration(delayed.speed, delayed.accel, gaps, dvs, h.reaction_time, p.desired_speed,
                            p.safe_headway, p.max_accel, p.comfort_decel, p.jam_gap, noise)


def cidm_factors(conflict: bool, distance_to_merge: float, detection_range: float,
                 lambda_t_active: float = 2.0, lambda_s_floor: float = 0.4) -> CooperationState:
    if distance_to_merge < 0:
        raise ValueError("distance_to_merge must be non-negative")
    if not detection_range > 0:
        raise ValueError("detection_range must be positive")
    lt, ls = cidm_scale(conflict, distance_to_merge, detection_range, lambda_t_active, lambda_s_floor)
    return CooperationState(
        active=bool(conflict and distance_to_merge <= detection_range),
        distance_to_merge=distance_to_merge,
        detection_range=detection_range,
        lambda_t=float(lt),
        lambda_s=float(ls),
    )


def cidm_accel(p: DriverParams, cs: CooperationState, v: float, obs: LeaderObservation) -> float:
    """IDM with the cooperative factors applied to headway and gap."""
    return idm_acceleration(v, cs.lambda_s * obs.net_gap, obs.speed_difference, p.desired_speed,
                            cs.lambda_t * p.safe_headway, cs.lambda_a * p.max_accel,
                            cs.lambda_b * p.comfort_decel, p.jam_gap)
