"""Edie measurements over trajectories, FD/NFD series, phase-path smoothing
and bifurcation detection.

Trajectories are treated as piecewise linear between consecutive records
of a vehicle. A piece that crosses a link boundary is split there, with time
apportioned in proportion to distance, and pieces are split again at
interval boundaries in proportion to time.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .network import MAIN, RETURN

RING_LINKS = ((MAIN[0], RETURN[0]), (MAIN[1], RETURN[1]))


class Region(str, enum.Enum):
    RING1 = "Ring1"
    RING2 = "Ring2"
    NETWORK = "Network"

    @property
    def links(self) -> tuple[int, ...]:
        if self is Region.RING1:
            return RING_LINKS[0]
        if self is Region.RING2:
            return RING_LINKS[1]
        return RING_LINKS[0] + RING_LINKS[1]


@dataclass(frozen=True)
class MetricsSample:
    interval_start: float
    region: Region
    density: float
    flow: float


@dataclass(frozen=True)
class Pieces:
    """Constant-speed trajectory pieces, each on a single link."""

    t0: np.ndarray
    t1: np.ndarray
    link: np.ndarray
    distance: np.ndarray


def trajectory_pieces(time: np.ndarray, vehicle_id: np.ndarray, link: np.ndarray, position: np.ndarray,
                      link_lengths: Sequence[float]) -> Pieces:
    """Split consecutive records of each vehicle into single-link pieces.

    Consecutive records may be at most one link boundary apart.
    """
    time = np.asarray(time, dtype=float)
    vid = np.asarray(vehicle_id)
    link = np.asarray(link, dtype=np.int64)
    pos = np.asarray(position, dtype=float)
    lengths = np.asarray(link_lengths, dtype=float)
    order = np.lexsort((time, vid))
    t, v, lk, x = time[order], vid[order], link[order], pos[order]
    pair = v[1:] == v[:-1]
    ta, tb = t[:-1][pair], t[1:][pair]
    la, lb = lk[:-1][pair], lk[1:][pair]
    xa, xb = x[:-1][pair], x[1:][pair]

    same = la == lb
    d1 = np.where(same, xb - xa, lengths[la] - xa)
    d2 = np.where(same, 0.0, xb)
    total = d1 + d2
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(total > 0, d1 / total, 1.0)
    tm = np.where(same, tb, ta + (tb - ta) * frac)
    cross = ~same
    return Pieces(
        t0=np.concatenate([ta, tm[cross]]),
        t1=np.concatenate([tm, tb[cross]]),
        link=np.concatenate([la, lb[cross]]),
        distance=np.concatenate([d1, d2[cross]]),
    )


def _accumulate(pieces: Pieces, t_start: float, cadence: float, n_intervals: int):
    """Time and distance of every piece per (interval, link)."""
    n_links = int(pieces.link.max()) + 1 if pieces.link.size else 1
    tt = np.zeros((n_intervals, n_links))
    dd = np.zeros((n_intervals, n_links))
    if not pieces.t0.size:
        return tt, dd
    t0 = pieces.t0 - t_start
    t1 = pieces.t1 - t_start
    dur = t1 - t0
    with np.errstate(invalid="ignore", divide="ignore"):
        speed = np.where(dur > 0, pieces.distance / dur, 0.0)
    i0 = np.floor(t0 / cadence).astype(np.int64)
    i1 = np.floor(t1 / cadence).astype(np.int64)
    # a piece ending exactly on a boundary belongs to the earlier interval
    i1 = np.where((i1 > i0) & (t1 <= i1 * cadence), i1 - 1, i1)
    simple = (i0 == i1) & (i0 >= 0) & (i0 < n_intervals)
    np.add.at(tt, (i0[simple], pieces.link[simple]), dur[simple])
    np.add.at(dd, (i0[simple], pieces.link[simple]), pieces.distance[simple])
    for p in np.flatnonzero(~simple):
        for i in range(max(i0[p], 0), min(i1[p], n_intervals - 1) + 1):
            lo = max(t0[p], i * cadence)
            hi = min(t1[p], (i + 1) * cadence)
            if hi > lo:
                tt[i, pieces.link[p]] += hi - lo
                dd[i, pieces.link[p]] += speed[p] * (hi - lo)
    return tt, dd


def edie_metrics(pieces: Pieces, region_links: Iterable[int], link_lengths: Sequence[float],
                 t0: float, interval: float) -> tuple[float, float]:
    """Edie density and flow of one region over ``[t0, t0 + interval]``.

    Returns:
        ``(K, Q)`` with K in veh/m and Q in veh/s.

    Raises:
        ValueError: if the region has no length or the interval is not positive.
    """
    links = sorted(set(int(l) for l in region_links))
    length = float(sum(link_lengths[l] for l in links))
    if not links or length <= 0:
        raise ValueError("region must contain links of positive length")
    if not interval > 0:
        raise ValueError("interval must be positive")
    tt, dd = _accumulate(pieces, t0, interval, 1)
    have = [l for l in links if l < tt.shape[1]]
    area = length * interval
    return float(tt[0, have].sum() / area), float(dd[0, have].sum() / area)


@dataclass(frozen=True)
class EdieSeries:
    """Per-interval density and flow for ring 1, ring 2 and the network."""

    interval_start: np.ndarray
    cadence: float
    density: dict
    flow: dict

    def samples(self, regions: Sequence[Region]) -> list[MetricsSample]:
        out = []
        for i, t in enumerate(self.interval_start):
            for r in regions:
                out.append(MetricsSample(float(t), r, float(self.density[r][i]), float(self.flow[r][i])))
        return out


def edie_series(pieces: Pieces, link_lengths: Sequence[float], horizon: float, cadence: float = 10.0,
                t_start: float = 0.0) -> EdieSeries:
    """Edie samples every ``cadence`` seconds over ``[t_start, t_start + horizon]``.

    Raises:
        ValueError: if ``cadence`` does not divide ``horizon``.
    """
    n = int(round(horizon / cadence))
    if n < 1 or not math.isclose(n * cadence, horizon, rel_tol=1e-9, abs_tol=1e-9):
        raise ValueError(f"cadence {cadence} does not divide horizon {horizon}")
    lengths = np.asarray(link_lengths, dtype=float)
    tt, dd = _accumulate(pieces, t_start, cadence, n)
    width = tt.shape[1]
    density, flow = {}, {}
    for region in Region:
        links = [l for l in region.links if l < width]
        area = lengths[list(region.links)].sum() * cadence
        density[region] = tt[:, links].sum(axis=1) / area
        flow[region] = dd[:, links].sum(axis=1) / area
    return EdieSeries(t_start + cadence * np.arange(n), cadence, density, flow)


def series_from_trajectory(traj, link_lengths, horizon: float, cadence: float = 10.0) -> EdieSeries:
    pieces = trajectory_pieces(traj.time, traj.vehicle_id, traj.link, traj.position, link_lengths)
    return edie_series(pieces, link_lengths, horizon, cadence)


def build_fd_series(series: EdieSeries) -> list[MetricsSample]:
    """Per-ring samples, ring 1 then ring 2 for each interval."""
    return series.samples((Region.RING1, Region.RING2))


def build_nfd_series(series: EdieSeries) -> list[MetricsSample]:
    """Network samples over both rings, connectors excluded."""
    return series.samples((Region.NETWORK,))


# -- phase paths -------------------------------------------------------------

@dataclass(frozen=True)
class PhasePath:
    time: np.ndarray
    k1: np.ndarray
    k2: np.ndarray
    cadence: float
    smoothed: bool = False

    def __len__(self) -> int:
        return self.time.size

    @classmethod
    def from_series(cls, series: EdieSeries) -> "PhasePath":
        return cls(series.interval_start.copy(), series.density[Region.RING1].copy(),
                   series.density[Region.RING2].copy(), series.cadence)

    @classmethod
    def from_points(cls, points: Sequence[tuple[float, float]], cadence: float = 10.0) -> "PhasePath":
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return cls(cadence * np.arange(len(pts)), pts[:, 0].copy(), pts[:, 1].copy(), cadence)


@dataclass(frozen=True)
class BifurcationPoint:
    index: int
    time: float
    k1: float
    k2: float

    @property
    def density(self) -> float:
        """Average density K of both rings at detection."""
        return 0.5 * (self.k1 + self.k2)

    @property
    def distance_from_origin(self) -> float:
        return math.hypot(self.k1, self.k2)


def smooth_path(path: PhasePath, window: float = 60.0) -> PhasePath:
    """Centred moving average over ``window`` seconds.

    With ``w`` samples per window, sample ``i`` averages samples
    ``i - w//2 .. i - w//2 + w - 1``, truncated at both ends of the path.

    Raises:
        ValueError: if ``window`` is not a positive multiple of the cadence.
    """
    w = int(round(window / path.cadence))
    if w < 1 or not math.isclose(w * path.cadence, window, rel_tol=1e-9):
        raise ValueError("window must be a positive multiple of the cadence")
    n = len(path)

    def avg(x):
        out = np.empty(n)
        for i in range(n):
            lo = max(i - w // 2, 0)
            hi = min(i - w // 2 + w, n)
            out[i] = x[lo:hi].mean()
        return out

    if w == 1:
        return PhasePath(path.time.copy(), path.k1.copy(), path.k2.copy(), path.cadence, True)
    return PhasePath(path.time.copy(), avg(path.k1), avg(path.k2), path.cadence, True)


def detect_bifurcation(path: PhasePath) -> Optional[BifurcationPoint]:
    """First consecutive pair ``(n, n+1)`` where the path moves away from the
    diagonal along a negative slope; reported at sample ``n + 1``.

    A pair with no change in ``k1`` is skipped, its slope being undefined.
    """
    if len(path) < 2:
        raise ValueError("path needs at least two samples")
    k1, k2 = path.k1, path.k2
    div = np.abs(k1 - k2)
    for n in range(len(path) - 1):
        if not div[n] < div[n + 1]:
            continue
        dk1 = k1[n + 1] - k1[n]
        if dk1 == 0:
            continue
        if (k2[n + 1] - k2[n]) / dk1 < 0:
            i = n + 1
            return BifurcationPoint(i, float(path.time[i]), float(k1[i]), float(k2[i]))
    return None


@dataclass(frozen=True)
class BifurcationRow:
    scenario: str
    replication: int
    point: Optional[BifurcationPoint]
    jam_density: float

    @property
    def detected(self) -> bool:
        return self.point is not None

    @property
    def ratio_to_jam(self) -> float:
        return self.point.density / self.jam_density if self.point else math.nan


def bifurcation_summary(scenario: str, paths: Sequence[PhasePath], jam_density: float,
                        window: float = 60.0, turning: bool = True) -> list[BifurcationRow]:
    """One row per replication; ``point`` is ``None`` where nothing was detected.

    With ``turning`` off the rings are decoupled and every row is ``None``.
    """
    return [BifurcationRow(scenario, i, detect_bifurcation(smooth_path(p, window)) if turning else None,
                           jam_density)
            for i, p in enumerate(paths)]
