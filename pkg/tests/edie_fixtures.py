"""Hand-built trajectories whose Edie integrals are known in closed form.

Each fixture lists vehicle breakpoints ``(t, link, position)``; motion is at
constant speed between consecutive breakpoints. ``time`` and ``distance`` are
the totals inside the region over the interval, worked out by hand.
"""

import math
from dataclasses import dataclass

import numpy as np

from tworing.network import GeometryConfig, build_two_ring

NET = build_two_ring(GeometryConfig())
LENGTHS = NET.link_lengths
MAIN_LEN = LENGTHS[0]
RET_LEN = LENGTHS[1]
CONN_LEN = LENGTHS[4]
RING = MAIN_LEN + RET_LEN
RING1, RING2, NETWORK = (0, 1), (2, 3), (0, 1, 2, 3)


@dataclass(frozen=True)
class EdieFixture:
    name: str
    vehicles: tuple
    region: tuple
    t0: float
    interval: float
    time: float
    distance: float

    @property
    def area(self) -> float:
        return sum(LENGTHS[l] for l in self.region) * self.interval

    @property
    def density(self) -> float:
        return self.time / self.area

    @property
    def flow(self) -> float:
        return self.distance / self.area

    def records(self, dt=None):
        """Columns ``(time, vehicle_id, link, position)``; with ``dt`` the
        breakpoints are resampled every ``dt`` seconds as well."""
        t, vid, link, pos = [], [], [], []
        for i, pts in enumerate(self.vehicles):
            for (ta, la, xa), (tb, lb, xb) in zip(pts[:-1], pts[1:]):
                ts = [ta] if dt is None else list(np.arange(ta, tb - 1e-12, dt))
                for tt in ts:
                    f = (tt - ta) / (tb - ta)
                    if la == lb:
                        t.append(tt), vid.append(i), link.append(la), pos.append(xa + f * (xb - xa))
                        continue
                    d = LENGTHS[la] - xa + xb
                    s = xa + f * d
                    if s <= LENGTHS[la]:
                        t.append(tt), vid.append(i), link.append(la), pos.append(s)
                    else:
                        t.append(tt), vid.append(i), link.append(lb), pos.append(s - LENGTHS[la])
            tl, ll, xl = pts[-1]
            t.append(tl), vid.append(i), link.append(ll), pos.append(xl)
        return np.array(t), np.array(vid), np.array(link), np.array(pos)


FIXTURES = (
    EdieFixture("constant_speed", (((0, 0, 10.0), (10, 0, 90.0)),), RING1, 0, 10, 10, 80),
    EdieFixture("stopped", (((0, 0, 50.0), (10, 0, 50.0)),), RING1, 0, 10, 10, 0),
    EdieFixture("empty_region", (((0, 2, 10.0), (10, 2, 60.0)),), RING1, 0, 10, 0, 0),
    EdieFixture("main_to_return", (((0, 0, MAIN_LEN - 20), (10, 1, 30.0)),), RING1, 0, 10, 10, 50),
    EdieFixture("leaves_to_connector", (((0, 0, MAIN_LEN - 20), (10, 4, 20.0)),), RING1, 0, 10, 5, 20),
    EdieFixture("enters_from_connector", (((0, 5, CONN_LEN - 15), (10, 0, 45.0)),), RING1, 0, 10, 7.5, 45),
    EdieFixture("two_speeds", (((0, 0, 0.0), (4, 0, 12.0), (10, 0, 54.0)),), RING1, 0, 10, 10, 54),
    EdieFixture("straddles_interval", (((-5, 0, 10.0), (15, 0, 50.0)),), RING1, 0, 10, 10, 20),
    EdieFixture("present_mid_interval", (((3, 0, 5.0), (7, 0, 29.0)),), RING1, 0, 10, 4, 24),
    EdieFixture("three_vehicles",
                (((0, 0, 10.0), (10, 0, 20.0)), ((0, 0, 50.0), (10, 0, 70.0)), ((0, 1, 0.0), (10, 1, 30.0))),
                RING1, 0, 10, 30, 60),
    EdieFixture("other_ring_only", (((0, 0, 10.0), (10, 0, 90.0)),), RING2, 0, 10, 0, 0),
    EdieFixture("network_both_rings",
                (((0, 0, 10.0), (10, 0, 90.0)), ((0, 3, 5.0), (10, 3, 25.0))), NETWORK, 0, 10, 20, 100),
    EdieFixture("stop_and_go", (((0, 0, 0.0), (2, 0, 10.0), (6, 0, 10.0), (10, 0, 30.0)),), RING1, 0, 10, 10, 30),
    EdieFixture("later_interval", (((0, 2, 0.0), (30, 2, 90.0)),), RING2, 10, 10, 10, 30),
    EdieFixture("return_to_main", (((0, 1, RET_LEN - 16), (4, 0, 16.0), (10, 0, 22.0)),), RING1, 0, 10, 10, 38),
    EdieFixture("crossing_pair",
                (((0, 5, CONN_LEN - 12), (10, 0, 28.0)), ((0, 0, MAIN_LEN - 9), (10, 4, 21.0))),
                RING1, 0, 10, 7 + 3, 28 + 9),
    EdieFixture("exits_at_interval_end", (((0, 0, MAIN_LEN - 30), (10, 0, MAIN_LEN)),), RING1, 0, 10, 10, 30),
    EdieFixture("breakpoint_on_boundary", (((0, 2, 0.0), (10, 2, 40.0), (20, 2, 100.0)),), RING2, 10, 10, 10, 60),
    EdieFixture("long_interval", (((0, 2, 0.0), (10, 2, 80.0), (20, 2, 100.0), (30, 2, 160.0)),),
                RING2, 0, 30, 30, 160),
    EdieFixture("connector_only", (((0, 4, 5.0), (10, 4, 85.0)),), NETWORK, 0, 10, 0, 0),
)

assert len(FIXTURES) == 20
assert math.isclose(RING, 2 * math.pi * 50)
