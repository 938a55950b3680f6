"""Two-ring topology, vehicle state and merge logic.

Link layout (ids are stable and used in every output file)::

    0 ring1_main    merge 1 -> diverge 1
    1 ring1_return  diverge 1 -> merge 1      (stay)
    2 ring2_main    merge 2 -> diverge 2
    3 ring2_return  diverge 2 -> merge 2      (stay)
    4 conn_1to2     diverge 1 -> merge 2      (switch)
    5 conn_2to1     diverge 2 -> merge 1      (switch)

Positions are front-bumper positions measured from the start of the link.
At a merge the last ``merge_zone_length`` metres of both approaches are
superimposed onto one axis ending at the start of the outgoing main link,
which gives every vehicle about to merge a (possibly negative) virtual gap.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .cf_models import CooperationState, DriverParams, HumanFactors, LeaderObservation, desired_gap

# Gap reported when nothing is ahead within the search horizon.
FREE_ROAD_GAP = 1.0e4

MAIN = (0, 2)
RETURN = (1, 3)
CONNECTOR = (4, 5)
STAY, SWITCH, PENDING = 0, 1, -1


class LinkKind(str, enum.Enum):
    RING1 = "Ring1Segment"
    RING2 = "Ring2Segment"
    CONNECTOR = "Connector"


class VehicleClass(enum.IntEnum):
    HV = 0
    CONNECTED_HV = 1
    AV = 2
    CAV = 3

    @property
    def is_human(self) -> bool:
        return self in (VehicleClass.HV, VehicleClass.CONNECTED_HV)

    @property
    def is_connected(self) -> bool:
        return self in (VehicleClass.CONNECTED_HV, VehicleClass.CAV)

    @property
    def label(self) -> str:
        return {0: "HV", 1: "ConnectedHV", 2: "AV", 3: "CAV"}[int(self)]

    @classmethod
    def from_label(cls, label: str) -> "VehicleClass":
        for c in cls:
            if c.label.lower() == label.lower() or c.name.lower() == label.lower():
                return c
        raise ValueError(f"unknown vehicle class {label!r}")


@dataclass(frozen=True)
class Link:
    id: int
    name: str
    length: float
    speed_limit: float
    kind: LinkKind
    downstream_node: str


@dataclass(frozen=True)
class MergeNode:
    id: int
    approach_links: tuple[int, int]  # (ring return link, incoming connector)
    outgoing_link: int
    detection_range: float
    merge_zone_length: float


@dataclass(frozen=True)
class DivergeNode:
    id: int
    incoming_link: int
    stay_link: int
    switch_link: int
    turn_probability: float


@dataclass(frozen=True)
class TwoRingNetwork:
    links: tuple[Link, ...]
    merges: tuple[MergeNode, MergeNode]
    diverges: tuple[DivergeNode, DivergeNode]

    @property
    def ring_length(self) -> float:
        return self.links[0].length + self.links[1].length

    @property
    def link_lengths(self) -> np.ndarray:
        return np.array([lk.length for lk in self.links])

    @property
    def turn_probability(self) -> float:
        return self.diverges[0].turn_probability

    def ring_links(self, ring: int) -> tuple[int, int]:
        """Link ids of ring 0 or ring 1 (main, return)."""
        return MAIN[ring], RETURN[ring]

    def next_link(self, link: int, decision: int = STAY) -> int:
        if link in MAIN:
            ring = MAIN.index(link)
            if decision == SWITCH:
                return CONNECTOR[ring]
            if decision == STAY:
                return RETURN[ring]
            raise ValueError(f"no turn decision for a vehicle leaving link {link}")
        if link in RETURN:
            return MAIN[RETURN.index(link)]
        return MAIN[1 - CONNECTOR.index(link)]

    def merge_for_approach(self, link: int) -> Optional[MergeNode]:
        for m in self.merges:
            if link in m.approach_links:
                return m
        return None


@dataclass(frozen=True)
class GeometryConfig:
    ring_radius: Union[float, tuple[float, float]] = 50.0
    connector_length: float = 100.0
    speed_limit: float = 30.0 / 3.6
    turn_probability: float = 0.0
    detection_range: float = 30.0
    merge_zone_length: Optional[float] = None
    # share of each ring between its diverge and its merge
    return_fraction: float = 0.25


def build_two_ring(geometry: GeometryConfig = GeometryConfig()) -> TwoRingNetwork:
    """Build the symmetric two-ring network.

    Raises:
        ValueError: on non-positive sizes, asymmetric rings, or approach links
            shorter than the merge zone.
    """
    radius = geometry.ring_radius
    if isinstance(radius, (tuple, list)):
        if len(radius) != 2 or not math.isclose(radius[0], radius[1]):
            raise ValueError(f"rings must be identical, got radii {radius}")
        radius = radius[0]
    zone = geometry.detection_range if geometry.merge_zone_length is None else geometry.merge_zone_length
    for name, value in (("ring_radius", radius), ("connector_length", geometry.connector_length),
                        ("speed_limit", geometry.speed_limit), ("detection_range", geometry.detection_range),
                        ("merge_zone_length", zone)):
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value}")
    if not 0.0 <= geometry.turn_probability <= 1.0:
        raise ValueError("turn_probability must lie in [0, 1]")
    if not 0.0 < geometry.return_fraction < 1.0:
        raise ValueError("return_fraction must lie in (0, 1)")

    circumference = 2.0 * math.pi * radius
    ret = geometry.return_fraction * circumference
    main = circumference - ret
    if zone > min(ret, geometry.connector_length):
        raise ValueError("merge zone longer than an approach link")
    vmax = geometry.speed_limit
    links = (
        Link(0, "ring1_main", main, vmax, LinkKind.RING1, "diverge1"),
        Link(1, "ring1_return", ret, vmax, LinkKind.RING1, "merge1"),
        Link(2, "ring2_main", main, vmax, LinkKind.RING2, "diverge2"),
        Link(3, "ring2_return", ret, vmax, LinkKind.RING2, "merge2"),
        Link(4, "conn_1to2", geometry.connector_length, vmax, LinkKind.CONNECTOR, "merge2"),
        Link(5, "conn_2to1", geometry.connector_length, vmax, LinkKind.CONNECTOR, "merge1"),
    )
    merges = (
        MergeNode(0, (1, 5), 0, geometry.detection_range, zone),
        MergeNode(1, (3, 4), 2, geometry.detection_range, zone),
    )
    diverges = (
        DivergeNode(0, 0, 1, 4, geometry.turn_probability),
        DivergeNode(1, 2, 3, 5, geometry.turn_probability),
    )
    return TwoRingNetwork(links, merges, diverges)


def decide_turn(rng: np.random.Generator, p_turn: float) -> int:
    """Bernoulli turn decision: ``SWITCH`` with probability ``p_turn``."""
    return SWITCH if rng.random() < p_turn else STAY


@dataclass
class VehicleState:
    id: int
    cls: VehicleClass
    link: int
    position: float
    speed: float
    params: DriverParams
    accel: float = 0.0
    length: float = 5.0
    human: Optional[HumanFactors] = None
    cooperation: Optional[CooperationState] = None
    route_decision: int = PENDING


@dataclass
class LeaderInfo:
    """Leader relations of the active vehicles at one instant.

    All arrays are indexed like ``active`` (positions in the active subset).
    ``-1`` marks a missing leader; missing gaps are ``inf``.
    """

    active: np.ndarray
    phys_leader: np.ndarray
    phys_gap: np.ndarray
    ctrl_leader: np.ndarray
    ctrl_gap: np.ndarray
    virtual: np.ndarray
    dist_to_merge: np.ndarray
    in_zone: np.ndarray
    chain_gap: np.ndarray
    chain_dv: np.ndarray


class World:
    """Struct-of-arrays vehicle store over a fixed number of slots.

    A slot is occupied once its vehicle has been inserted and stays occupied
    for the rest of the run; vehicles never leave the network.
    """

    def __init__(self, network: TwoRingNetwork, capacity: int):
        self.network = network
        self.link_len = network.link_lengths
        n = capacity
        self.active = np.zeros(n, dtype=bool)
        self.vid = np.full(n, -1, dtype=np.int64)
        self.cls = np.zeros(n, dtype=np.int8)
        self.link = np.zeros(n, dtype=np.int64)
        self.pos = np.zeros(n)
        self.speed = np.zeros(n)
        self.accel = np.zeros(n)
        self.length = np.full(n, 5.0)
        self.v0 = np.ones(n)
        self.headway = np.ones(n)
        self.max_accel = np.ones(n)
        self.comfort_decel = np.ones(n)
        self.jam_gap = np.ones(n)
        self.reaction_time = np.zeros(n)
        self.decision = np.full(n, PENDING, dtype=np.int8)

    @property
    def capacity(self) -> int:
        return self.active.size

    @classmethod
    def from_vehicles(cls, network: TwoRingNetwork, vehicles: Sequence[VehicleState]) -> "World":
        world = cls(network, len(vehicles))
        for slot, veh in enumerate(vehicles):
            world.place(slot, veh)
        return world

    def place(self, slot: int, veh: VehicleState) -> None:
        p = veh.params
        self.active[slot] = True
        self.vid[slot] = veh.id
        self.cls[slot] = int(veh.cls)
        self.link[slot] = veh.link
        self.pos[slot] = veh.position
        self.speed[slot] = veh.speed
        self.accel[slot] = veh.accel
        self.length[slot] = veh.length
        self.v0[slot] = p.desired_speed
        self.headway[slot] = p.safe_headway
        self.max_accel[slot] = p.max_accel
        self.comfort_decel[slot] = p.comfort_decel
        self.jam_gap[slot] = p.jam_gap
        self.reaction_time[slot] = veh.human.reaction_time if veh.human else 0.0
        self.decision[slot] = veh.route_decision

    def slot_of(self, vehicle_id: int) -> int:
        hits = np.flatnonzero(self.active & (self.vid == vehicle_id))
        if hits.size != 1:
            raise KeyError(f"vehicle {vehicle_id} not in world")
        return int(hits[0])

    def is_connected(self) -> np.ndarray:
        return (self.cls == VehicleClass.CONNECTED_HV) | (self.cls == VehicleClass.CAV)

    # -- leader search ------------------------------------------------------

    def leaders(self, n_leaders: int = 1) -> LeaderInfo:
        """Physical and control leaders of every active vehicle.

        The physical leader is the next vehicle along the vehicle's own path.
        Inside a merge zone the control leader is the nearest vehicle ahead
        in superimposed coordinates, ties going to the lower vehicle id.
        """
        net = self.network
        act = np.flatnonzero(self.active)
        n = act.size
        lk = self.link[act]
        x = self.pos[act]
        ln = self.length[act]
        v = self.speed[act]
        ids = self.vid[act]
        link_len = self.link_len

        phys = np.full(n, -1, dtype=np.int64)
        phys_gap = np.full(n, np.inf)
        if n:
            order = np.lexsort((x, lk))
            lks = lk[order]
            same = lks[1:] == lks[:-1]
            fol, lead = order[:-1][same], order[1:][same]
            phys[fol] = lead
            phys_gap[fol] = x[lead] - ln[lead] - x[fol]
            starts = np.flatnonzero(np.r_[True, ~same])
            first_on = {int(lks[s]): int(order[s]) for s in starts}
            ends = np.flatnonzero(np.r_[~same, True])
            for e in ends:
                i = int(order[e])
                here = int(lks[e])
                dist = link_len[here] - x[i]
                nxt = net.next_link(here, int(self.decision[act[i]])) if here not in MAIN or self.decision[act[i]] != PENDING else None
                hops = 0
                while nxt is not None and hops < 2:
                    j = first_on.get(nxt)
                    if j is not None:
                        if j != i:
                            phys[i] = j
                            phys_gap[i] = dist + x[j] - ln[j]
                        break
                    if nxt in MAIN:
                        break
                    dist += link_len[nxt]
                    nxt = net.next_link(nxt)
                    hops += 1

        ctrl = phys.copy()
        ctrl_gap = phys_gap.copy()
        virtual = np.zeros(n, dtype=bool)
        dist_to_merge = np.full(n, np.inf)
        in_zone = np.zeros(n, dtype=bool)
        for m in net.merges:
            on_app = (lk == m.approach_links[0]) | (lk == m.approach_links[1])
            if not on_app.any():
                continue
            d_all = link_len[lk[on_app]] - x[on_app]
            dist_to_merge[on_app] = d_all
            sel = np.flatnonzero(on_app)[d_all <= m.merge_zone_length]
            if sel.size == 0:
                continue
            in_zone[sel] = True
            d = link_len[lk[sel]] - x[sel]
            o = np.lexsort((ids[sel], d))
            s_sorted, d_sorted = sel[o], d[o]
            fol, lead = s_sorted[1:], s_sorted[:-1]
            ctrl[fol] = lead
            ctrl_gap[fol] = d_sorted[1:] - d_sorted[:-1] - ln[lead]
            virtual[fol] = lk[fol] != lk[lead]

        k = max(1, n_leaders)
        chain_gap = np.full((n, k), np.inf)
        chain_dv = np.zeros((n, k))
        if n:
            cur = ctrl.copy()
            cum = ctrl_gap.copy()
            alive = cur >= 0
            for m in range(k):
                ok = alive & (cum < FREE_ROAD_GAP)
                chain_gap[ok, m] = cum[ok]
                chain_dv[ok, m] = v[ok] - v[cur[ok]]
                if m + 1 == k:
                    break
                nxt = np.where(ok, ctrl[np.where(ok, cur, 0)], -1)
                step_gap = np.where(nxt >= 0, ctrl_gap[np.where(ok, cur, 0)], np.inf)
                alive = ok & (nxt >= 0) & (nxt != np.arange(n))
                cum = cum + step_gap
                cur = np.where(alive, nxt, -1)
        return LeaderInfo(act, phys, phys_gap, ctrl, ctrl_gap, virtual, dist_to_merge, in_zone, chain_gap, chain_dv)

    def merge_conflicts(self, info: LeaderInfo) -> np.ndarray:
        """Per active vehicle: a connected vehicle is within detection range
        on the other approach of the merge this vehicle is heading for."""
        act = info.active
        lk = self.link[act]
        connected = self.is_connected()[act]
        out = np.zeros(act.size, dtype=bool)
        for m in self.network.merges:
            a0, a1 = m.approach_links
            near = info.dist_to_merge <= m.detection_range
            has0 = bool(np.any(near & connected & (lk == a0)))
            has1 = bool(np.any(near & connected & (lk == a1)))
            out |= near & (lk == a0) & has1
            out |= near & (lk == a1) & has0
        return out


def virtual_leader(merge: MergeNode, vehicle_id: int, world: World) -> LeaderObservation:
    """Control leader of one vehicle inside a merge zone.

    Straightforward scan over all vehicles, kept independent of the
    vectorised ``World.leaders`` so the two can be checked against each other.

    Raises:
        ValueError: if the vehicle is not inside the merge zone.
    """
    link_len = world.link_len
    s = world.slot_of(vehicle_id)
    if world.link[s] not in merge.approach_links:
        raise ValueError("vehicle is not on an approach of this merge")
    d_self = link_len[world.link[s]] - world.pos[s]
    if d_self > merge.merge_zone_length:
        raise ValueError("vehicle is outside the merge zone")

    best = None
    for j in np.flatnonzero(world.active):
        if j == s:
            continue
        lj = world.link[j]
        if lj in merge.approach_links:
            dj = link_len[lj] - world.pos[j]
            if lj != world.link[s] and dj > merge.merge_zone_length:
                continue
        elif lj == merge.outgoing_link:
            dj = -world.pos[j]
        else:
            continue
        ahead = dj < d_self or (dj == d_self and world.vid[j] < world.vid[s])
        if not ahead:
            continue
        key = (dj, -world.vid[j])
        if best is None or key > best[0]:
            best = (key, j, dj)

    v = world.speed[s]
    if best is None:
        return LeaderObservation(d_self + FREE_ROAD_GAP, 0.0, 0.0)
    _, j, dj = best
    return LeaderObservation(d_self - dj - world.length[j], v - world.speed[j], world.speed[j])


def detect_merge_conflict(merge: MergeNode, vehicle_id: int, world: World) -> bool:
    """True iff a connected vehicle is within detection range on the other approach."""
    s = world.slot_of(vehicle_id)
    own = world.link[s]
    if own not in merge.approach_links:
        return False
    other = merge.approach_links[1 - merge.approach_links.index(own)]
    link_len = world.link_len
    if link_len[own] - world.pos[s] > merge.detection_range:
        return False
    cand = world.active & (world.link == other) & world.is_connected()
    d = link_len[other] - world.pos[cand]
    return bool(np.any(d <= merge.detection_range))


def insertion_gap_ok(world: World, ring: int, new_length: float, new_params: DriverParams, speed: float) -> bool:
    """Whether a vehicle can enter ``ring`` at ``speed`` with its rear on the
    merge point: it needs at least its IDM desired gap to the last vehicle on
    the main link."""
    main = world.network.merges[ring].outgoing_link
    on_main = np.flatnonzero(world.active & (world.link == main))
    if not on_main.size:
        return True
    j = on_main[np.argmin(world.pos[on_main])]
    gap = world.pos[j] - world.length[j] - new_length
    need = desired_gap(speed, speed - world.speed[j], new_params.jam_gap, new_params.safe_headway,
                       new_params.max_accel, new_params.comfort_decel)
    return bool(gap >= need)
