"""Fixed-step simulation loop, delayed-history buffers, seeded streams and
the replication batch runner.

Every step is a synchronous update: leaders and accelerations are computed
from the beginning-of-step snapshot, then all vehicles move at once. Automated
vehicles therefore react with exactly one step of latency.
"""

from __future__ import annotations

import enum
import math
import multiprocessing
import traceback
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .cf_models import cidm_scale, hdm_acceleration, idm_acceleration
from .config import ScenarioConfig
from .network import (
    MAIN,
    PENDING,
    SWITCH,
    VehicleClass,
    World,
    build_two_ring,
    decide_turn,
    insertion_gap_ok,
)

NOISE_BLOCK = 1024
# Slack on the physical no-overlap bound before a clamp counts as an event.
GUARD_TOL = 1e-9


class Stream(enum.IntEnum):
    """Purpose tags of the per-vehicle random streams."""

    NOISE = 0
    TURN = 1
    REACTION = 2
    CLASS = 3


class SimulationError(RuntimeError):
    pass


def vehicle_rng(seed: int, vehicle_id: int, purpose: Stream) -> np.random.Generator:
    """Independent stream per (replication seed, vehicle, purpose)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(vehicle_id, int(purpose))))


@dataclass
class SimClock:
    step_index: int = 0
    dt: float = 0.1
    horizon: float = 1800.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.horizon < self.dt:
            raise ValueError("horizon must be at least dt")

    @property
    def time(self) -> float:
        return self.step_index * self.dt

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class ReplicationPlan:
    replication_count: int
    base_seed: int = 0

    @property
    def seeds(self) -> tuple[int, ...]:
        """Derived seeds, distinct and reproducible from ``base_seed``."""
        out: list[int] = []
        i = 0
        while len(out) < self.replication_count:
            s = int(np.random.SeedSequence((self.base_seed, i)).generate_state(1, np.uint64)[0] >> 1)
            if s not in out:
                out.append(s)
            i += 1
        return tuple(out)


def sample_reaction_time(rng: np.random.Generator, mean: float = 1.2, scale: float = 0.3,
                         shape: float = 3.0, low: float = 0.3, high: float = 3.0) -> float:
    """Skew-normal reaction time with the given mean, truncated to [low, high].

    The location is set so the untruncated distribution has mean ``mean``;
    out-of-range draws are redrawn.
    """
    delta = shape / math.sqrt(1.0 + shape * shape)
    loc = mean - scale * delta * math.sqrt(2.0 / math.pi)
    while True:
        u0, u1 = rng.standard_normal(2)
        z = delta * abs(u0) + math.sqrt(1.0 - delta * delta) * u1
        t = loc + scale * z
        if low <= t <= high:
            return float(t)


class HistoryBuffer:
    """Ring buffer of past observations for every slot.

    Row ``n % depth`` holds what was observed at step ``n``. A slot's first
    write fills every row, so the delayed state before insertion equals the
    insertion state.
    """

    def __init__(self, capacity: int, depth: int, n_leaders: int):
        self.depth = depth
        self.speed = np.zeros((depth, capacity))
        self.accel = np.zeros((depth, capacity))
        self.gap = np.full((depth, capacity, n_leaders), np.inf)
        self.dv = np.zeros((depth, capacity, n_leaders))
        self.time = np.full(depth, -np.inf)
        self.filled = np.zeros(capacity, dtype=bool)

    @classmethod
    def for_reaction_time(cls, capacity: int, max_reaction: float, dt: float, n_leaders: int) -> "HistoryBuffer":
        return cls(capacity, int(math.ceil(max_reaction / dt - 1e-9)) + 2, n_leaders)

    def write(self, step: int, t: float, slots: np.ndarray, speed, gap, dv) -> None:
        row = step % self.depth
        self.time[row] = t
        fresh = ~self.filled[slots]
        if fresh.any():
            s = slots[fresh]
            self.speed[:, s] = speed[fresh]
            self.accel[:, s] = 0.0
            self.gap[:, s] = gap[fresh]
            self.dv[:, s] = dv[fresh]
            self.filled[s] = True
        self.speed[row, slots] = speed
        self.gap[row, slots] = gap
        self.dv[row, slots] = dv

    def write_accel(self, step: int, slots: np.ndarray, accel) -> None:
        self.accel[step % self.depth, slots] = accel

    def delayed(self, step: int, slots: np.ndarray, delay_steps: np.ndarray):
        """State ``delay_steps`` (fractional) steps ago, linearly interpolated."""
        j = np.floor(delay_steps).astype(np.int64)
        if np.any(j + 1 >= self.depth) or np.any(j < 1):
            raise SimulationError("delay outside history buffer")
        f = delay_steps - j
        r0 = (step - j) % self.depth
        r1 = (step - j - 1) % self.depth
        w0, w1 = 1.0 - f, f
        v = w0 * self.speed[r0, slots] + w1 * self.speed[r1, slots]
        a = w0 * self.accel[r0, slots] + w1 * self.accel[r1, slots]
        g0, g1 = self.gap[r0, slots], self.gap[r1, slots]
        with np.errstate(invalid="ignore"):
            g = w0[:, None] * g0 + w1[:, None] * g1
        g = np.where(np.isinf(g0) | np.isinf(g1), np.inf, g)
        dv = w0[:, None] * self.dv[r0, slots] + w1[:, None] * self.dv[r1, slots]
        return v, a, g, dv


@dataclass
class Trajectory:
    """Per-step records of every vehicle in the network."""

    dt: float
    step: np.ndarray
    vehicle_id: np.ndarray
    cls: np.ndarray
    link: np.ndarray
    position: np.ndarray
    speed: np.ndarray
    accel: np.ndarray

    @property
    def time(self) -> np.ndarray:
        return self.step * self.dt

    def __len__(self) -> int:
        return self.step.size

    def subset(self, mask: np.ndarray) -> "Trajectory":
        return Trajectory(self.dt, self.step[mask], self.vehicle_id[mask], self.cls[mask], self.link[mask],
                          self.position[mask], self.speed[mask], self.accel[mask])


@dataclass(frozen=True)
class Event:
    time: float
    vehicle_id: int
    kind: str
    detail: str = ""


@dataclass
class ReplicationResult:
    seed: int
    trajectory: Trajectory
    events: list[Event]
    link_lengths: np.ndarray
    counters: dict[str, int] = field(default_factory=dict)


class Simulation:
    """One replication of one scenario.

    ``mirror`` swaps which ring gets the even and odd vehicle ids, so that a
    mirrored run reproduces the original with ring 1 and ring 2 exchanged.
    ``initial`` places ``(id, class, link, position, speed)`` vehicles before
    the first step.
    """

    def __init__(self, cfg: ScenarioConfig, seed: int, mirror: bool = False,
                 initial: Sequence[tuple[int, VehicleClass, int, float, float]] = ()):
        self.cfg = cfg
        self.seed = int(seed)
        self.mirror = bool(mirror)
        self.network = build_two_ring(cfg.geometry)
        self.clock = SimClock(0, cfg.dt_s, cfg.horizon_s)
        n_steps = self.clock.n_steps
        self.headway = math.inf if cfg.demand_veh_per_h == 0 else 3600.0 / cfg.demand_veh_per_h
        per_ring = 0 if math.isinf(self.headway) else int(math.floor(cfg.horizon_s / self.headway + 1e-9)) + 1
        self.world = World(self.network, max(2 * per_ring + len(initial), 1))
        self.world.length[:] = cfg.vehicle_length_m
        self.k = cfg.anticipated_leaders
        self.hist = HistoryBuffer.for_reaction_time(self.world.capacity, cfg.reaction_time_max_s, cfg.dt_s, self.k)
        cap = self.world.capacity
        self.noise = np.zeros((cap, NOISE_BLOCK))
        self.noise_ptr = np.full(cap, NOISE_BLOCK)
        self.noise_rng: list[Optional[np.random.Generator]] = [None] * cap
        self.turn_rng: list[Optional[np.random.Generator]] = [None] * cap
        self.emerg = np.zeros(cap, dtype=bool)
        self.n_used = 0
        self.queued = [0, 0]
        self.scheduled = [0, 0]
        self.events: list[Event] = []
        self.counters = {"inserted_ring1": 0, "inserted_ring2": 0, "gap_guard": 0,
                         "emergency_brake": 0, "merge_stop": 0, "turn_switch": 0, "turn_stay": 0}
        self._rec: list[tuple] = []
        self._n_steps = n_steps
        mix = cfg.mix
        self._classes = [c for c in VehicleClass if mix[c] > 0]
        self._cum = np.cumsum([mix[c] for c in self._classes])
        self.params = {c: cfg.params_for(c).limited(cfg.speed_limit_mps) for c in VehicleClass}
        for vid, cls, link, pos, speed in initial:
            self._spawn(vid, VehicleClass(cls), link, pos, speed)

    # -- helpers ---------------------------------------------------------

    def _log(self, t: float, vid: int, kind: str, detail: str = "") -> None:
        self.events.append(Event(t, int(vid), kind, detail))

    def _draw_class(self, vid: int) -> VehicleClass:
        u = vehicle_rng(self.seed, vid, Stream.CLASS).random()
        i = int(np.searchsorted(self._cum, u, side="right"))
        return self._classes[min(i, len(self._classes) - 1)]

    def _draw_turns(self, slots: np.ndarray) -> None:
        p = self.network.turn_probability
        for s in slots:
            self.world.decision[s] = decide_turn(self.turn_rng[s], p)

    def _draw_noise(self, slots: np.ndarray) -> np.ndarray:
        if self.cfg.noise_sd_mps2 == 0:
            return np.zeros(slots.size)
        empty = slots[self.noise_ptr[slots] >= NOISE_BLOCK]
        for s in empty:
            self.noise[s] = self.noise_rng[s].normal(0.0, self.cfg.noise_sd_mps2, NOISE_BLOCK)
            self.noise_ptr[s] = 0
        out = self.noise[slots, self.noise_ptr[slots]]
        self.noise_ptr[slots] += 1
        return out

    # -- insertion -------------------------------------------------------

    def _insert(self, t: float) -> None:
        cfg = self.cfg
        if math.isinf(self.headway) or t >= cfg.horizon_s - 1e-9:
            return
        due = int(math.floor(t / self.headway + 1e-9)) + 1
        w = self.world
        for ring in (0, 1):
            self.queued[ring] += due - self.scheduled[ring]
            self.scheduled[ring] = due
        for ring in (0, 1):
            if self.queued[ring] == 0:
                continue
            serial = self.scheduled[ring] - self.queued[ring]
            vid = 2 * serial + (ring ^ int(self.mirror))
            cls = self._draw_class(vid)
            params = self.params[cls]
            v_ins = cfg.speed_limit_mps
            if not insertion_gap_ok(w, ring, cfg.vehicle_length_m, params, v_ins):
                continue
            self.queued[ring] -= 1
            self._spawn(vid, cls, MAIN[ring], cfg.vehicle_length_m, v_ins)
            self.counters[f"inserted_ring{ring + 1}"] += 1
            self._log(t, vid, "insert", f"ring{ring + 1} {cls.label}")

    def _spawn(self, vid: int, cls: VehicleClass, link: int, pos: float, speed: float) -> None:
        """Occupy the next free slot with a fresh vehicle."""
        w, cfg = self.world, self.cfg
        params = self.params[cls]
        s = self.n_used
        self.n_used += 1
        w.active[s] = True
        w.vid[s] = vid
        w.cls[s] = int(cls)
        w.link[s] = link
        w.pos[s] = pos
        w.speed[s] = speed
        w.accel[s] = 0.0
        w.length[s] = cfg.vehicle_length_m
        w.v0[s] = params.desired_speed
        w.headway[s] = params.safe_headway
        w.max_accel[s] = params.max_accel
        w.comfort_decel[s] = params.comfort_decel
        w.jam_gap[s] = params.jam_gap
        if cls.is_human:
            w.reaction_time[s] = sample_reaction_time(
                vehicle_rng(self.seed, vid, Stream.REACTION), cfg.reaction_time_mean_s,
                cfg.reaction_time_scale_s, cfg.reaction_time_shape, cfg.reaction_time_min_s,
                cfg.reaction_time_max_s)
            self.noise_rng[s] = vehicle_rng(self.seed, vid, Stream.NOISE)
        self.turn_rng[s] = vehicle_rng(self.seed, vid, Stream.TURN)
        if link in MAIN:
            self._draw_turns(np.array([s]))

    # -- stepping --------------------------------------------------------

    def accelerations(self, info, step: int, t: float) -> np.ndarray:
        """Acceleration of every active vehicle from the current snapshot."""
        w, cfg = self.world, self.cfg
        act = info.active
        cls = w.cls[act]
        v = w.speed[act]
        acc = np.empty(act.size)

        human = (cls == VehicleClass.HV) | (cls == VehicleClass.CONNECTED_HV)
        if human.any():
            hs = act[human]
            self.hist.write(step, t, hs, v[human], info.chain_gap[human], info.chain_dv[human])
            delay = w.reaction_time[hs] / cfg.dt_s
            vd, ad, gd, dvd = self.hist.delayed(step, hs, delay)
            acc[human] = hdm_acceleration(vd, ad, gd, dvd, w.reaction_time[hs], w.v0[hs], w.headway[hs],
                                          w.max_accel[hs], w.comfort_decel[hs], w.jam_gap[hs],
                                          self._draw_noise(hs))

        auto = ~human
        if auto.any():
            au = act[auto]
            headway = w.headway[au]
            gap = info.chain_gap[auto, 0]
            coop = cls[auto] == VehicleClass.CAV
            if coop.any():
                conflict = w.merge_conflicts(info)[auto]
                lt, ls = cidm_scale(conflict & coop, info.dist_to_merge[auto], cfg.detection_range_m,
                                    cfg.lambda_t, cfg.lambda_s_floor)
                headway = headway * lt
                gap = gap * ls
            acc[auto] = idm_acceleration(v[auto], gap, info.chain_dv[auto, 0], w.v0[au], headway,
                                         w.max_accel[au], w.comfort_decel[au], w.jam_gap[au])

        if np.isnan(acc).any() or np.isposinf(acc).any():
            bad = act[~np.isfinite(acc) & ~np.isneginf(acc)]
            raise SimulationError(f"non-finite acceleration at t={t:.1f} for vehicles {w.vid[bad].tolist()}")
        emerg = np.isneginf(acc)
        onset = emerg & ~self.emerg[act]
        for i in np.flatnonzero(onset):
            self.counters["emergency_brake"] += 1
            self._log(t, w.vid[act[i]], "emergency_brake", f"gap={info.ctrl_gap[i]:.9g}")
        self.emerg[act] = emerg
        acc = np.maximum(acc, -cfg.emergency_decel_mps2)
        if human.any():
            self.hist.write_accel(step, act[human], acc[human])
        return acc

    def move(self, info, acc: np.ndarray, t_next: float) -> None:
        """Ballistic update, no-overlap and stop-line guards, link transfer."""
        w, dt = self.world, self.cfg.dt_s
        act = info.active
        x, v = w.pos[act], w.speed[act]
        v_new = v + acc * dt
        stops = v_new < 0
        dx = v * dt + 0.5 * acc * dt * dt
        if stops.any():
            dx[stops] = v[stops] * v[stops] / (-2.0 * acc[stops])
            v_new[stops] = 0.0
        dx = np.maximum(dx, 0.0)
        dx_free = dx.copy()

        phys, gphys = info.phys_leader, info.phys_gap
        has = phys >= 0
        lead = np.where(has, phys, 0)
        virt = info.virtual
        vlead = np.where(virt, info.ctrl_leader, 0)
        d_merge = info.dist_to_merge
        clamped = np.zeros(act.size, dtype=bool)
        held = np.zeros(act.size, dtype=bool)
        for _ in range(4 * act.size + 4):
            bound = np.maximum(gphys + dx[lead], 0.0)
            over = has & (dx > bound)
            # a vehicle may not cross the merge point while behind its virtual leader
            cross = virt & (dx > d_merge) & (info.ctrl_gap + dx[vlead] - dx < 0)
            if not (over.any() or cross.any()):
                break
            dx = np.where(over, bound, dx)
            clamped |= over
            hold = cross & ~over
            dx = np.where(hold, np.minimum(dx, d_merge), dx)
            held |= hold
        else:
            raise SimulationError("guard iteration did not converge")
        if clamped.any() or held.any():
            v_new = np.where(held, 0.0, v_new)
            for _ in range(act.size + 1):
                cap = np.where(clamped & has, np.minimum(v_new, v_new[lead]), v_new)
                if np.array_equal(cap, v_new):
                    break
                v_new = cap
        lost = dx_free - dx
        for i in np.flatnonzero(clamped & (lost > GUARD_TOL)):
            self.counters["gap_guard"] += 1
            self._log(t_next, w.vid[act[i]], "gap_guard", f"lost={lost[i]:.9g}")

        for i in np.flatnonzero(info.in_zone & (v > 0) & (v_new == 0)):
            self.counters["merge_stop"] += 1
            self._log(t_next, w.vid[act[i]], "merge_stop", self.network.links[w.link[act[i]]].name)

        new_x = x + dx
        w.speed[act] = v_new
        w.accel[act] = acc
        link_len = w.link_len
        lk = w.link[act]
        over_end = new_x > link_len[lk]
        entered_main = []
        for i in np.flatnonzero(over_end):
            s = act[i]
            here = int(lk[i])
            if here in MAIN and w.decision[s] == PENDING:
                raise SimulationError("vehicle reached a diverge without a turn decision")
            nxt = self.network.next_link(here, int(w.decision[s]))
            rest = new_x[i] - link_len[here]
            if rest > link_len[nxt]:
                raise SimulationError("vehicle crossed more than one link boundary in one step")
            new_x[i] = rest
            w.link[s] = nxt
            if here in MAIN:
                kind = "switch" if w.decision[s] == SWITCH else "stay"
                self.counters[f"turn_{kind}"] += 1
                self._log(t_next, w.vid[s], "turn", kind)
                w.decision[s] = PENDING
            if nxt in MAIN:
                self._log(t_next, w.vid[s], "merge", self.network.links[here].name)
                entered_main.append(s)
        w.pos[act] = new_x
        if entered_main:
            self._draw_turns(np.array(entered_main))
        if not np.all(np.isfinite(new_x)):
            raise SimulationError(f"non-finite position at t={t_next:.1f}")

    def record(self, step: int, accel: Optional[np.ndarray] = None) -> None:
        w = self.world
        act = np.flatnonzero(w.active)
        a = w.accel[act] if accel is None else accel
        self._rec.append((np.full(act.size, step, dtype=np.int32), w.vid[act].astype(np.int32),
                          w.cls[act].copy(), w.link[act].astype(np.int8), w.pos[act].copy(),
                          w.speed[act].copy(), np.array(a, dtype=float)))

    def step(self) -> None:
        """Advance the world by one step of the clock."""
        n = self.clock.step_index
        t = self.clock.time
        w = self.world
        if w.active.any():
            info = w.leaders(self.k)
            acc = self.accelerations(info, n, t)
            self.record(n, acc)
            self.clock.step_index += 1
            self.move(info, acc, self.clock.time)
        else:
            self.record(n, np.zeros(0))
            self.clock.step_index += 1
        self._insert(self.clock.time)

    def run(self) -> ReplicationResult:
        self._insert(0.0)
        for _ in range(self._n_steps):
            self.step()
        self.record(self.clock.step_index)
        cols = list(zip(*self._rec)) if self._rec else [[]] * 7
        traj = Trajectory(self.cfg.dt_s, *(np.concatenate(c) for c in cols))
        return ReplicationResult(self.seed, traj, self.events, self.network.link_lengths, dict(self.counters))


def run_replication(cfg: ScenarioConfig, seed: int, mirror: bool = False) -> ReplicationResult:
    """Run one replication; a pure function of ``(cfg, seed, mirror)``."""
    return Simulation(cfg, seed, mirror).run()


@dataclass
class BatchItem:
    replication: int
    seed: int
    output: Any = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _run_one(args) -> BatchItem:
    cfg, index, seed, reducer = args
    try:
        result = run_replication(cfg, seed)
        return BatchItem(index, seed, reducer(result) if reducer else result)
    except Exception:  # reported per replication, the batch carries on
        return BatchItem(index, seed, error=traceback.format_exc(limit=5))


def run_batch(cfg: ScenarioConfig, plan: ReplicationPlan, parallelism: int = 1,
              reducer: Optional[Callable[[ReplicationResult], Any]] = None) -> list[BatchItem]:
    """Run every replication of ``plan``; output order and content do not
    depend on ``parallelism``. ``reducer`` runs in the worker, which keeps
    full trajectories out of inter-process traffic."""
    jobs = [(cfg, i, s, reducer) for i, s in enumerate(plan.seeds)]
    if not jobs:
        return []
    if parallelism <= 1 or len(jobs) == 1:
        return [_run_one(j) for j in jobs]
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(min(parallelism, len(jobs))) as pool:
        return pool.map(_run_one, jobs, chunksize=1)
