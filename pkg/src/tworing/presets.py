"""Preset experiments and the per-scenario pipeline that turns replications
into metrics, phase paths, bifurcation rows and CSV files."""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import outputs
from .config import ScenarioConfig, dump_config
from .macro_model import TriangularFd, equilibrium_table, theoretical_nfd
from .metrics import (
    BifurcationPoint,
    EdieSeries,
    PhasePath,
    Region,
    detect_bifurcation,
    series_from_trajectory,
    smooth_path,
)
from .network import VehicleClass
from .sim_engine import ReplicationPlan, ReplicationResult, run_batch

EDIE_CADENCE = 10.0
SMOOTHING_WINDOW = 60.0
FINAL_WINDOW = 300.0
LOW_TURNING = 0.15
HIGH_TURNING = 0.5
PENETRATION_LEVELS = (0, 25, 50, 75, 100)


class PresetId(str, enum.Enum):
    SCENARIO_I_HV = "scenario_I_hv"
    SCENARIO_I_AV = "scenario_I_av"
    SCENARIO_II_HV = "scenario_II_hv"
    SCENARIO_II_AV = "scenario_II_av"
    SCENARIO_II_CAV = "scenario_II_cav"
    SCENARIO_III_HV = "scenario_III_hv"
    SCENARIO_III_AV = "scenario_III_av"
    SCENARIO_III_CAV = "scenario_III_cav"
    PENETRATION_SWEEP_UNCONNECTED = "penetration_sweep_unconnected"
    PENETRATION_SWEEP_CONNECTED = "penetration_sweep_connected"


_FLEETS = {
    "hv": dict(mix_hv=1.0, mix_connected_hv=0.0, mix_av=0.0, mix_cav=0.0),
    "av": dict(mix_hv=0.0, mix_connected_hv=0.0, mix_av=1.0, mix_cav=0.0),
    "cav": dict(mix_hv=0.0, mix_connected_hv=0.0, mix_av=0.0, mix_cav=1.0),
}
_TURNING = {"I": 0.0, "II": LOW_TURNING, "III": HIGH_TURNING}


def preset_variants(preset: PresetId, **overrides) -> list[ScenarioConfig]:
    """Configs a preset runs: one for a scenario, one per level for a sweep.

    ``overrides`` replace config fields in every variant (seed, replication
    count and the like).
    """
    preset = PresetId(preset)
    name = preset.value
    if name.startswith("scenario_"):
        _, level, fleet = name.split("_")
        return [ScenarioConfig(turn_probability=_TURNING[level], name=name, **{**_FLEETS[fleet], **overrides})]
    human_key = "mix_connected_hv" if preset is PresetId.PENETRATION_SWEEP_CONNECTED else "mix_hv"
    out = []
    for pct in PENETRATION_LEVELS:
        mix = dict(mix_hv=0.0, mix_connected_hv=0.0, mix_av=0.0, mix_cav=pct / 100.0)
        mix[human_key] = 1.0 - pct / 100.0
        out.append(ScenarioConfig(turn_probability=HIGH_TURNING, name=f"{name}_cav{pct:03d}",
                                  **{**mix, **overrides}))
    return out


def fleet_fd(cfg: ScenarioConfig) -> TriangularFd:
    """Triangular FD of the configured fleet.

    Critical and jam spacings are averaged over the mix, so a mixed fleet's
    densities are reciprocals of mean spacings.
    """
    v = cfg.speed_limit_mps
    L = cfg.vehicle_length_m
    crit_spacing = jam_spacing = 0.0
    for cls, share in cfg.mix.items():
        if share <= 0:
            continue
        p = cfg.params_for(cls).limited(v)
        crit_spacing += share * (p.desired_speed * p.safe_headway + p.jam_gap + L)
        jam_spacing += share * (p.jam_gap + L)
    return TriangularFd(v, 1.0 / crit_spacing, 1.0 / jam_spacing)


@dataclass
class ReplicationSummary:
    """What one replication leaves behind once its trajectories are written."""

    seed: int
    series: EdieSeries
    counters: dict

    @property
    def path(self) -> PhasePath:
        return PhasePath.from_series(self.series)

    @property
    def smoothed(self) -> PhasePath:
        return smooth_path(self.path, SMOOTHING_WINDOW)

    @property
    def bifurcation(self) -> Optional[BifurcationPoint]:
        return detect_bifurcation(self.smoothed)

    @property
    def max_network_flow(self) -> float:
        return float(self.series.flow[Region.NETWORK].max())

    def final_densities(self, window: float = FINAL_WINDOW) -> tuple[float, float]:
        n = max(1, int(round(window / self.series.cadence)))
        return (float(self.series.density[Region.RING1][-n:].mean()),
                float(self.series.density[Region.RING2][-n:].mean()))


def summarize(result: ReplicationResult, cfg: ScenarioConfig, out_dir: Optional[str] = None,
              stem: str = "", replication: int = 0, stride: int = 10) -> ReplicationSummary:
    """Reduce a replication to its Edie series, optionally writing its
    trajectory (every ``stride``-th step) and event log first."""
    traj = result.trajectory
    if out_dir is not None:
        keep = traj.step % stride == 0
        t = traj.subset(keep)
        labels = np.array([VehicleClass(c).label for c in range(4)])
        outputs.write_columns(
            Path(out_dir) / f"trajectories_{stem}_rep{replication}.csv", "trajectory", outputs.TRAJECTORY_COLUMNS,
            (t.time, t.vehicle_id, labels[t.cls], t.link, t.position, t.speed, t.accel))
        outputs.write_csv(Path(out_dir) / f"events_{stem}_rep{replication}.csv", "events", outputs.EVENT_COLUMNS,
                          ((e.time, e.vehicle_id, e.kind, e.detail) for e in result.events))
    series = series_from_trajectory(traj, result.link_lengths, cfg.horizon_s, EDIE_CADENCE)
    return ReplicationSummary(result.seed, series, result.counters)


def _reduce(result, cfg, out_dir, stem, stride, seeds):
    return summarize(result, cfg, out_dir, stem, seeds.index(result.seed), stride)


@dataclass
class ScenarioOutcome:
    config: ScenarioConfig
    summaries: list
    failures: list = field(default_factory=list)

    @property
    def fd(self) -> TriangularFd:
        return fleet_fd(self.config)

    @property
    def bifurcations(self) -> list:
        return [s.bifurcation for s in self.summaries if s is not None]


def run_scenario(cfg: ScenarioConfig, out_dir: Optional[str] = None, parallelism: int = 1,
                 stride: int = 10) -> ScenarioOutcome:
    """Run all replications of ``cfg`` and write its CSV set to ``out_dir``."""
    plan = ReplicationPlan(cfg.replications, cfg.base_seed)
    seeds = list(plan.seeds)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    reducer = functools.partial(_reduce, cfg=cfg, out_dir=out_dir, stem=cfg.name, stride=stride, seeds=seeds)
    items = run_batch(cfg, plan, parallelism, reducer)
    outcome = ScenarioOutcome(cfg, [it.output if it.ok else None for it in items],
                              [(it.replication, it.error) for it in items if not it.ok])
    if out_dir is not None:
        write_scenario_files(outcome, Path(out_dir))
    return outcome


def bifurcation_rows(outcome: ScenarioOutcome) -> list[tuple]:
    """One row per replication. Without turning the rings never exchange
    vehicles, so every row is flagged as undetected."""
    turning = outcome.config.turn_probability > 0
    jam = outcome.fd.jam_density
    rows = []
    for i, s in enumerate(outcome.summaries):
        bp = s.bifurcation if s is not None and turning else None
        if bp is None:
            rows.append((outcome.config.name, i, False, "", math.nan, math.nan, math.nan, math.nan))
        else:
            rows.append((outcome.config.name, i, True, bp.index, bp.k1, bp.k2, bp.density, bp.density / jam))
    return rows


def write_scenario_files(outcome: ScenarioOutcome, out_dir: Path) -> None:
    cfg, stem = outcome.config, outcome.config.name
    (out_dir / f"config_{stem}.yaml").write_text(dump_config(cfg))
    metric_rows, phase_rows = [], []
    for i, s in enumerate(outcome.summaries):
        if s is None:
            continue
        for r in (Region.RING1, Region.RING2, Region.NETWORK):
            for t, k, q in zip(s.series.interval_start, s.series.density[r], s.series.flow[r]):
                metric_rows.append((i, t, r.value, k, q))
        raw, sm = s.path, s.smoothed
        for j in range(len(raw)):
            phase_rows.append((i, raw.time[j], raw.k1[j], raw.k2[j], sm.k1[j], sm.k2[j]))
    metric_rows.sort(key=lambda row: (row[0], row[1], row[2]))
    outputs.write_csv(out_dir / f"metrics_{stem}.csv", "metrics", outputs.METRICS_COLUMNS, metric_rows)
    outputs.write_csv(out_dir / f"phase_path_{stem}.csv", "phase_path", outputs.PHASE_COLUMNS, phase_rows)
    outputs.write_csv(out_dir / f"bifurcation_{stem}.csv", "bifurcation", outputs.BIFURCATION_COLUMNS,
                      bifurcation_rows(outcome))
    write_theory_files(cfg, out_dir, stem)


def write_theory_files(cfg: ScenarioConfig, out_dir: Path, stem: str) -> None:
    """Theoretical FD, equilibria and NFD of the configured fleet."""
    fd = fleet_fd(cfg)
    grid = np.linspace(0.0, fd.jam_density, 201)
    outputs.write_csv(out_dir / f"theory_fd_{stem}.csv", "theory_fd",
                      ("density_veh_per_m", "flow_veh_per_s", "critical_density", "jam_density", "wave_speed_mps"),
                      ((k, float(fd.flow(k)), fd.critical_density, fd.jam_density, fd.wave_speed) for k in grid))
    eq = equilibrium_table(fd, np.linspace(0.0, fd.jam_density, 101))
    outputs.write_csv(out_dir / f"theory_equilibria_{stem}.csv", "theory_equilibria",
                      ("K", "k1", "k2", "stability", "branch"),
                      ((r["K"], r["k1"], r["k2"], r["stability"], r["branch"]) for r in eq))
    nfd_rows = []
    for K, qs in theoretical_nfd(fd, np.linspace(0.0, fd.jam_density, 101)):
        for q in qs:
            nfd_rows.append((K, q))
    outputs.write_csv(out_dir / f"theory_nfd_{stem}.csv", "theory_nfd", ("K", "Q"), nfd_rows)


def run_preset(preset: PresetId, out_dir, parallelism: int = 1, stride: int = 10,
               **overrides) -> list[ScenarioOutcome]:
    """Run every variant of a preset into ``out_dir``."""
    out = Path(out_dir)
    return [run_scenario(cfg, str(out), parallelism, stride) for cfg in preset_variants(preset, **overrides)]


# -- comparison ---------------------------------------------------------------

def compare_runs(paths) -> list[tuple]:
    """Per-file, per-scenario statistics of bifurcation summary files.

    Rows follow the input order, scenarios sorted within a file. Scenarios
    with no detection report ``nan`` statistics rather than zero.
    ``delta_mean_K`` is each row's mean K minus that of the first row.

    Raises:
        SchemaError: if any file has a different schema version.
        ValueError: if fewer than two files are given.
    """
    if len(paths) < 2:
        raise ValueError("compare needs at least two summary files")

    def stat(x, f):
        return float(f(x)) if x.size else math.nan

    def sd(a):
        return np.std(a, ddof=1) if a.size > 1 else 0.0

    table = []
    for p in paths:
        by_scenario: dict[str, list[dict]] = {}
        for row in outputs.read_csv(p, "bifurcation"):
            by_scenario.setdefault(row["scenario"], []).append(row)
        for name in sorted(by_scenario):
            rows = by_scenario[name]
            hit = [r for r in rows if r["detected"] == "1"]
            K = np.array([float(r["K"]) for r in hit])
            ratio = np.array([float(r["ratio_to_jam"]) for r in hit])
            dist = np.array([math.hypot(float(r["k1"]), float(r["k2"])) for r in hit])
            table.append([Path(p).name, name, len(rows), len(hit), stat(K, np.mean), stat(K, sd),
                          stat(ratio, np.mean), stat(ratio, sd), stat(dist, np.mean)])
    ref = table[0][4] if table else math.nan
    return [tuple(r + [r[4] - ref]) for r in table]
