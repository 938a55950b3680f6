"""Two-bin macroscopic model of the two-ring system.

Each ring is treated as a reservoir obeying a common triangular fundamental
diagram. Vehicles leave a ring towards the other at ``p_turn * q(k)``, so the
density difference evolves as a mass-conserving pair of ODEs. The module
enumerates the equilibria of that system in closed form, classifies their
stability and builds the theoretical network fundamental diagram.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

# |q(k1) - q(k2)| accepted for a closed-form root.
EQUILIBRIUM_TOL = 1e-9
# A bin within this distance of the jam density counts as gridlocked.
GRIDLOCK_TOL = 1e-9


class Stability(str, enum.Enum):
    STABLE = "Stable"
    UNSTABLE = "Unstable"


class Branch(str, enum.Enum):
    SYMMETRIC = "Symmetric"
    ASYMMETRIC = "Asymmetric"
    GRIDLOCK = "Gridlock"


@dataclass(frozen=True)
class TriangularFd:
    """Triangular flow-density relation.

    Units are SI throughout: densities in veh/m, flows in veh/s, speeds in m/s.
    ``wave_speed`` is the magnitude of the congested-branch slope.
    """

    free_flow_speed: float
    critical_density: float
    jam_density: float

    def __post_init__(self):
        if not self.free_flow_speed > 0:
            raise ValueError("free_flow_speed must be positive")
        if not 0 < self.critical_density < self.jam_density:
            raise ValueError("need 0 < critical_density < jam_density")

    @property
    def capacity(self) -> float:
        return self.free_flow_speed * self.critical_density

    @property
    def wave_speed(self) -> float:
        return self.capacity / (self.jam_density - self.critical_density)

    @classmethod
    def from_capacity(cls, free_flow_speed: float, capacity: float, jam_density: float) -> "TriangularFd":
        """Build the triangle whose apex sits at ``capacity``."""
        return cls(free_flow_speed, capacity / free_flow_speed, jam_density)

    def flow(self, k):
        return flow(self, k)

    def slopes(self, k: float) -> tuple[float, float]:
        """Left and right derivatives of q at ``k``."""
        k_cr = self.critical_density
        left = self.free_flow_speed if k <= k_cr else -self.wave_speed
        right = self.free_flow_speed if k < k_cr else -self.wave_speed
        return left, right


@dataclass(frozen=True)
class TwoBinState:
    k1: float
    k2: float
    time: float = 0.0


@dataclass(frozen=True)
class TwoBinParams:
    turn_probability: float
    ring_length: float

    def __post_init__(self):
        if not 0.0 <= self.turn_probability <= 1.0:
            raise ValueError("turn_probability must lie in [0, 1]")
        if not self.ring_length > 0:
            raise ValueError("ring_length must be positive")


@dataclass(frozen=True)
class Equilibrium:
    k1: float
    k2: float
    stability: Stability
    branch: Branch

    @property
    def average_density(self) -> float:
        return 0.5 * (self.k1 + self.k2)


def flow(fd: TriangularFd, k):
    """Flow on the triangular FD; accepts scalars or arrays.

    Raises:
        ValueError: if any density lies outside ``[0, jam_density]``.
    """
    k_arr = np.asarray(k, dtype=float)
    if np.any(k_arr < 0) or np.any(k_arr > fd.jam_density):
        raise ValueError(f"density outside [0, {fd.jam_density}]: {k}")
    q = np.where(
        k_arr <= fd.critical_density,
        fd.free_flow_speed * k_arr,
        fd.wave_speed * (fd.jam_density - k_arr),
    )
    if q.ndim == 0:
        return float(q)
    return q


def fd_from_driver_params(headway: float, jam_gap: float, vehicle_length: float, free_speed: float) -> TriangularFd:
    """Triangular FD implied by car-following parameters.

    Jam density is the inverse of the jam spacing (gap plus vehicle length);
    critical density is the inverse of the spacing at free speed.
    """
    for name, value in (("headway", headway), ("jam_gap", jam_gap),
                        ("vehicle_length", vehicle_length), ("free_speed", free_speed)):
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value}")
    jam_spacing = jam_gap + vehicle_length
    return TriangularFd(
        free_flow_speed=free_speed,
        critical_density=1.0 / (free_speed * headway + jam_spacing),
        jam_density=1.0 / jam_spacing,
    )


def _gridlocked(fd: TriangularFd, k: float) -> bool:
    return k >= fd.jam_density - GRIDLOCK_TOL


def two_bin_derivatives(state: TwoBinState, fd: TriangularFd, params: TwoBinParams) -> tuple[float, float]:
    if _gridlocked(fd, state.k1) or _gridlocked(fd, state.k2):
        return 0.0, 0.0
    k1 = min(max(state.k1, 0.0), fd.jam_density)
    k2 = min(max(state.k2, 0.0), fd.jam_density)
    dk1 = params.turn_probability / params.ring_length * (flow(fd, k2) - flow(fd, k1))
    return dk1, -dk1


def integrate_two_bin(
    initial: TwoBinState,
    fd: TriangularFd,
    params: TwoBinParams,
    dt: float = 0.1,
    horizon: float = 1800.0,
    perturbation: Optional[tuple[float, float]] = None,
) -> list[TwoBinState]:
    """Explicit Euler integration of the two-bin system.

    Once either bin reaches jam density the state is frozen for the rest of
    the horizon. The perturbation, if given, is added to the initial state.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if horizon < dt:
        raise ValueError("horizon must be at least dt")
    k1, k2 = initial.k1, initial.k2
    if perturbation is not None:
        k1 += perturbation[0]
        k2 += perturbation[1]
    n_steps = int(round(horizon / dt))
    path = [TwoBinState(k1, k2, initial.time)]
    frozen = False
    for n in range(1, n_steps + 1):
        if not frozen:
            state = path[-1]
            if _gridlocked(fd, state.k1) or _gridlocked(fd, state.k2):
                frozen = True
            else:
                dk1, dk2 = two_bin_derivatives(state, fd, params)
                k1 = state.k1 + dt * dk1
                k2 = state.k2 + dt * dk2
                # a step may overshoot jam density; clamp without losing mass
                if k1 > fd.jam_density:
                    k1, k2 = fd.jam_density, k2 + (k1 - fd.jam_density)
                elif k2 > fd.jam_density:
                    k1, k2 = k1 + (k2 - fd.jam_density), fd.jam_density
        path.append(TwoBinState(k1, k2, initial.time + n * dt))
    return path


def classify_stability(fd: TriangularFd, k1: float, k2: float) -> Stability:
    """Linear stability of an equilibrium along the mass-conserving direction.

    Perturbing ``(k1, k2)`` by ``(+d, -d)`` yields
    ``d'(d)/dt = -(p/l) * (q'(k1) + q'(k2)) * d``, so the state is stable when
    the slope sum is positive. At the FD kink both one-sided combinations
    must be positive. Gridlocked states are frozen by construction and are
    stable unless the empty partner bin would pull vehicles out faster than
    the jammed bin releases them.

    Raises:
        ValueError: if ``(k1, k2)`` is not an equilibrium.
    """
    gl1, gl2 = _gridlocked(fd, k1), _gridlocked(fd, k2)
    if gl1 or gl2:
        if gl1 and gl2:
            return Stability.STABLE
        other = k2 if gl1 else k1
        if other > GRIDLOCK_TOL:
            return Stability.STABLE
        return Stability.STABLE if fd.free_flow_speed > fd.wave_speed else Stability.UNSTABLE
    if abs(flow(fd, k1) - flow(fd, k2)) > EQUILIBRIUM_TOL:
        raise ValueError(f"({k1}, {k2}) is not an equilibrium")
    l1, r1 = fd.slopes(k1)
    l2, r2 = fd.slopes(k2)
    # (+d on k1, -d on k2) and the opposite direction
    s_plus = r1 + l2
    s_minus = l1 + r2
    return Stability.STABLE if min(s_plus, s_minus) > 0 else Stability.UNSTABLE


def _mixed_root(fd: TriangularFd, total: float) -> Optional[float]:
    """Free-branch density of a (free, congested) pair summing to ``total``."""
    v, w, kj, kcr = fd.free_flow_speed, fd.wave_speed, fd.jam_density, fd.critical_density
    if math.isclose(v, w, rel_tol=1e-12):
        return None
    k_free = w * (kj - total) / (v - w)
    k_cong = total - k_free
    if not (-1e-12 <= k_free <= kcr + 1e-12 and kcr - 1e-12 <= k_cong <= kj + 1e-12):
        return None
    return min(max(k_free, 0.0), kcr) + 0.0


def enumerate_equilibria(fd: TriangularFd, K: float) -> list[Equilibrium]:
    """All equilibria with average density ``K``, tagged with stability.

    The symmetric state ``(K, K)`` is always present (tagged Gridlock at
    ``K == k_j``). A (free, congested) pair with equal flows exists when the
    linear flow-matching condition has a root on both branches; gridlock
    states ``(k_j, 2K - k_j)`` and their mirror exist for ``K >= k_j / 2``.
    The list is closed under swapping ``k1`` and ``k2``.
    """
    kj = fd.jam_density
    if not 0.0 <= K <= kj:
        raise ValueError(f"average density {K} outside [0, {kj}]")
    out: list[Equilibrium] = []
    seen: set[tuple[float, float]] = set()

    def add(k1: float, k2: float, branch: Branch) -> None:
        key = (round(k1, 15), round(k2, 15))
        if key in seen:
            return
        seen.add(key)
        out.append(Equilibrium(k1, k2, classify_stability(fd, k1, k2), branch))

    if _gridlocked(fd, K):
        add(kj, kj, Branch.GRIDLOCK)
        return out
    add(K, K, Branch.SYMMETRIC)

    total = 2.0 * K
    k_free = _mixed_root(fd, total)
    if k_free is not None:
        k_cong = total - k_free
        if abs(k_cong - k_free) > 1e-12:
            branch = Branch.GRIDLOCK if _gridlocked(fd, k_cong) else Branch.ASYMMETRIC
            add(k_free, k_cong, branch)
            add(k_cong, k_free, branch)

    if total >= kj - GRIDLOCK_TOL:
        other = max(total - kj, 0.0) + 0.0
        add(kj, other, Branch.GRIDLOCK)
        add(other, kj, Branch.GRIDLOCK)
    return out


def network_flow(fd: TriangularFd, eq: Equilibrium) -> float:
    """Network-average flow of an equilibrium; gridlock states carry none."""
    if eq.branch is Branch.GRIDLOCK:
        return 0.0
    return 0.5 * (flow(fd, eq.k1) + flow(fd, eq.k2))


def theoretical_nfd(fd: TriangularFd, densities: Iterable[float]) -> list[tuple[float, list[float]]]:
    """Flows of all stable equilibria for each network density."""
    curve = []
    for K in densities:
        qs = sorted({round(network_flow(fd, eq), 15)
                     for eq in enumerate_equilibria(fd, float(K))
                     if eq.stability is Stability.STABLE})
        curve.append((float(K), qs))
    return curve


def phase_diagram_branches(fd: TriangularFd, n_points: int = 101) -> dict[str, list[tuple[float, float]]]:
    """Polylines of the equilibrium sets in the (k1, k2) plane."""
    kj, kcr = fd.jam_density, fd.critical_density
    grid = np.linspace(0.0, kj, n_points)
    branches: dict[str, list[tuple[float, float]]] = {
        "symmetric_stable": [], "symmetric_unstable": [],
        "asymmetric_stable": [], "asymmetric_unstable": [],
    }
    for K in grid:
        for eq in enumerate_equilibria(fd, float(K)):
            if eq.branch is Branch.SYMMETRIC:
                name = "symmetric_" + eq.stability.value.lower()
            elif eq.branch is Branch.ASYMMETRIC and eq.k1 < eq.k2:
                name = "asymmetric_" + eq.stability.value.lower()
            else:
                continue
            branches[name].append((eq.k1, eq.k2))
    # exact corner points of the piecewise-linear branches
    branches["symmetric_stable"].append((kcr, kcr))
    branches["symmetric_stable"].sort()
    return branches


def perturbation_outcome(
    fd: TriangularFd,
    eq: Equilibrium,
    params: TwoBinParams,
    eps: float = 1e-4,
    dt: float = 0.5,
    horizon: float = 4000.0,
) -> Stability:
    """Numerical stability verdict by integrating small perturbations.

    Both mass-conserving directions that stay inside ``[0, k_j]^2`` are
    tried; the equilibrium is stable only if every trajectory comes back to
    within ``eps / 10`` of it.
    """
    kj = fd.jam_density
    returned = []
    for sign in (1.0, -1.0):
        d1, d2 = sign * eps, -sign * eps
        if not (0.0 <= eq.k1 + d1 <= kj and 0.0 <= eq.k2 + d2 <= kj):
            continue
        if _gridlocked(fd, eq.k1 + d1) or _gridlocked(fd, eq.k2 + d2):
            continue
        end = integrate_two_bin(TwoBinState(eq.k1, eq.k2), fd, params, dt, horizon, (d1, d2))[-1]
        dist = math.hypot(end.k1 - eq.k1, end.k2 - eq.k2)
        returned.append(dist < eps / 10)
    if not returned:
        return Stability.STABLE
    return Stability.STABLE if all(returned) else Stability.UNSTABLE


def equilibrium_table(fd: TriangularFd, densities: Sequence[float]) -> list[dict]:
    rows = []
    for K in densities:
        for eq in enumerate_equilibria(fd, float(K)):
            rows.append({"K": float(K), "k1": eq.k1, "k2": eq.k2,
                         "stability": eq.stability.value, "branch": eq.branch.value})
    return rows
