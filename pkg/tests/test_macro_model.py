import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tworing.macro_model import (
    Branch,
    Stability,
    TriangularFd,
    TwoBinParams,
    TwoBinState,
    classify_stability,
    enumerate_equilibria,
    equilibrium_table,
    fd_from_driver_params,
    flow,
    integrate_two_bin,
    network_flow,
    perturbation_outcome,
    phase_diagram_branches,
    theoretical_nfd,
    two_bin_derivatives,
)

V = 30 / 3.6
HV_FD = fd_from_driver_params(1.5, 2.0, 5.0, V)
AV_FD = fd_from_driver_params(0.5, 0.5, 5.0, V)
PARAMS = TwoBinParams(0.15, 2 * math.pi * 50)


# -- triangular FD -------------------------------------------------------------

def test_flow_corners():
    fd = HV_FD
    assert flow(fd, 0.0) == 0.0
    assert flow(fd, fd.jam_density) == pytest.approx(0.0, abs=1e-15)
    assert flow(fd, fd.critical_density) == pytest.approx(fd.capacity, rel=1e-15)
    assert flow(fd, fd.critical_density / 2) == pytest.approx(fd.capacity / 2, rel=1e-15)


def test_flow_rejects_out_of_range():
    with pytest.raises(ValueError):
        flow(HV_FD, -1e-3)
    with pytest.raises(ValueError):
        flow(HV_FD, HV_FD.jam_density * 1.01)


def test_flow_is_vectorised():
    k = np.linspace(0, HV_FD.jam_density, 7)
    assert np.allclose(flow(HV_FD, k), [flow(HV_FD, float(x)) for x in k])


def test_fd_from_table_parameters():
    assert HV_FD.jam_density == pytest.approx(1 / 7, rel=1e-15)
    assert AV_FD.jam_density == pytest.approx(1 / 5.5, rel=1e-15)
    # hand-derived: spacing at free speed is v*T + s0 + L
    assert HV_FD.critical_density == pytest.approx(1 / (V * 1.5 + 7), rel=1e-15)
    assert AV_FD.critical_density == pytest.approx(1 / (V * 0.5 + 5.5), rel=1e-15)
    # congested slope equals jam spacing over headway
    assert HV_FD.wave_speed == pytest.approx(7 / 1.5, rel=1e-12)
    assert AV_FD.wave_speed == pytest.approx(5.5 / 0.5, rel=1e-12)


def test_capacity_ratio_close_to_two():
    # closed form: v / (v T + s0 + L)
    ratio = (V / (V * 0.5 + 5.5)) / (V / (V * 1.5 + 7.0))
    assert AV_FD.capacity / HV_FD.capacity == pytest.approx(ratio, rel=1e-14)
    assert 1.7 <= ratio <= 2.3


def test_vanishing_headway_is_degenerate():
    with pytest.raises(ValueError):
        fd_from_driver_params(1e-300 * 0, 2.0, 5.0, V)
    fd = fd_from_driver_params(1e-12, 2.0, 5.0, V)
    assert fd.critical_density == pytest.approx(fd.jam_density, rel=1e-9)


def test_invalid_fd():
    with pytest.raises(ValueError):
        TriangularFd(V, 0.2, 0.1)
    with pytest.raises(ValueError):
        TriangularFd(0.0, 0.05, 0.1)


# -- two-bin dynamics ----------------------------------------------------------

def test_symmetric_state_has_zero_derivative():
    assert two_bin_derivatives(TwoBinState(0.08, 0.08), HV_FD, PARAMS) == (0.0, 0.0)


def test_gridlocked_bin_freezes_system():
    assert two_bin_derivatives(TwoBinState(HV_FD.jam_density, 0.01), HV_FD, PARAMS) == (0.0, 0.0)


def test_derivative_signs_free_versus_congested():
    k1, k2 = 0.04, 0.12  # q(k1) = 0.333, q(k2) = 0.107
    q1, q2 = V * k1, (7 / 1.5) * (1 / 7 - k2)
    assert q2 < q1
    d1, d2 = two_bin_derivatives(TwoBinState(k1, k2), HV_FD, PARAMS)
    assert d1 < 0 < d2
    assert d1 == pytest.approx(PARAMS.turn_probability / PARAMS.ring_length * (q2 - q1), rel=1e-12)


def test_constant_trajectory_without_perturbation():
    path = integrate_two_bin(TwoBinState(0.07, 0.07), HV_FD, PARAMS, dt=1.0, horizon=100.0)
    assert all(s.k1 == 0.07 and s.k2 == 0.07 for s in path)
    assert len(path) == 101


def test_perturbation_above_critical_diverges():
    K = 0.07
    path = integrate_two_bin(TwoBinState(K, K), HV_FD, PARAMS, dt=0.5, horizon=20000.0,
                             perturbation=(1e-4, -1e-4))
    end = path[-1]
    assert abs(end.k1 - end.k2) > 0.05
    stable = [e for e in enumerate_equilibria(HV_FD, K) if e.branch is Branch.ASYMMETRIC]
    assert min(math.hypot(end.k1 - e.k1, end.k2 - e.k2) for e in stable) < 1e-6


def test_perturbation_below_critical_returns():
    K = 0.03
    path = integrate_two_bin(TwoBinState(K, K), HV_FD, PARAMS, dt=0.5, horizon=5000.0,
                             perturbation=(1e-3, -1e-3))
    assert abs(path[-1].k1 - path[-1].k2) < 1e-8


@given(st.floats(0.0, 0.14), st.floats(0.0, 0.14), st.floats(0.05, 1.0))
@settings(max_examples=60, deadline=None)
def test_mass_is_conserved(k1, k2, p):
    params = TwoBinParams(p, 314.0)
    path = integrate_two_bin(TwoBinState(k1, k2), HV_FD, params, dt=1.0, horizon=200.0)
    for s in path:
        assert s.k1 + s.k2 == pytest.approx(k1 + k2, abs=1e-12)
        assert -1e-12 <= s.k1 <= HV_FD.jam_density + 1e-12


# -- equilibria ----------------------------------------------------------------

def test_unique_symmetric_equilibrium_below_critical():
    eqs = enumerate_equilibria(HV_FD, 0.03)
    assert len(eqs) == 1
    assert (eqs[0].k1, eqs[0].k2, eqs[0].stability) == (0.03, 0.03, Stability.STABLE)


def test_three_equilibria_between_critical_and_half_jam():
    K = 0.06
    eqs = enumerate_equilibria(HV_FD, K)
    sym = [e for e in eqs if e.branch is Branch.SYMMETRIC]
    asym = [e for e in eqs if e.branch is Branch.ASYMMETRIC]
    assert len(sym) == 1 and sym[0].stability is Stability.UNSTABLE
    assert len(asym) == 2 and all(e.stability is Stability.STABLE for e in asym)
    a, b = asym
    assert (a.k1, a.k2) == pytest.approx((b.k2, b.k1), abs=1e-15)
    # closed form of the free-branch member
    v, w, kj = HV_FD.free_flow_speed, HV_FD.wave_speed, HV_FD.jam_density
    k_free = w * (kj - 2 * K) / (v - w)
    assert min(a.k1, a.k2) == pytest.approx(k_free, abs=1e-12)
    assert flow(HV_FD, a.k1) == pytest.approx(flow(HV_FD, a.k2), abs=1e-12)


def test_half_jam_density_reaches_gridlock_corner():
    K = HV_FD.jam_density / 2
    eqs = enumerate_equilibria(HV_FD, K)
    corners = {(round(e.k1, 12), round(e.k2, 12)) for e in eqs if e.branch is Branch.GRIDLOCK}
    kj = round(HV_FD.jam_density, 12)
    assert corners == {(kj, 0.0), (0.0, kj)}
    stable = [e for e in eqs if e.stability is Stability.STABLE]
    assert all(network_flow(HV_FD, e) == 0.0 for e in stable)


def test_equilibria_rejects_out_of_range():
    with pytest.raises(ValueError):
        enumerate_equilibria(HV_FD, -0.01)


def test_wave_faster_than_free_flow_flips_mixed_pairs():
    # the automated fleet's triangle has w > v: mixed pairs only exist for
    # k_j/2 < K < k_cr, and they are unstable
    fd = AV_FD
    assert fd.wave_speed > fd.free_flow_speed
    assert fd.critical_density > fd.jam_density / 2
    for K in np.linspace(0.0, fd.jam_density, 51):
        for e in enumerate_equilibria(fd, float(K)):
            if e.branch is Branch.ASYMMETRIC:
                assert fd.jam_density / 2 < K < fd.critical_density
                assert e.stability is Stability.UNSTABLE


@given(st.floats(0.0, 1.0))
@settings(max_examples=80, deadline=None)
def test_equilibria_are_closed_under_swap(frac):
    K = frac * HV_FD.jam_density
    eqs = enumerate_equilibria(HV_FD, K)
    pts = {(round(e.k1, 12), round(e.k2, 12)) for e in eqs}
    assert pts == {(b, a) for a, b in pts}
    for e in eqs:
        assert e.k1 + e.k2 == pytest.approx(2 * K, abs=1e-12)


def test_classify_symmetric():
    assert classify_stability(HV_FD, 0.02, 0.02) is Stability.STABLE
    assert classify_stability(HV_FD, 0.09, 0.09) is Stability.UNSTABLE


def test_classify_asymmetric_depends_on_slope_sum():
    kj = HV_FD.jam_density
    K = 0.06
    k_free = HV_FD.wave_speed * (kj - 2 * K) / (HV_FD.free_flow_speed - HV_FD.wave_speed)
    assert HV_FD.free_flow_speed > HV_FD.wave_speed
    assert classify_stability(HV_FD, k_free, 2 * K - k_free) is Stability.STABLE


def test_classify_rejects_non_equilibrium():
    with pytest.raises(ValueError):
        classify_stability(HV_FD, 0.01, 0.03)


# -- network curves ------------------------------------------------------------

def test_nfd_landmarks():
    curve = dict(theoretical_nfd(HV_FD, [0.0, HV_FD.critical_density, HV_FD.jam_density / 2]))
    assert curve[0.0] == [0.0]
    assert max(curve[HV_FD.critical_density]) == pytest.approx(HV_FD.capacity, rel=1e-12)
    assert curve[HV_FD.jam_density / 2] == [0.0]


def test_nfd_bifurcates_above_critical():
    (K, qs), = theoretical_nfd(HV_FD, [0.06])
    assert len(qs) == 1  # both asymmetric states carry the same flow
    assert qs[0] < flow(HV_FD, HV_FD.critical_density)


def test_phase_branches_shapes():
    br = phase_diagram_branches(HV_FD, 41)
    assert all(a == b for a, b in br["symmetric_stable"])
    assert max(a for a, _ in br["symmetric_stable"]) == pytest.approx(HV_FD.critical_density)
    assert all(a < b for a, b in br["asymmetric_stable"])


def test_perturbation_oracle_simple_cases():
    for K, expected in ((0.03, Stability.STABLE), (0.07, Stability.UNSTABLE)):
        eq = next(e for e in enumerate_equilibria(HV_FD, K) if e.branch is Branch.SYMMETRIC)
        assert perturbation_outcome(HV_FD, eq, PARAMS) is expected


def test_equilibrium_table_rows():
    rows = equilibrium_table(HV_FD, [0.03, 0.06])
    assert [r["K"] for r in rows].count(0.03) == 1
    assert [r["K"] for r in rows].count(0.06) == 3
    assert {r["stability"] for r in rows} == {"Stable", "Unstable"}
