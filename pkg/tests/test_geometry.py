"""Landing, Lyapunov and Green computations against closed-form values.

For c = -2 the Julia set is [-2, 2] and w + 1/w conjugates the squaring
map to it, so every ray landing point is 2 cos(2 pi a) exactly.  For c = i
the critical orbit angles have known landing points.  These closed forms
are the oracles for the cascade.
"""

from __future__ import annotations

import math
import random
from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from angletower.angles import ArcSet, RayChoice
from angletower.geometry import (
    CriticalProximity, LandingError, LandingSolver, LargeScaleParams,
    PolynomialModel, birkhoff_lyapunov, green, koebe_constant,
    landing_table_csv, large_scale_events,
)
from angletower.tower import build_tower

CHEB = PolynomialModel(2, -2)
DEND = PolynomialModel(2, 1j)


@pytest.fixture(scope="module")
def cheb_solver():
    return LandingSolver(CHEB)


@pytest.fixture(scope="module")
def dend_solver():
    return LandingSolver(DEND)


# --------------------------------------------------------------------------
# model bookkeeping


def test_critical_orbit_detection():
    assert CHEB.preperiod == 2 and CHEB.period == 1
    assert CHEB.critical_orbit == (0, -2, 2)
    assert DEND.preperiod == 2 and DEND.period == 2
    assert DEND.critical_orbit[0] == 0
    assert abs(DEND.critical_orbit[1] - 1j) < 1e-12
    assert abs(DEND.critical_orbit[2] - (-1 + 1j)) < 1e-12
    assert abs(DEND.critical_orbit[3] - (-1j)) < 1e-12


def test_escaping_parameter_rejected():
    with pytest.raises(ValueError, match="escapes"):
        PolynomialModel(2, 3.0)


def test_wandering_parameter_rejected():
    # interior of the main cardioid converges, but only within tolerance
    # after many steps; a generic outside-but-bounded point never closes up
    with pytest.raises(ValueError, match="no recurrence"):
        PolynomialModel(2, 0.25 + 0.52j, max_preperiod=60)


def test_log_deriv_values():
    assert CHEB.log_deriv(2) == pytest.approx(math.log(4), abs=1e-14)
    assert DEND.log_deriv(1j) == pytest.approx(math.log(2), abs=1e-14)
    with pytest.raises(ValueError):
        CHEB.log_deriv(0)


# --------------------------------------------------------------------------
# landing oracle


def test_landing_interval_model(cheb_solver):
    for a in [F(0), F(1, 2), F(1, 3), F(1, 5), F(2, 7), F(5, 12), F(1, 96),
              F(13, 17), F(9, 31)]:
        want = 2 * math.cos(2 * math.pi * float(a))
        got = cheb_solver.land(a)
        assert abs(got - want) < 1e-9, a
        assert abs(got.imag) < 1e-9


def test_landing_precritical_angle(cheb_solver):
    # 3/8 maps onto 3/4, which lands on the critical point; the root
    # extraction there squares the attainable precision, so only about
    # sqrt(machine eps) survives
    got = cheb_solver.land(F(3, 8))
    assert abs(got - 2 * math.cos(2 * math.pi * 3 / 8)) < 1e-7
    assert abs(cheb_solver.land(F(3, 4))) < 1e-7


def test_landing_critical_angles_dendrite(dend_solver):
    assert abs(dend_solver.land(F(1, 6)) - 1j) < 1e-9
    assert abs(dend_solver.land(F(1, 3)) - (-1 + 1j)) < 1e-9
    assert abs(dend_solver.land(F(2, 3)) - (-1j)) < 1e-9


def test_landing_beta_fixed_point(dend_solver):
    beta = dend_solver.land(F(0))
    assert abs(DEND.f(beta) - beta) < 1e-10
    assert beta.real > 1 and beta.imag < 0


def test_whole_orbit_landed_consistently(dend_solver):
    res = dend_solver.land_orbit(F(1, 12))
    # each orbit point maps to the next under f
    for k in range(len(res.points) - 1):
        assert abs(DEND.f(res.points[k]) - res.points[k + 1]) < 1e-9
    # wraparound into the cycle
    last = res.points[-1]
    assert abs(DEND.f(last) - res.point_at(len(res.points))) < 1e-9


def test_nonconvergence_reported():
    shallow = LandingSolver(CHEB, depth=5)
    with pytest.raises(LandingError):
        shallow.land(F(1, 7))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 400), st.integers(2, 401))
def test_shift_equivariance(num, den):
    a = F(num, den) % 1
    solver = LandingSolver(CHEB)
    z = solver.land(a)
    assert abs(CHEB.f(z) - solver.land(a * 2)) < 1e-8


def test_shift_equivariance_dendrite(dend_solver):
    for a in [F(1, 5), F(3, 11), F(7, 24), F(5, 48), F(10, 21)]:
        z = dend_solver.land(a)
        assert abs(DEND.f(z) - dend_solver.land(a * 2)) < 1e-8


# --------------------------------------------------------------------------
# Green function


def test_green_vanishes_on_landed_points(cheb_solver, dend_solver):
    for a in [F(1, 7), F(2, 9), F(11, 31)]:
        assert green(CHEB, cheb_solver.land(a)) < 1e-6
        assert green(DEND, dend_solver.land(a)) < 1e-6


def test_green_at_critical_point():
    assert green(CHEB, 0) < 1e-12


def test_green_large_argument():
    z = 1e6
    assert green(CHEB, z, 40) == pytest.approx(math.log(abs(z)), rel=1e-5)


def test_green_positive_off_the_set():
    # for c = -2 the point 3 maps to w + 1/w with w the golden ratio
    # squared, so G(3) = log((3 + sqrt 5)/2)
    want = math.log((3 + math.sqrt(5)) / 2)
    assert green(CHEB, 3.0, 60) == pytest.approx(want, abs=1e-10)


# --------------------------------------------------------------------------
# Birkhoff averages


def test_lyapunov_fixed_point(cheb_solver):
    lam = birkhoff_lyapunov(CHEB, cheb_solver, F(0), 100)
    assert lam == pytest.approx(math.log(4), abs=1e-12)


def test_lyapunov_period_one_interior(cheb_solver):
    # ray 1/3 lands at -1, a fixed point with |f'| = 2
    lam = birkhoff_lyapunov(CHEB, cheb_solver, F(1, 3), 200)
    assert lam == pytest.approx(math.log(2), abs=1e-10)


def test_lyapunov_two_cycle_dendrite(dend_solver):
    # ray 1/3 lands on the cycle -1+i -> -i of multiplier moduli
    # 2 sqrt 2 and 2
    lam = birkhoff_lyapunov(DEND, dend_solver, F(1, 3), 200)
    assert lam == pytest.approx(1.25 * math.log(2), abs=1e-8)


def test_lyapunov_random_angles_near_log_two(cheb_solver):
    rng = random.Random(7)
    den = 2 ** 16 - 1
    vals = []
    for _ in range(64):
        a = F(rng.randrange(1, den), den)
        vals.append(birkhoff_lyapunov(CHEB, cheb_solver, a, 512))
    mean = sum(vals) / len(vals)
    assert mean == pytest.approx(math.log(2), rel=0.1)


def test_lyapunov_shift_invariant(cheb_solver):
    a = F(9, 31)
    lam = birkhoff_lyapunov(CHEB, cheb_solver, a, 310)
    lam2 = birkhoff_lyapunov(CHEB, cheb_solver, a * 2, 310)
    assert lam == pytest.approx(lam2, abs=1e-6)


def test_lyapunov_excluded_near_critical(cheb_solver):
    # ray 1/4 lands exactly on the critical point
    with pytest.raises(CriticalProximity) as err:
        birkhoff_lyapunov(CHEB, cheb_solver, F(1, 4), 10)
    assert err.value.step == 0


def test_lyapunov_rejects_bad_n(cheb_solver):
    with pytest.raises(ValueError):
        birkhoff_lyapunov(CHEB, cheb_solver, F(1, 7), 0)


# --------------------------------------------------------------------------
# large-scale parameters and events


def test_koebe_constant_monotone():
    grid = [0.5, 1.0, 2.0, 4.0]
    vals = [koebe_constant(m) for m in grid]
    assert all(v >= 1 for v in vals)
    assert vals == sorted(vals, reverse=True)
    assert vals[-1] == pytest.approx(1.0, abs=1e-8)


def test_koebe_constant_blows_up():
    assert koebe_constant(0.05) == math.inf
    with pytest.raises(ValueError):
        koebe_constant(0)


def test_large_scale_params_validation():
    p = LargeScaleParams(0.1, 2.0)
    assert p.koebe == koebe_constant(2.0)
    with pytest.raises(ValueError):
        LargeScaleParams(-1, 2.0)
    with pytest.raises(ValueError):
        LargeScaleParams(0.1, 0.0)


@pytest.fixture(scope="module")
def event_setup():
    g = build_tower(RayChoice(2, (F(1, 2),)), 6)
    w = g.domains[2].arcset.subtract_closed_margins(
        g.domains[2].cutpoint_angles(), F(1, 64))
    return g, w


class TestLargeScaleEvents:
    def test_period_orbit_events(self, event_setup):
        g, w = event_setup
        # the trace of 1/7 sits in the level-2 domain at times 2,3 mod 3
        events = large_scale_events(F(1, 7), g, 2, w, 12)
        assert events == [2, 3, 5, 6, 8, 9, 11, 12]

    def test_margin_exclusion(self, event_setup):
        g, _ = event_setup
        empty = g.domains[2].arcset.subtract_closed_margins(
            g.domains[2].cutpoint_angles(), F(1, 4))
        assert empty.is_empty
        assert large_scale_events(F(1, 7), g, 2, empty, 12) == []

    def test_climbing_angle_has_finitely_many(self, event_setup):
        g, w = event_setup
        # 1/8 climbs out through the frontier; its only visits to the
        # level-2 domain happen at cutpoint angles, which the margin cuts
        assert large_scale_events(F(1, 8), g, 2, w, 40) == []

    def test_zero_horizon(self, event_setup):
        g, w = event_setup
        assert large_scale_events(F(1, 7), g, 2, w, 0) == []


# --------------------------------------------------------------------------
# export


def test_landing_csv(cheb_solver):
    text = landing_table_csv(CHEB, cheb_solver, [F(1, 3), F(1, 4)], 50)
    lines = text.strip().splitlines()
    assert lines[0] == "angle,re,im,lyapunov"
    row = lines[1].split(",")
    assert row[0] == "1/3"
    assert float(row[1]) == pytest.approx(-1.0, abs=1e-9)
    assert float(row[3]) == pytest.approx(math.log(2), abs=1e-9)
    assert lines[2].split(",")[3] == "excluded"
