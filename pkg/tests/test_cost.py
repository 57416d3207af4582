import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfg_dtue import (CharacteristicDistance, Grid, SchedulingPrefs, SpeedFunction, classify_foc,
                      optimality_band, trip_cost)
from mfg_dtue.bathtub import free_flow_zeta
from mfg_dtue.equilibrium import best_response
from mfg_dtue.errors import ValidationError

PREFS = SchedulingPrefs(1.0, 0.5, 2.0)


def constant_zeta(speed, n_t=400, dt=1.0):
    return free_flow_zeta(SpeedFunction("quadratic", speed, speed), Grid(dt, speed * dt, n_t * dt))


def test_cost_examples():
    z = constant_zeta(10.0)
    # length bin 2 of 40 m has midpoint 100 m: a 10 s trip
    assert trip_cost(0, 2, 15, z, PREFS, 40.0) == 12.5  # 5 s early
    assert trip_cost(0, 2, 10, z, PREFS, 40.0) == 10.0  # on time
    k5 = SchedulingPrefs.from_k(5)
    assert k5.beta == pytest.approx(0.4 + 1 / 9) and k5.gamma == pytest.approx(1.5 + 5 / 9)
    # midpoint 1000 m: 100 s, arriving 20 s late
    assert trip_cost(0, 2, 80, z, k5, 400.0) == pytest.approx(100 + (1.5 + 5 / 9) * 20, rel=1e-12)
    assert trip_cost(0, 2, 80, z, k5, 400.0) == pytest.approx(141.111, abs=1e-3)


def test_band_examples():
    assert optimality_band(PREFS) == pytest.approx((1 / 3, 2.0))
    assert optimality_band(SchedulingPrefs.from_k(5)) == pytest.approx((0.32727, 2.04545), abs=1e-5)
    lo, hi = optimality_band(SchedulingPrefs(1.0, 1e-9, 1e-9))
    assert lo == pytest.approx(1.0) and hi == pytest.approx(1.0)


def test_prefs_validation():
    for args in ((1.0, 1.0, 2.0), (1.0, 0.0, 2.0), (1.0, 0.5, 0.0)):
        with pytest.raises(ValidationError):
            SchedulingPrefs(*args)
    with pytest.raises(ValidationError):
        SchedulingPrefs(1.0, 0.5, 2.0, penalty="quadratic")


def test_constant_speed_on_time_is_optimal():
    z = constant_zeta(10.0)
    res = classify_foc(z, 52, 3, 55, PREFS, dx=10.0)  # 35 m in 3.5 s: arrives in bin 55
    assert res.kind == "ontime_optimal" and res.ratio == 1.0 and res.timing == "ontime"


def test_free_flow_departure_into_jam_is_violating():
    speeds = np.r_[np.full(10, 10.0), np.full(300, 1.0)]
    z = CharacteristicDistance(np.r_[0.0, np.cumsum(speeds)], 1.0, speeds)
    # 200 m from bin 2: 80 m at 10 m/s, then 120 m at 1 m/s, arriving at 130 s
    res = classify_foc(z, 2, 4, 20, PREFS, dx=400.0 / 9.0)
    assert res.timing == "late"
    assert res.kind == "violating" and res.ratio == 10.0 and res.residual > 0


def test_kink_between_early_and_late_uses_ontime_band():
    # 135 m trips at 9 m/s then 6 m/s: leaving in bin 10 arrives at 27.5 s,
    # leaving in bin 11 arrives at 29 s, so bin 28 is skipped.  The trip in
    # bin 10 is early but one bin later it would be late; the on-time band
    # applies and the speed ratio 1.5 lies inside it.
    speeds = np.r_[np.full(20, 9.0), np.full(300, 6.0)]
    z = CharacteristicDistance(np.r_[0.0, np.cumsum(speeds)], 1.0, speeds)
    res = classify_foc(z, 10, 4, 28, PREFS, dx=30.0)
    assert res.timing == "early"
    assert res.kind == "ontime_optimal" and res.ratio == 1.5
    # one bin earlier the trip is early on both sides and the early band needs ratio 2
    res = classify_foc(z, 9, 4, 28, PREFS, dx=30.0)
    assert res.kind == "violating"


@settings(max_examples=60, deadline=None)
@given(st.floats(0.1, 0.9), st.floats(0.05, 5.0), st.floats(0.1, 50.0),
       st.integers(0, 150), st.integers(0, 30), st.integers(0, 300))
def test_scaling_multiplies_cost_and_keeps_argmin(beta, gamma, lam, td, k, ta):
    p = SchedulingPrefs(1.0, beta, gamma)
    q = p.scaled(lam)
    rng = np.random.default_rng(td * 31 + k)
    speeds = rng.uniform(2.0, 10.0, 400)
    z = CharacteristicDistance(np.r_[0.0, np.cumsum(speeds)], 1.0, speeds)
    assert trip_cost(td, k, ta, z, q, 10.0) == pytest.approx(lam * trip_cost(td, k, ta, z, p, 10.0),
                                                            rel=1e-12)
    assert optimality_band(q) == pytest.approx(optimality_band(p), rel=1e-12)
    assert classify_foc(z, td, k, ta, q, dx=10.0).kind == classify_foc(z, td, k, ta, p, dx=10.0).kind
    assert best_response(z, k, ta, q, dx=10.0)[0] == best_response(z, k, ta, p, dx=10.0)[0]


@pytest.mark.parametrize("speed,kappa,ta", [(10.0, 7, 120), (4.0, 3, 90), (13.28, 40, 300)])
def test_constant_speed_cost_is_v_shaped(speed, kappa, ta):
    z = constant_zeta(speed)
    dx = speed
    T = (kappa + 0.5) * dx / speed
    costs = np.array([trip_cost(td, kappa, ta, z, PREFS, dx) for td in range(0, ta + 5)])
    best = int(np.argmin(costs))
    assert costs[best] == pytest.approx(PREFS.alpha * T)
    assert best == ta - int(np.floor(T))
    # slopes: -beta per bin before the kink, +gamma after
    np.testing.assert_allclose(np.diff(costs[:best + 1]), -PREFS.beta)
    np.testing.assert_allclose(np.diff(costs[best:]), PREFS.gamma)


def test_smooth_penalty_shape():
    p = SchedulingPrefs(1.0, 0.5, 2.0, penalty="smooth", smooth_scale_s=60.0)
    assert p.schedule_penalty(0.0) == 0.0
    d = np.linspace(-3600, 3600, 2001)
    pen = p.schedule_penalty(d)
    assert np.all(np.diff(pen, 2) >= -1e-9)  # convex
    slope = np.diff(pen) / np.diff(d)
    assert slope[0] == pytest.approx(-0.5, abs=0.01) and slope[-1] == pytest.approx(2.0, abs=0.01)
