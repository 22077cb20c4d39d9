import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from outersync.errors import DomainError, ValidationError
from outersync.model import (ActivationSpec, Mode, SwitchSchedule, TrajectoryState,
                             activation_gain_bound, build_system, eval_coefficients,
                             poisson_schedule, validate_secants)

from conftest import G2


def test_mode_rejects_nonpositive_decay():
    with pytest.raises(ValidationError):
        Mode([1.0, -1.0], np.eye(2), [0, 0])


def test_mode_rejects_dimension_mismatch():
    with pytest.raises(ValidationError):
        Mode([1.0, 1.0], np.eye(3), [0, 0])


def test_mode_arrays_are_read_only():
    m = Mode([1.0], [[0.5]], [0.0])
    with pytest.raises(ValueError):
        m.A[0, 0] = 2.0


def test_schedule_validation():
    with pytest.raises(ValidationError):
        SwitchSchedule([0.5, 1.0], [0, 1], 2.0)
    with pytest.raises(ValidationError):
        SwitchSchedule([0.0, 1.0, 1.0], [0, 1, 0], 2.0)
    with pytest.raises(ValidationError):
        SwitchSchedule([0.0, 2.0], [0, 1], 2.0)


def test_schedule_is_right_continuous():
    s = SwitchSchedule([0.0, 1.0, 2.5], [0, 1, 0], 4.0)
    assert s.interval_of(0.0) == 0
    assert s.interval_of(0.999) == 0
    assert s.interval_of(1.0) == 1
    assert s.interval_of(2.5) == 2
    assert s.interval_of(4.0) == 2
    assert s.interval_end(2) == 4.0


def test_cyclic_schedule():
    s = SwitchSchedule.cyclic(1.0, 5.0, 2)
    assert np.array_equal(s.breakpoints, [0, 1, 2, 3, 4])
    assert np.array_equal(s.mode_index, [0, 1, 0, 1, 0])


def test_poisson_schedule_reproducible_bitwise():
    a = poisson_schedule(1.0, 500.0, 6, seed=3)
    b = poisson_schedule(1.0, 500.0, 6, seed=3)
    c = poisson_schedule(1.0, 500.0, 6, seed=4)
    assert a == b
    assert a.breakpoints.tobytes() == b.breakpoints.tobytes()
    assert a != c


def test_poisson_schedule_statistics():
    s = poisson_schedule(2.0, 5000.0, 6, seed=1)
    gaps = np.diff(s.breakpoints)
    assert abs(gaps.mean() - 0.5) < 0.03
    counts = np.bincount(s.mode_index, minlength=6) / s.n_intervals
    assert np.all(np.abs(counts - 1 / 6) < 0.02)


def test_poisson_schedule_cyclic_selection():
    s = poisson_schedule(1.0, 50.0, 3, seed=2, selection="cyclic")
    assert np.all(np.diff(s.mode_index) % 3 == 1)


@pytest.mark.parametrize("kw", [dict(rate=0.0), dict(rate=-1.0), dict(horizon=0.0),
                                dict(n_modes=0)])
def test_poisson_schedule_domain_errors(kw):
    args = dict(rate=1.0, horizon=10.0, n_modes=2, seed=0)
    args.update(kw)
    with pytest.raises(DomainError):
        poisson_schedule(**args)


def test_eval_coefficients_piecewise_constant():
    m0 = Mode([1.0], [[0.1]], [0.0])
    m1 = Mode([2.0], [[0.2]], [0.0])
    sysm = build_system([m0, m1], SwitchSchedule([0.0, 1.0], [0, 1], 2.0))
    assert eval_coefficients(sysm, 0.2) is eval_coefficients(sysm, 0.9)
    assert eval_coefficients(sysm, 1.0) == m1
    with pytest.raises(DomainError):
        eval_coefficients(sysm, 2.5)
    with pytest.raises(DomainError):
        eval_coefficients(sysm, -0.1)


def test_gain_bounds():
    assert activation_gain_bound(ActivationSpec("sigmoid", 1), 0) == 0.25
    assert activation_gain_bound(ActivationSpec("piecewise-linear", 1, slope=0.3), 0) == 0.3
    declared = ActivationSpec("piecewise-linear", 2, slope=G2, gains=G2, lo=-1, hi=1)
    assert np.array_equal(declared.gains, [1.0017, 0.9984])


def test_understated_gain_is_rejected():
    with pytest.raises(ValidationError):
        ActivationSpec("sigmoid", 1, gains=0.2)


def test_custom_table_requires_monotone_values():
    with pytest.raises(ValidationError):
        ActivationSpec("custom-table", 1, table_x=[0, 1, 2], table_y=[0, 1, 0.5], gains=1.0)
    spec = ActivationSpec("custom-table", 1, table_x=[-1, 0, 1], table_y=[0, 0.5, 2.0],
                          gains=1.5)
    assert spec(np.array([0.5]), 0) == pytest.approx(1.25)


@pytest.mark.parametrize("spec", [
    ActivationSpec("sigmoid", 3, slope=[1.0, 2.0, 0.5]),
    ActivationSpec("piecewise-linear", 2, slope=G2, lo=-1, hi=1),
    ActivationSpec("custom-table", 1, table_x=[-2, 0, 3], table_y=[-1, 0, 0.3], gains=0.5),
])
def test_secant_bound_ten_thousand_pairs(spec):
    # raises on any secant beyond the rounding-aware slack; the raw excess is
    # rounding noise from pairs 1e-3 apart
    worst = validate_secants(spec, pairs=10_000, seed=99)
    assert worst <= 1e-10


@settings(max_examples=300, deadline=None)
@given(st.floats(-30, 30), st.floats(-30, 30))
def test_sigmoid_secant_property(x, y):
    spec = ActivationSpec("sigmoid", 1)
    if abs(x - y) < 1e-6:
        return
    sec = (spec(np.array(x), 0) - spec(np.array(y), 0)) / (x - y)
    assert -1e-9 <= sec <= 0.25 + 1e-9


@pytest.mark.parametrize("u,w", [(0.3, 1e-14), (-2.0, 3e-9), (5.0, -1e-200), (0.0, 0.7),
                                 (12.0, 1e-6), (-40.0, 25.0)])
def test_stable_difference_matches_high_precision(u, w):
    mpmath.mp.dps = 400
    spec = ActivationSpec("sigmoid", 1)
    sig = lambda x: 1 / (1 + mpmath.exp(-x))  # noqa: E731
    exact = float(sig(mpmath.mpf(u)) - sig(mpmath.mpf(u) - mpmath.mpf(w)))
    got = float(spec.difference(np.array([u]), np.array([w]))[0])
    assert got == pytest.approx(exact, rel=1e-13, abs=0)


def test_piecewise_integral_matches_quadrature():
    sched = SwitchSchedule([0.0, 0.7, 1.9, 3.2], [0, 2, 1, 0], 5.0)
    m = [Mode([1.0], [[0.0]], [0.0])] * 3
    sysm = build_system(m, sched)
    rates = np.array([0.5, -1.25, 2.0])
    F = sysm.integral(rates)

    def f(s):
        return rates[sched.mode_index[sched.interval_of(s)]]

    for t in (0.0, 0.3, 0.7, 1.5, 3.2, 4.99, 5.0):
        ref, _ = quad(f, 0, t, points=[0.7, 1.9, 3.2], limit=200) if t > 0 else (0.0, 0)
        assert F(t) == pytest.approx(ref, abs=1e-12)
    assert np.allclose(F(np.array([0.3, 1.5])), [F(0.3), F(1.5)])


def test_trajectory_state_pair():
    s = TrajectoryState.from_pair(0.0, [1.0, 2.0], [0.5, 3.0])
    assert np.array_equal(s.w, [0.5, -1.0])
    assert np.array_equal(s.v, [0.5, 3.0])
