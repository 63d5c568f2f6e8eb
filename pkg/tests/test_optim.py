import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brdr.autodiff import ParamGradient
from brdr.errors import NumericalDivergenceError
from brdr.optim import AdamState, LrSchedule, adam_step, lr_at


def test_helmholtz_schedule():
    s = LrSchedule(0.005, 0.99, 250)
    assert lr_at(s, 0) == 0.005
    assert lr_at(s, 249) == 0.005
    assert lr_at(s, 250) == pytest.approx(0.00495, rel=1e-15)
    assert s(500) == pytest.approx(0.005 * 0.99 ** 2, rel=1e-15)


@settings(max_examples=50, deadline=None)
@given(t=st.integers(0, 10 ** 6), interval=st.integers(1, 1000))
def test_schedule_is_floor_step(t, interval):
    s = LrSchedule(0.001, 0.99, interval)
    assert lr_at(s, t) == 0.001 * 0.99 ** (t // interval)


def test_schedule_validation():
    with pytest.raises(ValueError):
        LrSchedule(0.0)
    with pytest.raises(ValueError):
        LrSchedule(1e-3, 1.5)
    with pytest.raises(ValueError):
        LrSchedule(1e-3, 0.9, 0)
    with pytest.raises(ValueError):
        lr_at(LrSchedule(1e-3), -1)


def test_zero_gradient_leaves_params():
    th = np.array([1.0, -2.0, 3.0])
    st_ = AdamState.zeros(3)
    adam_step(st_, th, np.zeros(3), 0.1)
    np.testing.assert_array_equal(th, [1.0, -2.0, 3.0])


def test_first_step_is_sign_step():
    th = np.array([0.0, 0.0])
    g = np.array([3.0, -0.02])
    adam_step(AdamState.zeros(2), th, g, 1e-3)
    expect = -1e-3 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(th, expect, rtol=1e-14)
    np.testing.assert_allclose(th, -1e-3 * np.sign(g), rtol=1e-6)


def _reference_adam(theta, steps, lr, b1=0.9, b2=0.999, eps=1e-8):
    # plain scalar re-implementation for f(theta) = theta^2
    m = v = 0.0
    for t in range(1, steps + 1):
        g = 2 * theta
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return theta


def test_quadratic_descent_matches_reference():
    th = np.array([1.0])
    s = AdamState.zeros(1)
    for _ in range(100):
        adam_step(s, th, 2 * th, 0.1)
    assert abs(th[0]) < 0.1
    assert th[0] == pytest.approx(_reference_adam(1.0, 100, 0.1), rel=1e-12, abs=1e-15)


def test_unreachable_parameters_do_not_change_update(rng):
    th_a = rng.standard_normal(4)
    th_b = np.concatenate([th_a, rng.standard_normal(3)])
    sa, sb = AdamState.zeros(4), AdamState.zeros(7)
    for _ in range(20):
        g = rng.standard_normal(4)
        adam_step(sa, th_a, g, 1e-2)
        adam_step(sb, th_b, np.concatenate([g, np.zeros(3)]), 1e-2)
    np.testing.assert_array_equal(th_a, th_b[:4])


def test_multiplier_scales_moment_input(rng):
    g = ParamGradient(rng.standard_normal(5))
    s1, s2 = AdamState.zeros(5), AdamState.zeros(5)
    adam_step(s1, np.zeros(5), g, 1e-3)
    adam_step(s2, np.zeros(5), g.scaled(3.0), 1e-3)
    np.testing.assert_allclose(s2.m, 3.0 * s1.m, rtol=1e-15)
    np.testing.assert_allclose(s2.v, 9.0 * s1.v, rtol=1e-15)


def test_non_finite_gradient_raises():
    with pytest.raises(NumericalDivergenceError):
        adam_step(AdamState.zeros(2), np.zeros(2), np.array([1.0, np.inf]), 1e-3)


def test_second_moment_non_negative(rng):
    s = AdamState.zeros(6)
    th = np.zeros(6)
    for _ in range(50):
        adam_step(s, th, rng.standard_normal(6) * 100, 1e-3)
        assert (s.v >= 0).all()
    assert s.step == 50
