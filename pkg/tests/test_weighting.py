import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brdr import autodiff as ad
from brdr.errors import DegenerateBatchError, NumericalDivergenceError, StationaryPointError
from brdr.weighting import (ComponentWeights, SchemeParams, ScaleState, WeightState, WeightingScheme,
                            compute_irdr, update_scale, update_weights_brdr, update_weights_rba,
                            update_weights_sa, weighted_loss)

finite = st.floats(-1e3, 1e3, allow_nan=False).filter(lambda v: abs(v) > 1e-6)


# -- irdr ---------------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(r=st.lists(finite, min_size=1, max_size=20), beta=st.floats(0.5, 0.9999))
def test_first_step_irdr_is_one(r, beta):
    st_ = WeightState.create(len(r), beta_c=beta)
    r = np.array(r)
    c = compute_irdr(st_, r, np.arange(r.size), 1)
    # bias correction cancels exactly; only eps separates c from 1
    np.testing.assert_allclose(c, r ** 2 / (r ** 2 + 1e-14), rtol=1e-13)
    big = np.abs(r) >= 1e-3
    np.testing.assert_allclose(c[big], 1.0, rtol=1e-6)


def test_constant_stream_irdr_fixed_point():
    s = WeightState.create(1, beta_c=0.999)
    for t in range(1, 10001):
        c = compute_irdr(s, np.array([0.3]), np.array([0]), t)
    assert c[0] == pytest.approx(1.0, rel=1e-9)


def _scalar_irdr(lam, beta, steps, eps=1e-14):
    # straight-line scalar recursion, written independently of the package
    e = 0.0
    c = None
    for t in range(1, steps + 1):
        r = np.exp(-lam * t)
        e = beta * e + (1 - beta) * r ** 4
        c = r ** 2 / (np.sqrt(e / (1 - beta ** t)) + eps)
    return c


def test_exponential_decay_irdr_below_one_and_decreasing():
    lams = [1e-4, 5e-4, 1e-3, 2e-3]
    got = []
    for lam in lams:
        s = WeightState.create(1, beta_c=0.999)
        for t in range(1, 10001):
            c = compute_irdr(s, np.array([np.exp(-lam * t)]), np.array([0]), t)[0]
        assert c == pytest.approx(_scalar_irdr(lam, 0.999, 10000), rel=1e-10)
        got.append(c)
    assert all(v < 1 for v in got)
    assert all(a > b for a, b in zip(got, got[1:]))


def test_irdr_non_finite_residual_raises():
    s = WeightState.create(2)
    with pytest.raises(NumericalDivergenceError):
        compute_irdr(s, np.array([1.0, np.nan]), np.arange(2), 1)


def test_irdr_requires_positive_iteration():
    with pytest.raises(ValueError):
        compute_irdr(WeightState.create(1), np.ones(1), np.zeros(1, dtype=int), 0)


# -- BRDR weights -----------------------------------------------------------------


def test_equal_c_keeps_unit_weights():
    s = WeightState.create(4)
    compute_irdr(s, np.ones(4), np.arange(4), 1)
    update_weights_brdr(s, np.full(4, 2.5))
    np.testing.assert_array_equal(s.w, 1.0)


def test_two_point_formula():
    s = WeightState.create(2, beta_w=0.999)
    compute_irdr(s, np.ones(2), np.arange(2), 1)
    update_weights_brdr(s, np.array([3.0, 1.0]))
    np.testing.assert_allclose(s.w, [1.0005, 0.9995], rtol=0, atol=1e-15)


def test_zero_mean_irdr_is_degenerate():
    s = WeightState.create(2)
    compute_irdr(s, np.ones(2), np.arange(2), 1)
    with pytest.raises(DegenerateBatchError):
        update_weights_brdr(s, np.zeros(2))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 20), n=st.integers(2, 30), steps=st.integers(1, 40))
def test_full_batch_mean_weight_is_one(seed, n, steps):
    r = np.random.default_rng(seed)
    s = WeightState.create(n)
    for t in range(1, steps + 1):
        c = compute_irdr(s, r.standard_normal(n) * np.exp(-0.05 * t * np.arange(n)), np.arange(n), t)
        update_weights_brdr(s, c)
        assert abs(s.w.mean() - 1.0) < 1e-6
        assert (s.w > 0).all()


def test_stale_point_update_equals_repeated_unit_updates():
    # point 0 is skipped for two iterations and revisited at t = 4
    beta_c, beta_w = 0.99, 0.999
    r_stream = [1.3, 0.7, 0.7, 0.7]
    c_other = [2.0, 1.5, 0.9, 1.1]  # irdr of a companion point keeping cbar fixed below
    s = WeightState.create(2, beta_c=beta_c, beta_w=beta_w)
    compute_irdr(s, np.array([r_stream[0], 1.0]), np.array([0, 1]), 1)
    update_weights_brdr(s, np.array([1.0, c_other[0]]))
    w_after1, e_after1 = s.w[0], s.ema_r4[0]
    # visit at t = 4 with interval 3
    compute_irdr(s, np.array([r_stream[3]]), np.array([0]), 4)
    assert s.last_dt[0] == 3
    c4 = 0.8
    update_weights_brdr(s, np.array([c4]))
    # three unit-interval updates with the same (stale) inputs
    w, e = w_after1, e_after1
    for _ in range(3):
        e = beta_c * e + (1 - beta_c) * r_stream[3] ** 4
        w = beta_w * w + (1 - beta_w) * 1.0  # c / cbar = 1 for a single-point batch
    assert s.ema_r4[0] == pytest.approx(e, rel=1e-12)
    assert s.w[0] == pytest.approx(w, rel=1e-12)


def test_full_batch_is_plain_ema():
    s = WeightState.create(3, beta_c=0.9, beta_w=0.8)
    r = np.array([1.0, 2.0, 0.5])
    compute_irdr(s, r, np.arange(3), 1)
    c = np.array([1.0, 2.0, 3.0])
    update_weights_brdr(s, c)
    np.testing.assert_array_equal(s.last_dt, 1)
    np.testing.assert_allclose(s.w, 0.8 + 0.2 * c / c.mean(), rtol=1e-15)


def test_beta_w_one_recovers_fixed_weights():
    s = WeightState.create(3, beta_w=1.0)
    for t in range(1, 20):
        c = compute_irdr(s, np.array([1.0, 0.1 * t, 3.0]), np.arange(3), t)
        update_weights_brdr(s, c)
    np.testing.assert_array_equal(s.w, 1.0)


# -- scale factor -------------------------------------------------------------------


def test_scale_at_stability_boundary_is_unchanged():
    sc = ScaleState(s=2.0)
    eta = 1e-3
    s, mult = update_scale(sc, loss=eta * 10.0 / 2.0, grad=10.0, eta=eta)
    assert s == pytest.approx(2.0, rel=1e-15)
    assert mult == pytest.approx(1.0, rel=1e-15)


def test_scale_formula_example():
    sc = ScaleState()
    s, mult = update_scale(sc, loss=1.0, grad=4000.0, eta=0.001)
    assert s == pytest.approx(0.9995, rel=1e-15)
    assert mult == pytest.approx(0.9995, rel=1e-15)
    assert sc.beta_s == pytest.approx(0.999)


def test_scale_accepts_param_gradient():
    g = ad.ParamGradient(np.array([30.0, 40.0]))
    s, _ = update_scale(ScaleState(), 1.0, g, eta=0.01)
    assert s == pytest.approx(0.99 + 0.01 * (1 / 0.01) * (2 / 2500.0))


def test_scale_zero_gradient_raises():
    with pytest.raises(StationaryPointError):
        update_scale(ScaleState(), 1.0, 0.0, eta=1e-3)


# -- SA and RBA -----------------------------------------------------------------------


def test_sa_examples():
    s = WeightState.create(2, w0=0.5)
    update_weights_sa(s, np.array([0.0, 2.0]), 0.005)
    np.testing.assert_allclose(s.w, [0.5, 0.52], rtol=0, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 20))
def test_sa_non_decreasing(seed):
    r = np.random.default_rng(seed)
    s = WeightState.create(10, w0=r.uniform(0, 1, 10))
    for _ in range(30):
        prev = s.w.copy()
        update_weights_sa(s, r.standard_normal(10) * 10, 0.005)
        assert (s.w >= prev).all()


def test_rba_example():
    s = WeightState.create(2, w0=0.0)
    update_weights_rba(s, np.array([0.5, 1.0]), 0.999, 0.01)
    assert s.w[0] == pytest.approx(0.005, abs=1e-17)


def test_rba_steady_state_bound():
    s = WeightState.create(1, w0=0.0)
    for _ in range(30000):
        update_weights_rba(s, np.array([1.0]), 0.999, 0.01)
    assert s.w[0] <= 10.0
    assert s.w[0] == pytest.approx(10.0, rel=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 20), decay=st.floats(0.5, 0.9999), lr=st.floats(1e-4, 1.0))
def test_rba_bounded(seed, decay, lr):
    r = np.random.default_rng(seed)
    s = WeightState.create(8, w0=0.0)
    for _ in range(200):
        update_weights_rba(s, r.standard_normal(8), decay, lr)
        assert (s.w <= lr / (1 - decay) * (1 + 1e-12)).all()


def test_rba_zero_batch_raises():
    with pytest.raises(DegenerateBatchError):
        update_weights_rba(WeightState.create(2), np.zeros(2), 0.999, 0.01)


# -- loss assembly ------------------------------------------------------------------


def test_weighted_loss_unit_example():
    r = ad.constant(np.array([1.0, 1.0]))
    assert float(weighted_loss([(1.0, 2, np.ones(2), r)], 1.0).value) == 1.0


def test_weighted_loss_homogeneous_in_s(rng):
    theta = rng.standard_normal(4)
    owner = type("Owner", (), {"size": 4})()
    v = ad.param_var(owner, theta, 0, (4,))
    parts = [(2.0, 4, rng.uniform(0.5, 2, 4), v * v - 1.0), (100.0, 4, np.ones(4), v)]
    g1 = ad.param_gradient(weighted_loss(parts, 1.0)).vector
    g2 = ad.param_gradient(weighted_loss(parts, 2.0)).vector
    np.testing.assert_array_equal(g2, 2.0 * g1)


def test_weighted_loss_lambda_and_normalisation():
    r1 = ad.constant(np.array([1.0, 2.0, 3.0]))
    r2 = ad.constant(np.array([0.5]))
    w1 = np.array([1.0, 0.5, 2.0])
    got = float(weighted_loss([(1.0, 3, w1, r1), (100.0, 1, np.ones(1), r2)], 0.5).value)
    expect = 0.5 * ((1 * 1 + 0.5 * 4 + 2 * 9) / 3 + 100 * 0.25)
    assert got == pytest.approx(expect, rel=1e-15)


# -- scheme object ------------------------------------------------------------------


def _comps():
    return ComponentWeights(("R", "B"), (6, 2), (1.0, 1.0))


def test_scheme_initial_weights():
    r = np.random.default_rng(0)
    sa = WeightingScheme(SchemeParams("sa"), _comps(), r)
    assert ((sa.state.w >= 0) & (sa.state.w < 1)).all()
    rba = WeightingScheme(SchemeParams("rba"), _comps(), r)
    np.testing.assert_array_equal(rba.component_slice("R"), 0.0)
    np.testing.assert_array_equal(rba.component_slice("B"), 1.0)
    fixed = WeightingScheme(SchemeParams("fixed"), _comps(), r)
    assert not fixed.uses_scale and fixed.scale.s == 1.0


def test_fixed_scheme_never_moves_weights():
    sch = WeightingScheme(SchemeParams("fixed"), _comps(), np.random.default_rng(0))
    local = {"R": np.arange(6), "B": np.arange(2)}
    r = np.random.default_rng(1)
    for t in range(1, 50):
        sch.step({"R": r.standard_normal(6), "B": r.standard_normal(2)}, local, t)
    np.testing.assert_array_equal(sch.state.w, 1.0)


def test_component_weights_validation():
    with pytest.raises(ValueError):
        ComponentWeights(("R",), (3,), (0.0,))
    with pytest.raises(ValueError):
        SchemeParams("ntk")


def test_scale_leaving_positive_range_is_divergence():
    sc = ScaleState(s=1.0)
    with pytest.raises(NumericalDivergenceError):
        update_scale(sc, loss=1.0, grad=1e6, eta=10.0)
    assert sc.s == 1.0
