import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brdr import autodiff as ad
from brdr import diagnostics as diag
from brdr.errors import DiagnosticScaleError


class _Owner:
    def __init__(self, size):
        self.size = size


def linear_model(x, y):
    """Residuals r = X theta - y of the linear model u = theta . x."""
    theta = np.zeros(x.shape[1])
    owner = _Owner(theta.size)

    def residual_fn():
        th = ad.param_var(owner, theta, 0, theta.shape)
        return ad.matmul(ad.constant(x), th) - y

    return theta, residual_fn


# -- irdr trace ----------------------------------------------------------------------


def test_track_constant_stream():
    tr = diag.IrdrTrace.create(3)
    for t in range(1, 20):
        diag.track_irdr(tr, np.ones(3), t)
        np.testing.assert_array_equal(tr.mean, 1.0)


def test_track_two_values():
    tr = diag.IrdrTrace.create(1)
    diag.track_irdr(tr, [0.0], 1)
    diag.track_irdr(tr, [1.0], 2)
    assert tr.mean[0] == 0.5


def test_track_batches_and_snapshots():
    tr = diag.IrdrTrace.create(4, snapshot_at=(2,))
    diag.track_irdr(tr, [2.0, 4.0], 1, indices=[0, 2])
    diag.track_irdr(tr, [4.0], 2, indices=[0])
    np.testing.assert_array_equal(tr.count, [2, 0, 1, 0])
    np.testing.assert_array_equal(tr.mean, [3.0, 0.0, 4.0, 0.0])
    np.testing.assert_array_equal(tr.snapshots[2], tr.mean)
    assert tr.max() == 4.0
    with pytest.raises(ValueError):
        diag.track_irdr(tr, [1.0], 0, indices=[0])


@settings(max_examples=40, deadline=None)
@given(seq=st.lists(st.floats(0, 50), min_size=1, max_size=60))
def test_track_equals_arithmetic_mean(seq):
    tr = diag.IrdrTrace.create(1)
    for t, c in enumerate(seq, 1):
        diag.track_irdr(tr, [c], t)
    assert tr.mean[0] == pytest.approx(np.mean(seq), rel=1e-12, abs=1e-12)
    assert 0.0 <= tr.mean[0] <= max(seq) * (1 + 1e-12)


# -- Jacobi eigensolver -----------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 24), seed=st.integers(0, 2 ** 20))
def test_jacobi_matches_reference_eigh(n, seed):
    r = np.random.default_rng(seed)
    a = r.standard_normal((n, n))
    a = a + a.T
    w, q = diag.jacobi_eigh(a)
    np.testing.assert_allclose(w, np.linalg.eigh(a)[0], rtol=0, atol=1e-12 * max(1, np.abs(a).max()))
    np.testing.assert_allclose(q.T @ q, np.eye(n), atol=1e-12)
    np.testing.assert_allclose((q * w) @ q.T, a, atol=1e-12 * max(1, np.abs(a).max()))


def test_jacobi_zero_and_diagonal():
    w, q = diag.jacobi_eigh(np.zeros((3, 3)))
    np.testing.assert_array_equal(w, 0.0)
    w, _ = diag.jacobi_eigh(np.diag([3.0, -1.0, 2.0]))
    np.testing.assert_array_equal(w, [-1.0, 2.0, 3.0])


# -- NTK -----------------------------------------------------------------------------------


def test_single_point_ntk_is_gradient_norm():
    x = np.array([[0.3, -1.2, 2.0]])
    _, fn = linear_model(x, np.zeros(1))
    k = diag.ntk_matrix(fn, 3)
    assert k.k.shape == (1, 1)
    assert k.k[0, 0] == pytest.approx(float(x[0] @ x[0]), rel=1e-15)


def test_duplicated_point_is_rank_deficient():
    x = np.array([[0.5, 1.0], [0.5, 1.0]])
    _, fn = linear_model(x, np.zeros(2))
    k = diag.ntk_matrix(fn, 2)
    np.testing.assert_array_equal(k.k[0], k.k[1])
    assert abs(k.evals[0]) < 1e-14
    assert k.evals[1] == pytest.approx(2 * 1.25, rel=1e-14)


def test_linear_model_eigenvalues_closed_form(rng):
    x = rng.standard_normal((7, 3))
    _, fn = linear_model(x, rng.standard_normal(7))
    k = diag.ntk_matrix(fn, 3)
    np.testing.assert_allclose(k.k, x @ x.T, rtol=1e-14, atol=1e-14)
    # nonzero spectrum of X X^T equals the spectrum of X^T X
    np.testing.assert_allclose(k.evals[-3:], np.linalg.eigvalsh(x.T @ x), rtol=1e-12)
    np.testing.assert_allclose(k.evals[:4], 0.0, atol=1e-12)
    assert (k.evals >= -1e-8).all()
    assert k.reconstruction_error() < 1e-8
    assert np.abs(k.k - k.k.T).max() == 0.0


def test_ntk_cap(rng):
    _, fn = linear_model(rng.standard_normal((10, 2)), np.zeros(10))
    with pytest.raises(DiagnosticScaleError):
        diag.ntk_matrix(fn, 2, cap=9)


def test_predict_identity_cases(rng):
    x = rng.standard_normal((5, 2))
    _, fn = linear_model(x, np.zeros(5))
    k = diag.ntk_matrix(fn, 2)
    r0 = rng.standard_normal(5)
    assert diag.ntk_predict_residuals(k, r0, 0.1, 0).tobytes() == r0.tobytes()
    zero = diag.NtkMatrix(np.zeros((5, 5)), np.zeros(5), np.eye(5))
    np.testing.assert_allclose(diag.ntk_predict_residuals(zero, r0, 0.1, 50), r0, rtol=1e-15)


def test_predicted_norm_non_increasing(rng):
    x = rng.standard_normal((6, 4))
    _, fn = linear_model(x, np.zeros(6))
    k = diag.ntk_matrix(fn, 4)
    r0 = rng.standard_normal(6)
    norms = [np.linalg.norm(diag.ntk_predict_residuals(k, r0, 1e-3, t)) for t in range(0, 500, 25)]
    assert all(b <= a * (1 + 1e-14) for a, b in zip(norms, norms[1:]))


def linear_flow_gap(rng, steps=100):
    """Max gap between NTK prediction and gradient descent on sum r^2."""
    x = rng.uniform(-1, 1, (12, 3))
    y = rng.standard_normal(12)
    theta, fn = linear_model(x, y)
    k = diag.ntk_matrix(fn, 3)
    eta = 1e-3 / max(k.evals.max(), 1e-12)
    r0 = fn().value.copy()
    gap = 0.0
    for t in range(1, steps + 1):
        loss = ad.vsum(fn() * fn())
        theta -= eta * ad.param_gradient(loss, 3).vector
        pred = diag.ntk_predict_residuals(k, r0, eta, t)
        gap = max(gap, float(np.abs(fn().value - pred).max()))
    return gap, k


def test_linear_gradient_flow_matches_prediction(rng):
    gap, _ = linear_flow_gap(rng)
    assert gap < 1e-3


# -- weight snapshots and eigenvalue dump ---------------------------------------------


def test_export_unit_weights(tmp_path, rng):
    coords = rng.uniform(-1, 1, (9, 2))
    path = diag.export_weight_field(np.ones(9), coords, tmp_path / "w.csv", ["x", "t"])
    back = diag.read_weight_field(path)
    assert list(back) == ["x", "t", "w", "log10_w"]
    assert back["w"].size == 9
    np.testing.assert_array_equal(back["log10_w"], 0.0)


def test_export_round_trip(tmp_path, rng):
    w = np.exp(rng.standard_normal(50) * 3)
    coords = rng.uniform(0, 1, 50)
    back = diag.read_weight_field(diag.export_weight_field(w, coords, tmp_path / "s" / "w.csv"))
    np.testing.assert_allclose(back["w"], w, rtol=1e-15, atol=0)
    np.testing.assert_array_equal(back["x0"], coords)


def test_write_eigenvalues(tmp_path):
    path = diag.write_eigenvalues(tmp_path / "e.csv", np.array([0.5, 2.0]))
    assert path.read_text().splitlines() == ["index,eigenvalue", "0,0.5", "1,2"]


# -- synthetic irdr streams -----------------------------------------------------------------


def test_irdr_exponential_matches_stream(rng):
    lam = np.array([1e-4, 3e-3])
    batch = diag.irdr_exponential(lam, 0.99, 500)
    for l, c in zip(lam, batch):
        one = diag.irdr_stream(np.exp(-l * np.arange(1, 501)), 0.99)[-1]
        assert c == pytest.approx(one, rel=1e-13)


def test_two_phase_law():
    t = np.array([0.0, 100000.0, 100001.0, 300000.0])
    r = diag.two_phase_residual(t)
    assert r[0] == 1.0
    assert r[1] == pytest.approx(np.exp(-1.0))
    assert r[3] == pytest.approx(np.exp(-1.0) * np.exp(-0.5e-5 * 200000))
