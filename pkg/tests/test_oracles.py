import numpy as np
import pytest

from brdr.errors import OracleError
from brdr.problems import oracles


@pytest.fixture(scope="module")
def allencahn():
    return oracles.allencahn_spectral()


def test_burgers_initial_condition():
    x = np.linspace(-1, 1, 41)
    np.testing.assert_allclose(oracles.burgers_cole_hopf(x, 0.0), -np.sin(np.pi * x), atol=1e-15)


def test_burgers_odd_symmetry():
    x = np.linspace(0.01, 0.99, 25)
    for t in (0.1, 0.5, 0.9):
        np.testing.assert_allclose(oracles.burgers_cole_hopf(-x, t), -oracles.burgers_cole_hopf(x, t),
                                   atol=1e-12)


def test_burgers_derivatives_match_fd():
    x = np.array([-0.3, 0.2, 0.7])
    t = np.array([0.3, 0.6, 0.8])
    u, ux, ut, uxx = oracles.burgers_cole_hopf(x, t, derivs=True)
    h = 1e-5
    f = oracles.burgers_cole_hopf
    np.testing.assert_allclose(ux, (f(x + h, t) - f(x - h, t)) / (2 * h), rtol=1e-6)
    np.testing.assert_allclose(ut, (f(x, t + h) - f(x, t - h)) / (2 * h), rtol=1e-6)
    np.testing.assert_allclose(uxx, (f(x + h, t) - 2 * u + f(x - h, t)) / h ** 2, rtol=1e-3)


def test_burgers_negative_time_raises():
    with pytest.raises(OracleError):
        oracles.burgers_cole_hopf(np.zeros(1), np.array([-0.1]))


def test_burgers_fd_time_grid_check():
    with pytest.raises(OracleError):
        oracles.burgers_fd([0.00005], n=64, steps_per_unit=10000)


def test_allencahn_initial_grid_values(allencahn):
    x, t, u = allencahn.grid_values(stride=10000)
    assert t[0] == 0.0
    np.testing.assert_allclose(u[0], x ** 2 * np.cos(np.pi * x), atol=1e-13)


def test_allencahn_even_symmetry(allencahn):
    x = np.linspace(0.05, 0.95, 19)
    for t in (0.25, 0.75):
        np.testing.assert_allclose(allencahn.evaluate(-x, t), allencahn.evaluate(x, t), atol=1e-10)


def test_allencahn_outside_interval_raises(allencahn):
    with pytest.raises(OracleError):
        allencahn.evaluate(np.zeros(1), 1.5)


def test_reference_csv_round_trip(tmp_path):
    r = np.random.default_rng(0)
    cols = {"x": r.standard_normal(20), "t": r.random(20), "u": r.standard_normal(20) * 1e-7}
    path = oracles.write_reference_csv(tmp_path / "ref.csv", cols)
    back = oracles.read_reference_csv(path)
    assert path.read_text().splitlines()[0] == "x,t,u"
    for k in cols:
        np.testing.assert_array_equal(back[k], cols[k])


def test_load_reference_uses_cache(tmp_path, monkeypatch):
    monkeypatch.setenv("BRDR_CACHE_DIR", str(tmp_path))
    ref = oracles.load_reference("burgers", nx=11, nt=6)
    path = tmp_path / "burgers_11x6.csv"
    assert path.exists() and ref["u"].size == 66
    stamp = path.stat().st_mtime_ns
    again = oracles.load_reference("burgers", nx=11, nt=6)
    assert path.stat().st_mtime_ns == stamp
    np.testing.assert_array_equal(again["u"], ref["u"])


def test_unknown_oracle():
    with pytest.raises(OracleError):
        oracles.generate_reference("kdv")
