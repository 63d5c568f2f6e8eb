"""The benchmark problems: residual operators, samplers and references."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .. import autodiff as ad
from ..autodiff import JetLayout
from . import oracles
from .base import (Component, PointSet, ProblemSpec, channel, interior_grid, latin_hypercube,
                   random_uniform, reference_grid_2d, square_boundary, uniform_grid)

PI = np.pi
VALUE = JetLayout()


def _counts(defaults: dict, counts: Mapping | None) -> dict:
    out = dict(defaults)
    for k, v in (counts or {}).items():
        if k not in out:
            raise KeyError(f"unknown point set {k!r}; expected one of {sorted(out)}")
        if int(v) < 1:
            raise ValueError(f"point count for {k} must be positive")
        out[k] = int(v)
    return out


# ---------------------------------------------------------------------------
# 1-D Poisson
# ---------------------------------------------------------------------------


class Poisson1D(ProblemSpec):
    """u'' = f on [0, 1] with exact solution sin(2 k pi x^2).

    The boundary term uses x = 0 and x = 1; with lambda = 1 and two points
    the loss carries 1/2 (u(0)^2 + u(1)^2).
    """

    id = "poisson"
    coord_names = ("x",)
    bounds = ((0.0, 1.0),)

    def __init__(self, k: float = 2.0):
        if k <= 0:
            raise ValueError("k must be positive")
        self.k = float(k)
        self.components = (
            Component("R", JetLayout.select((0,), [(0, 0)])),
            Component("B", VALUE),
        )

    def constants(self):
        return {"k": self.k}

    def source(self, x):
        a = 2.0 * self.k * PI * x * x
        return 4.0 * self.k * PI * np.cos(a) - 16.0 * self.k ** 2 * PI ** 2 * x * x * np.sin(a)

    def residual(self, name, jet, x, inst=None):
        if name == "R":
            return channel(jet, 2) - self.source(x[:, 0])
        return channel(jet, 0)

    def sample(self, rng, counts=None, inputs=None):
        n = _counts({"R": 1000}, counts)
        return PointSet({"R": np.linspace(0.0, 1.0, n["R"])[:, None], "B": np.array([[0.0], [1.0]])},
                        {"R": "uniform", "B": "uniform"})

    def exact_derivs(self, x, inputs=None, instance=None):
        x = np.asarray(x)[:, 0]
        a = 2.0 * self.k * PI * x * x
        u = np.sin(a)
        g = (4.0 * self.k * PI * x * np.cos(a))[:, None]
        h = self.source(x)[:, None, None]
        return u, g, h

    def test_points(self):
        return np.linspace(0.0, 1.0, 10000)[:, None]


# ---------------------------------------------------------------------------
# 2-D Helmholtz
# ---------------------------------------------------------------------------


class Helmholtz2D(ProblemSpec):
    """u_xx + u_yy + k^2 u = q on [-1, 1]^2, u = 0 on the boundary.

    Point counts: ``R`` is the number of interior grid points per side, ``B``
    the number of boundary points spread evenly along the perimeter.
    """

    id = "helmholtz"
    coord_names = ("x", "y")
    bounds = ((-1.0, 1.0), (-1.0, 1.0))

    def __init__(self, k: float = 1.0, a1: float = 1.0, a2: float = 4.0):
        self.k, self.a1, self.a2 = float(k), float(a1), float(a2)
        self.components = (
            Component("R", JetLayout.select((0, 1), [{(0, 0): 1.0, (1, 1): 1.0}])),
            Component("B", VALUE),
        )

    def constants(self):
        return {"k": self.k, "a1": self.a1, "a2": self.a2}

    def source(self, x, y):
        c = self.k ** 2 - (self.a1 * PI) ** 2 - (self.a2 * PI) ** 2
        return c * np.sin(self.a1 * PI * x) * np.sin(self.a2 * PI * y)

    def residual(self, name, jet, x, inst=None):
        if name == "R":
            u = channel(jet, 0)
            return channel(jet, 3) + (self.k ** 2) * u - self.source(x[:, 0], x[:, 1])
        return channel(jet, 0)

    def sample(self, rng, counts=None, inputs=None):
        n = _counts({"R": 101, "B": 200}, counts)
        return PointSet({"R": interior_grid(self.bounds, (n["R"], n["R"])), "B": square_boundary(n["B"])},
                        {"R": "uniform", "B": "uniform"})

    def exact_derivs(self, x, inputs=None, instance=None):
        x, y = np.asarray(x)[:, 0], np.asarray(x)[:, 1]
        p, q = self.a1 * PI, self.a2 * PI
        sx, cx, sy, cy = np.sin(p * x), np.cos(p * x), np.sin(q * y), np.cos(q * y)
        u = sx * sy
        g = np.stack([p * cx * sy, q * sx * cy], axis=1)
        h = np.empty((x.size, 2, 2))
        h[:, 0, 0] = -p * p * u
        h[:, 1, 1] = -q * q * u
        h[:, 0, 1] = h[:, 1, 0] = p * q * cx * cy
        return u, g, h

    def test_points(self):
        return uniform_grid(self.bounds, (101, 101))


# ---------------------------------------------------------------------------
# Allen-Cahn
# ---------------------------------------------------------------------------


class AllenCahn1D(ProblemSpec):
    """u_t - 5(u - u^3) - D u_xx = 0, u(x, 0) = x^2 cos(pi x), periodic in x.

    Periodicity is built into the network by the Fourier input embedding, so
    only the PDE and initial-condition terms enter the loss.
    """

    id = "allencahn"
    coord_names = ("x", "t")
    bounds = ((-1.0, 1.0), (0.0, 1.0))

    def __init__(self, d: float = oracles.ALLENCAHN_D, oracle_modes: int = 512):
        if d <= 0:
            raise ValueError("D must be positive")
        self.d = float(d)
        self.oracle_modes = int(oracle_modes)
        self._oracle = None
        self.components = (
            Component("R", JetLayout.select((0, 1), [(0, 0)])),
            Component("I", VALUE),
        )

    def constants(self):
        return {"d": self.d}

    def residual(self, name, jet, x, inst=None):
        if name == "R":
            u = channel(jet, 0)
            return channel(jet, 2) - 5.0 * (u - u * u * u) - self.d * channel(jet, 3)
        x0 = x[:, 0]
        return channel(jet, 0) - x0 * x0 * np.cos(PI * x0)

    def sample(self, rng, counts=None, inputs=None):
        n = _counts({"R": 25600, "I": 512}, counts)
        xi = np.linspace(-1.0, 1.0, n["I"])
        return PointSet({"R": latin_hypercube(n["R"], self.bounds, rng),
                         "I": np.stack([xi, np.zeros_like(xi)], axis=1)},
                        {"R": "latin_hypercube", "I": "uniform"})

    def oracle(self) -> oracles.AllenCahnSolution:
        if self._oracle is None:
            self._oracle = oracles.allencahn_spectral(n=self.oracle_modes, d=self.d)
        return self._oracle

    def exact_derivs(self, x, inputs=None, instance=None):
        """Spectral solution; u_t by a fourth-order central difference in time."""
        sol = self.oracle()
        x = np.asarray(x)
        u, ux, uxx = sol.evaluate(x[:, 0], x[:, 1], order=2)
        dt = sol.dt
        ts = np.clip(x[:, 1], 2 * dt, sol.t_end - 2 * dt)
        f = [sol.evaluate(x[:, 0], ts + s * dt) for s in (-2, -1, 1, 2)]
        ut = (f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * dt)
        h = np.full((x.shape[0], 2, 2), np.nan)
        h[:, 0, 0] = uxx
        return u, np.stack([ux, ut], axis=1), h

    def reference(self, x, inputs=None, instance=None):
        x = np.asarray(x)
        return self.oracle().evaluate(x[:, 0], x[:, 1])

    def test_points(self):
        return reference_grid_2d()

    def test_reference(self):
        ref = oracles.load_reference("allencahn")
        return np.stack([ref["x"], ref["t"]], axis=1), ref["u"]


# ---------------------------------------------------------------------------
# Burgers
# ---------------------------------------------------------------------------


class Burgers1D(ProblemSpec):
    """u_t + u u_x - nu u_xx = 0, u(x, 0) = -sin(pi x), u(+-1, t) = 0.

    Boundary points: half at x = -1 and half at x = +1, times i.i.d. uniform.
    """

    id = "burgers"
    coord_names = ("x", "t")
    bounds = ((-1.0, 1.0), (0.0, 1.0))

    def __init__(self, nu: float = oracles.BURGERS_NU):
        if nu <= 0:
            raise ValueError("nu must be positive")
        self.nu = float(nu)
        self.components = (
            Component("R", JetLayout.select((0, 1), [(0, 0)])),
            Component("I", VALUE),
            Component("B", VALUE),
        )

    def constants(self):
        return {"nu": self.nu}

    def residual(self, name, jet, x, inst=None):
        if name == "R":
            u = channel(jet, 0)
            return channel(jet, 2) + u * channel(jet, 1) - self.nu * channel(jet, 3)
        if name == "I":
            return channel(jet, 0) + np.sin(PI * x[:, 0])
        return channel(jet, 0)

    def sample(self, rng, counts=None, inputs=None):
        n = _counts({"R": 10000, "I": 100, "B": 200}, counts)
        xi = np.linspace(-1.0, 1.0, n["I"])
        nb = n["B"]
        side = np.where(np.arange(nb) < nb // 2, -1.0, 1.0)
        return PointSet({"R": latin_hypercube(n["R"], self.bounds, rng),
                         "I": np.stack([xi, np.zeros_like(xi)], axis=1),
                         "B": np.stack([side, rng.random(nb)], axis=1)},
                        {"R": "latin_hypercube", "I": "uniform", "B": "random"})

    def exact_derivs(self, x, inputs=None, instance=None):
        x = np.asarray(x)
        u, ux, ut, uxx = oracles.burgers_cole_hopf(x[:, 0], x[:, 1], self.nu, derivs=True)
        h = np.full((x.shape[0], 2, 2), np.nan)
        h[:, 0, 0] = uxx
        return u, np.stack([ux, ut], axis=1), h

    def reference(self, x, inputs=None, instance=None):
        x = np.asarray(x)
        return oracles.burgers_cole_hopf(x[:, 0], x[:, 1], self.nu)

    def test_points(self):
        return reference_grid_2d()

    def test_reference(self):
        ref = oracles.load_reference("burgers")
        return np.stack([ref["x"], ref["t"]], axis=1), ref["u"]


# ---------------------------------------------------------------------------
# wave-equation operator learning
# ---------------------------------------------------------------------------


@dataclass
class OperatorSample:
    """One initial condition u0(x) = sum_n b_n sin(n pi x) and its sensor values."""

    b: np.ndarray
    sensors: np.ndarray


def sensor_grid(n: int = 101) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


def sample_operator_instances(n: int, rng: np.random.Generator, n_modes: int = 5,
                              n_sensors: int = 101) -> list:
    """Random initial conditions with b_n ~ N(0, 1)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    xs = sensor_grid(n_sensors)
    basis = np.sin(PI * np.outer(np.arange(1, n_modes + 1), xs))
    out = []
    for b in rng.standard_normal((n, n_modes)):
        out.append(OperatorSample(b, b @ basis))
    return out


class WaveOperator(ProblemSpec):
    """u_tt - C^2 u_xx = 0 on [0, 1]^2 for a family of initial conditions.

    Components: R (PDE), B (u = 0 at x = 0, 1), I (u = u0 at t = 0) and
    I_t (u_t = 0 at t = 0).  The I and I_t terms share the sensor points.
    Point counts are per initial condition.
    """

    id = "wave"
    coord_names = ("x", "t")
    bounds = ((0.0, 1.0), (0.0, 1.0))
    operator = True

    def __init__(self, c: float = float(np.sqrt(2.0)), n_modes: int = 5, n_sensors: int = 101):
        self.c, self.n_modes, self.n_sensors = float(c), int(n_modes), int(n_sensors)
        self.b_table = np.zeros((0, self.n_modes))
        self.components = (
            Component("R", JetLayout.select((0, 1), [{(1, 1): 1.0, (0, 0): -self.c ** 2}])),
            Component("B", VALUE),
            Component("I", VALUE),
            Component("I_t", JetLayout.select((1,))),
        )

    def constants(self):
        return {"c": self.c, "n_modes": self.n_modes}

    def bind(self, samples) -> np.ndarray:
        """Install the coefficient table; returns the branch-input table."""
        self.b_table = np.array([s.b for s in samples]).reshape(-1, self.n_modes)
        return np.array([s.sensors for s in samples])

    def u0(self, x, inst):
        n = np.arange(1, self.n_modes + 1)
        return np.einsum("ij,ij->i", self.b_table[inst], np.sin(PI * np.outer(x, n)))

    def residual(self, name, jet, x, inst=None):
        if name == "R":
            return channel(jet, 3)
        if name == "B":
            return channel(jet, 0)
        if name == "I":
            return channel(jet, 0) - self.u0(x[:, 0], inst)
        return channel(jet, 1)

    def sample(self, rng, counts=None, inputs=None):
        """Training points for the bound initial conditions (see :meth:`bind`)."""
        n = _counts({"R": 2500, "B": 100}, counts)
        m = self.b_table.shape[0]
        if m == 0:
            raise ValueError("bind initial conditions before sampling")
        ids = np.arange(m)
        nb = n["B"]
        side = np.where(np.arange(nb) < nb // 2, 0.0, 1.0)
        xs = sensor_grid(self.n_sensors)
        r = random_uniform(m * n["R"], self.bounds, rng)
        bt = rng.random(m * nb)
        b = np.stack([np.tile(side, m), bt], axis=1)
        xi = np.stack([np.tile(xs, m), np.zeros(m * xs.size)], axis=1)
        inst_i = np.repeat(ids, xs.size)
        return PointSet({"R": r, "B": b, "I": xi, "I_t": xi.copy()},
                        {"R": "random", "B": "random", "I": "uniform", "I_t": "uniform"},
                        {"R": np.repeat(ids, n["R"]), "B": np.repeat(ids, nb), "I": inst_i,
                         "I_t": inst_i.copy()})

    def exact_derivs(self, x, inputs=None, instance=None):
        x = np.asarray(x)
        b = self.b_table[instance] if inputs is None else np.asarray(inputs)[instance]
        n = np.arange(1, self.n_modes + 1)
        kx, kt = PI * np.outer(x[:, 0], n), PI * self.c * np.outer(x[:, 1], n)
        sx, cx, st, ct = np.sin(kx), np.cos(kx), np.sin(kt), np.cos(kt)
        wn, wt = PI * n, PI * self.c * n
        u = np.sum(b * sx * ct, axis=1)
        g = np.stack([np.sum(b * wn * cx * ct, axis=1), np.sum(-b * wt * sx * st, axis=1)], axis=1)
        h = np.empty((x.shape[0], 2, 2))
        h[:, 0, 0] = np.sum(-b * wn ** 2 * sx * ct, axis=1)
        h[:, 1, 1] = np.sum(-b * wt ** 2 * sx * ct, axis=1)
        h[:, 0, 1] = h[:, 1, 0] = np.sum(-b * wn * wt * cx * st, axis=1)
        return u, g, h

    def exact_field(self, b: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Closed-form solution of one initial condition at points x."""
        n = np.arange(1, self.n_modes + 1)
        return (np.sin(PI * np.outer(x[:, 0], n)) * np.cos(PI * self.c * np.outer(x[:, 1], n))) @ b

    def test_points(self):
        return uniform_grid(self.bounds, (101, 101))


PROBLEMS = {
    "poisson": Poisson1D,
    "helmholtz": Helmholtz2D,
    "allencahn": AllenCahn1D,
    "burgers": Burgers1D,
    "wave": WaveOperator,
}


def make_problem(problem_id: str, **constants) -> ProblemSpec:
    try:
        cls = PROBLEMS[problem_id]
    except KeyError:
        raise ValueError(f"unknown problem {problem_id!r}; expected one of {sorted(PROBLEMS)}") from None
    return cls(**constants)
