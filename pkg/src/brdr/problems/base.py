"""Problem interface, point sets, samplers and error metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .. import autodiff as ad
from ..autodiff import JetLayout
from ..errors import DomainError, InputShapeError

DOMAIN_TOL = 1e-12


@dataclass(frozen=True)
class Component:
    """One loss term: its name (R, B, I, I_t), jet layout and default lambda."""

    name: str
    layout: JetLayout
    lam: float = 1.0


@dataclass
class PointSet:
    """Training or test points per component.

    ``coords[name]`` is an (N, d) array.  For operator problems
    ``instance[name]`` gives, for each point, the row of the input-function
    table it belongs to.
    """

    coords: dict
    tags: dict = field(default_factory=dict)
    instance: dict = field(default_factory=dict)

    def count(self, name: str) -> int:
        return self.coords[name].shape[0]

    @property
    def names(self):
        return tuple(self.coords)

    def take(self, name: str, idx) -> tuple:
        inst = self.instance.get(name)
        return self.coords[name][idx], (None if inst is None else inst[idx])


class ProblemSpec:
    """Base class of the benchmarks.

    Subclasses define ``id``, ``coord_names``, ``bounds`` (one (lo, hi) per
    coordinate), ``components`` and the methods below.
    """

    id = "base"
    coord_names: tuple = ()
    bounds: tuple = ()
    components: tuple = ()
    operator = False

    def constants(self) -> dict:
        return {}

    @property
    def dim(self) -> int:
        return len(self.coord_names)

    def component(self, name: str) -> Component:
        for c in self.components:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def component_names(self) -> tuple:
        return tuple(c.name for c in self.components)

    def default_lambdas(self) -> dict:
        return {c.name: c.lam for c in self.components}

    # -- to override -----------------------------------------------------
    def residual(self, name: str, jet, x: np.ndarray, inputs=None):
        """Residual of component ``name`` from the jet of u at points x."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, counts: Mapping | None = None,
               inputs=None) -> PointSet:
        raise NotImplementedError

    def exact_derivs(self, x: np.ndarray, inputs=None, instance=None):
        """(u, grad, hess) of the reference solution; shapes (N,), (N,d), (N,d,d)."""
        raise NotImplementedError

    def reference(self, x: np.ndarray, inputs=None, instance=None) -> np.ndarray:
        return self.exact_derivs(x, inputs, instance)[0]

    def test_points(self):
        raise NotImplementedError

    # -- helpers -----------------------------------------------------------
    def check_domain(self, name: str, x: np.ndarray) -> None:
        x = np.asarray(x)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise InputShapeError(f"{self.id}: points must have shape (N, {self.dim})")
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        bad = (x < lo - DOMAIN_TOL) | (x > hi + DOMAIN_TOL)
        if bad.any():
            i = int(np.argwhere(bad.any(axis=1))[0, 0])
            raise DomainError(f"{self.id}: {name} point {x[i].tolist()} lies outside the domain")


# ---------------------------------------------------------------------------
# evaluation contexts
# ---------------------------------------------------------------------------


class NetContext:
    """Evaluates jets of a network (taped, parameter-differentiable).

    ``inputs`` is the table of branch inputs (one row per input function)
    for operator problems.
    """

    def __init__(self, params, arch, inputs=None):
        self.params = params
        self.arch = arch
        self.inputs = inputs

    def inputs_for(self, instance):
        return None if self.inputs is None else self.inputs[instance]

    def jet(self, x, layout: JetLayout, branch=None):
        from .. import nets

        return nets.jet_forward(self.params, self.arch, x, layout, branch=branch)


class ExactContext:
    """Feeds the reference solution's derivatives through the residual operators."""

    def __init__(self, problem: ProblemSpec, inputs=None):
        self.problem = problem
        self.inputs = inputs
        self.instance = None

    def jet(self, x, layout: JetLayout, branch=None):
        u, g, h = self.problem.exact_derivs(x, self.inputs, self.instance)
        return ad.constant(jet_from_derivs(layout, u, g, h))


def jet_from_derivs(layout: JetLayout, u, grad, hess) -> np.ndarray:
    """Assemble a (C, N, 1) jet array from value, gradient and Hessian."""
    n = u.shape[0]
    out = np.zeros((layout.channels, n, 1))
    out[0, :, 0] = u
    for k, axis in enumerate(layout.first):
        out[1 + k, :, 0] = grad[:, axis]
    for k, terms in enumerate(layout.second):
        acc = np.zeros(n)
        for coef, a, b in terms:
            acc += coef * hess[:, layout.first[a], layout.first[b]]
        out[1 + layout.nf + k, :, 0] = acc
    return out


def residuals(problem: ProblemSpec, ctx, points: PointSet, names=None, idx=None) -> dict:
    """Residual vectors (taped) per component.

    ``idx`` optionally maps component names to index arrays selecting a
    batch of the point set.
    """
    out = {}
    for name in names or problem.component_names:
        comp = problem.component(name)
        sel = slice(None) if idx is None or name not in idx else idx[name]
        x, inst = points.take(name, sel)
        problem.check_domain(name, x)
        branch = None
        if problem.operator:
            branch = ctx.inputs_for(inst) if hasattr(ctx, "inputs_for") else None
        if isinstance(ctx, ExactContext):
            ctx.instance = inst
        jet = ctx.jet(x, comp.layout, branch=branch)
        out[name] = problem.residual(name, jet, x, inst)
    return out


def channel(jet, c: int):
    """Scalar-output channel ``c`` of a jet as an (N,) taped vector."""
    return jet[c, :, 0]


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------


def uniform_grid(bounds, counts) -> np.ndarray:
    """Tensor grid including the end points, first axis varying slowest."""
    axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(bounds, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def interior_grid(bounds, counts) -> np.ndarray:
    """Tensor grid of the points strictly inside (end points dropped)."""
    axes = [np.linspace(lo, hi, n + 2)[1:-1] for (lo, hi), n in zip(bounds, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def latin_hypercube(n: int, bounds, rng: np.random.Generator) -> np.ndarray:
    """One point per stratum along every axis, strata paired by random permutations."""
    if n < 1:
        raise ValueError("n must be >= 1")
    d = len(bounds)
    u = (rng.permuted(np.tile(np.arange(n), (d, 1)), axis=1).T + rng.random((n, d))) / n
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    return lo + u * (hi - lo)


def random_uniform(n: int, bounds, rng: np.random.Generator) -> np.ndarray:
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    return lo + rng.random((n, len(bounds))) * (hi - lo)


def square_boundary(n: int, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    """n points evenly spaced along the perimeter of [lo, hi]^2."""
    side = hi - lo
    s = np.arange(n) * (4.0 * side / n)
    edge, r = np.divmod(s, side)
    pts = np.empty((n, 2))
    for e, (x0, y0, dx, dy) in enumerate(((lo, lo, 1, 0), (hi, lo, 0, 1), (hi, hi, -1, 0), (lo, hi, 0, -1))):
        m = edge == e
        pts[m, 0] = x0 + dx * r[m]
        pts[m, 1] = y0 + dy * r[m]
    return pts


# ---------------------------------------------------------------------------
# error metrics
# ---------------------------------------------------------------------------


def relative_l2(pred, ref) -> float:
    """||pred - ref|| / ||ref||; 2-D inputs give the mean over rows (instances)."""
    pred, ref = np.asarray(pred, dtype=float), np.asarray(ref, dtype=float)
    if pred.shape != ref.shape:
        raise InputShapeError(f"shape mismatch {pred.shape} vs {ref.shape}")
    if ref.ndim == 2:
        num = np.linalg.norm(pred - ref, axis=1)
        den = np.linalg.norm(ref, axis=1)
        if (den == 0).any():
            raise ValueError("reference has zero norm")
        return float(np.mean(num / den))
    den = np.linalg.norm(ref)
    if den == 0:
        raise ValueError("reference has zero norm")
    return float(np.linalg.norm(pred - ref) / den)


def reference_grid_2d(nx: int = 101, nt: int = 101) -> np.ndarray:
    """(x, t) test grid on [-1, 1] x [0, 1], matching the oracle cache files."""
    from .oracles import reference_grid

    return np.stack(reference_grid(nx, nt), axis=1)
