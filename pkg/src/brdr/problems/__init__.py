"""Benchmark PDE problems, samplers, oracle reference solvers and metrics."""

from .base import (Component, ExactContext, NetContext, PointSet, ProblemSpec, interior_grid,
                   jet_from_derivs, latin_hypercube, random_uniform, relative_l2, residuals,
                   square_boundary, uniform_grid)
from .benchmarks import (PROBLEMS, AllenCahn1D, Burgers1D, Helmholtz2D, OperatorSample, Poisson1D,
                         WaveOperator, make_problem, sample_operator_instances, sensor_grid)


def sample_points(problem: ProblemSpec, rng, counts=None) -> PointSet:
    """Training points of ``problem`` (deterministic given the generator state)."""
    return problem.sample(rng, counts)


def reference_solution(problem: ProblemSpec, x, inputs=None, instance=None):
    """Reference values at query points (closed form or oracle)."""
    problem.check_domain("query", x)
    return problem.reference(x, inputs, instance)


__all__ = [
    "AllenCahn1D", "Burgers1D", "Component", "ExactContext", "Helmholtz2D", "NetContext",
    "OperatorSample", "PROBLEMS", "PointSet", "Poisson1D", "ProblemSpec", "WaveOperator",
    "interior_grid", "jet_from_derivs", "latin_hypercube", "make_problem", "random_uniform",
    "reference_solution", "relative_l2", "residuals", "sample_operator_instances",
    "sample_points", "sensor_grid", "square_boundary", "uniform_grid",
]
