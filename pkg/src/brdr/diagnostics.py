"""Convergence diagnostics: irdr averages, empirical NTK, weight snapshots."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .errors import DiagnosticScaleError, InputShapeError

NTK_CAP = 512


# ---------------------------------------------------------------------------
# irdr running mean
# ---------------------------------------------------------------------------


@dataclass
class IrdrTrace:
    """Per-point running mean of the irdr since the first iteration."""

    mean: np.ndarray
    count: np.ndarray
    snapshot_at: tuple = ()
    snapshots: dict = field(default_factory=dict)

    @classmethod
    def create(cls, n: int, snapshot_at=()) -> "IrdrTrace":
        return cls(np.zeros(n), np.zeros(n, dtype=np.int64), tuple(snapshot_at))

    def max(self) -> float:
        seen = self.count > 0
        return float(self.mean[seen].max()) if seen.any() else 0.0


def track_irdr(trace: IrdrTrace, c, t: int, indices=None) -> IrdrTrace:
    """Fold the irdr values of iteration t into the running means."""
    if t < 1:
        raise ValueError("iteration count starts at 1")
    c = np.asarray(c, dtype=np.float64)
    idx = np.arange(trace.mean.size) if indices is None else np.asarray(indices, dtype=np.int64)
    if c.shape != idx.shape:
        raise InputShapeError("irdr values and indices must align")
    k = trace.count[idx] + 1
    trace.count[idx] = k
    m = trace.mean[idx]
    trace.mean[idx] = m + (c - m) / k
    if t in trace.snapshot_at:
        trace.snapshots[t] = trace.mean.copy()
    return trace


# ---------------------------------------------------------------------------
# symmetric eigensolver
# ---------------------------------------------------------------------------


def _round_robin(m: int):
    """Pairings of m (even) players such that every pair meets once."""
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        rounds.append((np.array(players[: m // 2]), np.array(players[m // 2:][::-1])))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(a, tol: float = 1e-15, max_sweeps: int = 60):
    """Eigen-decomposition of a symmetric matrix by parallel-order cyclic Jacobi.

    Each round applies n/2 rotations on disjoint index pairs at once; they
    commute, so a round is a single orthogonal similarity.  Returns the
    eigenvalues in ascending order and the matching orthonormal columns.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InputShapeError("jacobi_eigh needs a square matrix")
    n = a.shape[0]
    if n == 0:
        return np.zeros(0), np.zeros((0, 0))
    a = 0.5 * (a + a.T)
    m = n + (n % 2)
    if m != n:
        # a decoupled dummy row keeps the pairing even; it is removed below
        pad = np.zeros((m, m))
        pad[:n, :n] = a
        a = pad
    v = np.eye(m)
    rounds = _round_robin(m)
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return np.zeros(n), np.eye(n)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= tol * scale:
            break
        for p, q in rounds:
            apq = a[p, q]
            nz = np.abs(apq) > 1e-300
            if not nz.any():
                continue
            app, aqq = a[p, p], a[q, q]
            theta = np.where(nz, (aqq - app) / (2.0 * np.where(nz, apq, 1.0)), 0.0)
            t = np.where(nz, np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0)), 0.0)
            t = np.where(nz & (theta == 0.0), 1.0, t)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            rp, rq = a[p, :], a[q, :]
            a[p, :], a[q, :] = c[:, None] * rp - s[:, None] * rq, s[:, None] * rp + c[:, None] * rq
            cp, cq = a[:, p], a[:, q]
            a[:, p], a[:, q] = cp * c - cq * s, cp * s + cq * c
            vp, vq = v[:, p], v[:, q]
            v[:, p], v[:, q] = vp * c - vq * s, vp * s + vq * c
    else:
        raise DiagnosticScaleError("Jacobi iteration did not converge")
    evals = np.diag(a).copy()
    if m != n:
        keep = np.argsort(np.abs(v[n, :]))[:n]  # drop the dummy eigenvector
        evals, v = evals[keep], v[:n, keep]
    order = np.argsort(evals, kind="stable")
    return evals[order], v[:, order]


# ---------------------------------------------------------------------------
# empirical NTK
# ---------------------------------------------------------------------------


@dataclass
class NtkMatrix:
    k: np.ndarray
    evals: np.ndarray
    q: np.ndarray
    blocks: dict = field(default_factory=dict)

    def reconstruction_error(self) -> float:
        rec = (self.q * self.evals) @ self.q.T
        den = np.linalg.norm(self.k)
        return float(np.linalg.norm(rec - self.k) / (den if den > 0 else 1.0))


def residual_jacobian(residual_fn: Callable, size: int) -> np.ndarray:
    """Rows dR_i/dtheta of a taped residual vector, one backward pass per row."""
    out = residual_fn()
    r = ad.as_var(out)
    if r.value.ndim != 1:
        raise InputShapeError("residual_fn must return a vector")
    p = r.value.shape[0]
    jac = np.zeros((p, size))
    for i in range(p):
        seed = np.zeros_like(r.value)
        seed[i] = 1.0
        row = jac[i]

        def on_leaf(node, g, row=row):
            row[node.leaf.offset:node.leaf.offset + node.leaf.size] += g.reshape(-1)

        ad.backward(r, seed, on_leaf)
    return jac


def ntk_matrix(residual_fn: Callable, size: int, cap: int = NTK_CAP, blocks=None) -> NtkMatrix:
    """Gram matrix of residual parameter-gradients and its eigen-decomposition.

    ``residual_fn()`` returns all residuals (PDE and boundary blocks stacked)
    as one taped vector; ``blocks`` optionally names index ranges.
    """
    probe = ad.as_var(residual_fn())
    n = probe.value.shape[0]
    if n > cap:
        raise DiagnosticScaleError(f"{n} points exceed the NTK diagnostic cap of {cap}")
    jac = residual_jacobian(lambda: probe, size)
    full = jac @ jac.T
    k = np.triu(full) + np.triu(full, 1).T
    evals, q = jacobi_eigh(k)
    return NtkMatrix(k, evals, q, dict(blocks or {}))


def ntk_predict_residuals(ntk: NtkMatrix, r0, eta: float, t) -> np.ndarray:
    """Linearised residual evolution Q exp(-2 eta Lambda t) Q^T r0."""
    r0 = np.asarray(r0, dtype=np.float64)
    if np.isscalar(t) and t == 0:
        return r0.copy()
    decay = np.exp(-2.0 * eta * ntk.evals * t)
    return ntk.q @ (decay * (ntk.q.T @ r0))


def write_eigenvalues(path, evals) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "eigenvalue"])
        for i, v in enumerate(evals):
            w.writerow([i, f"{v:.17g}"])
    return path


# ---------------------------------------------------------------------------
# weight-field snapshots
# ---------------------------------------------------------------------------


def export_weight_field(w, coords, path, coord_names=None) -> Path:
    """CSV rows (coords..., w, log10_w)."""
    w = np.asarray(w, dtype=np.float64)
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim == 1:
        coords = coords[:, None]
    if coords.shape[0] != w.shape[0]:
        raise InputShapeError("weights and coordinates must have the same length")
    names = list(coord_names or [f"x{i}" for i in range(coords.shape[1])])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with np.errstate(divide="ignore"):
        lw = np.log10(w)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(names + ["w", "log10_w"])
        for row, wi, li in zip(coords, w, lw):
            out.writerow([f"{v:.17g}" for v in row] + [f"{wi:.17g}", f"{li:.17g}"])
    os.replace(tmp, path)
    return path


def read_weight_field(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(head))
    return {k: data[:, i] for i, k in enumerate(head)}


# ---------------------------------------------------------------------------
# synthetic irdr streams (scalar recursion)
# ---------------------------------------------------------------------------


def irdr_stream(r, beta_c: float, eps: float = 1e-14) -> np.ndarray:
    """irdr of a scalar residual sequence r_1, r_2, ... (full-batch recursion)."""
    from .weighting import WeightState, compute_irdr

    r = np.asarray(r, dtype=np.float64)
    st = WeightState.create(1, beta_c=beta_c, eps=eps)
    out = np.empty(r.size)
    for t in range(1, r.size + 1):
        out[t - 1] = compute_irdr(st, r[t - 1:t], np.zeros(1, dtype=np.int64), t)[0]
    return out


def irdr_exponential(lam, beta_c: float, steps: int, r0: float = 1.0, eps: float = 1e-14) -> np.ndarray:
    """irdr at iteration ``steps`` for R = r0 exp(-lam t), one value per lam.

    Runs the same EMA recursion as :func:`weighting.compute_irdr`, vectorised
    over the decay rates.
    """
    from .weighting import WeightState, compute_irdr

    lam = np.atleast_1d(np.asarray(lam, dtype=np.float64))
    st = WeightState.create(lam.size, beta_c=beta_c, eps=eps)
    idx = np.arange(lam.size)
    c = np.ones(lam.size)
    for t in range(1, steps + 1):
        c = compute_irdr(st, r0 * np.exp(-lam * t), idx, t)
    return c


def two_phase_residual(t, lam: float = 1e-5, switch: int = 100000, r0: float = 1.0) -> np.ndarray:
    """R0 exp(-lam t) up to ``switch``, then decaying at half the rate."""
    t = np.asarray(t, dtype=np.float64)
    return np.where(t <= switch, r0 * np.exp(-lam * t),
                    r0 * np.exp(-lam * switch) * np.exp(-0.5 * lam * (t - switch)))
