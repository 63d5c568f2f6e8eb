"""Point-wise adaptive loss weights.

Implements the balanced-residual-decay-rate update (BRDR, and BRDR+ with
user weight constants), the soft-attention (SA) and residual-based-attention
(RBA) baselines, fixed weights, the global loss scale factor and the weighted
loss assembly.

All points of all loss components share one index space: component ``k``
owns the slice ``offsets[k]:offsets[k] + counts[k]`` of every per-point
array in :class:`WeightState`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParamGradient
from .errors import DegenerateBatchError, NumericalDivergenceError, StationaryPointError

EPS = 1e-14
SCHEMES = ("fixed", "sa", "rba", "brdr", "brdr_plus")


@dataclass
class WeightState:
    """Per-point weights plus the EMA bookkeeping of the irdr estimate."""

    w: np.ndarray
    ema_r4: np.ndarray
    t_last: np.ndarray
    beta_c: float = 0.999
    beta_w: float = 0.999
    eps: float = EPS
    t: int = 0
    # interval and ids of the most recent compute_irdr call, consumed by
    # update_weights_brdr so both updates use the same visit interval
    last_indices: np.ndarray | None = None
    last_dt: np.ndarray | None = None

    @classmethod
    def create(cls, n: int, beta_c: float = 0.999, beta_w: float = 0.999,
               w0: np.ndarray | float = 1.0, eps: float = EPS) -> "WeightState":
        if not (0.0 < beta_c < 1.0 and 0.0 < beta_w <= 1.0):
            raise ValueError("smoothing factors must lie in (0, 1)")
        w = np.empty(n)
        w[:] = w0
        return cls(w, np.zeros(n), np.zeros(n, dtype=np.int64), beta_c, beta_w, eps)

    @property
    def size(self) -> int:
        return self.w.shape[0]


@dataclass
class ScaleState:
    """Global loss multiplier s; its smoothing factor follows the learning rate."""

    s: float = 1.0
    eta: float = 1e-3

    @property
    def beta_s(self) -> float:
        return 1.0 - self.eta


@dataclass
class ComponentWeights:
    """Loss components: names, point counts and weight constants lambda."""

    names: tuple
    counts: tuple
    lambdas: tuple

    def __post_init__(self):
        self.names, self.counts = tuple(self.names), tuple(int(n) for n in self.counts)
        self.lambdas = tuple(float(v) for v in self.lambdas)
        if not (len(self.names) == len(self.counts) == len(self.lambdas)):
            raise ValueError("names, counts and lambdas must align")
        if any(v <= 0 for v in self.lambdas):
            raise ValueError("component weight constants must be positive")
        if any(n < 1 for n in self.counts):
            raise ValueError("every component needs at least one point")

    @property
    def offsets(self) -> dict:
        out, acc = {}, 0
        for name, n in zip(self.names, self.counts):
            out[name] = acc
            acc += n
        return out

    @property
    def total(self) -> int:
        return sum(self.counts)

    def lam(self, name: str) -> float:
        return self.lambdas[self.names.index(name)]

    def count(self, name: str) -> int:
        return self.counts[self.names.index(name)]


def _check_finite(r, what="residual"):
    if not np.isfinite(r).all():
        raise NumericalDivergenceError(f"non-finite {what}")


def compute_irdr(state: WeightState, residuals: np.ndarray, indices: np.ndarray, t: int) -> np.ndarray:
    """Inverse residual decay rate for a batch of points visited at iteration t."""
    if t < 1:
        raise ValueError("iteration count starts at 1")
    r = np.asarray(residuals, dtype=np.float64)
    idx = np.asarray(indices, dtype=np.int64)
    if r.shape != idx.shape:
        raise ValueError("residuals and indices must align")
    _check_finite(r)
    r2 = r * r
    dt = t - state.t_last[idx]
    bc = np.power(state.beta_c, dt)
    ema = bc * state.ema_r4[idx] + (1.0 - bc) * (r2 * r2)
    state.ema_r4[idx] = ema
    state.t_last[idx] = t
    state.t = t
    state.last_indices, state.last_dt = idx, dt
    return r2 / (np.sqrt(ema / (1.0 - state.beta_c ** t)) + state.eps)


def update_weights_brdr(state: WeightState, c: np.ndarray) -> np.ndarray:
    """Move the batch weights towards c / mean(c) with per-point smoothing."""
    if state.last_indices is None:
        raise ValueError("compute_irdr must run before the weight update")
    c = np.asarray(c, dtype=np.float64)
    idx, dt = state.last_indices, state.last_dt
    if c.shape != idx.shape or c.size == 0:
        raise ValueError("c must align with the last irdr batch")
    _check_finite(c, "irdr")
    cbar = c.mean()
    if not cbar > 0.0:
        raise DegenerateBatchError("mean irdr of the batch is zero (all residuals vanish)")
    bw = np.power(state.beta_w, dt)
    state.w[idx] = bw * state.w[idx] + (1.0 - bw) * (c / cbar)
    return state.w


def update_scale(scale: ScaleState, loss: float, grad, eta: float | None = None) -> tuple:
    """Relax s towards the stability-limited maximum; returns (s_new, multiplier)."""
    if eta is not None:
        scale.eta = float(eta)
    sq = grad.sq_norm if isinstance(grad, ParamGradient) else float(grad)
    loss = float(loss)
    if not (np.isfinite(loss) and np.isfinite(sq)):
        raise NumericalDivergenceError("non-finite loss or gradient in scale update")
    if sq <= 0.0:
        raise StationaryPointError("gradient norm is zero; the scale factor is undefined")
    if loss <= 0.0:
        raise StationaryPointError("loss must be positive for the scale update")
    s_old = scale.s
    s_max = (s_old / scale.eta) * (2.0 * loss / sq)
    b = scale.beta_s
    s_new = b * s_old + (1.0 - b) * s_max
    if not (np.isfinite(s_new) and s_new > 0.0):
        # beta_s = 1 - eta < 0 once eta > 1, which can push s out of (0, inf)
        raise NumericalDivergenceError(f"scale factor left (0, inf): {s_new!r}")
    scale.s = s_new
    return scale.s, scale.s / s_old


def update_weights_sa(state: WeightState, residuals, lr_w: float, indices=None) -> np.ndarray:
    """Soft-attention ascent step: w += lr_w * R^2."""
    if lr_w <= 0:
        raise ValueError("lr_w must be positive")
    r = np.asarray(residuals, dtype=np.float64)
    _check_finite(r)
    idx = slice(None) if indices is None else np.asarray(indices, dtype=np.int64)
    state.w[idx] = state.w[idx] + lr_w * (r * r)
    return state.w


def update_weights_rba(state: WeightState, residuals, decay: float, lr: float,
                       offset: float = 0.0, indices=None) -> np.ndarray:
    """Residual-based attention: w <- decay*w + lr*|R|/max|R| + offset."""
    if not 0.0 < decay < 1.0:
        raise ValueError("decay must lie in (0, 1)")
    r = np.abs(np.asarray(residuals, dtype=np.float64))
    _check_finite(r)
    rmax = r.max(initial=0.0)
    if not rmax > 0.0:
        raise DegenerateBatchError("all residuals in the batch are zero")
    idx = slice(None) if indices is None else np.asarray(indices, dtype=np.int64)
    state.w[idx] = decay * state.w[idx] + lr * (r / rmax) + offset
    return state.w


def weighted_loss(components: Sequence, s: float = 1.0):
    """s * sum_k (lambda_k / N_k) * sum_i w_i r_i^2 as a taped scalar.

    ``components`` holds tuples ``(lam, n, w, r)`` where ``r`` is a taped
    residual vector and ``w`` a plain array of the same length.
    """
    total = None
    for lam, n, w, r in components:
        r = ad.as_var(r)
        w = np.asarray(w, dtype=r.dtype)
        term = ad.vsum(ad.mul(ad.mul(r, r), w)) * (float(s) * float(lam) / float(n))
        total = term if total is None else total + term
    if total is None:
        raise ValueError("no loss components")
    return total


# ---------------------------------------------------------------------------
# scheme objects used by the training loop
# ---------------------------------------------------------------------------


@dataclass
class SchemeParams:
    name: str = "brdr"
    beta_c: float = 0.999
    beta_w: float = 0.999
    lr_w: float = 0.005
    rba_decay: float = 0.999
    rba_lr: float = 0.01
    rba_offset: float = 0.0
    rba_component: str = "R"
    lambdas: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in SCHEMES:
            raise ValueError(f"unknown weighting scheme {self.name!r}")


class WeightingScheme:
    """Owns the weights of every training point for one scheme.

    The irdr EMA is maintained for every scheme (it is cheap) so that the
    diagnostics can track it; only BRDR feeds it back into the weights.
    """

    def __init__(self, params: SchemeParams, comps: ComponentWeights, rng: np.random.Generator):
        self.params = params
        self.comps = comps
        self.offsets = comps.offsets
        n = comps.total
        if params.name == "sa":
            w0 = rng.uniform(0.0, 1.0, n)
        elif params.name == "rba":
            w0 = np.ones(n)
            off = self.offsets[params.rba_component]
            w0[off:off + comps.count(params.rba_component)] = 0.0
        else:
            w0 = 1.0
        self.state = WeightState.create(n, params.beta_c, params.beta_w, w0)
        self.scale = ScaleState()
        self.last_c = None

    @property
    def uses_scale(self) -> bool:
        return self.params.name in ("brdr", "brdr_plus")

    def global_indices(self, local: Mapping) -> np.ndarray:
        return np.concatenate([self.offsets[k] + np.asarray(local[k], dtype=np.int64)
                               for k in self.comps.names])

    def step(self, residuals: Mapping, local: Mapping, t: int) -> None:
        """Weight update of iteration t from the batch residual values."""
        p = self.params
        idx = self.global_indices(local)
        r = np.concatenate([np.asarray(residuals[k], dtype=np.float64) for k in self.comps.names])
        c = compute_irdr(self.state, r, idx, t)
        self.last_c = c
        if p.name in ("brdr", "brdr_plus"):
            update_weights_brdr(self.state, c)
        elif p.name == "sa":
            update_weights_sa(self.state, r, p.lr_w, idx)
        elif p.name == "rba":
            k = p.rba_component
            update_weights_rba(self.state, residuals[k], p.rba_decay, p.rba_lr, p.rba_offset,
                               self.offsets[k] + np.asarray(local[k], dtype=np.int64))

    def weights(self, name: str, local) -> np.ndarray:
        return self.state.w[self.offsets[name] + np.asarray(local, dtype=np.int64)]

    def component_slice(self, name: str) -> np.ndarray:
        off = self.offsets[name]
        return self.state.w[off:off + self.comps.count(name)]
