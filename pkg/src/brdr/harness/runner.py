"""Training loop, metrics files and checkpoints.

Per iteration: sample batch, forward residuals, irdr and weight update,
loss assembly, backpropagation, scale update with gradient correction, Adam
step.  Output directory layout::

    config.yaml       canonical expanded configuration
    metrics.csv       one row per logging interval (deterministic)
    timing.csv        iter, wall_ms (wall-clock, not reproducible)
    checkpoint.bin    last good parameters (iteration 0, every log row, end)
    snapshots/        weights_<component>_<iter>.csv
    irdr_mean.csv     per-point running mean irdr (when track_irdr is set)
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from .. import diagnostics as diag
from .. import nets
from .._alloc import tune_allocator
from ..errors import NumericalDivergenceError
from ..optim import AdamState, LrSchedule, adam_step
from ..problems import NetContext, make_problem, relative_l2, residuals, sample_operator_instances
from ..weighting import ComponentWeights, SchemeParams, WeightingScheme, update_scale, weighted_loss
from .config import ExperimentConfig, write_config

# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def metric_columns(components) -> list:
    """iter, lr, s, loss_total, loss_<c>..., ratio_<c>_R..., rel_l2.

    ``loss_<c>`` is the unweighted mean squared residual of the batch and
    ``ratio_<c>_R`` is lambda_c mean(w_c) / (lambda_R mean(w_R)).
    """
    cols = ["iter", "lr", "s", "loss_total"]
    cols += [f"loss_{c}" for c in components]
    cols += [f"ratio_{c}_R" for c in components if c != "R"]
    cols.append("rel_l2")
    return cols


@dataclass
class MetricsRecord:
    iter: int
    lr: float
    s: float
    loss_total: float
    losses: dict
    ratios: dict
    rel_l2: float
    wall_ms: float = 0.0

    def row(self, columns) -> list:
        vals = {"iter": self.iter, "lr": self.lr, "s": self.s, "loss_total": self.loss_total,
                "rel_l2": self.rel_l2}
        vals.update({f"loss_{k}": v for k, v in self.losses.items()})
        vals.update({f"ratio_{k}_R": v for k, v in self.ratios.items()})
        return [str(vals[c]) if c == "iter" else _fmt(vals[c]) for c in columns]


def _fmt(v) -> str:
    return f"{float(v):.17g}"


class MetricsWriter:
    """Streams metric rows; the header is written on open."""

    def __init__(self, path, columns):
        self.path = Path(path)
        self.columns = list(columns)
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(self.columns)
        self._fh.flush()

    def write(self, rec: MetricsRecord) -> None:
        self.write_row(rec.row(self.columns))

    def write_row(self, values) -> None:
        self._w.writerow(values)
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def emit_metrics(records, path, columns) -> Path:
    w = MetricsWriter(path, columns)
    try:
        for r in records:
            w.write(r)
    finally:
        w.close()
    return Path(path)


def read_metrics(path) -> dict:
    """Columns of a metrics CSV as arrays (iter as int)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], rows[1:]
    out = {}
    for i, name in enumerate(head):
        col = [r[i] for r in body]
        out[name] = np.array([int(v) for v in col], dtype=np.int64) if name == "iter" \
            else np.array([float(v) for v in col])
    return out


# ---------------------------------------------------------------------------
# experiment
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    final: MetricsRecord | None
    out_dir: Path
    records: list
    params: nets.NetworkParams
    scheme: WeightingScheme
    irdr: diag.IrdrTrace | None = None
    status: str = "completed"
    extra: dict = field(default_factory=dict)


class Experiment:
    """All state of one training run, built deterministically from the config."""

    def __init__(self, cfg: ExperimentConfig, out_dir=None, seed: int | None = None):
        if seed is not None:
            cfg.seed = int(seed)
        self.cfg = cfg
        self.out_dir = Path(out_dir if out_dir is not None else cfg.output.dir)
        self.dtype = np.dtype(cfg.precision)
        streams = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(5)]
        rng_init, rng_points, rng_scheme, self.rng_batch, rng_test = streams

        self.problem = make_problem(cfg.problem.id, **cfg.problem.constants)
        self.arch = cfg.arch_descriptor
        self.inputs = None
        if self.problem.operator:
            train = sample_operator_instances(cfg.problem.n_train, rng_points, self.problem.n_modes,
                                              self.problem.n_sensors)
            self.inputs = self.problem.bind(train).astype(self.dtype)
            self.test_instances = sample_operator_instances(cfg.problem.n_test, rng_test,
                                                            self.problem.n_modes,
                                                            self.problem.n_sensors)
        self.points = self.problem.sample(rng_points, cfg.problem.points or None)
        self.params = nets.init_params(self.arch, rng_init, dtype=self.dtype)
        self.names = self.problem.component_names
        self.counts = {k: self.points.count(k) for k in self.names}
        lam = self.problem.default_lambdas()
        lam.update(cfg.scheme.lambdas)
        self.comps = ComponentWeights(self.names, [self.counts[k] for k in self.names],
                                      [lam[k] for k in self.names])
        s = cfg.scheme
        sp = SchemeParams(s.name, s.beta_c, s.beta_w, s.lr_w, s.rba_decay, s.rba_lr,
                          s.rba_offset, s.rba_component, dict(s.lambdas))
        self.scheme = WeightingScheme(sp, self.comps, rng_scheme)
        o = cfg.optimizer
        self.schedule = LrSchedule(o.lr, o.gamma, o.interval)
        self.adam = AdamState.zeros(self.params.size, self.dtype, beta1=o.beta1, beta2=o.beta2,
                                    epsilon=o.epsilon)
        self.full_batch = not cfg.batch
        self._full_local = {k: np.arange(self.counts[k]) for k in self.names}
        self._full_global = self.scheme.global_indices(self._full_local)
        self.t = 0
        self._test = None

    # -- one iteration -------------------------------------------------------
    def sample_batch(self) -> dict | None:
        """Local indices per component, or None for full batch."""
        if self.full_batch:
            return None
        out = {}
        for k in self.names:
            if k == "I_t" and "I" in out:
                out[k] = out["I"]  # I and I_t share their points
                continue
            n, b = self.counts[k], self.cfg.batch.get(k, self.counts[k])
            out[k] = np.arange(n) if b >= n else self.rng_batch.choice(n, size=b, replace=False)
        return out

    def step(self) -> dict:
        t = self.t + 1
        lr = self.schedule(t - 1)
        idx = self.sample_batch()
        local = self._full_local if idx is None else idx
        ctx = NetContext(self.params, self.arch, self.inputs)
        res = residuals(self.problem, ctx, self.points, idx=idx)
        values = {k: res[k].value for k in self.names}
        for k, v in values.items():
            if not np.isfinite(v).all():
                raise NumericalDivergenceError(f"non-finite {k} residual", t)
        self.scheme.step(values, local, t)
        s_used = self.scheme.scale.s if self.scheme.uses_scale else 1.0
        parts = [(self.comps.lam(k), self.counts[k], self.scheme.weights(k, local[k]), res[k])
                 for k in self.names]
        loss = weighted_loss(parts, s_used)
        grad = ad.param_gradient(loss, self.params.size, iteration=t)
        if self.scheme.uses_scale:
            _, mult = update_scale(self.scheme.scale, float(loss.value), grad, eta=lr)
            grad = grad.scaled(mult)
        adam_step(self.adam, self.params.theta, grad, lr, iteration=t)
        if not np.isfinite(self.params.theta).all():
            raise NumericalDivergenceError("non-finite parameters", t)
        self.t = t
        return {"lr": lr, "loss": float(loss.value), "values": values, "local": local}

    # -- evaluation ----------------------------------------------------------
    def test_data(self):
        if self._test is None:
            p = self.problem
            if p.operator:
                x = p.test_points()
                ref = np.stack([p.exact_field(s.b, x) for s in self.test_instances])
                self._test = (x, ref)
            elif hasattr(p, "test_reference"):
                self._test = p.test_reference()
            else:
                x = p.test_points()
                self._test = (x, p.reference(x))
        return self._test

    def predict(self, x, instance=None) -> np.ndarray:
        if self.problem.operator:
            sensors = self.test_instances[instance].sensors[None, :]
            return nets.forward(self.params, x, branch=sensors)
        return nets.forward(self.params, x)

    def rel_l2(self) -> float:
        x, ref = self.test_data()
        if self.problem.operator:
            pred = np.stack([self.predict(x, i) for i in range(len(self.test_instances))])
            return relative_l2(pred, ref)
        return relative_l2(self.predict(x), ref)

    def ratios(self) -> dict:
        base = self.comps.lam("R") * float(np.mean(self.scheme.component_slice("R")))
        out = {}
        for k in self.names:
            if k == "R":
                continue
            num = self.comps.lam(k) * float(np.mean(self.scheme.component_slice(k)))
            out[k] = num / base if base > 0 else math.inf
        return out

    def record(self, info: dict, wall_ms: float) -> MetricsRecord:
        losses = {k: float(np.mean(np.square(info["values"][k], dtype=np.float64))) for k in self.names}
        s = self.scheme.scale.s if self.scheme.uses_scale else 1.0
        return MetricsRecord(self.t, info["lr"], s, info["loss"], losses, self.ratios(),
                             self.rel_l2(), wall_ms)

    # -- artefacts -----------------------------------------------------------
    def save_checkpoint(self, path=None) -> Path:
        path = Path(path) if path is not None else self.out_dir / "checkpoint.bin"
        nets.save_checkpoint(path, self.params, seed=self.cfg.seed, iteration=self.t,
                             extra={"problem": self.problem.id, "scheme": self.cfg.scheme.name})
        return path

    def export_weights(self) -> None:
        snap = self.out_dir / "snapshots"
        for k in self.names:
            diag.export_weight_field(self.scheme.component_slice(k), self.points.coords[k],
                                     snap / f"weights_{k}_{self.t:07d}.csv",
                                     list(self.problem.coord_names))

    def _global(self, local) -> np.ndarray:
        return self._full_global if local is self._full_local else self.scheme.global_indices(local)

    # -- loop ------------------------------------------------------------------
    def run(self) -> RunResult:
        tune_allocator()
        cfg = self.cfg
        self.out_dir.mkdir(parents=True, exist_ok=True)
        write_config(cfg, self.out_dir / "config.yaml")
        columns = metric_columns(self.names)
        metrics = MetricsWriter(self.out_dir / "metrics.csv", columns)
        timing = MetricsWriter(self.out_dir / "timing.csv", ["iter", "wall_ms"])
        snapshots = set(cfg.snapshot_iterations())
        trace = diag.IrdrTrace.create(self.comps.total) if cfg.output.track_irdr else None
        records, status = [], "completed"
        if cfg.output.checkpoint:
            self.save_checkpoint()
        t0 = time.perf_counter()
        try:
            while self.t < cfg.steps:
                info = self.step()
                if trace is not None:
                    diag.track_irdr(trace, self.scheme.last_c, self.t, self._global(info["local"]))
                if self.t in snapshots:
                    self.export_weights()
                if self.t % cfg.output.log_interval == 0 or self.t == cfg.steps:
                    rec = self.record(info, (time.perf_counter() - t0) * 1e3)
                    if not all(math.isfinite(v) for v in (rec.loss_total, rec.s, rec.rel_l2)):
                        raise NumericalDivergenceError("non-finite metrics", self.t)
                    metrics.write(rec)
                    timing.write_row([self.t, f"{rec.wall_ms:.3f}"])
                    records.append(rec)
                    if cfg.output.checkpoint:
                        self.save_checkpoint()
        except NumericalDivergenceError:
            status = "diverged"
            raise
        finally:
            metrics.close()
            timing.close()
            if trace is not None:
                self._write_irdr(trace)
            (self.out_dir / "status.txt").write_text(f"{status} {self.t}\n")
        return RunResult(records[-1] if records else None, self.out_dir, records, self.params,
                         self.scheme, trace, status)

    def _write_irdr(self, trace: diag.IrdrTrace) -> None:
        with open(self.out_dir / "irdr_mean.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["component", "index", "mean_irdr"])
            for k in self.names:
                off = self.comps.offsets[k]
                for i in range(self.counts[k]):
                    w.writerow([k, i, _fmt(trace.mean[off + i])])


def run_experiment(cfg: ExperimentConfig, out_dir=None, seed: int | None = None) -> RunResult:
    """Train per the config; writes the artefacts listed in the module docstring."""
    return Experiment(cfg, out_dir, seed).run()


def irdr_max_by_component(trace: diag.IrdrTrace, comps: ComponentWeights) -> dict:
    out = {}
    for k, off in comps.offsets.items():
        out[k] = float(trace.mean[off:off + comps.count(k)].max())
    return out
