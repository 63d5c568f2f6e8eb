"""Experiment configuration: YAML schema, named presets, validation.

A config file is a YAML mapping.  ``preset`` (optional) names a built-in
configuration; every other key overrides it section by section::

    preset: helmholtz-brdr
    seed: 3
    scheme: {name: brdr_plus, lambdas: {B: 100}}
    output: {dir: runs/helm}

Sections: ``problem`` (id, constants, points, n_train, n_test), ``arch``
(see :class:`brdr.nets.ArchDescriptor`), ``scheme``, ``optimizer`` (lr,
gamma, interval, beta1, beta2, epsilon), ``batch`` (component -> batch size;
empty means full batch), ``output`` (dir, log_interval, snapshots,
track_irdr, checkpoint) and the scalars ``steps``, ``seed``, ``precision``.
"""

from __future__ import annotations

import copy
import inspect
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from ..errors import ConfigError
from ..nets import ArchDescriptor
from ..problems import PROBLEMS, make_problem
from ..weighting import SCHEMES


@dataclass
class ProblemConfig:
    id: str = ""
    constants: dict = field(default_factory=dict)
    points: dict = field(default_factory=dict)
    n_train: int = 0  # operator problems: training input functions
    n_test: int = 0  # operator problems: test input functions


@dataclass
class SchemeConfig:
    name: str = "brdr"
    beta_c: float = 0.999
    beta_w: float = 0.999
    lr_w: float = 0.005
    rba_decay: float = 0.999
    rba_lr: float = 0.01
    rba_offset: float = 0.0
    rba_component: str = "R"
    lambdas: dict = field(default_factory=dict)


@dataclass
class OptimizerConfig:
    lr: float = 1e-3
    gamma: float = 1.0
    interval: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass
class OutputConfig:
    dir: str = "runs/out"
    log_interval: int = 100
    snapshots: list | None = None  # None: 10%, 50% and 90% of the steps
    track_irdr: bool = False
    checkpoint: bool = True


@dataclass
class ExperimentConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    arch: dict = field(default_factory=dict)
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    batch: dict = field(default_factory=dict)
    output: OutputConfig = field(default_factory=OutputConfig)
    steps: int = 1000
    seed: int = 0
    precision: str = "float64"

    @property
    def arch_descriptor(self) -> ArchDescriptor:
        return ArchDescriptor(**self.arch)

    def snapshot_iterations(self) -> list:
        if self.output.snapshots is not None:
            return sorted(int(s) for s in self.output.snapshots)
        return sorted({max(1, round(self.steps * f)) for f in (0.1, 0.5, 0.9)})

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {"problem": ProblemConfig, "scheme": SchemeConfig, "optimizer": OptimizerConfig,
             "output": OutputConfig}
_ARCH_KEYS = {f.name for f in fields(ArchDescriptor)}


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------


def _mfcn(input_dim, width, layers, modes=0):
    return {"kind": "mfcn", "input_dim": input_dim, "hidden_width": width,
            "hidden_layers": layers, "fourier_modes": modes}


def _deeponet(width, layers, sensors=101):
    return {"kind": "mdeeponet", "input_dim": 2, "trunk_input_dim": 2,
            "branch_input_dim": sensors, "hidden_width": width, "hidden_layers": layers,
            "output_dim": width}


def _poisson(k, width, layers, steps):
    return {
        "problem": {"id": "poisson", "constants": {"k": float(k)}},
        "arch": _mfcn(1, width, layers),
        "scheme": {"name": "brdr"},
        "optimizer": {"lr": 1e-3},
        "steps": steps,
    }


def _helmholtz(width, layers, side, steps, name="brdr"):
    return {
        "problem": {"id": "helmholtz", "points": {"R": side, "B": 200}},
        "arch": _mfcn(2, width, layers),
        "scheme": {"name": name, "rba_lr": 0.001},  # RBA rate differs on this benchmark
        "optimizer": {"lr": 0.005, "gamma": 0.99, "interval": 250},
        "steps": steps,
    }


def _allencahn(width, layers, n_r, steps):
    return {
        "problem": {"id": "allencahn", "points": {"R": n_r, "I": 512}},
        "arch": _mfcn(2, width, layers, modes=10),
        "scheme": {"name": "brdr_plus", "lambdas": {"I": 100.0}},
        "optimizer": {"lr": 0.001, "gamma": 0.99, "interval": 750},
        "steps": steps,
    }


def _burgers(width, layers, n_r, steps):
    return {
        "problem": {"id": "burgers", "points": {"R": n_r, "I": 100, "B": 200}},
        "arch": _mfcn(2, width, layers),
        "scheme": {"name": "brdr"},
        "optimizer": {"lr": 0.001, "gamma": 0.99, "interval": 100},
        "steps": steps,
    }


def _wave(width, layers, n_train, n_test, steps, batch=10000):
    return {
        "problem": {"id": "wave", "points": {"R": 2500, "B": 100}, "n_train": n_train,
                    "n_test": n_test},
        "arch": _deeponet(width, layers),
        "scheme": {"name": "brdr", "beta_c": 0.9999, "beta_w": 0.999},
        "optimizer": {"lr": 0.001, "gamma": 0.99, "interval": 500},
        "batch": {"R": batch, "B": batch, "I": batch, "I_t": batch},
        "output": {"log_interval": 500, "snapshots": []},
        "steps": steps,
    }


PRESETS = {
    # full-size setups
    "poisson-k2": _poisson(2, 50, 5, 100000),
    "poisson-k4": _poisson(4, 50, 5, 100000),
    "poisson-k8": _poisson(8, 50, 5, 100000),
    "helmholtz-brdr": _helmholtz(128, 6, 101, 100000),
    "allencahn-brdr-plus": _allencahn(128, 6, 25600, 300000),
    "burgers-brdr": _burgers(128, 6, 10000, 40000),
    "wave-op-brdr": _wave(100, 7, 1000, 500, 300000),
    # desk-scale setups
    "poisson-k2-desk": _poisson(2, 32, 4, 50000),
    "poisson-k4-desk": _poisson(4, 32, 4, 50000),
    "poisson-k8-desk": _poisson(8, 32, 4, 50000),
    "helmholtz-brdr-desk": _helmholtz(64, 4, 51, 30000),
    "allencahn-brdr-plus-desk": _allencahn(64, 4, 2560, 5000),
    "burgers-brdr-desk": _burgers(64, 4, 2000, 5000),
    "wave-op-brdr-desk": _wave(64, 4, 200, 100, 20000),
}
for _name, _p in PRESETS.items():
    _p.setdefault("output", {})["dir"] = f"runs/{_name}"
del _name, _p


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("lambdas", "batch"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _key_lines(node, prefix=()) -> dict:
    """Map key paths of a composed YAML mapping to 1-based line numbers."""
    out = {}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = prefix + (str(k.value),)
            out[path] = k.start_mark.line + 1
            out.update(_key_lines(v, path))
    return out


def _load_yaml(text: str, source: str):
    try:
        loader = yaml.SafeLoader(text)
        try:
            node = loader.get_single_node()
            data = loader.construct_document(node) if node is not None else None
        finally:
            loader.dispose()
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"{source}: YAML parse error: {e}", line=line) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping", line=1)
    return data, (_key_lines(node) if node is not None else {})


def _build_section(cls, raw, name, lines):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a mapping", field=name, line=lines.get((name,)))
    allowed = {f.name for f in fields(cls)}
    for k in raw:
        if k not in allowed:
            raise ConfigError(f"unknown key {name}.{k}", field=f"{name}.{k}",
                              line=lines.get((name, str(k))))
    return cls(**raw)


def config_from_dict(data: dict, lines: dict | None = None) -> ExperimentConfig:
    """Expand the preset, reject unknown keys and validate."""
    lines = lines or {}
    data = dict(data)
    preset = data.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}",
                              field="preset", line=lines.get(("preset",)))
        data = _merge(PRESETS[preset], data)
    top = {f.name for f in fields(ExperimentConfig)}
    for k in data:
        if k not in top:
            raise ConfigError(f"unknown key {k}", field=str(k), line=lines.get((str(k),)))
    kw = {}
    for k, v in data.items():
        if k in _SECTIONS:
            kw[k] = _build_section(_SECTIONS[k], v, k, lines)
        else:
            kw[k] = v
    if "arch" in kw:
        arch = kw["arch"] or {}
        if not isinstance(arch, dict):
            raise ConfigError("section 'arch' must be a mapping", field="arch", line=lines.get(("arch",)))
        for k in arch:
            if k not in _ARCH_KEYS:
                raise ConfigError(f"unknown key arch.{k}", field=f"arch.{k}", line=lines.get(("arch", str(k))))
        kw["arch"] = dict(arch)
    if "batch" in kw:
        kw["batch"] = dict(kw["batch"] or {})
    cfg = ExperimentConfig(**kw)
    validate(cfg, lines)
    return cfg


def _fail(msg, name, lines):
    line = lines.get(tuple(name.split(".")))
    raise ConfigError(msg, field=name, line=line)


def validate(cfg: ExperimentConfig, lines: dict | None = None) -> None:
    lines = lines or {}
    p = cfg.problem
    if not p.id:
        _fail("problem.id is required", "problem.id", lines)
    if p.id not in PROBLEMS:
        _fail(f"unknown problem {p.id!r}; choose from {sorted(PROBLEMS)}", "problem.id", lines)
    sig = inspect.signature(PROBLEMS[p.id])
    for k in p.constants:
        if k not in sig.parameters:
            _fail(f"unknown constant {k!r} for problem {p.id}", f"problem.constants.{k}", lines)
    problem = make_problem(p.id, **p.constants)
    names = set(problem.component_names)
    for k, v in p.points.items():
        if k not in names:
            _fail(f"problem {p.id} has no component {k!r}", f"problem.points.{k}", lines)
        if not isinstance(v, int) or v < 1:
            _fail("point counts must be positive integers", f"problem.points.{k}", lines)
    if problem.operator:
        if p.n_train < 1 or p.n_test < 1:
            _fail("operator problems need n_train >= 1 and n_test >= 1", "problem.n_train", lines)
    elif p.n_train or p.n_test:
        _fail("n_train/n_test apply to operator problems only", "problem.n_train", lines)
    try:
        arch = ArchDescriptor(**cfg.arch)
    except (TypeError, ValueError) as e:
        _fail(f"invalid arch: {e}", "arch", lines)
    if arch.input_dim != problem.dim:
        _fail(f"arch.input_dim must be {problem.dim} for {p.id}", "arch.input_dim", lines)
    if problem.operator != (arch.kind == "mdeeponet"):
        _fail(f"problem {p.id} needs kind={'mdeeponet' if problem.operator else 'mfcn'}", "arch.kind", lines)
    s = cfg.scheme
    if s.name not in SCHEMES:
        _fail(f"unknown scheme {s.name!r}; choose from {list(SCHEMES)}", "scheme.name", lines)
    if s.lambdas and s.name not in ("brdr_plus", "rba"):
        _fail("lambda overrides are only allowed for brdr_plus and rba", "scheme.lambdas", lines)
    for k, v in s.lambdas.items():
        if k not in names:
            _fail(f"problem {p.id} has no component {k!r}", f"scheme.lambdas.{k}", lines)
        if not (isinstance(v, (int, float)) and v > 0):
            _fail("weight constants must be positive", f"scheme.lambdas.{k}", lines)
    if not (0 < s.beta_c < 1 and 0 < s.beta_w < 1):
        _fail("beta_c and beta_w must lie in (0, 1)", "scheme.beta_c", lines)
    if s.name == "rba":
        if s.rba_component not in names:
            _fail(f"problem {p.id} has no component {s.rba_component!r}", "scheme.rba_component", lines)
        if not 0 < s.rba_decay < 1:
            _fail("rba_decay must lie in (0, 1)", "scheme.rba_decay", lines)
    if s.lr_w <= 0 or s.rba_lr <= 0:
        _fail("weight learning rates must be positive", "scheme.lr_w", lines)
    o = cfg.optimizer
    if not o.lr > 0:
        _fail("optimizer.lr must be positive", "optimizer.lr", lines)
    if not 0 < o.gamma <= 1:
        _fail("optimizer.gamma must lie in (0, 1]", "optimizer.gamma", lines)
    if not (isinstance(o.interval, int) and o.interval >= 1):
        _fail("optimizer.interval must be an integer >= 1", "optimizer.interval", lines)
    if not (isinstance(cfg.steps, int) and cfg.steps >= 0):
        _fail("steps must be a non-negative integer", "steps", lines)
    if not isinstance(cfg.seed, int):
        _fail("seed must be an integer", "seed", lines)
    if cfg.precision not in ("float64", "float32"):
        _fail("precision must be float64 or float32", "precision", lines)
    for k, v in cfg.batch.items():
        if k not in names:
            _fail(f"problem {p.id} has no component {k!r}", f"batch.{k}", lines)
        if not isinstance(v, int) or v < 1:
            _fail("batch sizes must be positive integers", f"batch.{k}", lines)
    if cfg.batch.get("I") != cfg.batch.get("I_t") and "I_t" in names:
        _fail("I and I_t share their points and must use the same batch size", "batch.I_t", lines)
    if not (isinstance(cfg.output.log_interval, int) and cfg.output.log_interval >= 1):
        _fail("output.log_interval must be an integer >= 1", "output.log_interval", lines)


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    data, lines = _load_yaml(path.read_text(), str(path))
    return config_from_dict(data, lines)


def parse_config_text(text: str) -> ExperimentConfig:
    data, lines = _load_yaml(text, "<text>")
    return config_from_dict(data, lines)


def preset_config(name: str, **overrides) -> ExperimentConfig:
    return config_from_dict({"preset": name, **overrides})


def emit_config(cfg: ExperimentConfig) -> str:
    """Canonical YAML text (fully expanded, no preset)."""
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True, default_flow_style=False)


def write_config(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(emit_config(cfg))
    return path
