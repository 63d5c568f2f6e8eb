"""mFCN and mDeepONet architectures, Fourier input embedding, initialization
and the checkpoint file format."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import JetLayout, Var
from .errors import InputShapeError


@dataclass(frozen=True)
class ArchDescriptor:
    """Network shape.

    ``input_dim`` is the dimension of the raw coordinates (for mDeepONet it
    must equal ``trunk_input_dim``).  With ``fourier_modes > 0`` the first
    coordinate is lifted to ``[sin(pi B x), cos(pi B x)]`` and the remaining
    coordinates are passed through.
    """

    kind: str = "mfcn"
    input_dim: int = 1
    hidden_width: int = 32
    hidden_layers: int = 4
    output_dim: int = 1
    fourier_modes: int = 0
    branch_input_dim: int = 0
    trunk_input_dim: int = 0
    activation: str = "tanh"

    def __post_init__(self):
        if self.kind not in ("mfcn", "mdeeponet"):
            raise ValueError(f"unknown architecture kind {self.kind!r}")
        if self.hidden_width < 1 or self.hidden_layers < 1:
            raise ValueError("hidden_width and hidden_layers must be >= 1")
        if self.output_dim < 1 or self.input_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        if self.fourier_modes < 0:
            raise ValueError("fourier_modes must be >= 0")
        if self.kind == "mdeeponet":
            if self.branch_input_dim < 1 or self.trunk_input_dim < 1:
                raise ValueError("mDeepONet needs branch_input_dim and trunk_input_dim")
            if self.input_dim != self.trunk_input_dim:
                raise ValueError("input_dim must equal trunk_input_dim for mDeepONet")
            if self.fourier_modes:
                raise ValueError("the Fourier embedding is only defined for mFCN")
        if self.activation not in ad.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def coord_dim(self) -> int:
        return self.input_dim

    @property
    def features_dim(self) -> int:
        if self.fourier_modes:
            return 2 * self.fourier_modes + self.input_dim - 1
        return self.input_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "ArchDescriptor":
        return cls(**d)

    @classmethod
    def parse(cls, text: str) -> "ArchDescriptor":
        """Parse ``kind,key=value,...`` (e.g. ``mfcn,in=2,width=32,layers=3``)."""
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if not parts:
            raise ValueError("empty architecture descriptor")
        aliases = {"in": "input_dim", "width": "hidden_width", "layers": "hidden_layers",
                   "out": "output_dim", "modes": "fourier_modes",
                   "branch": "branch_input_dim", "trunk": "trunk_input_dim",
                   "act": "activation"}
        kw = {"kind": parts[0].lower()}
        for p in parts[1:]:
            key, _, val = p.partition("=")
            key = aliases.get(key.strip(), key.strip())
            kw[key] = val.strip() if key == "activation" else int(val)
        if kw["kind"] == "mdeeponet":
            kw.setdefault("trunk_input_dim", kw.get("input_dim", 2))
            kw["input_dim"] = kw["trunk_input_dim"]
            kw.setdefault("output_dim", kw.get("hidden_width", 32))
        return cls(**kw)


def param_shapes(arch: ArchDescriptor):
    """Canonical (name, shape, fan_in) list."""
    w, L = arch.hidden_width, arch.hidden_layers
    shapes = []

    def layer(name, n_out, n_in):
        shapes.append((f"W{name}", (n_out, n_in), n_in))
        shapes.append((f"b{name}", (n_out,), n_in))

    if arch.kind == "mfcn":
        n0 = arch.features_dim
        layer("U", w, n0)
        layer("V", w, n0)
        layer("1", w, n0)
        for l in range(2, L + 1):
            layer(str(l), w, w)
        layer(str(L + 1), arch.output_dim, w)
        return shapes

    for tower, gate, n0 in (("branch.", "U", arch.branch_input_dim),
                            ("trunk.", "V", arch.trunk_input_dim)):
        layer(tower + gate, w, n0)
        layer(tower + "1", w, n0)
        for l in range(2, L + 1):
            layer(f"{tower}{l}", w, w)
        layer(f"{tower}{L + 1}", arch.output_dim, w)
    # the tower prefix sits inside the weight name: "Wbranch.1" -> "branch.W1"
    return [(_tidy(name), shape, fan) for name, shape, fan in shapes]


def _tidy(name):
    kind, rest = name[0], name[1:]
    if "." in rest:
        tower, layer = rest.split(".", 1)
        return f"{tower}.{kind}{layer}"
    return name


class NetworkParams:
    """Flat parameter vector with named views in canonical order."""

    def __init__(self, arch: ArchDescriptor, theta: np.ndarray):
        self.arch = arch
        self.layout = []
        offset = 0
        for name, shape, _ in param_shapes(arch):
            size = int(np.prod(shape))
            self.layout.append((name, shape, offset))
            offset += size
        if theta.shape != (offset,):
            raise InputShapeError(f"expected {offset} parameters, got shape {theta.shape}")
        self.theta = theta

    @property
    def size(self) -> int:
        return self.theta.size

    @property
    def dtype(self):
        return self.theta.dtype

    def arrays(self) -> dict:
        return {name: self.theta[off:off + int(np.prod(shape))].reshape(shape)
                for name, shape, off in self.layout}

    def vars(self) -> dict:
        return {name: ad.param_var(self, self.theta, off, shape)
                for name, shape, off in self.layout}

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.arch, self.theta.copy())

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams(self.arch, self.theta.astype(dtype))


def init_params(arch: ArchDescriptor, rng: np.random.Generator, dtype=np.float64) -> NetworkParams:
    """Every weight and bias of a layer with fan-in n ~ U(-1/sqrt(n), 1/sqrt(n))."""
    chunks = []
    for _, shape, fan_in in param_shapes(arch):
        bound = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, size=shape).ravel())
    return NetworkParams(arch, np.concatenate(chunks).astype(dtype))


# ---------------------------------------------------------------------------
# plain forward passes
# ---------------------------------------------------------------------------


def fourier_embed(x, t, modes: int):
    """Lift ``x`` in [-1, 1] to ``[sin(pi B x), cos(pi B x), t]`` with B = 1..modes.

    Works on scalars or on arrays of equal shape; the feature axis is last.
    """
    if modes < 1:
        raise ValueError("modes must be >= 1")
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=x.dtype)
    arg = np.pi * np.multiply.outer(x, np.arange(1, modes + 1, dtype=x.dtype))
    return np.concatenate([np.sin(arg), np.cos(arg), t[..., None]], axis=-1)


def _embed(arch, x):
    if not arch.fourier_modes:
        return x
    k = np.arange(1, arch.fourier_modes + 1, dtype=x.dtype)
    arg = np.pi * x[:, :1] * k
    return np.concatenate([np.sin(arg), np.cos(arg), x[:, 1:]], axis=1)


def _as_batch(x, dim):
    x = np.asarray(x)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != dim:
        raise InputShapeError(f"expected inputs of dimension {dim}, got {x.shape[1]}")
    return x, single


def mfcn_forward(params: NetworkParams, x):
    arch = params.arch
    x, single = _as_batch(np.asarray(x, dtype=params.dtype), arch.coord_dim)
    p = params.arrays()
    phi = ad.ACTIVATIONS[arch.activation].derivs
    h0 = _embed(arch, x)
    U = phi(h0 @ p["WU"].T + p["bU"])[0]
    V = phi(h0 @ p["WV"].T + p["bV"])[0]
    H = phi(h0 @ p["W1"].T + p["b1"])[0]
    for l in range(2, arch.hidden_layers + 1):
        Z = phi(H @ p[f"W{l}"].T + p[f"b{l}"])[0]
        H = (1.0 - Z) * U + Z * V
    L1 = arch.hidden_layers + 1
    out = H @ p[f"W{L1}"].T + p[f"b{L1}"]
    return out[0] if single else out


def mdeeponet_forward(params: NetworkParams, u_branch, x_trunk):
    """G(u)(x): inner product of branch and trunk tower outputs.

    Both towers are gated by the same U (from the branch input) and V (from
    the trunk input).  Batched inputs pair row i of ``u_branch`` with row i of
    ``x_trunk``; a single branch row is broadcast to every trunk row.
    """
    arch = params.arch
    dt = params.dtype
    xb, single = _as_batch(np.asarray(x_trunk, dtype=dt), arch.trunk_input_dim)
    ub = np.atleast_2d(np.asarray(u_branch, dtype=dt))
    if ub.shape[1] != arch.branch_input_dim:
        raise InputShapeError(
            f"branch input must have {arch.branch_input_dim} sensor values, got {ub.shape[1]}")
    if ub.shape[0] == 1 and xb.shape[0] > 1:
        ub = np.broadcast_to(ub, (xb.shape[0], ub.shape[1]))
    if ub.shape[0] != xb.shape[0]:
        raise InputShapeError("branch and trunk batches differ in length")
    p = params.arrays()
    phi = ad.ACTIVATIONS[arch.activation].derivs
    U = phi(ub @ p["branch.WU"].T + p["branch.bU"])[0]
    V = phi(xb @ p["trunk.WV"].T + p["trunk.bV"])[0]
    Hu = phi(ub @ p["branch.W1"].T + p["branch.b1"])[0]
    Hx = phi(xb @ p["trunk.W1"].T + p["trunk.b1"])[0]
    for l in range(2, arch.hidden_layers + 1):
        Zu = phi(Hu @ p[f"branch.W{l}"].T + p[f"branch.b{l}"])[0]
        Zx = phi(Hx @ p[f"trunk.W{l}"].T + p[f"trunk.b{l}"])[0]
        Hu = (1.0 - Zu) * U + Zu * V
        Hx = (1.0 - Zx) * U + Zx * V
    L1 = arch.hidden_layers + 1
    Ou = Hu @ p[f"branch.W{L1}"].T + p[f"branch.b{L1}"]
    Ox = Hx @ p[f"trunk.W{L1}"].T + p[f"trunk.b{L1}"]
    out = (Ou * Ox).sum(axis=1)
    return out[0] if single else out


def forward(params: NetworkParams, x, branch=None):
    """Scalar network output for a batch of coordinates, shape (N,)."""
    if params.arch.kind == "mdeeponet":
        return mdeeponet_forward(params, branch, x)
    out = mfcn_forward(params, np.atleast_2d(x))
    return out[:, 0]


# ---------------------------------------------------------------------------
# jet (taped) forward passes
# ---------------------------------------------------------------------------


def fourier_embed_jet(xj: np.ndarray, layout: JetLayout, modes: int) -> np.ndarray:
    """Push an input jet of (x, rest...) through the Fourier lifting."""
    x = xj[:, :, :1]
    k = np.arange(1, modes + 1, dtype=xj.dtype) * np.pi
    arg = x[0] * k
    s, c = np.sin(arg), np.cos(arg)
    # jets of the scaled argument k*x are k times the jets of x
    zj = x * k
    sin_j = ad.apply_elementwise_jet(zj, layout, s, c, -s)
    cos_j = ad.apply_elementwise_jet(zj, layout, c, -s, -c)
    return np.concatenate([sin_j, cos_j, xj[:, :, 1:]], axis=2)


def jet_forward(params: NetworkParams, arch: ArchDescriptor, x: np.ndarray,
                layout: JetLayout, branch: np.ndarray | None = None) -> Var:
    """Taped jet of the network output, shape (channels, N, output_dim).

    For mDeepONet the output is the scalar operator value (last axis 1) and
    ``branch`` holds one row of sensor values per trunk point.
    """
    x = np.asarray(x, dtype=params.dtype)
    if x.ndim != 2 or x.shape[1] != arch.coord_dim:
        raise InputShapeError(f"expected (N, {arch.coord_dim}) inputs, got {x.shape}")
    p = params.vars()
    act = arch.activation
    J0 = ad.input_jet(x, layout)
    if arch.fourier_modes:
        J0 = fourier_embed_jet(J0, layout, arch.fourier_modes)

    def pre(J, name):
        return ad.jet_linear(J, p["W" + name], p["b" + name])

    def dense(J, name):
        return ad.jet_act(pre(J, name), layout, act)

    L = arch.hidden_layers
    if arch.kind == "mfcn":
        U, V, H = dense(J0, "U"), dense(J0, "V"), dense(J0, "1")
        for l in range(2, L + 1):
            H = ad.jet_gate(pre(H, str(l)), U, V, layout, act)
        return ad.jet_linear(H, p[f"W{L + 1}"], p[f"b{L + 1}"])

    if branch is None:
        raise InputShapeError("mDeepONet needs branch inputs")
    ub = np.asarray(branch, dtype=params.dtype)
    if ub.ndim == 1:
        ub = ub[None, :]
    if ub.shape[0] == 1 and x.shape[0] > 1:
        ub = np.broadcast_to(ub, (x.shape[0], ub.shape[1]))
    if ub.shape != (x.shape[0], arch.branch_input_dim):
        raise InputShapeError(f"branch inputs must have shape (N, {arch.branch_input_dim})")
    B0 = ub[None]  # constant in the trunk coordinates
    pb = {k[len("branch."):]: v for k, v in p.items() if k.startswith("branch.")}
    pt = {k[len("trunk."):]: v for k, v in p.items() if k.startswith("trunk.")}

    def bpre(J, name, q):
        return ad.jet_linear(J, q["W" + name], q["b" + name])

    def bdense(J, name, q):
        return ad.jet_act(bpre(J, name, q), layout, act)

    U = bdense(B0, "U", pb)
    V = bdense(J0, "V", pt)
    Hu = bdense(B0, "1", pb)
    Hx = bdense(J0, "1", pt)
    for l in range(2, L + 1):
        Hu = ad.jet_gate(bpre(Hu, str(l), pb), U, V, layout, act)
        Hx = ad.jet_gate(bpre(Hx, str(l), pt), U, V, layout, act)
    Ou = ad.jet_linear(Hu, pb[f"W{L + 1}"], pb[f"b{L + 1}"])
    Ox = ad.jet_linear(Hx, pt[f"W{L + 1}"], pt[f"b{L + 1}"])
    return ad.vsum(ad.jet_mul(Ou, Ox, layout), axis=2, keepdims=True)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_DTYPES = {"float64": "<f8", "float32": "<f4"}


def save_checkpoint(path, params: NetworkParams, seed=None, iteration=0, extra=None):
    """One JSON header line, then the parameters as little-endian IEEE-754."""
    precision = np.dtype(params.dtype).name
    header = {
        "arch": params.arch.to_dict(),
        "precision": precision,
        "param_count": int(params.size),
        "seed": seed,
        "iteration": int(iteration),
    }
    if extra:
        header.update(extra)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(params.theta.astype(_DTYPES[precision]).tobytes())
    tmp.replace(path)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        blob = fh.read()
    dtype = np.dtype(_DTYPES[header["precision"]])
    theta = np.frombuffer(blob, dtype=dtype).astype(header["precision"])
    if theta.size != header["param_count"]:
        raise InputShapeError("checkpoint parameter block is truncated")
    arch = ArchDescriptor.from_dict(header["arch"])
    return NetworkParams(arch, theta), header
