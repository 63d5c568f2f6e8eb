"""Reverse-mode tape over numpy arrays with forward-mode input jets.

Network outputs and their first/second derivatives with respect to the
network *inputs* are propagated forward as "jets": stacked arrays of shape
``(C, N, n)`` where channel 0 holds values, the next channels hold first
derivatives along selected input axes and the remaining ones hold selected
second derivatives.  Every jet primitive is a node on the reverse-mode tape,
so any scalar assembled from those derivatives can be differentiated with
respect to the network parameters in a single backward sweep.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import InputShapeError, NumericalDivergenceError, UnsupportedOrderError

try:
    from . import _kernels
except ImportError:  # pragma: no cover - numba missing
    _kernels = None


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------


class Var:
    """A node of the tape: a numpy array plus the recipe for its cotangent."""

    __slots__ = ("value", "parents", "vjp", "requires_grad", "leaf")
    __array_ufunc__ = None  # make ``ndarray <op> Var`` defer to Var

    def __init__(self, value, parents=(), vjp=None, requires_grad=False, leaf=None):
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.leaf = leaf

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def __float__(self):
        return float(self.value)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None):
        return mean(self, axis=axis)


def as_var(x) -> Var:
    if isinstance(x, Var):
        return x
    return Var(np.asarray(x))


def constant(x) -> Var:
    return Var(np.asarray(x))


class ParamLeaf:
    """Marks a tape leaf as a slice of a flat parameter vector."""

    __slots__ = ("owner", "offset", "size")

    def __init__(self, owner, offset, size):
        self.owner = owner
        self.offset = offset
        self.size = size


def param_var(owner, flat: np.ndarray, offset: int, shape) -> Var:
    size = int(np.prod(shape))
    value = flat[offset:offset + size].reshape(shape)
    return Var(value, requires_grad=True, leaf=ParamLeaf(owner, offset, size))


def _node(value, parents, vjp) -> Var:
    if any(p.requires_grad for p in parents):
        return Var(value, parents, vjp, requires_grad=True)
    return Var(value)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _toposort(root: Var):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Var, seed=None, on_leaf=None):
    """Propagate cotangents from ``root`` to every reachable leaf.

    ``on_leaf(node, grad)`` is called once per leaf that carries a
    :class:`ParamLeaf`; other leaves are ignored.
    """
    if seed is None:
        seed = np.ones_like(root.value)
    grads = {id(root): seed}
    for node in reversed(_toposort(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.leaf is not None:
            if on_leaf is not None:
                on_leaf(node, g)
            continue
        if node.vjp is None:
            continue
        for p, gp in zip(node.parents, node.vjp(g)):
            if gp is None or not p.requires_grad:
                continue
            acc = grads.get(id(p))
            grads[id(p)] = gp if acc is None else acc + gp


# ---------------------------------------------------------------------------
# elementwise and reduction primitives
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = as_var(a), as_var(b)
    sa, sb = a.value.shape, b.value.shape
    return _node(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_var(a), as_var(b)
    sa, sb = a.value.shape, b.value.shape
    return _node(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b):
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    return _node(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape) if a.requires_grad else None,
                            _unbroadcast(g * av, bv.shape) if b.requires_grad else None))


def div(a, b):
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    out = av / bv

    def vjp(g):
        ga = _unbroadcast(g / bv, av.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bv, bv.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), vjp)


def neg(a):
    a = as_var(a)
    return _node(-a.value, (a,), lambda g: (-g,))


def power(a, p):
    a = as_var(a)
    av = a.value
    if p == 2:
        return _node(av * av, (a,), lambda g: (2.0 * av * g,))
    return _node(av ** p, (a,), lambda g: (p * av ** (p - 1) * g,))


def square(a):
    return power(a, 2)


def tanh(a):
    a = as_var(a)
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def sin(a):
    a = as_var(a)
    av = a.value
    return _node(np.sin(av), (a,), lambda g: (g * np.cos(av),))


def cos(a):
    a = as_var(a)
    av = a.value
    return _node(np.cos(av), (a,), lambda g: (-g * np.sin(av),))


def exp(a):
    a = as_var(a)
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def vsum(a, axis=None, keepdims=False):
    a = as_var(a)
    shape = a.value.shape
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(out, (a,), vjp)


def mean(a, axis=None):
    a = as_var(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return vsum(a, axis=axis) * (1.0 / n)


def matmul(a, b):
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim not in (1, 2):
        raise InputShapeError("matmul expects a 2-D left operand and a 1-D/2-D right operand")

    def vjp(g):
        if bv.ndim == 1:
            ga = np.outer(g, bv) if a.requires_grad else None
            gb = av.T @ g if b.requires_grad else None
        else:
            ga = g @ bv.T if a.requires_grad else None
            gb = av.T @ g if b.requires_grad else None
        return ga, gb

    return _node(av @ bv, (a, b), vjp)


def _is_fancy(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def getitem(a, idx):
    a = as_var(a)
    shape, dtype = a.value.shape, a.value.dtype
    fancy = _is_fancy(idx)

    def vjp(g):
        full = np.zeros(shape, dtype=dtype)
        if fancy:
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return _node(a.value[idx], (a,), vjp)


def reshape(a, shape):
    a = as_var(a)
    old = a.value.shape
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(parts: Sequence, axis=0):
    parts = [as_var(p) for p in parts]
    sizes = [p.value.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _node(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), vjp)


# ---------------------------------------------------------------------------
# activation table
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Activation:
    """Value and derivatives up to third order (third is needed by backprop
    through second-derivative channels)."""

    name: str
    derivs: Callable[[np.ndarray], tuple]


def _tanh_derivs(z):
    a = np.tanh(z)
    d1 = 1.0 - a * a
    d2 = -2.0 * a * d1
    d3 = d1 * (4.0 * a * a - 2.0 * d1)
    return a, d1, d2, d3


def _identity_derivs(z):
    one = np.ones_like(z)
    zero = np.zeros_like(z)
    return z.copy(), one, zero, zero


ACTIVATIONS = {
    "tanh": Activation("tanh", _tanh_derivs),
    "identity": Activation("identity", _identity_derivs),
}


# ---------------------------------------------------------------------------
# jets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JetLayout:
    """Channel layout of a jet.

    ``first`` lists the input axes that get a first-derivative channel.
    ``second`` lists second-order channels; each is a tuple of terms
    ``(coef, a, b)`` meaning ``coef * d^2/(dx_first[a] dx_first[b])``, so a
    channel can hold a single second derivative or a whole operator such as
    a Laplacian.  Channel order: value, first derivatives, second order.
    """

    first: tuple = ()
    second: tuple = ()

    def __post_init__(self):
        for terms in self.second:
            for _, a, b in terms:
                if not (0 <= a < len(self.first) and 0 <= b < len(self.first)):
                    raise UnsupportedOrderError(
                        f"second-order term {(a, b)} needs first-derivative channels")

    @property
    def channels(self) -> int:
        return 1 + len(self.first) + len(self.second)

    @property
    def nf(self) -> int:
        return len(self.first)

    @cached_property
    def terms(self):
        """Flattened (target channel, channel a, channel b, coef) arrays."""
        tc, ta, tb, tk = [], [], [], []
        for k, terms in enumerate(self.second):
            for coef, a, b in terms:
                tc.append(1 + self.nf + k)
                ta.append(1 + a)
                tb.append(1 + b)
                tk.append(float(coef))
        return (np.array(tc, dtype=np.int64), np.array(ta, dtype=np.int64),
                np.array(tb, dtype=np.int64), np.array(tk, dtype=np.float64))

    def first_channel(self, axis: int) -> int:
        return 1 + self.first.index(axis)

    def second_channel(self, index: int) -> int:
        return 1 + self.nf + index

    def pair_channel(self, axis_a: int, axis_b: int) -> int:
        a, b = self.first.index(axis_a), self.first.index(axis_b)
        for k, terms in enumerate(self.second):
            if len(terms) == 1 and terms[0][0] == 1 and (terms[0][1], terms[0][2]) in ((a, b), (b, a)):
                return 1 + self.nf + k
        raise KeyError((axis_a, axis_b))

    @classmethod
    def for_order(cls, dim: int, order: int, hess: str = "diag") -> "JetLayout":
        if order not in (0, 1, 2):
            raise UnsupportedOrderError(f"derivative order {order} is not supported (max 2)")
        if order == 0:
            return cls()
        axes = tuple(range(dim))
        if order == 1:
            return cls(axes)
        if hess == "diag":
            return cls.select(axes, [(i, i) for i in axes])
        if hess == "full":
            return cls.select(axes, [(i, j) for i in axes for j in range(i, dim)])
        raise UnsupportedOrderError(f"unknown hessian mode {hess!r}")

    @classmethod
    def select(cls, first=(), second=()) -> "JetLayout":
        """Build from input axes.

        Each entry of ``second`` is a pair of axes ``(a, b)`` or a mapping
        ``{(a, b): coef, ...}`` describing a linear second-order operator.
        """
        first = tuple(first)
        pos = {ax: k for k, ax in enumerate(first)}
        chans = []
        for entry in second:
            items = entry.items() if isinstance(entry, dict) else [(tuple(entry), 1.0)]
            try:
                chans.append(tuple((float(c), pos[a], pos[b]) for (a, b), c in items))
            except KeyError as exc:
                raise UnsupportedOrderError(
                    f"second derivative along axis {exc.args[0]} needs its first derivative") from None
        return cls(first, tuple(chans))


def input_jet(x: np.ndarray, layout: JetLayout) -> np.ndarray:
    """Seed jet for raw coordinates ``x`` of shape (N, d)."""
    n, d = x.shape
    out = np.zeros((layout.channels, n, d), dtype=x.dtype)
    out[0] = x
    for k, axis in enumerate(layout.first):
        if axis >= d:
            raise InputShapeError(f"derivative axis {axis} out of range for input dim {d}")
        out[1 + k, :, axis] = 1.0
    return out


def apply_elementwise_jet(z: np.ndarray, layout: JetLayout, f, f1, f2) -> np.ndarray:
    """Chain rule for an elementwise map on a plain (untaped) jet array."""
    out = np.empty_like(z)
    out[0] = f
    if z.shape[0] == 1:
        return out[:1]
    out[1:] = f1 * z[1:]
    for c, a, b, k in zip(*layout.terms):
        out[c] += (k * f2) * z[a] * z[b]
    return out


def _is_const(v, layout):
    return v.shape[0] == 1 and layout.channels > 1


def _use_kernels(*arrays):
    return _kernels is not None and all(
        a.dtype in (np.float32, np.float64) and a.flags.c_contiguous for a in arrays)


def jet_linear(J, W, b=None):
    """Affine map applied channel-wise; the bias only touches values."""
    J, W = as_var(J), as_var(W)
    jv, wv = J.value, W.value
    c, n, k = jv.shape
    m = wv.shape[0]
    if wv.shape[1] != k:
        raise InputShapeError(f"weight of shape {wv.shape} cannot act on width {k}")
    flat = jv.reshape(c * n, k)
    out = (flat @ wv.T).reshape(c, n, m)
    parents = [J, W]
    if b is not None:
        b = as_var(b)
        out[0] += b.value
        parents.append(b)

    def vjp(g):
        g2 = g.reshape(c * n, m)
        gj = (g2 @ wv).reshape(c, n, k) if J.requires_grad else None
        gw = g2.T @ flat if W.requires_grad else None
        if b is None:
            return gj, gw
        return gj, gw, g[0].sum(axis=0)

    return _node(out, tuple(parents), vjp)


def jet_act(J, layout: JetLayout, act: str = "tanh", fused: bool = True):
    """Elementwise activation pushed through a jet."""
    J = as_var(J)
    z = J.value
    if z.shape[0] == 1:
        f, f1 = ACTIVATIONS[act].derivs(z[0])[:2]
        return _node(f[None], (J,), lambda g: ((g[0] * f1)[None],))
    if fused and act == "tanh" and _use_kernels(z):
        tc, ta, tb, tk = layout.terms
        out = np.empty_like(z)
        av = np.tanh(z[0])
        _kernels.tanh_fwd(av, z, tc, ta, tb, tk, out)

        def vjp_fused(g):
            gz = np.empty_like(z)
            _kernels.tanh_bwd(np.ascontiguousarray(g), av, z, tc, ta, tb, tk, gz)
            return (gz,)

        return _node(out, (J,), vjp_fused)

    f, f1, f2, f3 = ACTIVATIONS[act].derivs(z[0])
    out = apply_elementwise_jet(z, layout, f, f1, f2)

    def vjp(g):
        gz = np.empty_like(z)
        gz[1:] = g[1:] * f1
        g0 = g[0] * f1 + f2 * (g[1:] * z[1:]).sum(axis=0)
        for c, a, b, k in zip(*layout.terms):
            gp = k * g[c]
            g0 += gp * f3 * z[a] * z[b]
            t = gp * f2
            gz[a] += t * z[b]
            gz[b] += t * z[a]
        gz[0] = g0
        return (gz,)

    return _node(out, (J,), vjp)


def jet_mul(A, B, layout: JetLayout):
    """Product rule: jet of the elementwise product ``A * B``."""
    A, B = as_var(A), as_var(B)
    av, bv = A.value, B.value
    ca, cb = _is_const(av, layout), _is_const(bv, layout)
    if ca or cb:
        # a field constant in the inputs scales every channel of the other one
        out = av * bv

        def vjp_const(g):
            if ca and cb:
                return g * bv, g * av
            if ca:
                return (g * bv).sum(axis=0, keepdims=True), g * av
            return g * bv, (g * av).sum(axis=0, keepdims=True)

        return _node(out, (A, B), vjp_const)

    a0, b0 = av[0], bv[0]
    out = av * b0 + a0 * bv
    out[0] = a0 * b0
    for c, a, b, k in zip(*layout.terms):
        out[c] += k * (av[a] * bv[b] + av[b] * bv[a])

    def vjp(g):
        ga = gb = None
        if A.requires_grad:
            ga = g * b0
            ga[0] = (g * bv).sum(axis=0)
            for c, a, b, k in zip(*layout.terms):
                gc = k * g[c]
                ga[a] += gc * bv[b]
                ga[b] += gc * bv[a]
        if B.requires_grad:
            gb = g * a0
            gb[0] = (g * av).sum(axis=0)
            for c, a, b, k in zip(*layout.terms):
                gc = k * g[c]
                gb[a] += gc * av[b]
                gb[b] += gc * av[a]
        return ga, gb

    return _node(out, (A, B), vjp)


def jet_add(A, B, layout: JetLayout, sign: float = 1.0):
    """``A + sign * B`` for jets, where either side may be input-constant."""
    A, B = as_var(A), as_var(B)
    av, bv = A.value, B.value
    ca, cb = _is_const(av, layout), _is_const(bv, layout)
    if ca == cb:
        out = av + bv if sign > 0 else av - bv
        return _node(out, (A, B), lambda g: (g, g if sign > 0 else -g))
    if ca:
        out = sign * bv
        out[0] += av[0]
        return _node(out, (A, B), lambda g: (g[:1].copy(), sign * g))
    out = av.copy()
    out[0] += sign * bv[0]
    return _node(out, (A, B), lambda g: (g, sign * g[:1]))


def jet_gate(Zpre, U, V, layout: JetLayout, act: str = "tanh", fused: bool = True):
    """``(1 - Z) * U + Z * V`` with ``Z = act(Zpre)``."""
    Zpre, U, V = as_var(Zpre), as_var(U), as_var(V)
    zp, uv, vv = Zpre.value, U.value, V.value
    if not (fused and act == "tanh" and layout.channels > 1 and _use_kernels(zp, uv, vv)):
        Z = jet_act(Zpre, layout, act, fused=False)
        return jet_add(U, jet_mul(Z, jet_add(V, U, layout, sign=-1.0), layout), layout)
    tc, ta, tb, tk = layout.terms
    full = max(zp.shape[0], uv.shape[0], vv.shape[0]) > 1
    c = layout.channels if full else 1
    shape = (c,) + zp.shape[1:]
    out = np.empty(shape, dtype=zp.dtype)
    zl, dl = np.empty(shape, dtype=zp.dtype), np.empty(shape, dtype=zp.dtype)
    av = np.tanh(zp[0])
    _kernels.gate_parts(av, zp, uv, vv, tc, ta, tb, tk, zl, dl)
    _kernels.gate_fwd(zl, dl, uv, tc, ta, tb, tk, out)

    def vjp(g):
        g = np.ascontiguousarray(g)
        gz, gu, gv = np.empty_like(zp), np.empty_like(uv), np.empty_like(vv)
        _kernels.gate_bwd(g, av, zp, zl, dl, tc, ta, tb, tk, gz, gu, gv)
        return gz, gu, gv

    return _node(out, (Zpre, U, V), vjp)


# ---------------------------------------------------------------------------
# public contracts
# ---------------------------------------------------------------------------


@dataclass
class Jet2:
    """Single-point evaluation: value, input gradient and second derivatives.

    Fields are tape nodes, so they stay differentiable with respect to the
    network parameters.  ``hess`` is the diagonal (shape ``(d,)``) in
    ``"diag"`` mode and the symmetric matrix (``(d, d)``) in ``"full"`` mode.
    """

    value: Var
    grad_in: Var | None = None
    hess: Var | None = None
    mode: str = "diag"


@dataclass
class ParamGradient:
    vector: np.ndarray
    sq_norm: float = field(init=False)

    def __post_init__(self):
        self.sq_norm = float(np.dot(self.vector, self.vector))

    def __len__(self):
        return len(self.vector)

    def scaled(self, k: float) -> "ParamGradient":
        return ParamGradient(self.vector * k)


def param_gradient(loss: Var, size: int | None = None, iteration=None) -> ParamGradient:
    """d(loss)/d(theta) over the flat parameter vector owning the reachable leaves."""
    lv = np.asarray(loss.value)
    if lv.size != 1:
        raise InputShapeError("param_gradient needs a scalar loss")
    if not np.isfinite(lv).all():
        raise NumericalDivergenceError("non-finite loss", iteration)
    owners = {}
    slices = []

    def on_leaf(node, g):
        owners[id(node.leaf.owner)] = node.leaf.owner
        slices.append((node.leaf.offset, node.leaf.size, g))

    backward(loss, np.ones_like(lv), on_leaf)
    if size is None:
        if len(owners) > 1:
            raise InputShapeError("loss depends on more than one parameter set")
        if not owners:
            raise InputShapeError("loss does not depend on any parameter; pass size")
        size = next(iter(owners.values())).size
    vec = np.zeros(size, dtype=lv.dtype)
    for off, n, g in slices:
        vec[off:off + n] += g.reshape(-1)
    if not np.isfinite(vec).all():
        raise NumericalDivergenceError("non-finite gradient", iteration)
    return ParamGradient(vec)


def eval_with_input_derivatives(params, arch, x, order: int = 2, hess: str = "diag") -> Jet2:
    """u(x; theta) with requested input derivatives at a single point.

    For mDeepONet ``x`` is the pair ``(branch_input, trunk_input)`` and the
    derivatives are taken with respect to the trunk input.
    """
    from . import nets

    if order not in (0, 1, 2):
        raise UnsupportedOrderError(f"derivative order {order} is not supported (max 2)")
    if arch.kind == "mdeeponet":
        u_branch, x_trunk = x
        xt = np.atleast_1d(np.asarray(x_trunk, dtype=params.dtype))
        dim = arch.trunk_input_dim
    else:
        xt = np.atleast_1d(np.asarray(x, dtype=params.dtype))
        dim = arch.coord_dim
    if xt.ndim != 1 or xt.shape[0] != dim:
        raise InputShapeError(f"expected input of dimension {dim}, got shape {xt.shape}")
    layout = JetLayout.for_order(dim, order, hess)
    if arch.kind == "mdeeponet":
        ub = np.asarray(u_branch, dtype=params.dtype)[None, :]
        out = nets.jet_forward(params, arch, xt[None, :], layout, branch=ub)
    else:
        out = nets.jet_forward(params, arch, xt[None, :], layout)
    value = out[0, 0, 0]
    if order == 0:
        return Jet2(value)
    grad_in = out[1:1 + dim, 0, 0]
    if order == 1:
        return Jet2(value, grad_in)
    pairs = out[1 + dim:, 0, 0]
    if hess == "diag":
        return Jet2(value, grad_in, pairs, "diag")
    index = np.empty((dim, dim), dtype=np.intp)
    for k, ((_, i, j),) in enumerate(layout.second):
        index[i, j] = index[j, i] = k
    return Jet2(value, grad_in, pairs[index], "full")


@dataclass
class FDReport:
    max_rel_err_params: float
    worst_param: int
    max_rel_err_inputs: float
    worst_input: tuple | None
    h: float

    @property
    def max_rel_err(self) -> float:
        return max(self.max_rel_err_params, self.max_rel_err_inputs)


def _rel_errors(ad, fd, floor_frac=1e-3):
    ad, fd = np.asarray(ad, float).ravel(), np.asarray(fd, float).ravel()
    scale = max(np.abs(fd).max(initial=0.0), np.abs(ad).max(initial=0.0))
    denom = np.maximum(np.maximum(np.abs(fd), np.abs(ad)), floor_frac * scale)
    denom[denom == 0] = 1.0
    return np.abs(ad - fd) / denom


def finite_difference_check(params, arch, loss_builder, h: float = 1e-4,
                            points=None, hess: str = "diag") -> FDReport:
    """Compare tape gradients with central differences.

    ``loss_builder(params) -> Var`` must build a scalar loss from the current
    parameter values.  Input derivatives (first and second) are checked at
    ``points`` (defaults to a few deterministic points in [-1, 1]).
    Relative errors use ``max(|ad|, |fd|, 1e-3 * max-magnitude)`` as the
    denominator so entries that are numerically zero do not dominate.
    """
    if not h > 0:
        raise ValueError("finite-difference step h must be positive")
    grad = param_gradient(loss_builder(params)).vector
    theta = params.theta
    fd = np.empty_like(grad)
    saved = theta.copy()
    for i in range(theta.size):
        theta[i] = saved[i] + h
        lp = float(loss_builder(params).value)
        theta[i] = saved[i] - h
        lm = float(loss_builder(params).value)
        theta[i] = saved[i]
        fd[i] = (lp - lm) / (2 * h)
    errs = _rel_errors(grad, fd)
    worst_param = int(np.argmax(errs)) if errs.size else -1
    max_param = float(errs.max(initial=0.0))

    if points is None:
        rng = np.random.default_rng(1234)
        dim = arch.trunk_input_dim if arch.kind == "mdeeponet" else arch.coord_dim
        points = rng.uniform(-0.9, 0.9, size=(3, dim))
    branch = None
    if arch.kind == "mdeeponet":
        branch = np.linspace(-1, 1, arch.branch_input_dim) * 0.5
    worst_in, max_in = None, 0.0

    def value_at(x):
        arg = (branch, x) if branch is not None else x
        return float(eval_with_input_derivatives(params, arch, arg, order=0).value.value)

    for p, x in enumerate(np.asarray(points, dtype=float)):
        arg = (branch, x) if branch is not None else x
        jet = eval_with_input_derivatives(params, arch, arg, order=2, hess="full")
        g_ad, h_ad = jet.grad_in.value, jet.hess.value
        d = x.size
        g_fd = np.empty(d)
        h_fd = np.empty((d, d))
        f0 = value_at(x)
        for i in range(d):
            e = np.zeros(d)
            e[i] = h
            fp, fm = value_at(x + e), value_at(x - e)
            g_fd[i] = (fp - fm) / (2 * h)
            h_fd[i, i] = (fp - 2 * f0 + fm) / (h * h)
            for j in range(i + 1, d):
                e2 = np.zeros(d)
                e2[j] = h
                h_fd[i, j] = h_fd[j, i] = (
                    value_at(x + e + e2) - value_at(x + e - e2)
                    - value_at(x - e + e2) + value_at(x - e - e2)
                ) / (4 * h * h)
        # second differences lose ~sqrt(eps)/h^2 accuracy; compare first
        # derivatives tightly and second derivatives relative to their scale
        eg = _rel_errors(g_ad, g_fd)
        eh = _rel_errors(h_ad, h_fd)
        for kind, e in (("grad", eg), ("hess", eh)):
            if e.size and e.max() > max_in:
                max_in = float(e.max())
                worst_in = (p, kind, int(np.argmax(e)))
    return FDReport(max_param, worst_param, max_in, worst_in, h)
