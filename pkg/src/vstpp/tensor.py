"""Dense float64 tensors with a tape-based reverse-mode autograd.

Every op in this module works on whole arrays. A result records its parents
and a closure mapping the upstream gradient to one gradient per parent; only
results that depend on a :class:`Param` are recorded. :func:`backward` walks
the recorded graph in reverse topological order.

Matrix products report their multiply-accumulate count to an optional hook
(see :func:`mac_hook` and :func:`mac_scope`), which the cost accounting in
:mod:`vstpp.complexity` installs.
"""

from __future__ import annotations

import contextlib
import contextvars
import hashlib
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Param",
    "RngSpec",
    "as_tensor",
    "init",
    "backward",
    "gradients",
    "no_grad",
    "mac_hook",
    "mac_scope",
    "matmul",
    "linear",
    "add",
    "mul",
    "scale",
    "transpose",
    "reshape",
    "concat",
    "getitem",
    "take_rows",
    "softmax_rows",
    "sigmoid",
    "gelu",
    "layer_norm",
    "sum",
    "mean",
    "bce",
]

_grad_enabled = contextvars.ContextVar("grad_enabled", default=True)
_mac_hook = contextvars.ContextVar("mac_hook", default=None)
_mac_scope = contextvars.ContextVar("mac_scope", default=())


class Tensor:
    """An immutable float64 array, optionally a node of the autograd graph."""

    __slots__ = ("data", "parents", "backward_fn", "requires_grad")

    def __init__(self, data, parents: tuple = (), backward_fn: Callable | None = None, _copy: bool = True):
        arr = np.array(data, dtype=np.float64) if _copy else np.asarray(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = bool(parents)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __getitem__(self, key) -> "Tensor":
        return getitem(self, key)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), scale(self, -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if np.isscalar(other):
            return scale(self, 1.0 / float(other))
        return NotImplemented

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        tag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{tag})"


def _not_scalar(t: Tensor):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


class Param(Tensor):
    """A learnable leaf. ``grad`` accumulates across :func:`backward` calls."""

    __slots__ = ("grad", "id")

    def __init__(self, data, id: str = ""):
        super().__init__(data)
        self.requires_grad = True
        self.grad = np.zeros(self.data.shape)
        self.id = id

    @property
    def value(self) -> np.ndarray:
        return self.data

    def assign(self, value, _copy: bool = True) -> None:
        arr = np.array(value, dtype=np.float64) if _copy else np.asarray(value, dtype=np.float64)
        if arr.shape != self.data.shape:
            raise ValueError(f"cannot assign shape {arr.shape} to param {self.id!r} of shape {self.data.shape}")
        arr.flags.writeable = False
        self.data = arr

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Param({self.id!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# initialization


@dataclass(frozen=True)
class RngSpec:
    seed: int
    scheme: str = "uniform_fan_in"

    def derive(self, name: str) -> "RngSpec":
        """Child spec whose seed depends only on this seed and ``name``."""
        h = hashlib.blake2b(f"{self.seed}:{name}".encode(), digest_size=8)
        return RngSpec(int.from_bytes(h.digest(), "little"), self.scheme)


def init(shape: Sequence[int], rng: RngSpec, fan_in: int | None = None) -> Tensor:
    """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], fan_in = trailing dim by default."""
    shape = tuple(int(s) for s in shape)
    if not shape or any(s <= 0 for s in shape):
        raise ValueError(f"init needs positive dimensions, got {shape}")
    gen = np.random.default_rng(np.random.SeedSequence(rng.seed))
    if rng.scheme == "uniform_fan_in":
        bound = 1.0 / math.sqrt(fan_in if fan_in is not None else shape[-1])
        return Tensor(gen.uniform(-bound, bound, size=shape))
    if rng.scheme == "zeros":
        return Tensor(np.zeros(shape))
    if rng.scheme == "ones":
        return Tensor(np.ones(shape))
    raise ValueError(f"unknown init scheme {rng.scheme!r}")


# ---------------------------------------------------------------------------
# graph machinery


@contextlib.contextmanager
def no_grad():
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def _node(data, parents: tuple, backward_fn) -> Tensor:
    if _grad_enabled.get() and any(p.requires_grad for p in parents):
        return Tensor(data, parents, backward_fn, _copy=False)
    return Tensor(data, _copy=False)


def _topo_order(root: Tensor) -> list[Tensor]:
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


def _propagate(loss: Tensor, keep: set[int] = frozenset()) -> tuple[list[Tensor], dict[int, np.ndarray]]:
    """Reverse sweep. Returns grads of leaves and of the node ids in ``keep``."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(order):
        if node.backward_fn is None:
            continue
        g = grads.get(id(node)) if id(node) in keep else grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    return order, grads


def backward(loss: Tensor, params: Iterable[Param] | None = None) -> None:
    """Accumulate d(loss)/d(param) into ``param.grad``.

    With ``params=None`` every reachable :class:`Param` is updated.
    """
    if not loss.requires_grad:
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        return
    order, grads = _propagate(loss)
    wanted = None if params is None else {id(p) for p in params}
    for node in order:
        if isinstance(node, Param) and id(node) in grads:
            if wanted is None or id(node) in wanted:
                node.grad += grads[id(node)]


def gradients(loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of ``loss`` w.r.t. arbitrary graph nodes (zeros if unreachable)."""
    if not loss.requires_grad:
        return [np.zeros(t.shape) for t in wrt]
    _, grads = _propagate(loss, keep={id(t) for t in wrt})
    return [grads.get(id(t), np.zeros(t.shape)) for t in wrt]


# ---------------------------------------------------------------------------
# MAC accounting hook


@contextlib.contextmanager
def mac_hook(callback: Callable[[str, int], None]):
    """Install ``callback(label, macs)`` for every matrix product in this context."""
    token = _mac_hook.set(callback)
    try:
        yield
    finally:
        _mac_hook.reset(token)


@contextlib.contextmanager
def mac_scope(name: str):
    token = _mac_scope.set(_mac_scope.get() + (name,))
    try:
        yield
    finally:
        _mac_scope.reset(token)


def _record(label: str, macs: int) -> None:
    hook = _mac_hook.get()
    if hook is not None:
        hook(".".join(_mac_scope.get() + (label,)), macs)


# ---------------------------------------------------------------------------
# ops


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def matmul(a, b, label: str = "matmul") -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    m, k = a.shape
    n = b.shape[1]
    _record(label, m * n * k)
    ad, bd = a.data, b.data

    def back(g):
        return (g @ bd.T if a.requires_grad else None, ad.T @ g if b.requires_grad else None)

    return _node(ad @ bd, (a, b), back)


def linear(x, weight, bias=None, label: str = "linear") -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` stored as (out, in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear dimension mismatch: input {x.shape} vs weight {weight.shape}")
    m, k = x.shape
    n = weight.shape[0]
    _record(label, m * n * k)
    xd, wd = x.data, weight.data
    y = xd @ wd.T
    if bias is None:
        return _node(y, (x, weight), lambda g: (g @ wd if x.requires_grad else None, g.T @ xd if weight.requires_grad else None))
    bias = as_tensor(bias)
    y += bias.data

    def back(g):
        return (
            g @ wd if x.requires_grad else None,
            g.T @ xd if weight.requires_grad else None,
            _unbroadcast(g, bias.shape) if bias.requires_grad else None,
        )

    return _node(y, (x, weight, bias), back)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def back(g):
        return (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape))

    return _node(ad * bd, (a, b), back)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _node(a.data * c, (a,), lambda g: (g * c,))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _node(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), back)


def _is_basic(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (slice, int, type(Ellipsis))) or k is None for k in parts)


def getitem(a, key) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    basic = _is_basic(key)

    def back(g):
        full = np.zeros(shape)
        if basic:
            full[key] = g
        else:
            np.add.at(full, key, g)
        return (full,)

    return _node(a.data[key], (a,), back)


def take_rows(a, index) -> Tensor:
    return getitem(a, np.asarray(index, dtype=np.intp))


def softmax_rows(a) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _node(y, (a,), back)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # tanh form never overflows
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _node(y, (a,), lambda g: (g * y * (1.0 - y),))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """Tanh-approximated GELU."""
    a = as_tensor(a)
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    y = 0.5 * x * (1.0 + t)

    def back(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)

    return _node(y, (a,), back)


def layer_norm(a, gain, bias, eps: float = 1e-6) -> Tensor:
    """Row-wise normalization with the biased variance estimator."""
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data

    def back(g):
        gx = g * gd
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        dgain = _unbroadcast(g * xhat, gain.shape)
        dbias = _unbroadcast(g, bias.shape)
        return dx, dgain, dbias

    return _node(xhat * gd + bias.data, (a, gain, bias), back)


def sum(a, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    shape = a.shape

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(a.data.sum(axis=axis), (a,), back)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis), 1.0 / n)


def bce(pred, target, eps: float = 1e-7) -> Tensor:
    """Mean binary cross-entropy; ``pred`` is clamped to [eps, 1 - eps]."""
    pred = as_tensor(pred)
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if t.shape != pred.shape:
        raise ValueError(f"bce shape mismatch: pred {pred.shape} vs target {t.shape}")
    p = np.clip(pred.data, eps, 1.0 - eps)
    n = p.size
    loss = -(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)).mean()
    inside = (pred.data > eps) & (pred.data < 1.0 - eps)

    def back(g):
        return (g * inside * (-(t / p) + (1.0 - t) / (1.0 - p)) / n,)

    return _node(loss, (pred,), back)
