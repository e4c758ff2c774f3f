"""Dense float64 tensors with reverse-mode autodiff, SGD and small MLPs.

Every operation on a tensor that requires gradients records itself on the
implicit tape: the output keeps references to its inputs plus a closure that
pushes the output gradient back. Nodes carry a creation counter, and
:func:`backward` walks the reachable nodes in exactly the reverse of their
recording order.
"""
from __future__ import annotations

import io
import itertools
import struct
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError, NumericError, ParseError

_counter = itertools.count()


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    # Sum out the axes numpy broadcasting added or stretched.
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf",
                 parents: tuple = (), backward: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._backward = backward
        self._id = next(_counter)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis, keepdims)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def relu(self):
        return relu(self)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    @property
    def T(self):
        return transpose(self)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def _make(data, op: str, parents: tuple, backward: Callable) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, op, parents, backward)
    return Tensor(data, False, op)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g, out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, "add", (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g, out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, "sub", (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g, out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, "mul", (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g, out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(a.data / b.data, "div", (a, b), bw)


def power(a: Tensor, exponent: float) -> Tensor:
    def bw(g, out):
        a._accumulate(g * exponent * a.data ** (exponent - 1))

    return _make(a.data ** exponent, "pow", (a,), bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul expects (n, k) @ (k, m), got {a.shape} @ {b.shape}")

    def bw(g, out):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(a.data @ b.data, "matmul", (a, b), bw)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def bw(g, out):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _make(a.data.sum(axis=axis, keepdims=keepdims), "sum", (a,), bw)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / count)


def exp(a: Tensor) -> Tensor:
    value = np.exp(a.data)

    def bw(g, out):
        a._accumulate(g * value)

    return _make(value, "exp", (a,), bw)


def log(a: Tensor) -> Tensor:
    def bw(g, out):
        a._accumulate(g / a.data)

    return _make(np.log(a.data), "log", (a,), bw)


def sqrt(a: Tensor) -> Tensor:
    value = np.sqrt(a.data)

    def bw(g, out):
        a._accumulate(g * 0.5 / value)

    return _make(value, "sqrt", (a,), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bw(g, out):
        a._accumulate(g * mask)

    return _make(np.where(mask, a.data, 0.0), "relu", (a,), bw)


def clip(a: Tensor, low: float, high: float) -> Tensor:
    """Clamp values; the gradient is zero wherever the clamp is active."""
    inside = (a.data >= low) & (a.data <= high)

    def bw(g, out):
        a._accumulate(g * inside)

    return _make(np.clip(a.data, low, high), "clip", (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    def bw(g, out):
        a._accumulate(g.reshape(a.shape))

    return _make(a.data.reshape(shape), "reshape", (a,), bw)


def transpose(a: Tensor) -> Tensor:
    def bw(g, out):
        a._accumulate(g.T)

    return _make(a.data.T, "transpose", (a,), bw)


def take(a: Tensor, index) -> Tensor:
    def bw(g, out):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        a._accumulate(full)

    return _make(a.data[index], "take", (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g, out):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), "concat", tuple(tensors), bw)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    value = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def bw(g, out):
        a._accumulate(g - np.exp(value) * g.sum(axis=axis, keepdims=True))

    return _make(value, "log_softmax", (a,), bw)


def pairwise_sq_dists(a: Tensor, b) -> Tensor:
    """Squared Euclidean distances between the rows of ``a`` (n, d) and ``b`` (m, d)."""
    b = as_tensor(b)
    diff = reshape(a, (a.shape[0], 1, a.shape[1])) - reshape(b, (1, b.shape[0], b.shape[1]))
    return tsum(diff * diff, axis=2)


# tape ---------------------------------------------------------------------

def _reachable(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    nodes = []
    stack = [root]
    while stack:
        node = stack.pop()
        if node._id in seen or not node.requires_grad:
            continue
        seen.add(node._id)
        nodes.append(node)
        stack.extend(node._parents)
    nodes.sort(key=lambda n: n._id, reverse=True)
    return nodes


@dataclass(frozen=True)
class TapeNode:
    op: str
    inputs: tuple[int, ...]
    output: int


def trace_tape(loss: Tensor) -> list[TapeNode]:
    """Recorded operations leading to ``loss`` in forward order.

    Ids are positions in the returned list (leaves included), so two replays
    of the same forward pass produce equal tapes.
    """
    order = list(reversed(_reachable(loss)))
    position = {node._id: i for i, node in enumerate(order)}
    return [TapeNode(n.op, tuple(position[p._id] for p in n._parents if p._id in position), position[n._id])
            for n in order]


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every gradient-tracking tensor feeding ``loss``.

    Leaf gradients accumulate across calls; use :func:`zero_grad` between
    optimisation steps.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    nodes = _reachable(loss)
    for node in nodes:
        if node._backward is not None:
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in nodes:
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad, node)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def sgd_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], lr: float,
             weight_decay: float = 0.0) -> Sequence[Tensor]:
    """In-place ``p <- p - lr * (g + weight_decay * p)``; a ``None`` gradient counts as zero."""
    if lr <= 0:
        raise ConfigurationError(f"lr must be > 0, got {lr}")
    if weight_decay < 0:
        raise ConfigurationError(f"weight_decay must be >= 0, got {weight_decay}")
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if g is None:
            g = 0.0
        elif np.shape(g) != p.shape:
            raise DimensionError(f"gradient shape {np.shape(g)} does not match parameter {p.shape}")
        p.data = p.data - lr * (g + weight_decay * p.data)
    return params


def gradcheck(f: Callable[[Tensor], Tensor], x, h: float = 1e-5) -> float:
    """Max relative error between autodiff and central differences of a scalar ``f`` at ``x``.

    Error per coordinate is ``|auto - fd| / max(1, |fd|)``. Inputs must avoid
    rectifier kinks; gradients there are one-sided and will not match.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ConfigurationError(f"step h must lie in [1e-7, 1e-3], got {h}")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    xt = Tensor(base.copy(), requires_grad=True)
    out = f(xt)
    backward(out)
    auto = np.zeros_like(base) if xt.grad is None else xt.grad
    if not (np.isfinite(out.data).all() and np.isfinite(auto).all()):
        raise NumericError("non-finite value in forward or backward pass")
    flat = base.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        plus, minus = flat.copy(), flat.copy()
        plus[i] += h
        minus[i] -= h
        fp = f(Tensor(plus.reshape(base.shape))).item()
        fm = f(Tensor(minus.reshape(base.shape))).item()
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite value at coordinate {i}")
        fd = (fp - fm) / (2 * h)
        worst = max(worst, abs(auto.reshape(-1)[i] - fd) / max(1.0, abs(fd)))
    return worst


# multilayer perceptron ----------------------------------------------------

@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple[int, ...]
    seed: int = 0

    def __post_init__(self):
        if len(self.layer_widths) < 2:
            raise ConfigurationError("an MLP needs at least input and output widths")
        if any(w < 1 for w in self.layer_widths):
            raise ConfigurationError(f"layer widths must be positive: {self.layer_widths}")
        if self.layer_widths[-1] < 2:
            raise ConfigurationError("feature dimension must be >= 2")


def init_mlp(spec: MlpSpec) -> list[Tensor]:
    """He-scaled normal weights and zero biases from a Philox stream keyed by the seed."""
    rng = np.random.Generator(np.random.Philox(spec.seed))
    params = []
    for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        params.append(Tensor(w, requires_grad=True))
        params.append(Tensor(np.zeros(fan_out), requires_grad=True))
    return params


def mlp_forward(params: Sequence[Tensor], x) -> Tensor:
    """Rectifier on hidden layers, identity on the output layer."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"expected a (batch, features) input, got shape {x.shape}")
    expected = params[0].shape[0]
    if x.shape[1] != expected:
        raise DimensionError(f"input width {x.shape[1]} does not match expected {expected}")
    h = x
    n_layers = len(params) // 2
    for i in range(n_layers):
        h = h @ params[2 * i] + params[2 * i + 1]
        if i < n_layers - 1:
            h = relu(h)
    return h


class Mlp:
    def __init__(self, spec: MlpSpec, params: list[Tensor] | None = None):
        self.spec = spec
        self.params = params if params is not None else init_mlp(spec)

    def __call__(self, x) -> Tensor:
        return mlp_forward(self.params, x)

    @property
    def feature_dim(self) -> int:
        return self.spec.layer_widths[-1]

    def state(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.params]

    def load_state(self, arrays: Sequence[np.ndarray]) -> None:
        if len(arrays) != len(self.params):
            raise DimensionError(f"expected {len(self.params)} arrays, got {len(arrays)}")
        for p, a in zip(self.params, arrays):
            if a.shape != p.shape:
                raise DimensionError(f"parameter shape {p.shape} vs snapshot {a.shape}")
            p.data = np.array(a, dtype=np.float64)

    def frozen_copy(self) -> "Mlp":
        return Mlp(self.spec, [Tensor(p.data.copy()) for p in self.params])


# weight snapshots -----------------------------------------------------------

WEIGHT_MAGIC = b"OWRW"
WEIGHT_VERSION = 1


def weights_to_bytes(arrays: Sequence[np.ndarray]) -> bytes:
    """``OWRW`` | u16 version | u32 count | per array: u16 ndim, u32 extents, f64 LE payload."""
    buf = io.BytesIO()
    buf.write(WEIGHT_MAGIC)
    buf.write(struct.pack("<HI", WEIGHT_VERSION, len(arrays)))
    for a in arrays:
        a = np.asarray(a, dtype="<f8")
        buf.write(struct.pack("<H", a.ndim))
        buf.write(struct.pack(f"<{a.ndim}I", *a.shape))
        buf.write(a.tobytes(order="C"))
    return buf.getvalue()


def weights_from_bytes(blob: bytes) -> list[np.ndarray]:
    def need(offset: int, size: int, what: str):
        if offset + size > len(blob):
            raise ParseError(f"truncated weight blob reading {what} at byte offset {offset}")

    need(0, 10, "header")
    if blob[:4] != WEIGHT_MAGIC:
        raise ParseError("bad magic at byte offset 0, expected b'OWRW'")
    version, count = struct.unpack_from("<HI", blob, 4)
    if version != WEIGHT_VERSION:
        raise ParseError(f"unsupported weight blob version {version} at byte offset 4")
    offset = 10
    arrays = []
    for _ in range(count):
        need(offset, 2, "ndim")
        (ndim,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        need(offset, 4 * ndim, "extents")
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        size = int(np.prod(shape, dtype=np.int64)) * 8
        need(offset, size, "payload")
        arrays.append(np.frombuffer(blob, dtype="<f8", count=size // 8, offset=offset).reshape(shape).astype(np.float64))
        offset += size
    if offset != len(blob):
        raise ParseError(f"{len(blob) - offset} trailing bytes at byte offset {offset}")
    return arrays


def save_weights(arrays: Sequence[np.ndarray], path) -> None:
    with open(path, "wb") as fh:
        fh.write(weights_to_bytes(arrays))


def load_weights(path) -> list[np.ndarray]:
    with open(path, "rb") as fh:
        return weights_from_bytes(fh.read())
