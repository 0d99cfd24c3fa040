"""Tape-based reverse-mode automatic differentiation over dense f64 arrays.

A `Tensor` wraps a float64 ndarray.  While a `Tape` is active, every
operation whose inputs participate in the graph appends one node
(inputs, saved forward values, backward rule) to the tape; creation
order is the topological order, so `backward_pass` is a single reverse
sweep that visits each node exactly once.  Outside a tape the same ops
run as plain numpy, which keeps inference cheap and side-effect free.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ContractViolation

__all__ = [
    "Tensor",
    "Tape",
    "Parameter",
    "backward_pass",
    "add", "sub", "mul", "div", "neg", "matmul",
    "relu", "tanh", "cos", "absolute", "square", "sqrt",
    "reduce_sum", "reduce_mean", "reshape", "gather_rows",
    "conv1d", "maxpool1d",
]


class Node:
    """One recorded primitive application."""

    __slots__ = ("index", "inputs", "backward_fn")

    def __init__(self, index: int, inputs: tuple, backward_fn: Callable):
        self.index = index
        self.inputs = inputs          # parent Tensors, graph order
        self.backward_fn = backward_fn  # grad_out -> per-input grads (None = no flow)


class Tensor:
    """Dense float64 array, optionally attached to the active tape."""

    __slots__ = ("data", "node")

    def __init__(self, data, node: Node | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.node = node

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    # Operator sugar; constants are coerced to detached tensors.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, attached={self.node is not None})"


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Parameter:
    """Trainable (or frozen) leaf with optimizer state.

    `value.data` is mutated in place by the optimizer; `gradient` is
    overwritten by each backward pass.  Frozen parameters keep their
    values forever but still serialize into checkpoints.
    """

    __slots__ = ("name", "value", "gradient", "m", "v", "trainable")

    def __init__(self, value, name: str, trainable: bool = True):
        arr = np.array(value, dtype=np.float64)
        self.name = name
        self.value = Tensor(arr)
        self.gradient = np.zeros_like(arr)
        self.m = np.zeros_like(arr)
        self.v = np.zeros_like(arr)
        self.trainable = trainable

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


_ACTIVE_TAPE: "Tape | None" = None


class Tape:
    """Records the forward graph for one backward pass.

    Use as a context manager around the forward computation::

        with Tape(model.parameters()) as tape:
            loss = forward(...)
        grads = backward_pass(tape, loss)

    Watched parameters become leaf nodes; `backward_pass` clears the
    tape so the same parameters can be watched again next step.
    """

    def __init__(self, parameters: Sequence[Parameter] = ()):
        self.nodes: list[Node] = []
        self.parameters: list[Parameter] = []
        seen = set()
        for p in parameters:
            if id(p) not in seen:
                seen.add(id(p))
                self.parameters.append(p)

    def watch(self, param: Parameter) -> None:
        if param not in self.parameters:
            self.parameters.append(param)
        self._attach_leaf(param)

    def _attach_leaf(self, param: Parameter) -> None:
        node = Node(len(self.nodes), (), None)  # leaves keep their gradient slot
        self.nodes.append(node)
        param.value.node = node

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("tapes do not nest; finish the active tape first")
        _ACTIVE_TAPE = self
        for p in self.parameters:
            self._attach_leaf(p)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        if exc_type is not None:
            self.clear()

    def clear(self) -> None:
        self.nodes = []
        for p in self.parameters:
            p.value.node = None


def _record(out_data: np.ndarray, inputs: tuple, backward_fn: Callable) -> Tensor:
    """Wrap `out_data`; append a node when the graph is live."""
    tape = _ACTIVE_TAPE
    if tape is None or not any(t.node is not None for t in inputs):
        return Tensor(out_data)
    node = Node(len(tape.nodes), inputs, backward_fn)
    tape.nodes.append(node)
    return Tensor(out_data, node)


def backward_pass(tape: Tape, loss: Tensor) -> dict[Parameter, Tensor]:
    """Reverse sweep: d(loss)/d(p) for every watched parameter.

    The loss must be a scalar.  Parameters that did not participate in
    the forward computation get zero gradients.  The tape is cleared
    afterwards so it can be reused for the next step.
    """
    if loss.data.size != 1:
        raise ContractViolation(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    if loss.node is not None:
        grads[loss.node.index] = np.ones_like(loss.data)
        for node in reversed(tape.nodes):
            if node.backward_fn is None:
                continue  # parameter leaf; gradient stays for collection below
            g = grads.pop(node.index, None)
            if g is None:
                continue
            input_grads = node.backward_fn(g)
            for inp, ig in zip(node.inputs, input_grads):
                if ig is None or inp.node is None:
                    continue
                if inp.node.index >= node.index:
                    raise RuntimeError("cycle detected in tape (internal error)")
                slot = grads.get(inp.node.index)
                grads[inp.node.index] = ig if slot is None else slot + ig

    result: dict[Parameter, Tensor] = {}
    for p in tape.parameters:
        leaf_index = p.value.node.index if p.value.node is not None else -1
        g = grads.get(leaf_index)
        p.gradient = np.zeros_like(p.value.data) if g is None else np.asarray(g)
        result[p] = Tensor(p.gradient)
    tape.clear()
    return result


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise / linear primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    out = ad * bd

    def bwd(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _record(out, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    out = ad / bd

    def bwd(g):
        return (_unbroadcast(g / bd, ad.shape),
                _unbroadcast(-g * ad / (bd * bd), bd.shape))

    return _record(out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    out = ad @ bd

    def bwd(g):
        return g @ bd.T, ad.T @ g

    return _record(out, (a, b), bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _record(t, (a,), lambda g: (g * (1.0 - t * t),))


def cos(a: Tensor) -> Tensor:
    s = np.sin(a.data)
    return _record(np.cos(a.data), (a,), lambda g: (-g * s,))


def absolute(a: Tensor) -> Tensor:
    # subgradient 0 at the kink, matching np.sign(0) == 0
    sign = np.sign(a.data)
    return _record(np.abs(a.data), (a,), lambda g: (g * sign,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _record(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def sqrt(a: Tensor) -> Tensor:
    root = np.sqrt(a.data)

    def bwd(g):
        # subgradient 0 where the root is 0 (same convention as absolute)
        safe = np.where(root > 0, root, 1.0)
        return (np.where(root > 0, g / (2.0 * safe), 0.0),)

    return _record(root, (a,), bwd)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _record(out, (a,), bwd)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.data.shape[i] for i in axis]))
    else:
        count = a.data.shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def bwd(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape) / count,)

    return _record(out, (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def gather_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Select rows `a[index]`; backward scatter-adds into the source."""
    index = np.asarray(index)
    out = a.data[index]

    def bwd(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, index, g)
        return (acc,)

    return _record(out, (a,), bwd)


# ---------------------------------------------------------------------------
# structured primitives
# ---------------------------------------------------------------------------

def _same_padding(length: int, kernel: int, stride: int) -> tuple[int, int, int]:
    out_len = -(-length // stride)  # ceil
    total = max((out_len - 1) * stride + kernel - length, 0)
    left = total // 2
    return out_len, left, total - left


def conv1d(x: Tensor, w: Tensor, stride: int = 1, padding: str = "same") -> Tensor:
    """Cross-correlation of x [batch, in_ch, len] with w [filters, in_ch, kernel]."""
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ContractViolation("conv1d expects x [B,C,L] and w [F,C,K]")
    if x.data.shape[1] != w.data.shape[1]:
        raise ContractViolation(
            f"channel mismatch: input has {x.data.shape[1]}, weight expects {w.data.shape[1]}")
    batch, channels, length = x.data.shape
    kernel = w.data.shape[2]
    if padding == "same":
        out_len, pad_left, pad_right = _same_padding(length, kernel, stride)
    elif padding == "valid":
        if length < kernel:
            raise ContractViolation(f"length {length} < kernel {kernel} with valid padding")
        out_len, pad_left, pad_right = (length - kernel) // stride + 1, 0, 0
    else:
        raise ContractViolation(f"unknown padding {padding!r}")

    filters = w.data.shape[0]
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad_left, pad_right)))
    starts = np.arange(out_len) * stride
    windows = np.lib.stride_tricks.sliding_window_view(xp, kernel, axis=2)
    cols = windows[:, :, starts, :]                    # [B, C, out, K]
    # matmul-shaped im2col: [B*out, C*K] @ [C*K, F]
    cols_mat = np.ascontiguousarray(cols.transpose(0, 2, 1, 3)) \
        .reshape(batch * out_len, channels * kernel)
    w_mat = w.data.reshape(filters, channels * kernel)
    out = (cols_mat @ w_mat.T).reshape(batch, out_len, filters).transpose(0, 2, 1)

    def bwd(g):
        g_mat = np.ascontiguousarray(g.transpose(0, 2, 1)) \
            .reshape(batch * out_len, filters)
        gw = (g_mat.T @ cols_mat).reshape(filters, channels, kernel)
        gcols = (g_mat @ w_mat).reshape(batch, out_len, channels, kernel) \
            .transpose(0, 2, 1, 3)
        gxp = np.zeros_like(xp)
        for k in range(kernel):
            gxp[:, :, starts + k] += gcols[:, :, :, k]
        return gxp[:, :, pad_left:pad_left + length], gw

    return _record(out, (x, w), bwd)


def maxpool1d(x: Tensor) -> Tensor:
    """Non-overlapping max pooling with window 2 over the last axis.

    A trailing odd element forms its own window; within a window, ties
    route the gradient to the first element.
    """
    batch, channels, length = x.data.shape
    half = length // 2
    even = x.data[:, :, :2 * half].reshape(batch, channels, half, 2)
    arg = even.argmax(axis=3)
    pooled = np.take_along_axis(even, arg[..., None], axis=3)[..., 0]
    odd = length % 2 == 1
    out = np.concatenate([pooled, x.data[:, :, -1:]], axis=2) if odd else pooled

    def bwd(g):
        gx = np.zeros_like(x.data)
        g_even = g[:, :, :half] if odd else g
        scatter = np.zeros((batch, channels, half, 2))
        np.put_along_axis(scatter, arg[..., None], g_even[..., None], axis=3)
        gx[:, :, :2 * half] = scatter.reshape(batch, channels, 2 * half)
        if odd:
            gx[:, :, -1] += g[:, :, -1]
        return (gx,)

    return _record(out, (x,), bwd)
