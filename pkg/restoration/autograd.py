"""
A small reverse-mode autograd over NCHW numpy arrays.

Each ``NnTensor`` remembers its parents and a closure mapping its gradient
to the parents' gradients; ``backward`` walks the graph in reverse
topological order. The heavy ops delegate to ``restoration.functional``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from restoration import functional as F

ArrayLike = Union[np.ndarray, float, int]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

# Pre-activation masks of every relu evaluated while recording.
_relu_trace: Optional[List[np.ndarray]] = None


@contextlib.contextmanager
def record_relu_masks() -> Iterator[List[np.ndarray]]:
    global _relu_trace
    previous, _relu_trace = _relu_trace, []
    try:
        yield _relu_trace
    finally:
        _relu_trace = previous


class NnTensor:
    """Array plus lazily allocated gradient and the op that produced it."""

    __array_priority__ = 100

    def __init__(
        self,
        data: ArrayLike,
        parents: Tuple["NnTensor", ...] = (),
        backward_fn: Optional[BackwardFn] = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self._parents = parents
        self._backward_fn = backward_fn

    def __repr__(self) -> str:
        return f"NnTensor(shape={self.shape})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Back-propagate ``grad`` (ones for a scalar) to every ancestor."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)

        order: List[NnTensor] = []
        seen = set()
        stack: List[Tuple[NnTensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        self.accumulate(np.asarray(grad, dtype=np.float64))
        for node in reversed(order):
            if node._backward_fn is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward_fn(node.grad)):
                if g is not None:
                    parent.accumulate(g)

    # -- operators -----------------------------------------------------------

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape) -> "NnTensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "NnTensor":
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False) -> "NnTensor":
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "NnTensor":
        return mean(self, axis, keepdims)


class Parameter(NnTensor):
    """Trainable tensor with Adam moment buffers."""

    def __init__(self, data: ArrayLike, name: str = ""):
        super().__init__(data)
        self.name = name
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x: Union[NnTensor, ArrayLike]) -> NnTensor:
    return x if isinstance(x, NnTensor) else NnTensor(x)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Elementwise and shape ops
# ---------------------------------------------------------------------------


def add(a, b) -> NnTensor:
    a, b = as_tensor(a), as_tensor(b)
    return NnTensor(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> NnTensor:
    a, b = as_tensor(a), as_tensor(b)
    return NnTensor(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> NnTensor:
    a, b = as_tensor(a), as_tensor(b)
    return NnTensor(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> NnTensor:
    a, b = as_tensor(a), as_tensor(b)
    return NnTensor(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / b.data ** 2, b.shape),
        ),
    )


def sqrt(a: NnTensor) -> NnTensor:
    out = np.sqrt(a.data)
    return NnTensor(out, (a,), lambda g: (g / (2.0 * out),))


def matmul(a, b) -> NnTensor:
    """Batched matrix product over the last two axes."""
    a, b = as_tensor(a), as_tensor(b)

    def backward(g: np.ndarray):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return NnTensor(a.data @ b.data, (a, b), backward)


def tensor_sum(a: NnTensor, axis=None, keepdims: bool = False) -> NnTensor:
    def backward(g: np.ndarray):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return NnTensor(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a: NnTensor, axis=None, keepdims: bool = False) -> NnTensor:
    count = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return tensor_sum(a, axis, keepdims) / float(count)


def reshape(a: NnTensor, shape: Sequence[int]) -> NnTensor:
    return NnTensor(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: NnTensor, axes: Optional[Sequence[int]] = None) -> NnTensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = np.argsort(axes)
    return NnTensor(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def getitem(a: NnTensor, index) -> NnTensor:
    def backward(g: np.ndarray):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return NnTensor(a.data[index], (a,), backward)


def concat(tensors: Sequence[NnTensor], axis: int = 1) -> NnTensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return NnTensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, bounds, axis=axis)),
    )


def stack(tensors: Sequence[NnTensor], axis: int = 0) -> NnTensor:
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


# ---------------------------------------------------------------------------
# Network ops
# ---------------------------------------------------------------------------


def conv2d(x: NnTensor, w: NnTensor, b: Optional[NnTensor] = None) -> NnTensor:
    out, cache = F.conv2d_forward(x.data, w.data, None if b is None else b.data)

    def backward(g: np.ndarray):
        dx, dw, db = F.conv2d_backward(g, cache)
        return (dx, dw) if b is None else (dx, dw, db)

    parents = (x, w) if b is None else (x, w, b)
    return NnTensor(out, parents, backward)


def batchnorm2d(x: NnTensor, gamma: NnTensor, beta: NnTensor, bn_param: Dict) -> NnTensor:
    out, cache = F.batchnorm2d_forward(x.data, gamma.data, beta.data, bn_param)
    return NnTensor(out, (x, gamma, beta), lambda g: F.batchnorm2d_backward(g, cache))


def relu(x: NnTensor) -> NnTensor:
    out, cache = F.relu_forward(x.data)
    if _relu_trace is not None:
        _relu_trace.append(cache[0].copy())
    return NnTensor(out, (x,), lambda g: (F.relu_backward(g, cache),))


def sigmoid(x: NnTensor) -> NnTensor:
    out, cache = F.sigmoid_forward(x.data)
    return NnTensor(out, (x,), lambda g: (F.sigmoid_backward(g, cache),))


def softmax(x: NnTensor, axis: int = -1) -> NnTensor:
    out, cache = F.softmax_forward(x.data, axis)
    return NnTensor(out, (x,), lambda g: (F.softmax_backward(g, cache),))


def downsample_half(x: NnTensor) -> NnTensor:
    out, cache = F.avgpool2_forward(x.data)
    return NnTensor(out, (x,), lambda g: (F.avgpool2_backward(g, cache),))


def upsample_double(x: NnTensor) -> NnTensor:
    out, cache = F.upsample2_forward(x.data)
    return NnTensor(out, (x,), lambda g: (F.upsample2_backward(g, cache),))


def mse_loss(pred: NnTensor, target: Union[NnTensor, np.ndarray]) -> NnTensor:
    diff = pred - as_tensor(target)
    return (diff * diff).mean()
