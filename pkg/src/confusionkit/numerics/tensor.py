"""Dense float64 tensors with reverse-mode automatic differentiation.

Forward values are plain numpy arrays. Each differentiable operation attaches
a closure that scatters the upstream gradient to its inputs; `backward` walks
the resulting DAG in reverse topological order. Recording can be suspended
with `no_grad()` so inference paths run at raw numpy speed.

Everything is 64-bit and single-threaded by design: tensors are never mutated
after an op produces them, so sharing across threads is safe. Only leaf
parameters are updated in place, by the training loop, between steps.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ParameterError, ShapeError, UsageError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Suspend graph recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- shape ops --------------------------------------------------------

    def t(self):
        return transpose(self)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 or not isinstance(shape[0], (tuple, list)) else tuple(shape[0]))

    def narrow(self, axis: int, start: int, length: int):
        return narrow(self, axis, start, length)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _from_op(data: np.ndarray, parents: tuple, backward: Callable[[np.ndarray], None]) -> Tensor:
    """Wrap an op result; record the closure only when a parent needs grads."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise ops -------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def backward(g, a=a, b=b):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _from_op(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def backward(g, a=a, b=b):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _from_op(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def backward(g, a=a, b=b):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _from_op(data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data / b.data

    def backward(g, a=a, b=b):
        _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _from_op(data, (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g, a=a):
        _accumulate(a, -g)

    return _from_op(-a.data, (a,), backward)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    data = np.exp(a.data)

    def backward(g, a=a, data=data):
        _accumulate(a, g * data)

    return _from_op(data, (a,), backward)


def log(a) -> Tensor:
    a = _as_tensor(a)
    data = np.log(a.data)

    def backward(g, a=a):
        _accumulate(a, g / a.data)

    return _from_op(data, (a,), backward)


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    data = np.sqrt(a.data)

    def backward(g, a=a, data=data):
        _accumulate(a, g * 0.5 / data)

    return _from_op(data, (a,), backward)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    data = np.tanh(a.data)

    def backward(g, a=a, data=data):
        _accumulate(a, g * (1.0 - data * data))

    return _from_op(data, (a,), backward)


def pow_const(a, exponent: float) -> Tensor:
    a = _as_tensor(a)
    data = a.data ** exponent

    def backward(g, a=a, exponent=exponent):
        _accumulate(a, g * exponent * a.data ** (exponent - 1.0))

    return _from_op(data, (a,), backward)


def clamp_min(a, floor: float) -> Tensor:
    """max(a, floor) with gradient passing only where a > floor."""
    a = _as_tensor(a)
    data = np.maximum(a.data, floor)

    def backward(g, a=a, floor=floor):
        _accumulate(a, g * (a.data > floor))

    return _from_op(data, (a,), backward)


# -- linear algebra / shape ops --------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    data = a.data @ b.data

    def backward(g, a=a, b=b):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _from_op(data, (a, b), backward)


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got {a.shape}")

    def backward(g, a=a):
        _accumulate(a, g.T)

    return _from_op(a.data.T, (a,), backward)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(int(s) for s in shape)
    data = a.data.reshape(shape)

    def backward(g, a=a):
        _accumulate(a, g.reshape(a.data.shape))

    return _from_op(data, (a,), backward)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis."""
    a = _as_tensor(a)
    if not 0 <= axis < a.data.ndim:
        raise ShapeError(f"narrow axis {axis} out of range for shape {a.shape}")
    if start < 0 or length < 0 or start + length > a.data.shape[axis]:
        raise ShapeError(
            f"narrow window [{start}, {start + length}) exceeds axis {axis} of shape {a.shape}"
        )
    index = tuple(slice(None) if i != axis else slice(start, start + length) for i in range(a.data.ndim))
    data = a.data[index]

    def backward(g, a=a, index=index):
        full = np.zeros_like(a.data)
        full[index] = g
        _accumulate(a, full)

    return _from_op(data, (a,), backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    parts = [_as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat requires at least one tensor")
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]

    def backward(g, parts=tuple(parts), sizes=tuple(sizes), axis=axis):
        offset = 0
        for part, size in zip(parts, sizes):
            index = tuple(
                slice(None) if i != axis else slice(offset, offset + size)
                for i in range(g.ndim)
            )
            _accumulate(part, g[index])
            offset += size

    return _from_op(data, tuple(parts), backward)


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g, a=a, axis=axis, keepdims=keepdims):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())

    return _from_op(np.asarray(data, dtype=np.float64), (a,), backward)


def tensor_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return tensor_sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


# -- parameter registry and reverse pass ------------------------------------


class GradRecord:
    """Registry of named trainable tensors and the reverse-pass driver.

    The op log lives in the tensors themselves: every op links its output to
    its inputs, so the DAG reachable from a loss is the ordered record of the
    primitives that produced it. Frozen parameters drop out of recording
    entirely (requires_grad is cleared) and receive zero gradients.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._frozen: set[str] = set()

    def parameter(self, name: str, data, rng=None, scale: float | None = None) -> Tensor:
        """Create and register a trainable tensor.

        `data` may be an array or a shape tuple; shapes are filled from `rng`
        (standard normal times `scale`, default 1/sqrt(fan_in)).
        """
        if name in self._params:
            raise ParameterError(f"parameter {name!r} already registered")
        if isinstance(data, tuple):
            if rng is None:
                raise ParameterError("shape-based parameter creation requires an rng")
            fan_in = data[0] if data else 1
            s = scale if scale is not None else 1.0 / np.sqrt(max(fan_in, 1))
            array = rng.standard_normal(data) * s
        else:
            array = np.array(data, dtype=np.float64)
        t = Tensor(array, requires_grad=True)
        self._params[name] = t
        return t

    def register(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ParameterError(f"parameter {name!r} already registered")
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def freeze(self, name: str) -> None:
        if name not in self._params:
            raise ParameterError(f"unknown parameter {name!r}")
        self._frozen.add(name)
        self._params[name].requires_grad = False

    def is_frozen(self, name: str) -> bool:
        return name in self._frozen

    def names(self) -> list[str]:
        return list(self._params)

    def get(self, name: str) -> Tensor:
        return self._params[name]

    def items(self) -> Iterable[tuple[str, Tensor]]:
        return self._params.items()

    def trainable_items(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self._params.items() if n not in self._frozen]

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        return backward(loss, self)


def backward(loss: Tensor, record: GradRecord | None = None) -> dict[str, np.ndarray] | None:
    """Reverse-mode pass from a scalar loss.

    Returns per-parameter gradients when a record is given; every registered
    parameter appears in the result, with exact zeros for parameters the loss
    never touched (including frozen ones).
    """
    if loss.data.size != 1:
        raise UsageError(f"backward requires a scalar loss, got shape {loss.shape}")
    if record is not None:
        record.zero_grads()

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)

    if record is None:
        return None
    grads: dict[str, np.ndarray] = {}
    for name, tensor in record.items():
        if tensor.grad is None:
            grads[name] = np.zeros_like(tensor.data)
        else:
            grads[name] = tensor.grad
    return grads
