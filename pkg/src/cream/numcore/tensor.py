"""Tensor values, the operation tape, and the core array ops.

Every op computes its forward value with numpy, verifies the result is
finite, and (when a tape is active) records an adjoint closure. Gradients
accumulate additively into `Tensor.grad`; callers reset grads between steps
with `zero_grads`.

Tapes are single-threaded. Tensors holding frozen weights may be shared
read-only across threads.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Raised when operand shapes do not conform; names the op and shapes."""


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN/Inf."""


class TapeError(RuntimeError):
    """Raised on invalid tape usage (non-scalar loss, loss not on tape, ...)."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    # arithmetic sugar; all routing goes through the module-level ops
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def transpose(self, axes=None) -> "Tensor":
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)


_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of executed ops, replayable in reverse for adjoints."""

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._produced: set[int] = set()
        self._leaves: dict[int, Tensor] = {}

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPES.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self._records)

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn: Callable):
        self._records.append((out, inputs, backward_fn))
        self._produced.add(id(out))
        for t in inputs:
            if t.requires_grad:
                self._leaves[id(t)] = t

    def backward(self, loss: Tensor) -> None:
        """Populate dLoss/dLeaf for every requires_grad leaf on this tape.

        Leaves that do not participate in the loss get zero grads.
        """
        if loss.data.shape != ():
            raise TapeError(f"loss must be scalar, got shape {loss.data.shape}")
        if id(loss) not in self._produced:
            raise TapeError("loss was not produced on this tape")
        flowing: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
        leaf_grads: dict[int, np.ndarray] = {}
        for out, inputs, backward_fn in reversed(self._records):
            g = flowing.pop(id(out), None)
            if g is None:
                continue
            for t, ig in zip(inputs, backward_fn(g)):
                if ig is None:
                    continue
                if id(t) in self._produced:
                    acc = flowing.get(id(t))
                    flowing[id(t)] = ig if acc is None else acc + ig
                elif t.requires_grad:
                    acc = leaf_grads.get(id(t))
                    leaf_grads[id(t)] = ig if acc is None else acc + ig
        for key, leaf in self._leaves.items():
            g = leaf_grads.get(key)
            if g is None:
                g = np.zeros_like(leaf.data)
            else:
                g = np.reshape(g, leaf.data.shape)
            leaf.grad = g if leaf.grad is None else leaf.grad + g


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else np.float64
    return Tensor(np.asarray(x, dtype=dtype))


def _finite_or_raise(op: str, arr: np.ndarray) -> None:
    # Single-pass screen: any NaN/Inf makes the sum non-finite. A finite sum
    # of non-finite values is impossible; spurious overflow of genuinely
    # finite data is out of range for the magnitudes this package produces.
    if not np.isfinite(np.sum(arr)):
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"{op} produced non-finite values")


def _emit(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    _finite_or_raise(op, data)
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None:
        tape._record(out, inputs, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None
    return _emit("add", data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not broadcast") from None
    return _emit("sub", data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward_fn(g):
        return (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))

    return _emit("mul", data, (a, b), backward_fn)


def div(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    try:
        data = a.data / b.data
    except ValueError:
        raise ShapeError(f"div: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward_fn(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return (ga, gb)

    return _emit("div", data, (a, b), backward_fn)


def neg(a: Tensor) -> Tensor:
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. Either both operands carry identical batch dims, or
    `b` is a plain 2-D matrix broadcast over `a`'s batch dims (weights)."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul: operands must be >=2-D, got {a.shape} and {b.shape}")
    weight_case = b.data.ndim == 2 and a.data.ndim > 2
    if a.shape[-1] != b.shape[-2] or (not weight_case and a.shape[:-2] != b.shape[:-2]):
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    data = a.data @ b.data

    def backward_fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if weight_case:
            axes = list(range(a.data.ndim - 1))
            gb = np.tensordot(a.data, g, axes=(axes, axes))
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return (ga, gb)

    return _emit("matmul", data, (a, b), backward_fn)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    data = np.transpose(a.data, axes)
    if axes is None:
        inverse = None
    else:
        inverse = np.argsort(axes)
    return _emit("transpose", data, (a,), lambda g: (np.transpose(g, inverse),))


def reshape(a: Tensor, shape) -> Tensor:
    data = np.reshape(a.data, shape)
    return _emit("reshape", data, (a,), lambda g: (np.reshape(g, a.data.shape),))


def getitem(a: Tensor, idx) -> Tensor:
    """Basic (non-repeating) indexing: ints, slices, tuples thereof."""
    data = a.data[idx]

    def backward_fn(g):
        ga = np.zeros_like(a.data)
        ga[idx] += g
        return (ga,)

    return _emit("getitem", np.ascontiguousarray(data), (a,), backward_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat: shapes {shapes} do not conform along axis {axis}") from None
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, offsets, axis=axis))

    return _emit("concat", data, tuple(tensors), backward_fn)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _emit("sum", np.asarray(data), (a,), backward_fn)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod([a.data.shape[ax] for ax in np.atleast_1d(axis)])

    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape) / count,)

    return _emit("mean", np.asarray(data), (a,), backward_fn)
