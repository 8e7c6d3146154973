"""Dense tensors with reverse-mode automatic differentiation.

The computation graph is a dynamic tape: every operation returns a new
Tensor holding references to its parents and a closure that propagates the
upstream gradient. ``Tensor.backward()`` walks the tape once in reverse
topological order. The tape is rebuilt on every forward pass, so weight
sharing across repeated applications of the same parameters needs no
special handling: gradients simply accumulate on the shared leaves.

Tensors are treated as immutable after construction. Broadcasting is
deliberately restricted: operands must have the same number of axes and
each axis must either match or be 1 on one side (size-1 tensors broadcast
against anything). General numpy broadcasting is rejected to catch wiring
bugs early.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import GeometryError

__all__ = [
    "Tensor",
    "ew_add",
    "ew_sub",
    "ew_mul",
    "ew_div",
    "scale",
    "sigmoid",
    "relu",
    "log",
    "sum_all",
    "finite_difference_grad",
]


class Tensor:
    """A dense row-major array plus the tape bookkeeping for autodiff."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        dtype=None,
        name: str | None = None,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable[[np.ndarray], None] | None = None,
    ):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if _backward is None and not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite values in tensor {name or ''}".strip())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward
        self.name = name

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{tag})"

    def item(self) -> float:
        if self.size != 1:
            raise GeometryError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    # -- operators -----------------------------------------------------

    def __add__(self, other):
        return ew_add(self, _as_tensor(other, self.dtype))

    def __sub__(self, other):
        return ew_sub(self, _as_tensor(other, self.dtype))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return ew_mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def sum(self) -> "Tensor":
        return sum_all(self)

    # -- autodiff ------------------------------------------------------

    def backward(self) -> None:
        """Seed d(self)/d(self)=1 and accumulate gradients on every leaf.

        ``self`` must be scalar (size 1). Each tape node is visited exactly
        once; fan-out gradients sum.
        """
        if self.size != 1:
            raise GeometryError(f"backward() requires a scalar root, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not (t.requires_grad or t._parents):
        return
    g = g.astype(t.dtype, copy=False)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g


def _check_broadcast(a: Tensor, b: Tensor) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb or a.size == 1 or b.size == 1:
        return
    if len(sa) != len(sb):
        raise GeometryError(f"rank mismatch: {sa} vs {sb}")
    for da, db in zip(sa, sb):
        if da != db and da != 1 and db != 1:
            raise GeometryError(f"shapes {sa} and {sb} are not broadcast-compatible")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum the upstream gradient over axes that were broadcast."""
    if g.shape == shape:
        return g
    if len(shape) < g.ndim:
        g = g.sum(axis=tuple(range(g.ndim - len(shape))))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(a: Tensor, b: Tensor, out: np.ndarray, back) -> Tensor:
    track = a.requires_grad or b.requires_grad or a._parents or b._parents
    return Tensor(out, _parents=(a, b) if track else (), _backward=back if track else None)


def ew_add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)

    def back(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _binary(a, b, a.data + b.data, back)


def ew_sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)

    def back(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _binary(a, b, a.data - b.data, back)


def ew_mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)

    def back(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _binary(a, b, a.data * b.data, back)


def ew_div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    out = a.data / b.data

    def back(g):
        _accum(a, _unbroadcast(g / b.data, a.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _binary(a, b, out, back)


def scale(x: Tensor, c: float) -> Tensor:
    def back(g):
        _accum(x, g * c)

    track = x.requires_grad or x._parents
    return Tensor(x.data * c, _parents=(x,) if track else (), _backward=back if track else None)


def _unary(x: Tensor, out: np.ndarray, back) -> Tensor:
    track = x.requires_grad or x._parents
    return Tensor(out, _parents=(x,) if track else (), _backward=back if track else None)


def sigmoid(x: Tensor) -> Tensor:
    # numerically stable split keeps exp() off large positive arguments
    y = np.where(x.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(x.data))),
                 np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))))
    y = y.astype(x.dtype, copy=False)

    def back(g):
        _accum(x, g * y * (1.0 - y))

    return _unary(x, y, back)


def relu(x: Tensor) -> Tensor:
    def back(g):
        _accum(x, g * (x.data > 0))

    return _unary(x, np.maximum(x.data, 0), back)


def log(x: Tensor) -> Tensor:
    def back(g):
        _accum(x, g / x.data)

    return _unary(x, np.log(x.data), back)


def sum_all(x: Tensor) -> Tensor:
    def back(g):
        _accum(x, np.broadcast_to(g, x.shape))

    return _unary(x, x.data.sum(keepdims=False).reshape(()), back)


def finite_difference_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function, at float64.

    Independent oracle for the analytic backward pass; shares no code with
    the tape.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return g


def parameters_of(tensors: Sequence[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
