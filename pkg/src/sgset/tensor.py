"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray plus an optional gradient and a closure that knows
how to push an incoming gradient back to its parents. Calling backward() on a
scalar walks the recorded graph in reverse topological order. Nothing here is
clever: numpy does the arithmetic, this module only does the bookkeeping.

Two dtypes are supported. Training runs in float32; gradient checking rebuilds
the model in float64 because central differences are meaningless at single
precision. The dtype is whatever the wrapped array carries, and ops inherit it.

Shapes follow numpy. Elementwise ops broadcast like numpy does; matmul
broadcasts leading batch dimensions only. Gradients of broadcast operands are
summed back down to the operand's shape.
"""

from __future__ import annotations

import contextlib

import numpy as np

__all__ = [
    "Tensor", "ShapeError", "NumericError", "no_grad", "is_grad_enabled",
    "cat", "stack", "maximum", "minimum", "rng",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NumericError(ArithmeticError):
    """A computation produced or received non-finite values it cannot accept."""


def rng(seed) -> np.random.Generator:
    """Seeded PCG64 generator; the single RNG entry point for the package.

    numpy's default_rng is PCG64 with SeedSequence hashing, so identical seeds
    give identical streams on every platform. Seeds may be ints or tuples of
    ints (tuples are convenient for keying scenes as (base, split, index)).
    """
    return np.random.default_rng(seed)


_grad_enabled = True


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (forward values unaffected)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    # Extra leading axes were added by broadcasting: sum them away.
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    # Axes of extent 1 were stretched: sum back with keepdims.
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _as_array(value, dtype) -> np.ndarray:
    arr = np.asarray(value)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float32)
    if dtype is not None:
        arr = arr.astype(dtype)
    return arr


class Tensor:
    """ndarray + gradient + backward closure. See module docstring."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- construction of op results ------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: tuple["Tensor", ...], backward) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        record = _grad_enabled and any(p.requires_grad or p._parents for p in parents)
        out.requires_grad = record
        out._parents = parents if record else ()
        out._backward = backward if record else None
        return out

    # -- basic introspection -------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{flag})"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        """The raw array (shared, not copied). Mutating it invalidates grads."""
        return self.data

    def detach(self) -> "Tensor":
        """Same data, no history. backward() through a detached value stops here."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        return out

    def zero_grad(self) -> None:
        self.grad = None

    # -- autodiff core --------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's .grad.

        self must be scalar. Repeated calls accumulate (grads are += into
        whatever is already there), matching the usual training-loop contract
        where zero_grad is explicit.
        """
        if self.data.shape != ():
            raise ValueError(
                f"backward() requires a scalar, got shape {self.data.shape}")
        if not (self.requires_grad or self._parents):
            return  # detached or constant: nothing to do

        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:  # iterative DFS; recursion depth would scale with graph depth
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones((), dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.grad is None:
                    node.grad = g.copy()
                else:
                    node.grad = node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- elementwise arithmetic ----------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        a, b = self, other
        out = a.data + b.data
        return Tensor._result(out, (a, b), lambda g: (
            _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))

    __radd__ = __add__

    def __mul__(self, other):
        other = self._coerce(other)
        a, b = self, other
        out = a.data * b.data
        return Tensor._result(out, (a, b), lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape)))

    __rmul__ = __mul__

    def __neg__(self):
        return Tensor._result(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        other = self._coerce(other)
        a, b = self, other
        return Tensor._result(a.data - b.data, (a, b), lambda g: (
            _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))

    def __rsub__(self, other):
        return self._coerce(other).__sub__(self)

    def __truediv__(self, other):
        other = self._coerce(other)
        a, b = self, other
        out = a.data / b.data
        return Tensor._result(out, (a, b), lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * out / b.data, b.data.shape)))

    def __rtruediv__(self, other):
        return self._coerce(other).__truediv__(self)

    def exp(self):
        out = np.exp(self.data)
        return Tensor._result(out, (self,), lambda g: (g * out,))

    def log(self):
        return Tensor._result(np.log(self.data), (self,),
                              lambda g: (g / self.data,))

    def sqrt(self):
        out = np.sqrt(self.data)
        return Tensor._result(out, (self,), lambda g: (g / (2.0 * out),))

    def abs(self):
        return Tensor._result(np.abs(self.data), (self,),
                              lambda g: (g * np.sign(self.data),))

    def relu(self):
        out = np.maximum(self.data, 0.0)
        return Tensor._result(out, (self,),
                              lambda g: (g * (self.data > 0.0),))

    def sigmoid(self):
        # Stable both ways: exp of a non-positive number only.
        x = self.data
        out = np.where(x >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                       np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        out = out.astype(x.dtype)
        return Tensor._result(out, (self,), lambda g: (g * out * (1.0 - out),))

    # -- reductions -----------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.data.shape

        def bw(g):
            if axis is None:
                return (np.broadcast_to(g, shape).astype(g.dtype),)
            gx = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gx, shape),)

        return Tensor._result(np.asarray(out), (self,), bw)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    # -- shape manipulation ---------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        return Tensor._result(self.data.reshape(shape), (self,),
                              lambda g: (g.reshape(old),))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        return Tensor._result(np.transpose(self.data, axes), (self,),
                              lambda g: (np.transpose(g, inv),))

    def swapaxes(self, a: int, b: int):
        return Tensor._result(np.swapaxes(self.data, a, b), (self,),
                              lambda g: (np.swapaxes(g, a, b),))

    def __getitem__(self, idx):
        shape = self.data.shape
        dtype = self.data.dtype

        def bw(g):
            full = np.zeros(shape, dtype=dtype)
            np.add.at(full, idx, g)
            return (full,)

        return Tensor._result(self.data[idx], (self,), bw)

    # -- linear algebra --------------------------------------------------

    def matmul(self, other):
        other = self._coerce(other)
        a, b = self, other
        if a.data.ndim < 1 or b.data.ndim < 1:
            raise ShapeError(
                f"matmul needs at least 1-D operands, got {a.data.shape} and {b.data.shape}")
        if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else -1]:
            raise ShapeError(
                f"matmul inner dimensions differ: {a.data.shape} x {b.data.shape}")
        try:
            out = a.data @ b.data
        except ValueError as exc:
            raise ShapeError(
                f"matmul batch dimensions incompatible: {a.data.shape} x {b.data.shape}"
            ) from exc

        def bw(g):
            bt = np.swapaxes(b.data, -1, -2)
            at = np.swapaxes(a.data, -1, -2)
            return (_unbroadcast(g @ bt, a.data.shape),
                    _unbroadcast(at @ g, b.data.shape))

        return Tensor._result(out, (a, b), bw)

    __matmul__ = matmul

    # -- nonlinear structured ops ----------------------------------------

    def softmax(self, axis: int = -1):
        """Stable softmax along `axis` (max subtracted before exponentiation)."""
        x = self.data
        shifted = x - x.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=axis, keepdims=True)

        def bw(g):
            inner = (g * out).sum(axis=axis, keepdims=True)
            return (out * (g - inner),)

        return Tensor._result(out, (self,), bw)

    def log_softmax(self, axis: int = -1):
        x = self.data
        shifted = x - x.max(axis=axis, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        out = shifted - lse

        def bw(g):
            return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

        return Tensor._result(out, (self,), bw)

    def masked_fill(self, mask: np.ndarray, value: float):
        """Replace entries where `mask` is True with `value` (no grad there)."""
        mask = np.asarray(mask, dtype=bool)
        out = np.where(mask, np.asarray(value, dtype=self.data.dtype), self.data)

        def bw(g):
            return (np.where(mask, np.zeros((), dtype=g.dtype), g),)

        return Tensor._result(out, (self,), bw)


# -- free functions over several tensors --------------------------------


def cat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ValueError("cat() needs at least one tensor")
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._result(out, tuple(tensors), bw)


def stack(tensors: list[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ValueError("stack() needs at least one tensor")
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor._result(out, tuple(tensors), bw)


def _pairwise_minmax(a, b, np_fn, pick_a):
    """Shared body of maximum/minimum; subgradient goes to the winner, ties to a."""
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=b.data.dtype))
    b = b if isinstance(b, Tensor) else Tensor(np.asarray(b, dtype=a.data.dtype))
    out = np_fn(a.data, b.data)

    def bw(g):
        take_a = pick_a(a.data, b.data)
        return (_unbroadcast(g * take_a, a.data.shape),
                _unbroadcast(g * ~take_a, b.data.shape))

    return Tensor._result(out, (a, b), bw)


def maximum(a, b) -> Tensor:
    return _pairwise_minmax(a, b, np.maximum, lambda x, y: x >= y)


def minimum(a, b) -> Tensor:
    return _pairwise_minmax(a, b, np.minimum, lambda x, y: x <= y)
