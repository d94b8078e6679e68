"""Dense reverse-mode differentiation over numpy float64 arrays, plus Adam.

Every forward op returns a new :class:`Tensor`. If any input requires a
gradient, the op records a closure that maps the output gradient to input
gradients; :meth:`Tensor.backward` replays those closures in reverse
topological order. Leaves that are :class:`Parameter` instances accumulate
into ``.grad`` across calls; intermediate gradients are discarded.
"""
from __future__ import annotations

import contextlib
import os
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeError

DEBUG = bool(os.environ.get("HYSAGE_DEBUG"))
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Forward ops inside this block record nothing (inference)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward")

    def __init__(self, data, parents: tuple = (), backward: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self._parents = parents
        self._backward = backward
        self.requires_grad = backward is not None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar root, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if isinstance(node, Parameter):
                node.grad += g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar
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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)


class Parameter(Tensor):
    """Trainable leaf. Holds gradient and Adam moment buffers of the same shape."""

    __slots__ = ("name", "grad", "adam_m", "adam_v", "step")

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, dtype=np.float64, copy=True))
        self.requires_grad = True
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.step = 0

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def _make(out: np.ndarray, parents: tuple, backward: Callable) -> Tensor:
    if DEBUG and not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite value produced by forward op")
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(out, parents, backward)
    return Tensor(out)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, opname: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{opname}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "add")
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape) if a.requires_grad else None,
                            _unbroadcast(g, b.shape) if b.requires_grad else None))


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "sub")
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape) if a.requires_grad else None,
                            _unbroadcast(-g, b.shape) if b.requires_grad else None))


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "elementwise_mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None))


elementwise_mul = mul


def scale(a, c: float) -> Tensor:
    a = _lift(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    """``a @ b`` where ``a`` is (..., n, k) or (k,) and ``b`` is (k, m) or (k,)."""
    a, b = _lift(a), _lift(b)
    if b.data.ndim > 2 or a.data.ndim == 0 or b.data.ndim == 0:
        raise ShapeError(f"matmul: unsupported shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    a2 = a.data[None, :] if a.data.ndim == 1 else a.data
    b2 = b.data[:, None] if b.data.ndim == 1 else b.data
    out2 = a2 @ b2

    def backward(g):
        g2 = g.reshape(out2.shape)
        ga = (g2 @ b2.T).reshape(a.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            k = a2.shape[-1]
            gb = (a2.reshape(-1, k).T @ g2.reshape(-1, b2.shape[1])).reshape(b.shape)
        return ga, gb

    out = out2
    if a.data.ndim == 1:
        out = out.reshape(out.shape[1:])
    if b.data.ndim == 1:
        out = out.reshape(out.shape[:-1])
    return _make(out, (a, b), backward)


def outer_product(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise ShapeError(f"outer_product: expected vectors, got {a.shape} and {b.shape}")
    return _make(np.outer(a.data, b.data), (a, b),
                 lambda g: (g @ b.data, g.T @ a.data))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [_lift(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: nothing to concatenate")
    nd = ts[0].data.ndim
    ax = axis % nd
    for t in ts[1:]:
        if t.data.ndim != nd or any(t.shape[i] != ts[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {ts[0].shape} and {t.shape}")
    out = np.concatenate([t.data for t in ts], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(ts)))

    return _make(out, tuple(ts), backward)


def slice_(a, index) -> Tensor:
    a = _lift(a)
    out = a.data[index]

    basic = all(isinstance(i, (slice, int, type(Ellipsis)))
                for i in (index if isinstance(index, tuple) else (index,)))

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out, copy=True), (a,), backward)


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = _lift(a)
    if a.data.ndim < 2:
        raise ShapeError(f"transpose: need at least 2 axes, got {a.shape}")
    return _make(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def relu(a) -> Tensor:
    a = _lift(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def tanh(a) -> Tensor:
    a = _lift(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = _lift(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def softmax(a, axis: int = -1) -> Tensor:
    a = _lift(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), backward)


def log(a) -> Tensor:
    a = _lift(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def log_sigmoid(a) -> Tensor:
    """``log(sigmoid(a))`` without overflow for large ``|a|``."""
    a = _lift(a)
    x = a.data
    out = -np.logaddexp(0.0, -x)
    sig = np.exp(out)
    return _make(out, (a,), lambda g: (g * (1.0 - sig),))


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), backward)


# ---------------------------------------------------------------- optimiser

def sum_squares(tensors: Sequence) -> Tensor:
    """Scalar sum of squared entries over several tensors, as one graph node."""
    tensors = [_lift(t) for t in tensors]
    total = sum(float(np.vdot(t.data, t.data)) for t in tensors)
    return _make(np.array(total), tuple(tensors),
                 lambda g: tuple(2.0 * g * t.data for t in tensors))


def adam_step(params: Iterable[Parameter], lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update in place. Gradients are left for the caller to zero."""
    for p in params:
        p.step += 1
        g = p.grad
        p.adam_m *= beta1
        p.adam_m += (1.0 - beta1) * g
        p.adam_v *= beta2
        p.adam_v += (1.0 - beta2) * g * g
        m_hat = p.adam_m / (1.0 - beta1 ** p.step)
        v_hat = p.adam_v / (1.0 - beta2 ** p.step)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps)


# ---------------------------------------------------------------- checking

def numerical_gradient(fn: Callable[[], float], param: Parameter, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function with respect to ``param``."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = fn()
        flat[i] = orig - eps
        f_minus = fn()
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2 * eps)
    return grad


def gradient_check(loss_fn: Callable[[], Tensor], params: Sequence[Parameter],
                   eps: float = 1e-5, abs_floor: float = 1e-7) -> float:
    """Return the worst relative error between analytic and numerical gradients.

    The relative error of a coordinate is ``|a - n| / max(|a|, |n|, abs_floor)``, so
    coordinates where both gradients are tiny are measured against ``abs_floor``.
    """
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        numeric = numerical_gradient(lambda: float(loss_fn().data.sum()), p, eps)
        diff = np.abs(analytic - numeric)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), abs_floor)
        rel = diff / denom
        if rel.size:
            worst = max(worst, float(rel.max()))
    for p in params:
        p.zero_grad()
    return worst
