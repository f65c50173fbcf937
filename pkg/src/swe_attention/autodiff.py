"""Dense double-precision tensors with reverse-mode automatic differentiation.

Every operation records a closure that maps the gradient of its output to
gradients of its parents.  :func:`backward` walks the recorded graph in
reverse creation order and accumulates gradients into the leaves.

Shapes never broadcast implicitly.  Binary elementwise operations require
equal shapes; the only broadcasting forms are the explicit row-vector
operations :func:`add_rowvec` and :func:`mul_rowvec` and multiplication by a
Python scalar (:func:`scale`).
"""
from __future__ import annotations

import contextlib
import itertools
import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor", "ShapeError", "GraphError", "NondeterminismError",
    "tensor", "no_grad", "is_grad_enabled",
    "matmul", "add", "sub", "mul", "scale", "gelu", "relu", "tanh", "sigmoid",
    "softmax_lastdim", "elementwise", "add_rowvec", "mul_rowvec", "layer_norm",
    "reshape", "transpose", "concat", "stack", "sum", "mean",
    "backward", "grad_check",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class GraphError(RuntimeError):
    """The computation graph was used outside its contract."""


class NondeterminismError(RuntimeError):
    """A function under gradient check returned different values for equal inputs."""


_GRAD_ENABLED = True
_counter = itertools.count()


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, finite differences)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A dense float64 array that remembers how it was computed."""

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = "leaf"
        self._released = False
        self._id = next(_counter)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._op == "leaf"

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{flag})"

    # operator sugar; all strict-shape
    def __add__(self, other):
        return add(self, _as_tensor(other, self.shape))

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.shape))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self):
        return sum(self)

    def backward(self):
        return backward(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(value, shape) -> Tensor:
    if isinstance(value, Tensor):
        return value
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != tuple(shape):
        raise ShapeError(f"cannot combine shape {tuple(shape)} with shape {arr.shape}")
    return Tensor(arr)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], op: str, grad_fn) -> Tensor:
    out = Tensor(data)
    out._op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = grad_fn
    return out


def _same_shape(kind: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of the last two axes; leading (batch) axes must be equal."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def grad_fn(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _make(ad @ bd, (a, b), "matmul", grad_fn)


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _make(a.data + b.data, (a, b), "add", lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _make(a.data - b.data, (a, b), "sub", lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), "mul", lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), "scale", lambda g: (g * c,))


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def grad_fn(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return _make(x * cdf, (a,), "gelu", grad_fn)


def relu(a: Tensor) -> Tensor:
    positive = a.data > 0
    # np.maximum keeps NaN visible instead of mapping it to 0
    return _make(np.maximum(a.data, 0.0), (a,), "relu",
                 lambda g: (g * positive,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), "tanh", lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return _make(y, (a,), "sigmoid", lambda g: (g * y * (1.0 - y),))


def softmax_lastdim(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (a,), "softmax", grad_fn)


_UNARY = {"gelu": gelu, "relu": relu, "softmax_lastdim": softmax_lastdim,
          "tanh": tanh, "sigmoid": sigmoid}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(kind: str, a: Tensor, b=None) -> Tensor:
    """Dispatch an elementwise operation by name.

    ``scale`` takes a Python number as ``b``; the binary kinds take a tensor of
    the same shape as ``a``.
    """
    if kind in _BINARY:
        if not isinstance(b, Tensor):
            raise ShapeError(f"{kind} needs a second tensor operand")
        return _BINARY[kind](a, b)
    if kind == "scale":
        if not isinstance(b, (int, float)):
            raise ShapeError("scale needs a scalar operand")
        return scale(a, b)
    if kind in _UNARY:
        return _UNARY[kind](a)
    raise ValueError(f"unknown elementwise kind {kind!r}")


def add_rowvec(a: Tensor, v: Tensor) -> Tensor:
    """Add vector ``v`` to every row of ``a`` (explicit last-axis broadcast)."""
    if v.ndim != 1 or a.shape[-1] != v.shape[0]:
        raise ShapeError(f"add_rowvec: row vector {v.shape} does not fit {a.shape}")
    lead = tuple(range(a.ndim - 1))
    return _make(a.data + v.data, (a, v), "add_rowvec",
                 lambda g: (g, g.sum(axis=lead)))


def mul_rowvec(a: Tensor, v: Tensor) -> Tensor:
    """Multiply every row of ``a`` elementwise by vector ``v``."""
    if v.ndim != 1 or a.shape[-1] != v.shape[0]:
        raise ShapeError(f"mul_rowvec: row vector {v.shape} does not fit {a.shape}")
    ad, vd = a.data, v.data
    lead = tuple(range(a.ndim - 1))
    return _make(ad * vd, (a, v), "mul_rowvec",
                 lambda g: (g * vd, (g * ad).sum(axis=lead)))


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row over the last axis (no affine part)."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv

    def grad_fn(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _make(xhat, (a,), "layer_norm", grad_fn)


# ---------------------------------------------------------------- structure

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    old = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {old} to {shape}") from exc
    return _make(data, (a,), "reshape", lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,), "transpose",
                 lambda g: (g.transpose(inverse),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: shapes {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(data, tensors, "concat",
                 lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"stack: shapes {[t.shape for t in tensors]}") from exc

    def grad_fn(g):
        return tuple(np.take(g, k, axis=axis) for k in range(len(tensors)))

    return _make(data, tensors, "stack", grad_fn)


def _getitem(a: Tensor, index) -> Tensor:
    shape = a.shape

    def grad_fn(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _make(np.ascontiguousarray(a.data[index]), (a,), "getitem", grad_fn)


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors the tensor method
    shape = a.shape
    return _make(np.array(a.data.sum()), (a,), "sum",
                 lambda g: (np.full(shape, np.asarray(g).item()),))


def mean(a: Tensor) -> Tensor:
    return scale(sum(a), 1.0 / a.size)


# ---------------------------------------------------------------- backward

def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if node._id in seen:
            continue
        seen.add(node._id)
        stack_.append((node, True))
        for parent in node._parents:
            if parent._id not in seen:
                stack_.append((parent, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Backpropagate from a single-element ``loss``.

    Gradients accumulate into ``leaf.grad`` (call :meth:`Tensor.zero_grad` to
    reset).  The graph is released afterwards; a second call on the same loss
    raises :class:`GraphError`.  Returns a map from each reached leaf that
    requires grad to its accumulated gradient.
    """
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._released:
        raise GraphError("graph already released by an earlier backward(); "
                         "rebuild the forward pass")
    order = _topological(loss)
    grads: dict[int, np.ndarray] = {loss._id: np.ones(loss.shape)}
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(order):
        g = grads.pop(node._id, None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
                leaves[node] = node.grad
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg
    for node in order:
        if not node.is_leaf:
            node._parents = ()
            node._backward = None
            node._released = True
    return leaves


def grad_check(f: Callable[..., Tensor], inputs: Iterable[Tensor],
               eps: float = 1e-5) -> float:
    """Largest relative gap between autodiff and central-difference gradients.

    ``f`` maps ``inputs`` to a single-element tensor.  Each input coordinate is
    perturbed by ``+-eps``; the relative error uses the denominator
    ``max(|analytic|, |numeric|, 1e-8)``.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    inputs = list(inputs)

    def value() -> float:
        with no_grad():
            return f(*inputs).item()

    if value() != value():
        raise NondeterminismError("f returned different values for identical inputs; "
                                  "disable dropout before checking gradients")
    saved = [t.requires_grad for t in inputs]
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    backward(f(*inputs))
    worst = 0.0
    for t in inputs:
        analytic = np.zeros(t.shape) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        ana = analytic.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            fp = value()
            flat[k] = orig - eps
            fm = value()
            flat[k] = orig
            numeric = (fp - fm) / (2.0 * eps)
            denom = max(abs(ana[k]), abs(numeric), 1e-8)
            worst = max(worst, abs(ana[k] - numeric) / denom)
    for t, flag in zip(inputs, saved):
        t.requires_grad = flag
        t.grad = None
    return worst
