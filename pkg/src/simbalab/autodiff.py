"""Tape-based reverse-mode automatic differentiation over dense numpy arrays.

A :class:`Tape` records every primitive applied to tensors that (transitively)
depend on one of its variables. Primitives whose inputs are all constants are
evaluated eagerly and leave no trace, so parameters bound as constants cost
nothing in the backward pass.

ReLU uses the subgradient 0 at exactly 0, in both the saved mask and the
adjoint.

Example::

    tape = Tape()
    x = tape.variable([1.0, 2.0])
    loss = ad.sum(ad.square(x))
    grads = backward(tape, loss)
    grads[x]  # array([2., 4.])
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64
_dtype = DTYPE


def get_dtype():
    return _dtype


@contextlib.contextmanager
def precision(dtype):
    """Set the dtype used for new tensors inside the block (default float64)."""
    global _dtype
    prev, _dtype = _dtype, np.dtype(dtype).type
    try:
        yield
    finally:
        _dtype = prev

PRIMITIVES = (
    "matmul", "add", "sub", "mul", "scalar_mul", "relu", "tanh", "exp", "log",
    "square", "sqrt", "sum", "mean", "concat", "broadcast", "slice",
)


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class Tensor:
    """Immutable dense array, optionally tied to a node on a tape."""

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data, tape: "Tape | None" = None, node_id: int | None = None,
                 _owned: bool = False):
        if _owned and isinstance(data, np.ndarray):
            arr = data
        elif isinstance(data, np.ndarray) and data.dtype == _dtype:
            # No copy: a read-only view. Callers must not mutate the source.
            arr = data.view()
        else:
            arr = np.array(data, dtype=_dtype)
        if arr.flags.writeable:
            arr.flags.writeable = False
        self.data = arr
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def requires_grad(self) -> bool:
        return self.node_id is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = f", node={self.node_id}" if self.node_id is not None else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scalar_mul(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


class _Node:
    __slots__ = ("kind", "inputs", "saved", "attrs", "shape")

    def __init__(self, kind, inputs, saved, attrs, shape):
        self.kind = kind
        self.inputs = inputs
        self.saved = saved
        self.attrs = attrs
        self.shape = shape


class Tape:
    """Append-only record of primitive applications.

    Node ids are indices into ``nodes``, so inputs always precede their
    consumers. A tape is not thread-safe; use one tape per thread.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.leaves: list[int] = []

    def variable(self, value) -> Tensor:
        """Register ``value`` as a differentiable leaf."""
        arr = Tensor(value).data
        node_id = len(self.nodes)
        self.nodes.append(_Node("leaf", (), None, None, arr.shape))
        self.leaves.append(node_id)
        return Tensor(arr, self, node_id, _owned=True)

    def _record(self, kind, inputs, saved, attrs, out) -> Tensor:
        node_id = len(self.nodes)
        ids = tuple(t.node_id for t in inputs)
        self.nodes.append(_Node(kind, ids, saved, attrs, out.shape))
        return Tensor(out, self, node_id, _owned=True)

    def __len__(self):
        return len(self.nodes)


def _shape_error(kind, *shapes):
    return ShapeError(f"{kind}: incompatible shapes {', '.join(str(s) for s in shapes)}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# Forward rules return (output, saved). Adjoint rules map the output
# gradient to one gradient per input (None where the input is constant).

def _fwd_matmul(a, b, attrs):
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    return a @ b, (a, b)


def _bwd_matmul(g, saved, attrs, need):
    a, b = saved
    ga = gb = None
    a2 = a if a.ndim == 2 else a[None, :]
    b2 = b if b.ndim == 2 else b[:, None]
    g2 = g.reshape(a2.shape[0], b2.shape[1])
    if need[0]:
        ga = (g2 @ b2.T).reshape(a.shape)
    if need[1]:
        gb = (a2.T @ g2).reshape(b.shape)
    return ga, gb


def _check_same(kind, a, b):
    if a.shape != b.shape:
        raise _shape_error(kind, a.shape, b.shape)


def _fwd_add(a, b, attrs):
    _check_same("add", a, b)
    return a + b, None


def _bwd_add(g, saved, attrs, need):
    return g, g


def _fwd_sub(a, b, attrs):
    _check_same("sub", a, b)
    return a - b, None


def _bwd_sub(g, saved, attrs, need):
    return g, -g


def _fwd_mul(a, b, attrs):
    _check_same("mul", a, b)
    return a * b, (a, b)


def _bwd_mul(g, saved, attrs, need):
    a, b = saved
    return (g * b if need[0] else None), (g * a if need[1] else None)


def _fwd_scalar_mul(a, attrs):
    return a * attrs, None


def _bwd_scalar_mul(g, saved, attrs, need):
    return (g * attrs,)


def _fwd_relu(a, attrs):
    mask = a > 0
    return np.maximum(a, 0), mask


def _bwd_relu(g, mask, attrs, need):
    return (g * mask,)


def _fwd_tanh(a, attrs):
    y = np.tanh(a)
    return y, y


def _bwd_tanh(g, y, attrs, need):
    return (g * (1.0 - y * y),)


def _fwd_exp(a, attrs):
    with np.errstate(over="ignore"):
        y = np.exp(a)
    if not np.all(np.isfinite(y)):
        raise DomainError(f"exp: overflow for input max {a.max():.6g}")
    return y, y


def _bwd_exp(g, y, attrs, need):
    return (g * y,)


def _fwd_log(a, attrs):
    if np.any(a <= 0):
        raise DomainError(f"log: non-positive input (min {a.min():.6g})")
    return np.log(a), a


def _bwd_log(g, a, attrs, need):
    return (g / a,)


def _fwd_square(a, attrs):
    return a * a, a


def _bwd_square(g, a, attrs, need):
    return (2.0 * g * a,)


def _fwd_sqrt(a, attrs):
    if np.any(a <= 0):
        raise DomainError(f"sqrt: non-positive input (min {a.min():.6g})")
    y = np.sqrt(a)
    return y, y


def _bwd_sqrt(g, y, attrs, need):
    return (0.5 * g / y,)


def _fwd_sum(a, attrs):
    axis, keepdims = attrs
    return np.sum(a, axis=axis, keepdims=keepdims), a.shape


def _expand_reduced(g, in_shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(in_shape)), in_shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, in_shape)


def _bwd_sum(g, in_shape, attrs, need):
    axis, keepdims = attrs
    return (_expand_reduced(g, in_shape, axis, keepdims),)


def _fwd_mean(a, attrs):
    axis, keepdims = attrs
    return np.mean(a, axis=axis, keepdims=keepdims), a.shape


def _bwd_mean(g, in_shape, attrs, need):
    axis, keepdims = attrs
    if axis is None:
        n = int(np.prod(in_shape))
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([in_shape[ax] for ax in axes]))
    return (_expand_reduced(g, in_shape, axis, keepdims) / n,)


def _fwd_concat(*args):
    arrays, axis = args[:-1], args[-1]
    try:
        out = np.concatenate(arrays, axis=axis)
    except ValueError:
        raise _shape_error("concat", *(a.shape for a in arrays)) from None
    return out, [a.shape[axis] for a in arrays]


def _bwd_concat(g, sizes, axis, need):
    splits = np.cumsum(sizes)[:-1]
    return tuple(np.split(g, splits, axis=axis))


def _fwd_broadcast(a, shape):
    try:
        return np.broadcast_to(a, shape), a.shape
    except ValueError:
        raise _shape_error("broadcast", a.shape, tuple(shape)) from None


def _bwd_broadcast(g, in_shape, attrs, need):
    return (_unbroadcast(g, in_shape),)


def _fwd_slice(a, index):
    try:
        return a[index], a.shape
    except IndexError:
        raise _shape_error("slice", a.shape, index) from None


def _bwd_slice(g, in_shape, index, need):
    out = np.zeros(in_shape, dtype=g.dtype)
    if _is_fancy(index):
        np.add.at(out, index, g)
    else:
        out[index] = g
    return (out,)


def _is_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


_BINARY = {"matmul", "add", "sub", "mul"}

_RULES: dict[str, tuple[Callable, Callable]] = {
    "matmul": (_fwd_matmul, _bwd_matmul),
    "add": (_fwd_add, _bwd_add),
    "sub": (_fwd_sub, _bwd_sub),
    "mul": (_fwd_mul, _bwd_mul),
    "scalar_mul": (_fwd_scalar_mul, _bwd_scalar_mul),
    "relu": (_fwd_relu, _bwd_relu),
    "tanh": (_fwd_tanh, _bwd_tanh),
    "exp": (_fwd_exp, _bwd_exp),
    "log": (_fwd_log, _bwd_log),
    "square": (_fwd_square, _bwd_square),
    "sqrt": (_fwd_sqrt, _bwd_sqrt),
    "sum": (_fwd_sum, _bwd_sum),
    "mean": (_fwd_mean, _bwd_mean),
    "concat": (_fwd_concat, _bwd_concat),
    "broadcast": (_fwd_broadcast, _bwd_broadcast),
    "slice": (_fwd_slice, _bwd_slice),
}


def apply_primitive(kind: str, inputs: Sequence, attrs=None) -> Tensor:
    """Evaluate primitive ``kind`` and record it if any input is on a tape."""
    if kind not in _RULES:
        raise ValueError(f"unknown primitive {kind!r}")
    tensors = [as_tensor(x) for x in inputs]
    fwd = _RULES[kind][0]
    arrays = [t.data for t in tensors]
    if kind == "concat":
        out, saved = fwd(*arrays, attrs)
    elif kind in _BINARY:
        if len(arrays) != 2:
            raise ValueError(f"{kind} takes 2 inputs, got {len(arrays)}")
        out, saved = fwd(arrays[0], arrays[1], attrs)
    else:
        if len(arrays) != 1:
            raise ValueError(f"{kind} takes 1 input, got {len(arrays)}")
        out, saved = fwd(arrays[0], attrs)

    tape = None
    for t in tensors:
        if t.node_id is not None:
            if tape is not None and t.tape is not tape:
                raise ValueError(f"{kind}: inputs belong to different tapes")
            tape = t.tape
    out = np.asarray(out)
    if tape is None:
        return Tensor(out, _owned=True)
    return tape._record(kind, tensors, saved, attrs, out)


class Gradients(dict):
    """Map from leaf node id to gradient array; also indexable by Tensor."""

    def __getitem__(self, key):
        if isinstance(key, Tensor):
            key = key.node_id
        return dict.__getitem__(self, key)


def backward(tape: Tape, loss: Tensor) -> Gradients:
    """Reverse-mode sweep from a scalar ``loss``; returns d loss / d leaf."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads = Gradients({leaf: np.zeros(tape.nodes[leaf].shape, dtype=_dtype)
                       for leaf in tape.leaves})
    if loss.node_id is None or loss.tape is not tape:
        return grads
    adj: dict[int, np.ndarray] = {loss.node_id: np.ones(loss.shape, dtype=loss.data.dtype)}
    nodes = tape.nodes
    for node_id in range(loss.node_id, -1, -1):
        g = adj.pop(node_id, None)
        if g is None:
            continue
        node = nodes[node_id]
        if node.kind == "leaf":
            grads[node_id] = np.array(g)
            continue
        need = [i is not None for i in node.inputs]
        in_grads = _RULES[node.kind][1](g, node.saved, node.attrs, need)
        for i, gi in zip(node.inputs, in_grads):
            if i is None or gi is None:
                continue
            prev = adj.get(i)
            adj[i] = gi if prev is None else prev + gi
    return grads


def grad_check(function: Callable[[Tensor], Tensor], point, step: float = 1e-5) -> float:
    """Max relative error between backward() and central differences.

    ``function`` must map a tensor to a scalar tensor using only primitives
    from this module. Points should sit away from ReLU kinks.
    """
    with precision(np.float64):
        return _grad_check(function, point, step)


def _grad_check(function, point, step):
    x0 = np.array(point, dtype=np.float64)
    tape = Tape()
    x = tape.variable(x0)
    analytic = backward(tape, function(x))[x]

    flat = x0.reshape(-1)
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += step
        xm[i] -= step
        fp = function(Tensor(xp.reshape(x0.shape))).item()
        fm = function(Tensor(xm.reshape(x0.shape))).item()
        numeric[i] = (fp - fm) / (2.0 * step)
    err = np.abs(analytic.reshape(-1) - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max()) if err.size else 0.0


# Thin wrappers, one per primitive.

def matmul(a, b):
    return apply_primitive("matmul", (a, b))


def add(a, b):
    return apply_primitive("add", (a, b))


def sub(a, b):
    return apply_primitive("sub", (a, b))


def mul(a, b):
    return apply_primitive("mul", (a, b))


def scalar_mul(a, c: float):
    return apply_primitive("scalar_mul", (a,), float(c))


def relu(a):
    return apply_primitive("relu", (a,))


def tanh(a):
    return apply_primitive("tanh", (a,))


def exp(a):
    return apply_primitive("exp", (a,))


def log(a):
    return apply_primitive("log", (a,))


def square(a):
    return apply_primitive("square", (a,))


def sqrt(a):
    return apply_primitive("sqrt", (a,))


def sum(a, axis=None, keepdims=False):  # noqa: A001
    return apply_primitive("sum", (a,), (axis, keepdims))


def mean(a, axis=None, keepdims=False):
    return apply_primitive("mean", (a,), (axis, keepdims))


def concat(tensors, axis=-1):
    return apply_primitive("concat", tuple(tensors), axis)


def broadcast(a, shape):
    return apply_primitive("broadcast", (a,), tuple(shape))


def slice_(a, index):
    return apply_primitive("slice", (a,), index)


# Composites built from primitives only.

def add_const(a, c: float):
    a = as_tensor(a)
    return add(a, Tensor(np.full(a.shape, c)))


def rsqrt(a):
    """1 / sqrt(a) as exp(-log(a) / 2); requires a > 0."""
    return exp(scalar_mul(log(a), -0.5))


def clamp(a, lo: float, hi: float):
    """Hard clamp via lo + relu(a - lo) - relu(a - hi)."""
    a = as_tensor(a)
    return add_const(sub(relu(add_const(a, -lo)), relu(add_const(a, -hi))), lo)


def minimum(a, b):
    """Elementwise min(a, b) = a - relu(a - b)."""
    return sub(a, relu(sub(a, b)))


def linear(x, w, b=None):
    """x @ w (+ b broadcast over leading axis)."""
    y = matmul(x, w)
    if b is None:
        return y
    return add(y, broadcast(b, y.shape))
