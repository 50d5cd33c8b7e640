"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every encoder, head and loss in this package is expressed through the ops
below, so gradients are machine-checked against finite differences.

Design notes:
  - dynamic tape: each op links its output to its parents with a closure
    that scatters the output gradient back; `backward` walks a topological
    order of the subgraph reachable from the loss.
  - no elementwise broadcasting beyond scalar-with-tensor; shape errors are
    raised eagerly with both shapes named.  `matmul` follows numpy stacked
    matmul semantics (leading batch dims may broadcast).
"""

from __future__ import annotations

import contextlib
import hashlib
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Value",
    "ShapeError",
    "no_grad",
    "add_bias",
    "concat",
    "repeat_rows",
    "matmul",
    "softmax",
    "gradient_check",
    "backward",
]


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an op."""

    def __init__(self, op: str, *shapes) -> None:
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(tuple(s)) for s in shapes)}")
        self.op = op
        self.shapes = shapes


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_array(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


class Value:
    """An n-dimensional float64 array participating in reverse-mode AD."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Value, ...] = ()
        self._backward: Callable[[], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Value(shape={self.data.shape}{tag})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def grad_array(self) -> np.ndarray:
        """Gradient as an array; zeros if never reached by a backward pass."""
        if self.grad is None:
            return np.zeros_like(self.data)
        return self.grad

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def _wrap(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def _record(out: Value, parents: Sequence[Value], bw: Callable[[], None]) -> Value:
    if _GRAD_ENABLED and any(p.requires_grad or p._parents for p in parents):
        out._parents = tuple(parents)
        out._backward = bw
        out.requires_grad = True
    return out


def _accum(v: Value, g: np.ndarray) -> None:
    if v.grad is None:
        v.grad = np.zeros_like(v.data)
    v.grad += g


def _check_elementwise(op: str, a: Value, b: Value) -> None:
    if a.data.shape != b.data.shape and a.data.shape != () and b.data.shape != ():
        raise ShapeError(op, a.data.shape, b.data.shape)


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to `shape` (handles the scalar-with-tensor case)."""
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape) if shape == () else g.reshape(shape)


def add(a, b) -> Value:
    a, b = _wrap(a), _wrap(b)
    _check_elementwise("add", a, b)
    out = Value(a.data + b.data)

    def bw():
        _accum(a, _reduce_to(out.grad, a.data.shape))
        _accum(b, _reduce_to(out.grad, b.data.shape))

    return _record(out, (a, b), bw)


def sub(a, b) -> Value:
    a, b = _wrap(a), _wrap(b)
    _check_elementwise("sub", a, b)
    out = Value(a.data - b.data)

    def bw():
        _accum(a, _reduce_to(out.grad, a.data.shape))
        _accum(b, _reduce_to(-out.grad, b.data.shape))

    return _record(out, (a, b), bw)


def mul(a, b) -> Value:
    a, b = _wrap(a), _wrap(b)
    _check_elementwise("mul", a, b)
    out = Value(a.data * b.data)

    def bw():
        _accum(a, _reduce_to(out.grad * b.data, a.data.shape))
        _accum(b, _reduce_to(out.grad * a.data, b.data.shape))

    return _record(out, (a, b), bw)


def div(a, b) -> Value:
    a, b = _wrap(a), _wrap(b)
    _check_elementwise("div", a, b)
    out = Value(a.data / b.data)

    def bw():
        _accum(a, _reduce_to(out.grad / b.data, a.data.shape))
        _accum(b, _reduce_to(-out.grad * a.data / (b.data * b.data), b.data.shape))

    return _record(out, (a, b), bw)


def neg(a) -> Value:
    a = _wrap(a)
    out = Value(-a.data)

    def bw():
        _accum(a, -out.grad)

    return _record(out, (a,), bw)


def matmul(a, b) -> Value:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul", a.data.shape, b.data.shape)
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError("matmul", a.data.shape, b.data.shape)
    out = Value(np.matmul(a.data, b.data))

    def bw():
        ga = np.matmul(out.grad, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), out.grad)
        _accum(a, _sum_batch_dims(ga, a.data.shape))
        _accum(b, _sum_batch_dims(gb, b.data.shape))

    return _record(out, (a, b), bw)


def _sum_batch_dims(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Collapse broadcast batch dims of a stacked-matmul gradient."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, (gs, ss) in enumerate(zip(g.shape, shape)):
        if gs != ss:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add_bias(x, b) -> Value:
    """Add a 1-D bias along the last axis of x."""
    x, b = _wrap(x), _wrap(b)
    if b.data.ndim != 1 or x.data.shape[-1] != b.data.shape[0]:
        raise ShapeError("add_bias", x.data.shape, b.data.shape)
    out = Value(x.data + b.data)

    def bw():
        _accum(x, out.grad)
        _accum(b, out.grad.reshape(-1, b.data.shape[0]).sum(axis=0))

    return _record(out, (x, b), bw)


def repeat_rows(x, n: int) -> Value:
    """Tile a (1, C) row (or (C,) vector) into an (n, C) matrix."""
    x = _wrap(x)
    row = x.data.reshape(1, -1)
    out = Value(np.repeat(row, n, axis=0))

    def bw():
        _accum(x, out.grad.sum(axis=0).reshape(x.data.shape))

    return _record(out, (x,), bw)


def concat(values: Iterable[Value], axis: int = 0) -> Value:
    vals = [_wrap(v) for v in values]
    if not vals:
        raise ShapeError("concat")
    ref = list(vals[0].data.shape)
    for v in vals[1:]:
        s = list(v.data.shape)
        if len(s) != len(ref) or any(si != ri for i, (si, ri) in enumerate(zip(s, ref)) if i != axis % len(ref)):
            raise ShapeError("concat", vals[0].data.shape, v.data.shape)
    out = Value(np.concatenate([v.data for v in vals], axis=axis))

    def bw():
        offset = 0
        for v in vals:
            n = v.data.shape[axis]
            idx = [slice(None)] * out.data.ndim
            idx[axis] = slice(offset, offset + n)
            _accum(v, out.grad[tuple(idx)])
            offset += n

    return _record(out, tuple(vals), bw)


def getitem(x, key) -> Value:
    x = _wrap(x)
    out = Value(x.data[key])

    def bw():
        g = np.zeros_like(x.data)
        g[key] += out.grad
        _accum(x, g)

    return _record(out, (x,), bw)


def reshape(x, shape) -> Value:
    x = _wrap(x)
    out = Value(x.data.reshape(shape))

    def bw():
        _accum(x, out.grad.reshape(x.data.shape))

    return _record(out, (x,), bw)


def transpose(x, axes: Sequence[int]) -> Value:
    x = _wrap(x)
    out = Value(np.transpose(x.data, axes))
    inv = np.argsort(axes)

    def bw():
        _accum(x, np.transpose(out.grad, inv))

    return _record(out, (x,), bw)


# When set (by gradient_check), piecewise ops feed their activation pattern
# into this hash so finite-difference probes that cross a kink can be skipped.
_KINK_TRACE: "hashlib.blake2b | None" = None


def _trace_kinks(mask: np.ndarray) -> None:
    if _KINK_TRACE is not None:
        _KINK_TRACE.update(np.packbits(np.asarray(mask, dtype=bool).reshape(-1)).tobytes())


def relu(x) -> Value:
    x = _wrap(x)
    _trace_kinks(x.data > 0.0)
    out = Value(np.maximum(x.data, 0.0))

    def bw():
        _accum(x, out.grad * (x.data > 0.0))

    return _record(out, (x,), bw)


def sigmoid(x) -> Value:
    x = _wrap(x)
    # evaluate with non-positive exponents only so large |x| never overflows
    z = np.exp(-np.abs(x.data))
    s = np.where(x.data >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))
    out = Value(s)

    def bw():
        _accum(x, out.grad * s * (1.0 - s))

    return _record(out, (x,), bw)


def tanh(x) -> Value:
    x = _wrap(x)
    t = np.tanh(x.data)
    out = Value(t)

    def bw():
        _accum(x, out.grad * (1.0 - t * t))

    return _record(out, (x,), bw)


def exp(x) -> Value:
    x = _wrap(x)
    e = np.exp(x.data)
    out = Value(e)

    def bw():
        _accum(x, out.grad * e)

    return _record(out, (x,), bw)


def log(x) -> Value:
    x = _wrap(x)
    out = Value(np.log(x.data))

    def bw():
        _accum(x, out.grad / x.data)

    return _record(out, (x,), bw)


def sqrt(x) -> Value:
    x = _wrap(x)
    r = np.sqrt(x.data)
    out = Value(r)

    def bw():
        _accum(x, out.grad * 0.5 / r)

    return _record(out, (x,), bw)


def absolute(x) -> Value:
    x = _wrap(x)
    _trace_kinks(x.data >= 0.0)
    out = Value(np.abs(x.data))

    def bw():
        _accum(x, out.grad * np.sign(x.data))

    return _record(out, (x,), bw)


def clip(x, lo: float, hi: float) -> Value:
    x = _wrap(x)
    _trace_kinks((x.data > lo) & (x.data < hi))
    out = Value(np.clip(x.data, lo, hi))

    def bw():
        inside = (x.data > lo) & (x.data < hi)
        _accum(x, out.grad * inside)

    return _record(out, (x,), bw)


def huber(x, delta: float = 1.0) -> Value:
    """Elementwise Huber penalty; derivative is clip(x, -delta, delta)."""
    x = _wrap(x)
    a = np.abs(x.data)
    _trace_kinks(a <= delta)
    out = Value(np.where(a <= delta, 0.5 * x.data * x.data, delta * (a - 0.5 * delta)))

    def bw():
        _accum(x, out.grad * np.clip(x.data, -delta, delta))

    return _record(out, (x,), bw)


def softmax(x, axis: int = -1) -> Value:
    x = _wrap(x)
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / np.sum(e, axis=axis, keepdims=True)
    out = Value(y)

    def bw():
        dot = np.sum(out.grad * y, axis=axis, keepdims=True)
        _accum(x, y * (out.grad - dot))

    return _record(out, (x,), bw)


def log_softmax(x, axis: int = -1) -> Value:
    x = _wrap(x)
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=axis, keepdims=True))
    out = Value(z - lse)
    y = np.exp(z - lse)

    def bw():
        s = np.sum(out.grad, axis=axis, keepdims=True)
        _accum(x, out.grad - y * s)

    return _record(out, (x,), bw)


def vsum(x, axis: int | None = None) -> Value:
    x = _wrap(x)
    out = Value(np.sum(x.data, axis=axis))

    def bw():
        if axis is None:
            _accum(x, np.full_like(x.data, out.grad))
        else:
            _accum(x, np.broadcast_to(np.expand_dims(out.grad, axis), x.data.shape).copy())

    return _record(out, (x,), bw)


def mean(x, axis: int | None = None) -> Value:
    x = _wrap(x)
    out = Value(np.mean(x.data, axis=axis))
    n = x.data.size if axis is None else x.data.shape[axis]

    def bw():
        if axis is None:
            _accum(x, np.full_like(x.data, out.grad / n))
        else:
            _accum(x, np.broadcast_to(np.expand_dims(out.grad / n, axis), x.data.shape).copy())

    return _record(out, (x,), bw)


def vmax(x, axis: int | None = None) -> Value:
    """Max reduction; ties share the incoming gradient equally, which keeps
    the result independent of element order."""
    x = _wrap(x)
    m = np.max(x.data, axis=axis, keepdims=axis is not None)
    _trace_kinks(x.data == m)
    out = Value(m.squeeze(axis) if axis is not None else m)

    def bw():
        mask = (x.data == m).astype(np.float64)
        counts = mask.sum(axis=axis, keepdims=axis is not None)
        g = out.grad if axis is None else np.expand_dims(out.grad, axis)
        _accum(x, mask / counts * g)

    return _record(out, (x,), bw)


def backward(loss: Value) -> None:
    """Reverse pass from a scalar loss; populates .grad on reachable nodes."""
    if loss.data.shape != ():
        raise ShapeError("backward (loss must be scalar)", loss.data.shape)
    topo: list[Value] = []
    visited: set[int] = set()
    stack: list[tuple[Value, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    loss.grad = np.ones((), dtype=np.float64)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward()


def gradient_check(
    f: Callable[[], Value],
    params: dict[str, Value],
    eps: float = 1e-5,
    n_samples: int = 3,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic gradients and central differences.

    `f` re-runs the forward pass from the current parameter values and returns
    the scalar loss; a few coordinates per parameter tensor are sampled.
    Coordinates whose +/-eps probes land on opposite sides of a kink of a
    piecewise op (relu, abs, clip, huber, max) are skipped: the loss is not
    differentiable there, so central differences are meaningless.
    """
    global _KINK_TRACE
    if not (0.0 < eps <= 1e-3):
        raise ValueError(f"eps must be in (0, 1e-3], got {eps}")
    rng = rng or np.random.default_rng(0)
    for p in params.values():
        p.zero_grad()
    loss = f()
    backward(loss)
    analytic = {k: p.grad_array().copy() for k, p in params.items()}

    def probe(flat: np.ndarray, i: int, x: float) -> tuple[float, bytes]:
        global _KINK_TRACE
        flat[i] = x
        _KINK_TRACE = hashlib.blake2b()
        try:
            with no_grad():
                fx = f().item()
            return fx, _KINK_TRACE.digest()
        finally:
            _KINK_TRACE = None

    worst = 0.0
    for key, p in params.items():
        flat = p.data.reshape(-1)
        k = min(n_samples, flat.size)
        idxs = rng.choice(flat.size, size=k, replace=False)
        for i in idxs:
            orig = flat[i]
            try:
                fp, hp = probe(flat, i, orig + eps)
                fm, hm = probe(flat, i, orig - eps)
            finally:
                flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(f"non-finite loss while perturbing {key}[{i}]")
            if hp != hm:
                continue
            numeric = (fp - fm) / (2.0 * eps)
            a = analytic[key].reshape(-1)[i]
            err = abs(a - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
