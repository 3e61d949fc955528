"""Dense tensors with tape-based reverse-mode differentiation.

Tensors wrap immutable numpy arrays. While a :class:`Tape` is active every
primitive appends a record (inputs, output, forward closure, adjoint rule);
:func:`backward` walks the records in reverse and accumulates gradients.
"""
from __future__ import annotations

import contextlib
import functools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class TensorError(Exception):
    """Base class for errors raised by the tensor engine."""


class ShapeError(TensorError, ValueError):
    def __init__(self, op: str, shapes: Sequence[tuple], detail: str = ""):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        msg = f"{op}: incompatible shapes {self.shapes}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonFiniteError(TensorError, FloatingPointError):
    def __init__(self, op: str):
        self.op = op
        super().__init__(f"{op}: produced non-finite values")


class Tensor:
    """An immutable n-d array, optionally tracked for differentiation."""

    __slots__ = ("data", "requires_grad", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype if dtype is not None else _default_dtype(data))
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


class Parameter(Tensor):
    """A named trainable tensor with an accumulated gradient."""

    __slots__ = ("name", "grad")

    def __init__(self, name: str, value, dtype=None):
        super().__init__(value, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def assign(self, value) -> None:
        value = np.asarray(value, dtype=self.data.dtype)
        if value.shape != self.data.shape:
            raise ShapeError("assign", [self.data.shape, value.shape])
        arr = value.copy()
        arr.setflags(write=False)
        self.data = arr

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def _default_dtype(data):
    if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
        return data.dtype
    if isinstance(data, Tensor):
        return data.dtype
    return np.float64


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


# ---------------------------------------------------------------------------
# Tape


@dataclass
class Record:
    op: str
    inputs: tuple
    output: Tensor
    forward: Callable
    vjp: Callable


@dataclass
class Tape:
    """Ordered log of primitive applications.

    ``kink_tol`` > 0 makes piecewise primitives flag inputs that lie within
    that distance of a non-differentiable point (``near_kink``).
    """

    records: list = field(default_factory=list)
    kink_tol: float = 0.0
    near_kink: bool = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.pop()

    def __len__(self) -> int:
        return len(self.records)

    def replay(self) -> dict:
        """Re-run every recorded forward closure; returns id(output) -> array."""
        env: dict[int, np.ndarray] = {}
        for rec in self.records:
            args = [env.get(id(t), t.data) for t in rec.inputs]
            env[id(rec.output)] = rec.forward(*args)
        return env


_TAPES: list[Tape] = []


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


@contextlib.contextmanager
def no_tape():
    saved = list(_TAPES)
    _TAPES.clear()
    try:
        yield
    finally:
        _TAPES.extend(saved)


def _finite(op: str, arr: np.ndarray) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError(op)
    return arr


def _apply(op: str, inputs: Sequence[Tensor], forward: Callable, vjp: Callable) -> Tensor:
    arrays = [t.data for t in inputs]
    try:
        # overflow and division by zero are reported below as NonFiniteError
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            out_arr = forward(*arrays)
    except ValueError as exc:
        if isinstance(exc, TensorError):
            raise
        raise ShapeError(op, [a.shape for a in arrays], str(exc)) from None
    out_arr = np.asarray(out_arr)
    if out_arr.dtype != inputs[0].dtype and out_arr.dtype.kind == "f":
        out_arr = out_arr.astype(inputs[0].dtype)
    _finite(op, out_arr)
    requires_grad = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out_arr.setflags(write=False)
    out.data = out_arr
    out.requires_grad = requires_grad
    tape = active_tape()
    if tape is not None:
        tape.records.append(Record(op, tuple(inputs), out, forward, vjp))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Elementwise arithmetic


def _binary(op, a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, [a.shape, b.shape]) from None
    return a, b


def add(a, b) -> Tensor:
    a, b = _binary("add", a, b)
    sa, sb = a.shape, b.shape
    return _apply("add", (a, b), np.add,
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _binary("sub", a, b)
    sa, sb = a.shape, b.shape
    return _apply("sub", (a, b), np.subtract,
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _binary("mul", a, b)
    x, y = a.data, b.data
    return _apply("mul", (a, b), np.multiply,
                  lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)))


def div(a, b) -> Tensor:
    a, b = _binary("div", a, b)
    x, y = a.data, b.data
    return _apply("div", (a, b), np.divide,
                  lambda g: (_unbroadcast(g / y, x.shape),
                             _unbroadcast(-g * x / (y * y), y.shape)))


def neg(a: Tensor) -> Tensor:
    return _apply("neg", (a,), np.negative, lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _apply("exp", (a,), np.exp, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return _apply("log", (a,), np.log, lambda g: (g / x,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _apply("sqrt", (a,), np.sqrt, lambda g: (g / (2.0 * out),))


def square(a: Tensor) -> Tensor:
    x = a.data
    return _apply("square", (a,), np.square, lambda g: (2.0 * g * x,))


def _kink_check(x: np.ndarray, c) -> None:
    tape = active_tape()
    if tape is not None and tape.kink_tol > 0 and np.any(np.abs(x - c) < tape.kink_tol):
        tape.near_kink = True


def maximum(a: Tensor, c: float) -> Tensor:
    """Elementwise max against a constant; subgradient picks ``a`` on ties."""
    x = a.data
    _kink_check(x, c)
    mask = x >= c
    return _apply("maximum", (a,), lambda v: np.maximum(v, c), lambda g: (g * mask,))


def relu(a: Tensor) -> Tensor:
    x = a.data
    _kink_check(x, 0.0)
    mask = x > 0
    return _apply("relu", (a,), lambda v: np.maximum(v, 0), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# Reductions


def _expand_reduced(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)) if g.ndim else g, shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def _check_axis(op, a, axis):
    if axis is None:
        return
    for ax in (axis,) if isinstance(axis, int) else axis:
        if not -a.ndim <= ax < a.ndim:
            raise ShapeError(op, [a.shape], f"axis {ax} out of range")


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    _check_axis("sum", a, axis)
    shape = a.shape
    return _apply("sum", (a,), lambda x: np.sum(x, axis=axis, keepdims=keepdims),
                  lambda g: (_expand_reduced(g, shape, axis, keepdims),))


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    _check_axis("mean", a, axis)
    shape = a.shape
    count = a.data.size if axis is None else int(np.prod([shape[ax] for ax in np.atleast_1d(axis)]))
    return _apply("mean", (a,), lambda x: np.mean(x, axis=axis, keepdims=keepdims),
                  lambda g: (_expand_reduced(g, shape, axis, keepdims) / count,))


def std(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Population standard deviation (divides by the element count)."""
    _check_axis("std", a, axis)
    x = a.data
    shape = x.shape
    count = x.size if axis is None else int(np.prod([shape[ax] for ax in np.atleast_1d(axis)]))
    centered = x - np.mean(x, axis=axis, keepdims=True)
    out_keep = np.sqrt(np.mean(centered * centered, axis=axis, keepdims=True))

    def vjp(g):
        g = _expand_reduced(g, shape, axis, keepdims)
        with np.errstate(divide="ignore", invalid="ignore"):
            grad = np.where(out_keep > 0, g * centered / (count * out_keep), 0.0)
        return (grad,)

    return _apply("std", (a,), lambda v: np.std(v, axis=axis, keepdims=keepdims), vjp)


def norm(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm along ``axis``; the gradient at the origin is taken as 0."""
    _check_axis("norm", a, axis)
    x = a.data
    out_keep = np.sqrt(np.sum(x * x, axis=axis, keepdims=True))

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        with np.errstate(divide="ignore", invalid="ignore"):
            grad = np.where(out_keep > 0, g * x / out_keep, 0.0)
        return (grad,)

    return _apply("norm", (a,),
                  lambda v: np.sqrt(np.sum(v * v, axis=axis, keepdims=keepdims)), vjp)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    _check_axis("softmax", a, axis)

    def forward(x):
        z = np.exp(x - np.max(x, axis=axis, keepdims=True))
        return z / np.sum(z, axis=axis, keepdims=True)

    y = forward(a.data)
    return _apply("softmax", (a,), forward,
                  lambda g: (y * (g - np.sum(g * y, axis=axis, keepdims=True)),))


# ---------------------------------------------------------------------------
# Shape manipulation


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    orig = a.shape
    try:
        np.empty(orig, dtype=np.int8).reshape(shape)
    except ValueError:
        raise ShapeError("reshape", [orig, shape]) from None
    return _apply("reshape", (a,), lambda x: x.reshape(shape), lambda g: (g.reshape(orig),))


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    if sorted(ax % a.ndim for ax in axes) != list(range(a.ndim)):
        raise ShapeError("transpose", [a.shape], f"bad axes {axes}")
    inverse = tuple(np.argsort(axes))
    return _apply("transpose", (a,), lambda x: np.transpose(x, axes),
                  lambda g: (np.transpose(g, inverse),))


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    orig = a.shape
    try:
        np.broadcast_shapes(orig, shape)
    except ValueError:
        raise ShapeError("broadcast_to", [orig, shape]) from None
    return _apply("broadcast_to", (a,), lambda x: np.broadcast_to(x, shape).copy(),
                  lambda g: (_unbroadcast(g, orig),))


def slice_(a: Tensor, index) -> Tensor:
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, index, g)
        return (out,)

    return _apply("slice", (a,), lambda x: x[index], vjp)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            x != y for i, (x, y) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)
        ):
            raise ShapeError("concat", [u.shape for u in tensors])
    return _apply("concat", tensors, lambda *xs: np.concatenate(xs, axis=axis),
                  lambda g: tuple(np.split(g, splits, axis=axis)))


# ---------------------------------------------------------------------------
# Linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", [a.shape, b.shape])
    x, y = a.data, b.data

    def vjp(g):
        ga = g @ np.swapaxes(y, -1, -2)
        gb = np.swapaxes(x, -1, -2) @ g
        return _unbroadcast(ga, x.shape), _unbroadcast(gb, y.shape)

    return _apply("matmul", (a, b), np.matmul, vjp)


@functools.lru_cache(maxsize=1024)
def _einsum_path(subscripts: str, shapes: tuple):
    dummies = [np.empty(shape, dtype=np.float64) for shape in shapes]
    return np.einsum_path(subscripts, *dummies, optimize="greedy")[0]


def _einsum(subscripts: str, *arrays):
    path = _einsum_path(subscripts, tuple(a.shape for a in arrays))
    return np.einsum(subscripts, *arrays, optimize=path)


def einsum(subscripts: str, *operands: Tensor) -> Tensor:
    """Einstein summation without repeated indices inside one operand.

    Each operand index must appear in the output or in another operand, which
    keeps every adjoint expressible as another einsum.
    """
    operands = tuple(as_tensor(t) for t in operands)
    lhs, out_sub = subscripts.replace(" ", "").split("->")
    in_subs = lhs.split(",")
    if len(in_subs) != len(operands):
        raise ShapeError("einsum", [t.shape for t in operands], "operand count")
    for sub_, t in zip(in_subs, operands):
        if len(sub_) != t.ndim or len(set(sub_)) != len(sub_):
            raise ShapeError("einsum", [t.shape for t in operands], subscripts)
    for n, sub_ in enumerate(in_subs):
        others = out_sub + "".join(s for m, s in enumerate(in_subs) if m != n)
        if any(ch not in others for ch in sub_):
            raise ShapeError("einsum", [t.shape for t in operands],
                             f"index of operand {n} is summed away alone")
    arrays = [t.data for t in operands]

    def vjp(g):
        grads = []
        for n, t in enumerate(operands):
            if not t.requires_grad:
                grads.append(None)
                continue
            rest = [arrays[m] for m in range(len(arrays)) if m != n]
            rest_subs = [in_subs[m] for m in range(len(arrays)) if m != n]
            expr = ",".join([out_sub] + rest_subs) + "->" + in_subs[n]
            grads.append(_einsum(expr, g, *rest))
        return tuple(grads)

    return _apply("einsum", operands,
                  lambda *xs: _einsum(subscripts, *xs), vjp)


def _pad_hw(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))


def conv2d_output_size(size: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Batched 2-D cross-correlation with zero padding.

    x: (B, H, W, C_in); w: (kh, kw, C_in, C_out) -> (B, Ho, Wo, C_out).
    """
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeError("conv2d", [x.shape, w.shape])
    kh, kw, cin, cout = w.shape
    bsz, h, wd, _ = x.shape
    ho = conv2d_output_size(h, kh, stride, padding)
    wo = conv2d_output_size(wd, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d", [x.shape, w.shape], "kernel larger than padded input")

    def windows(xa):
        xp = _pad_hw(xa, padding)
        win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
        return win[:, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]

    def forward(xa, wa):
        # win: (B, Ho, Wo, C_in, kh, kw)
        return np.tensordot(windows(xa), wa, axes=([3, 4, 5], [2, 0, 1]))

    xd, wdata = x.data, w.data

    def vjp(g):
        gw = None
        gx = None
        if w.requires_grad:
            gw = np.tensordot(windows(xd), g, axes=([0, 1, 2], [0, 1, 2]))  # (C_in, kh, kw, C_out)
            gw = np.transpose(gw, (1, 2, 0, 3))
        if x.requires_grad:
            gxp = np.zeros((bsz, h + 2 * padding, wd + 2 * padding, cin), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i : i + (ho - 1) * stride + 1 : stride,
                        j : j + (wo - 1) * stride + 1 : stride, :] += g @ wdata[i, j].T
            gx = gxp[:, padding : padding + h, padding : padding + wd, :] if padding else gxp
        return gx, gw

    return _apply("conv2d", (x, w), forward, vjp)


def weighted_recurrence(a: Tensor, b: Tensor, p: Tensor) -> Tensor:
    """Fold ``acc <- a[k] * acc + b[k] * p[k]`` over axis 1 with ``acc = p[0]``.

    a, b: (B, K-1, J) step coefficients for k = 1..K-1; p: (B, K, J, D).
    Returns the final accumulator (B, J, D). The loop is explicit in both
    directions so the tape holds one record instead of K.
    """
    if p.ndim != 4 or a.shape != b.shape or a.shape != (p.shape[0], p.shape[1] - 1, p.shape[2]):
        raise ShapeError("weighted_recurrence", [a.shape, b.shape, p.shape])

    def forward(av, bv, pv, keep=None):
        acc = pv[:, 0]
        for k in range(1, pv.shape[1]):
            if keep is not None:
                keep.append(acc)
            acc = av[:, k - 1, :, None] * acc + bv[:, k - 1, :, None] * pv[:, k]
        return acc

    av, bv, pv = a.data, b.data, p.data
    history: list = []

    def vjp(g):
        ga = np.zeros_like(av)
        gb = np.zeros_like(bv)
        gp = np.zeros_like(pv)
        gacc = g
        for k in range(pv.shape[1] - 1, 0, -1):
            ga[:, k - 1] = np.sum(gacc * history[k - 1], axis=-1)
            gb[:, k - 1] = np.sum(gacc * pv[:, k], axis=-1)
            gp[:, k] = bv[:, k - 1, :, None] * gacc
            gacc = av[:, k - 1, :, None] * gacc
        gp[:, 0] = gacc
        return ga, gb, gp

    # the first call records the accumulator history used by vjp; replays don't
    return _apply("weighted_recurrence", (a, b, p),
                  lambda x, y, z: forward(x, y, z, None if history else history), vjp)


# ---------------------------------------------------------------------------
# Backward


def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    """Populate ``.grad`` on every Parameter reached from ``loss``.

    Parameters that are on the tape but unreachable get zero gradients.
    Returns a mapping of parameter name to gradient array.
    """
    if loss.data.size != 1:
        raise ShapeError("backward", [loss.shape], "loss must be scalar")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    params: dict[int, Parameter] = {}
    for rec in tape.records:
        for t in rec.inputs:
            if isinstance(t, Parameter):
                params[id(t)] = t
    if isinstance(loss, Parameter):
        params[id(loss)] = loss
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None or not rec.output.requires_grad:
            continue
        in_grads = rec.vjp(g)
        for t, gi in zip(rec.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = np.asarray(gi)
    out = {}
    for key, p in params.items():
        g = grads.get(key)
        p.grad = np.zeros_like(p.data) if g is None else np.array(g, dtype=p.dtype).reshape(p.shape)
        out[p.name] = p.grad
    return out
