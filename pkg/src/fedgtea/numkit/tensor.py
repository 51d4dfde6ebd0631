"""Dense float64 tensors with taped reverse-mode differentiation.

Tensors wrap numpy arrays.  While a recording tape is active (see
:func:`record`), every operation whose inputs require gradients appends a
(output, inputs, backward-rule) entry to the tape; :meth:`Tape.backward`
replays the entries in reverse to deposit d(loss)/d(leaf) into each
requiring leaf's ``grad``.  Forward values are checked for finiteness on
every op; NaN/Inf raises :class:`NumericError` immediately, which keeps
divergence diagnostics close to their source.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import NumericError, ShapeError

Array = np.ndarray

_ACTIVE_TAPE: "Tape | None" = None


class Tensor:
    """A dense float64 array plus an optional same-shaped gradient."""

    __slots__ = ("data", "grad", "requires_grad", "tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data: Array = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self.tape: "Tape | None" = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data)

    def detach(self) -> "Tensor":
        """A new leaf sharing this tensor's values, outside the graph."""
        return Tensor(self.data, requires_grad=False)

    def backward(self) -> None:
        if self.tape is None:
            raise ValueError("tensor was not produced under an active tape")
        self.tape.backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar -----------------------------------------------------

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

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Tape:
    """Wengert list of recorded operations, in execution order.

    Inputs of every entry precede it on the tape, so a single reverse
    sweep accumulates each node's gradient exactly once before it is
    consumed by earlier entries.
    """

    def __init__(self):
        self.entries: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward) -> None:
        self.entries.append((out, inputs, backward))

    def backward(self, loss: Tensor) -> None:
        """Deposit d(loss)/d(leaf) into every requiring leaf's ``grad``."""
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        produced = {id(out) for out, _, _ in self.entries}
        pending: dict[int, Array] = {id(loss): np.ones_like(loss.data)}

        def deposit(t: Tensor, g: Array) -> None:
            if not t.requires_grad:
                return
            if id(t) in produced:
                key = id(t)
                pending[key] = pending[key] + g if key in pending else g
            else:
                # grads are never mutated in place downstream, so aliasing
                # a backward rule's output here is safe
                t.grad = g if t.grad is None else t.grad + g

        if id(loss) not in produced:  # loss is itself a leaf
            deposit(loss, pending.pop(id(loss)))
        for out, inputs, backward in reversed(self.entries):
            g = pending.pop(id(out), None)
            if g is None:
                continue
            for t, gi in zip(inputs, backward(g)):
                if gi is not None:
                    deposit(t, gi)


@contextmanager
def record():
    """Activate a fresh tape; ops inside the block are recorded on it."""
    global _ACTIVE_TAPE
    previous, _ACTIVE_TAPE = _ACTIVE_TAPE, Tape()
    try:
        yield _ACTIVE_TAPE
    finally:
        _ACTIVE_TAPE = previous


@contextmanager
def pause():
    """Temporarily stop recording (e.g. for a frozen teacher forward)."""
    global _ACTIVE_TAPE
    previous, _ACTIVE_TAPE = _ACTIVE_TAPE, None
    try:
        yield
    finally:
        _ACTIVE_TAPE = previous


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _apply(name: str, out_data: Array, inputs: tuple[Tensor, ...], backward) -> Tensor:
    if not np.all(np.isfinite(out_data)):
        raise NumericError(f"non-finite values in output of '{name}'")
    requires = _ACTIVE_TAPE is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires)
    if requires:
        out.tape = _ACTIVE_TAPE
        _ACTIVE_TAPE.record(out, inputs, backward)
    return out


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``g`` over the axes numpy broadcasting introduced."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise arithmetic ----------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _apply(
        "add", a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _apply(
        "sub", a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _apply(
        "mul", a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _apply(
        "div", a.data / b.data, (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(a) -> Tensor:
    a = _wrap(a)
    return _apply("neg", -a.data, (a,), lambda g: (-g,))


# -- nonlinearities --------------------------------------------------------


def relu(a) -> Tensor:
    a = _wrap(a)
    return _apply("relu", np.maximum(a.data, 0.0), (a,),
                  lambda g: (g * (a.data > 0),))


def leaky_relu(a, alpha: float = 0.2) -> Tensor:
    a = _wrap(a)
    out = np.where(a.data > 0, a.data, alpha * a.data)
    return _apply("leaky_relu", out, (a,),
                  lambda g: (g * np.where(a.data > 0, 1.0, alpha),))


def tanh(a) -> Tensor:
    a = _wrap(a)
    y = np.tanh(a.data)
    return _apply("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    # stable two-sided form
    y = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                 np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))
    return _apply("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def softplus(a) -> Tensor:
    a = _wrap(a)
    y = np.logaddexp(0.0, a.data)
    return _apply("softplus", y, (a,),
                  lambda g: (g / (1.0 + np.exp(-a.data)),))


def softmax(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)

    return _apply("softmax", y, (a,), backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _apply("log_softmax", y, (a,), backward)


def log(a) -> Tensor:
    a = _wrap(a)
    return _apply("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def exp(a) -> Tensor:
    a = _wrap(a)
    y = np.exp(a.data)
    return _apply("exp", y, (a,), lambda g: (g * y,))


def sqrt(a) -> Tensor:
    a = _wrap(a)
    y = np.sqrt(a.data)
    return _apply("sqrt", y, (a,), lambda g: (g * 0.5 / y,))


# -- reductions and shape ops ----------------------------------------------


def _restore_axes(g: Array, shape: tuple[int, ...], axis, keepdims: bool) -> Array:
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    if not keepdims:
        for ax in sorted(a % len(shape) for a in axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = _wrap(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    return _apply("sum", out, (a,),
                  lambda g: (_restore_axes(g, a.shape, axis, keepdims).copy(),))


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    scale = a.data.size / out.size

    def backward(g):
        return (_restore_axes(g, a.shape, axis, keepdims) / scale,)

    return _apply("mean", out, (a,), backward)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    old = a.shape
    return _apply("reshape", a.data.reshape(shape), (a,),
                  lambda g: (g.reshape(old),))


def broadcast_to(a, shape) -> Tensor:
    a = _wrap(a)
    out = np.broadcast_to(a.data, shape).copy()
    return _apply("broadcast_to", out, (a,),
                  lambda g: (_unbroadcast(g, a.shape),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _apply("concat", out, tuple(ts), backward)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes do not conform: {a.shape} @ {b.shape}")
    return _apply(
        "matmul", a.data @ b.data, (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


# -- convolution kernels -----------------------------------------------------
#
# Weight layout: conv2d weights are (out_ch, in_ch, k, k); transposed_conv2d
# weights are (in_ch, out_ch, k, k).  All spatial kernels are square.  Both
# directions reduce to one BLAS matmul on an im2col matrix plus, for the
# scatter direction, k*k strided view-adds.


def _pad_hw(x: Array, p: int) -> Array:
    if p == 0:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * p, w + 2 * p))
    out[:, :, p:p + h, p:p + w] = x
    return out


def _im2col(x: Array, k: int, stride: int, pad: int):
    """Patch matrix (N*oh*ow, C*k*k) of the padded input, plus (oh, ow)."""
    xp = _pad_hw(x, pad)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, oh, ow, _, _ = win.shape
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
    return cols.reshape(n * oh * ow, c * k * k), oh, ow


def _scatter_cols(cols6: Array, stride: int, pad: int,
                  out_hw: tuple[int, int]) -> Array:
    """Adjoint of _im2col: add (n, h, w, out_ch, k, k) patch contributions
    onto a (n, out_ch, H, W) grid (H, W are sizes after cropping ``pad``)."""
    n, h, w, out_ch, k, _ = cols6.shape
    hh, ww = out_hw
    full = np.zeros((n, out_ch, hh + 2 * pad, ww + 2 * pad))
    for di in range(k):
        for dj in range(k):
            full[:, :, di:di + h * stride:stride, dj:dj + w * stride:stride] += (
                cols6[:, :, :, :, di, dj].transpose(0, 3, 1, 2))
    return full[:, :, pad:pad + hh, pad:pad + ww]


def conv2d(x, w, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation; x (N,C,H,W), w (O,C,k,k)."""
    x, w = _wrap(x), _wrap(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d shapes do not conform: {x.shape}, {w.shape}")
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    cols, oh, ow = _im2col(x.data, k, stride, padding)
    wmat = w.data.reshape(o, c * k * k)
    out = np.ascontiguousarray(
        (cols @ wmat.T).reshape(n, oh, ow, o).transpose(0, 3, 1, 2))

    def backward(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * oh * ow, o)
        dw = (gmat.T @ cols).reshape(o, c, k, k)
        dcols = (gmat @ wmat).reshape(n, oh, ow, c, k, k)
        dx = _scatter_cols(dcols, stride, padding, (h, wd))
        return (dx, dw)

    return _apply("conv2d", out, (x, w), backward)


def transposed_conv2d(x, w, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed 2-D convolution; x (N,C,h,w), w (C,O,k,k).

    Output spatial size is (h-1)*stride - 2*padding + k.
    """
    x, w = _wrap(x), _wrap(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"transposed_conv2d shapes do not conform: {x.shape}, {w.shape}")
    n, cin, h, wd = x.shape
    _, cout, k, _ = w.shape
    out_hw = ((h - 1) * stride - 2 * padding + k,
              (wd - 1) * stride - 2 * padding + k)
    if min(out_hw) <= 0:
        raise ShapeError(f"transposed_conv2d output collapsed: {out_hw}")
    wmat = w.data.reshape(cin, cout * k * k)
    xmat = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(n * h * wd, cin)
    out = _scatter_cols((xmat @ wmat).reshape(n, h, wd, cout, k, k),
                        stride, padding, out_hw)

    def backward(g):
        # patches of the padded output-grad line up with input positions
        gcols, gh, gw = _im2col(g, k, stride, padding)
        gcols = gcols.reshape(n, gh, gw, -1)[:, :h, :wd].reshape(n * h * wd, -1)
        dx = (gcols @ wmat.T).reshape(n, h, wd, cin).transpose(0, 3, 1, 2)
        dw = (xmat.T @ gcols).reshape(cin, cout, k, k)
        return (dx, dw)

    return _apply("transposed_conv2d", out, (x, w), backward)


# -- helpers used throughout the package -------------------------------------


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
