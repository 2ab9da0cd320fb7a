"""Dense tensors with tape-based reverse-mode differentiation.

A ``Tensor`` wraps a row-major numpy array plus an optional gradient
buffer.  Operations record their adjoint closures on the active
``GradTape`` whenever gradients are enabled and some input requires
them; ``backward(loss)`` replays the tape in reverse and accumulates
gradients into every reachable leaf.

Conventions:
  * default compute dtype is float32; tests typically run float64
  * convolution is cross-correlation (no kernel flip)
  * broadcasting is numpy-style singleton expansion only: shapes are
    right-aligned and each axis pair must match or be 1
  * tensors that took part in a recorded op must not be mutated until
    the tape is reset (``Tensor.assign`` enforces this)

A tape and the tensors recorded on it belong to a single worker; use
``use_tape`` to give concurrent workers isolated tapes.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from scipy.special import erf

from .errors import ContractError, DimensionError, NumericDomainError

DEFAULT_DTYPE = np.float32

_GRAD_DTYPES = (np.float32, np.float64)

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class GradTape:
    """Ordered record of primitive ops, replayed in reverse for adjoints."""

    def __init__(self):
        self._nodes = []          # (out, inputs, backward_fn)
        self._touched = set()     # ids of tensors involved since last reset

    def __len__(self):
        return len(self._nodes)

    def record(self, out, inputs, backward_fn):
        self._nodes.append((out, inputs, backward_fn))
        self._touched.add(id(out))
        for t in inputs:
            self._touched.add(id(t))

    def touched(self, tensor):
        return id(tensor) in self._touched

    def reset(self):
        self._nodes.clear()
        self._touched.clear()

    def backward(self, loss):
        """Accumulate d loss / d leaf into ``grad`` of every reachable leaf.

        Repeated calls without ``reset`` accumulate (each call adds one
        full gradient).  Adjoints of interior nodes live in a scratch
        table keyed by tensor identity; only leaves keep a ``grad``.
        """
        if loss.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {loss.shape}")
        adjoint = {id(loss): np.ones_like(loss.data)}
        for out, inputs, backward_fn in reversed(self._nodes):
            g = adjoint.pop(id(out), None)
            if g is None:
                continue
            for t, dt in zip(inputs, backward_fn(g)):
                if dt is None or not t.requires_grad:
                    continue
                if t._leaf:
                    if t.grad is None:
                        t.grad = np.zeros_like(t.data)
                    t.grad += dt
                else:
                    acc = adjoint.get(id(t))
                    if acc is None:
                        adjoint[id(t)] = np.array(dt, copy=True)
                    else:
                        acc += dt


_default_tape = GradTape()
_tape_stack = [_default_tape]
_grad_enabled = [True]


def active_tape() -> GradTape:
    return _tape_stack[-1]


def reset_tape():
    _tape_stack[-1].reset()


@contextmanager
def use_tape(tape: GradTape):
    _tape_stack.append(tape)
    try:
        yield tape
    finally:
        _tape_stack.pop()


@contextmanager
def no_grad():
    _grad_enabled.append(False)
    try:
        yield
    finally:
        _grad_enabled.pop()


def grad_enabled() -> bool:
    return _grad_enabled[-1]


class Tensor:
    """Dense N-d array with optional gradient tracking.

    Feature maps follow the [batch, channels, height, width] layout.
    uint8 tensors never carry gradients.
    """

    __slots__ = ("data", "requires_grad", "grad", "_leaf")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64, np.uint8):
            arr = arr.astype(DEFAULT_DTYPE)
        if requires_grad and arr.dtype not in _GRAD_DTYPES:
            raise ContractError(
                f"requires_grad is only valid for float tensors, got {arr.dtype}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._leaf = True

    # ------------------------------------------------------------------
    # construction helpers
    # ------------------------------------------------------------------
    @classmethod
    def zeros(cls, shape, dtype=DEFAULT_DTYPE, requires_grad=False):
        return cls(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)

    @classmethod
    def ones(cls, shape, dtype=DEFAULT_DTYPE, requires_grad=False):
        return cls(np.ones(shape, dtype=dtype), requires_grad=requires_grad)

    @classmethod
    def full(cls, shape, value, dtype=DEFAULT_DTYPE, requires_grad=False):
        return cls(np.full(shape, value, dtype=dtype), requires_grad=requires_grad)

    # ------------------------------------------------------------------
    # metadata
    # ------------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"

    # ------------------------------------------------------------------
    # value access / mutation
    # ------------------------------------------------------------------
    def numpy(self) -> np.ndarray:
        """The underlying buffer; treat as read-only while on a tape."""
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    def assign(self, new_data):
        """Replace the value buffer in place (outside any recorded graph)."""
        if active_tape().touched(self):
            raise ContractError(
                "cannot mutate a tensor recorded on the active tape; reset it first")
        arr = np.asarray(new_data, dtype=self.data.dtype)
        if arr.shape != self.data.shape:
            raise DimensionError(
                f"assign shape {arr.shape} != tensor shape {self.data.shape}")
        self.data = arr

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # ------------------------------------------------------------------
    # operator sugar
    # ------------------------------------------------------------------
    def __add__(self, other):
        return ew_binary("add", self, other)

    def __radd__(self, other):
        return ew_binary("add", _as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return ew_binary("sub", self, other)

    def __rsub__(self, other):
        return ew_binary("sub", _as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return ew_binary("mul", self, other)

    def __rmul__(self, other):
        return ew_binary("mul", _as_tensor(other, self.dtype), self)

    def __truediv__(self, other):
        return ew_binary("div", self, other)

    def __neg__(self):
        return ew_binary("mul", self, _as_tensor(-1.0, self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else DEFAULT_DTYPE))


def _record(out: Tensor, inputs, backward_fn):
    """Mark ``out`` as an interior node and push the adjoint closure."""
    if grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._leaf = False
        active_tape().record(out, tuple(inputs), backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum-reduce a gradient back to the (possibly broadcast) input shape."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcastable(a_shape, b_shape):
    ra, rb = len(a_shape), len(b_shape)
    for i in range(1, min(ra, rb) + 1):
        na, nb = a_shape[-i], b_shape[-i]
        if na != nb and na != 1 and nb != 1:
            raise DimensionError(
                f"shapes {a_shape} and {b_shape} are not broadcast-compatible "
                "(axes must match or be 1)")


# ----------------------------------------------------------------------
# elementwise arithmetic
# ----------------------------------------------------------------------
def ew_binary(kind: str, a, b) -> Tensor:
    """Elementwise add/sub/mul/div with singleton-extent broadcasting."""
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    _check_broadcastable(a.shape, b.shape)
    if kind == "add":
        out = Tensor(a.data + b.data)
        back = lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    elif kind == "sub":
        out = Tensor(a.data - b.data)
        back = lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))
    elif kind == "mul":
        out = Tensor(a.data * b.data)
        back = lambda g: (_unbroadcast(g * b.data, a.shape),
                          _unbroadcast(g * a.data, b.shape))
    elif kind == "div":
        out = Tensor(a.data / b.data)
        back = lambda g: (_unbroadcast(g / b.data, a.shape),
                          _unbroadcast(-g * a.data / (b.data * b.data), b.shape))
    else:
        raise ContractError(f"unknown elementwise kind {kind!r}")
    return _record(out, (a, b), back)


def add(a, b):
    return ew_binary("add", a, b)


def sub(a, b):
    return ew_binary("sub", a, b)


def mul(a, b):
    return ew_binary("mul", a, b)


def div(a, b):
    return ew_binary("div", a, b)


# ----------------------------------------------------------------------
# matmul
# ----------------------------------------------------------------------
def matmul(a, b) -> Tensor:
    """Matrix product; leading batch axes broadcast numpy-style."""
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul requires rank >= 2 operands")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner extents differ: {a.shape} x {b.shape}")
    _check_broadcastable(a.shape[:-2], b.shape[:-2])
    out = Tensor(np.matmul(a.data, b.data))

    def back(g):
        da = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        db = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return da, db

    return _record(out, (a, b), back)


# ----------------------------------------------------------------------
# reductions and shape ops
# ----------------------------------------------------------------------
def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.sum(x.data, axis=axis, keepdims=keepdims))

    def back(g):
        g = np.asarray(g)
        if axis is None:
            return (np.broadcast_to(g.reshape((1,) * x.ndim), x.shape),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape),)

    return _record(out, (x,), back)


def tmean(x, axis=None, keepdims=False) -> Tensor:
    x = _as_tensor(x)
    n = x.size if axis is None else np.prod(
        [x.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))])
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / float(n))


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.data.reshape(shape))
    return _record(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(x.data.transpose(axes))
    return _record(out, (x,), lambda g: (g.transpose(inv),))


def concat(tensors, axis=0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(tensors), back)


def getitem(x, key) -> Tensor:
    """Basic (slice / integer) indexing; fancy indexing is rejected."""
    x = _as_tensor(x)
    for k in key if isinstance(key, tuple) else (key,):
        if not isinstance(k, (slice, int)) and k is not Ellipsis:
            raise ContractError("only slice/int/... indexing is supported")
    out = Tensor(x.data[key])

    def back(g):
        dx = np.zeros_like(x.data)
        dx[key] += g
        return (dx,)

    return _record(out, (x,), back)


# ----------------------------------------------------------------------
# nonlinearities
# ----------------------------------------------------------------------
def unary(kind: str, x) -> Tensor:
    x = _as_tensor(x)
    d = x.data
    if kind == "relu":
        out = Tensor(np.maximum(d, 0))
        back = lambda g: (g * (d > 0),)
    elif kind == "gelu":
        phi = 0.5 * (1.0 + erf(d * _INV_SQRT2))
        out = Tensor((d * phi).astype(d.dtype))
        back = lambda g: (
            g * (phi + d * np.exp(-0.5 * d * d) * _INV_SQRT2PI),)
    elif kind == "exp":
        e = np.exp(d)
        out = Tensor(e)
        back = lambda g: (g * e,)
    elif kind == "log":
        if np.any(d <= 0):
            raise NumericDomainError("log requires strictly positive inputs")
        out = Tensor(np.log(d))
        back = lambda g: (g / d,)
    elif kind == "sqrt":
        if np.any(d < 0):
            raise NumericDomainError("sqrt requires nonnegative inputs")
        r = np.sqrt(d)
        out = Tensor(r)
        back = lambda g: (g * (0.5 / r),)
    else:
        raise ContractError(f"unknown unary kind {kind!r}")
    return _record(out, (x,), back)


def relu(x):
    return unary("relu", x)


def gelu(x):
    return unary("gelu", x)


def exp(x):
    return unary("exp", x)


def log(x):
    return unary("log", x)


def sqrt(x):
    return unary("sqrt", x)


def softmax(x, axis=-1) -> Tensor:
    """Max-subtracted stable softmax; slices along ``axis`` sum to 1."""
    x = _as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax axis {axis} out of range for rank {x.ndim}")
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / np.sum(e, axis=axis, keepdims=True)
    out = Tensor(y)

    def back(g):
        dot = np.sum(g * y, axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _record(out, (x,), back)


def log_softmax(x, axis=-1) -> Tensor:
    x = _as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"log_softmax axis {axis} out of range")
    m = np.max(x.data, axis=axis, keepdims=True)
    z = x.data - m
    lse = np.log(np.sum(np.exp(z), axis=axis, keepdims=True))
    y = z - lse
    out = Tensor(y)

    def back(g):
        return (g - np.exp(y) * np.sum(g, axis=axis, keepdims=True),)

    return _record(out, (x,), back)


# ----------------------------------------------------------------------
# convolution
# ----------------------------------------------------------------------
def _conv_out_extent(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def _im2col(xp, kh, kw, stride, oh, ow):
    # xp: padded input [N,C,Hp,Wp] -> [N, C*kh*kw, oh*ow]
    n, c = xp.shape[:2]
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]          # [N,C,oh,ow,kh,kw]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, oh * ow)
    return np.ascontiguousarray(cols)


def _col2im(cols, x_shape, kh, kw, stride, pad, oh, ow):
    # cols: [N, C*kh*kw, oh*ow] -> accumulate into [N,C,H,W]
    n, c, h, w = x_shape
    hp, wp = h + 2 * pad, w + 2 * pad
    xp = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += \
                cols[:, :, i, j]
    if pad:
        return xp[:, :, pad:pad + h, pad:pad + w]
    return xp


def conv2d(x, weight, bias=None, stride=1, padding=0) -> Tensor:
    """2-d cross-correlation (no kernel flip).

    x: [N,C,H,W]; weight: [O,C,kh,kw]; optional bias [O].
    Output extent per axis: floor((n + 2*pad - k) / stride) + 1.
    """
    x = _as_tensor(x)
    weight = _as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError("conv2d expects rank-4 input and kernel")
    n, c, h, w = x.shape
    o, ck, kh, kw = weight.shape
    if ck != c:
        raise DimensionError(f"kernel channels {ck} != input channels {c}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError(
            f"kernel {kh}x{kw} larger than padded input "
            f"{h + 2 * padding}x{w + 2 * padding}")
    if stride < 1:
        raise ContractError("stride must be >= 1")
    oh = _conv_out_extent(h, kh, stride, padding)
    ow = _conv_out_extent(w, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding,) * 2, (padding,) * 2)) \
        if padding else x.data
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    w2 = weight.data.reshape(o, c * kh * kw)
    y = np.matmul(w2, cols).reshape(n, o, oh, ow)
    inputs = [x, weight]
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (o,):
            raise DimensionError(f"bias shape {bias.shape} != ({o},)")
        y = y + bias.data[None, :, None, None]
        inputs.append(bias)
    out = Tensor(y)

    def back(g):
        g2 = g.reshape(n, o, oh * ow)
        dw = np.einsum("nop,ncp->oc", g2, cols).reshape(weight.shape)
        dcols = np.matmul(w2.T, g2)
        dx = _col2im(dcols, (n, c, h, w), kh, kw, stride, padding, oh, ow)
        if bias is not None:
            return dx, dw, g.sum(axis=(0, 2, 3))
        return dx, dw

    return _record(out, tuple(inputs), back)


def conv_transpose2d(x, weight, bias=None, stride=1, padding=0) -> Tensor:
    """Transposed convolution (adjoint of conv2d as a forward map).

    x: [N,C,H,W]; weight: [C,O,kh,kw].
    Output extent per axis: (n - 1) * stride - 2*pad + k.
    """
    x = _as_tensor(x)
    weight = _as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError("conv_transpose2d expects rank-4 input and kernel")
    if stride < 1:
        raise ContractError("stride must be >= 1")
    n, c, h, w = x.shape
    cw, o, kh, kw = weight.shape
    if cw != c:
        raise DimensionError(f"kernel in-channels {cw} != input channels {c}")
    oh = (h - 1) * stride - 2 * padding + kh
    ow = (w - 1) * stride - 2 * padding + kw
    if oh < 1 or ow < 1:
        raise DimensionError("padding too large for transposed output extent")
    full = np.zeros((n, o, (h - 1) * stride + kh, (w - 1) * stride + kw),
                    dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            full[:, :, i:i + stride * h:stride, j:j + stride * w:stride] += \
                np.einsum("nchw,co->nohw", x.data, weight.data[:, :, i, j])
    y = full[:, :, padding:padding + oh, padding:padding + ow]
    inputs = [x, weight]
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (o,):
            raise DimensionError(f"bias shape {bias.shape} != ({o},)")
        y = y + bias.data[None, :, None, None]
        inputs.append(bias)
    out = Tensor(np.ascontiguousarray(y))

    def back(g):
        gp = np.pad(g, ((0, 0), (0, 0), (padding,) * 2, (padding,) * 2)) \
            if padding else g
        dx = np.zeros_like(x.data)
        dw = np.zeros_like(weight.data)
        for i in range(kh):
            for j in range(kw):
                gsub = gp[:, :, i:i + stride * h:stride, j:j + stride * w:stride]
                dx += np.einsum("nohw,co->nchw", gsub, weight.data[:, :, i, j])
                dw[:, :, i, j] = np.einsum("nchw,nohw->co", x.data, gsub)
        if bias is not None:
            return dx, dw, g.sum(axis=(0, 2, 3))
        return dx, dw

    return _record(out, tuple(inputs), back)


# ----------------------------------------------------------------------
# bilinear resize
# ----------------------------------------------------------------------
def bilinear_resize(x, out_hw) -> Tensor:
    """Bilinear interpolation on [N,C,H,W] with half-pixel centers."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise DimensionError("bilinear_resize expects a rank-4 tensor")
    n, c, h, w = x.shape
    oh, ow = out_hw
    if oh < 1 or ow < 1:
        raise ContractError("output extents must be >= 1")

    def coords(n_in, n_out):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        t = src - lo
        return lo, hi, t

    r0, r1, tr = coords(h, oh)
    c0, c1, tc = coords(w, ow)
    wr0, wr1 = (1.0 - tr)[:, None], tr[:, None]
    wc0, wc1 = (1.0 - tc)[None, :], tc[None, :]
    w00 = (wr0 * wc0).astype(x.dtype)
    w01 = (wr0 * wc1).astype(x.dtype)
    w10 = (wr1 * wc0).astype(x.dtype)
    w11 = (wr1 * wc1).astype(x.dtype)
    d = x.data
    y = (d[:, :, r0[:, None], c0[None, :]] * w00 +
         d[:, :, r0[:, None], c1[None, :]] * w01 +
         d[:, :, r1[:, None], c0[None, :]] * w10 +
         d[:, :, r1[:, None], c1[None, :]] * w11)
    out = Tensor(y)

    def back(g):
        dx = np.zeros_like(d)
        np.add.at(dx, (slice(None), slice(None), r0[:, None], c0[None, :]), g * w00)
        np.add.at(dx, (slice(None), slice(None), r0[:, None], c1[None, :]), g * w01)
        np.add.at(dx, (slice(None), slice(None), r1[:, None], c0[None, :]), g * w10)
        np.add.at(dx, (slice(None), slice(None), r1[:, None], c1[None, :]), g * w11)
        return (dx,)

    return _record(out, (x,), back)


# ----------------------------------------------------------------------
# backward entry point and gradient checking
# ----------------------------------------------------------------------
def backward(loss: Tensor):
    """Populate ``grad`` of every requires_grad leaf reachable from ``loss``."""
    active_tape().backward(loss)


def finite_diff_check(f, x: Tensor, eps=1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a Tensor to a scalar Tensor and must be deterministic.
    Error per coordinate is |a - n| / max(|a|, |n|, 1e-12).
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    probe = Tensor(x.data.astype(np.float64, copy=True), requires_grad=True)
    with use_tape(GradTape()) as tape:
        y = f(probe)
        tape.backward(y)
    analytic = probe.grad if probe.grad is not None else np.zeros_like(probe.data)
    flat = probe.data.reshape(-1)
    numeric = np.zeros_like(flat)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f(Tensor(probe.data, requires_grad=False)).item()
            flat[i] = orig - eps
            lo = f(Tensor(probe.data, requires_grad=False)).item()
            flat[i] = orig
            numeric[i] = (hi - lo) / (2.0 * eps)
    a = analytic.reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(a - numeric) / denom))
