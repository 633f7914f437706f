"""Dense tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a numpy array. While a ``Tape`` is active, every
operation involving a tensor that requires gradients appends one node to
the tape; ``Tape.backward`` replays the nodes in reverse order and
accumulates gradients. Outside a tape (inference) nothing is recorded.

Default scalar width is float32; pass ``dtype=np.float64`` to factories
for gradient checking, where finite differences need the extra precision.
All forward passes use numpy's fixed C-order accumulation, so repeated
runs on one build are bit-identical.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf as _erf

from .errors import NumericError, ShapeError, UsageError

DEFAULT_DTYPE = np.float32

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class _Node:
    """One recorded operation: output, inputs, and a vector-Jacobian closure."""

    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out, inputs, vjp):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


_TAPE_STACK: list["Tape"] = []


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tape:
    """Wengert list of recorded operations, in execution (topological) order.

    Use as a context manager around the forward pass, then call
    ``backward`` on the scalar objective. ``clear`` drops all saved
    activations.
    """

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _TAPE_STACK.pop()
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def clear(self) -> None:
        self._nodes.clear()

    def backward(self, root: "Tensor") -> None:
        """Seed ``root`` with gradient 1 and sweep the tape in reverse.

        Each node is visited exactly once; nodes whose output never
        received a gradient (dead branches) are skipped.
        """
        if root.data.size != 1:
            raise UsageError(
                f"backward requires a scalar objective, got shape {root.shape}"
            )
        if root.grad is None:
            root.grad = np.ones_like(root.data)
        for node in reversed(self._nodes):
            g = node.out.grad
            if g is None:
                continue
            grads = node.vjp(g)
            for t, gi in zip(node.inputs, grads):
                if gi is None or not t.requires_grad:
                    continue
                t.grad = gi if t.grad is None else t.grad + gi


class Tensor:
    """Dense array with optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    # -- introspection -------------------------------------------------
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
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar ------------------------------------------------
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

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    # -- method aliases ------------------------------------------------
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
        return transpose(self, axes if axes else None)

    def abs(self):
        return abs_(self)

    def exp(self):
        return exp(self)


def as_tensor(x, dtype=None) -> Tensor:
    """Wrap arrays/scalars as a constant Tensor; pass Tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=False, dtype=dtype)


def parameter(data, dtype=None) -> Tensor:
    """A trainable leaf tensor."""
    return Tensor(np.array(data, dtype=dtype if dtype is not None else DEFAULT_DTYPE), requires_grad=True)


def _record(out: Tensor, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._nodes.append(_Node(out, tuple(inputs), vjp))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcasting introduced."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)

    def vjp(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data)

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data ** p)
    return _record(out, (a,), lambda g: (g * p * a.data ** (p - 1),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.exp(a.data))
    return _record(out, (a,), lambda g: (g * out.data,))


def log(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.log(a.data))
    return _record(out, (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.sqrt(a.data))
    return _record(out, (a,), lambda g: (g * (0.5 / out.data),))


def abs_(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.abs(a.data))
    return _record(out, (a,), lambda g: (g * np.sign(a.data),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.tanh(a.data))
    return _record(out, (a,), lambda g: (g * (1.0 - out.data * out.data),))


def gelu(a) -> Tensor:
    """x * Phi(x) with the exact Gaussian CDF (no tanh approximation)."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + _erf(x * x.dtype.type(_INV_SQRT2)))
    out = Tensor(x * cdf)

    def vjp(g):
        pdf = np.exp(-0.5 * x * x) * x.dtype.type(_INV_SQRT2PI)
        return (g * (cdf + x * pdf),)

    return _record(out, (a,), vjp)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(out, (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.shape[ax]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.transpose(axes))
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))
    return _record(out, (a,), lambda g: (g.transpose(inv),))


def getitem(a, key) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data[key])

    def vjp(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[key] = g
        return (full,)

    return _record(out, (a,), vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(tensors), vjp)


def pad(a, pad_width) -> Tensor:
    """Zero padding; ``pad_width`` follows numpy's per-axis (before, after) form."""
    a = as_tensor(a)
    out = Tensor(np.pad(a.data, pad_width))
    key = tuple(slice(b, b + n) for (b, _), n in zip(pad_width, a.shape))

    def vjp(g):
        return (g[key],)

    return _record(out, (a,), vjp)


# ---------------------------------------------------------------------------
# matmul and softmax
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents disagree: {a.shape} vs {b.shape}")
    out = Tensor(a.data @ b.data)

    def vjp(g):
        ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), vjp)


def softmax(a, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``; slices sum to one."""
    a = as_tensor(a)
    x = a.data
    if not np.all(np.isfinite(x)):
        raise NumericError("softmax input contains NaN or Inf")
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def vjp(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _record(out, (a,), vjp)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _im2col(xp: np.ndarray, kh, kw, sh, sw, dh, dw, oh, ow) -> np.ndarray:
    b, c = xp.shape[:2]
    cols = np.empty((b, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[
                :, :,
                i * dh: i * dh + (oh - 1) * sh + 1: sh,
                j * dw: j * dw + (ow - 1) * sw + 1: sw,
            ]
    return cols


def _col2im(dcols: np.ndarray, xp_shape, kh, kw, sh, sw, dh, dw, oh, ow) -> np.ndarray:
    dxp = np.zeros(xp_shape, dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[
                :, :,
                i * dh: i * dh + (oh - 1) * sh + 1: sh,
                j * dw: j * dw + (ow - 1) * sw + 1: sw,
            ] += dcols[:, :, i, j]
    return dxp


def _conv1x1(x: Tensor, w: Tensor, bias, b, c, h, wd, o) -> Tensor:
    """Pointwise conv as a plain matrix product (no patch extraction)."""
    x2 = x.data.reshape(b, c, h * wd)
    w2 = w.data.reshape(o, c)
    out_data = np.matmul(w2, x2).reshape(b, o, h, wd)
    if bias is not None:
        out_data = out_data + bias.data.reshape(1, o, 1, 1)
    out = Tensor(out_data)
    inputs = (x, w) if bias is None else (x, w, bias)

    def vjp(g):
        gg = g.reshape(b, o, h * wd)
        gx = gw = gb = None
        if w.requires_grad:
            gw = np.matmul(gg, x2.swapaxes(-1, -2)).sum(axis=0).reshape(o, c, 1, 1)
        if x.requires_grad:
            gx = np.matmul(w2.T, gg).reshape(b, c, h, wd)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _record(out, inputs, vjp)


def _conv_depthwise(x: Tensor, w: Tensor, bias, b, c, h, wd, kh, kw, ph, pw) -> Tensor:
    """Stride-1 per-channel conv via kernel-position shift-and-add (no patch
    matrix); accumulation order is the fixed (kh, kw) loop."""
    oh = h + 2 * ph - kh + 1
    ow = wd + 2 * pw - kw + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    wv = w.data.reshape(c, kh, kw)
    out_data = np.zeros((b, c, oh, ow), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            out_data += wv[:, i, j].reshape(1, c, 1, 1) * xp[:, :, i: i + oh, j: j + ow]
    if bias is not None:
        out_data = out_data + bias.data.reshape(1, c, 1, 1)
    out = Tensor(out_data)
    inputs = (x, w) if bias is None else (x, w, bias)

    def vjp(g):
        gx = gw = gb = None
        if w.requires_grad:
            gw = np.empty((c, 1, kh, kw), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gw[:, 0, i, j] = (g * xp[:, :, i: i + oh, j: j + ow]).sum(axis=(0, 2, 3))
        if x.requires_grad:
            dxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i: i + oh, j: j + ow] += wv[:, i, j].reshape(1, c, 1, 1) * g
            gx = dxp[:, :, ph: ph + h, pw: pw + wd] if (ph or pw) else dxp
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _record(out, inputs, vjp)


def conv2d(x, w, bias=None, stride=1, dilation=1, padding=0, groups: int = 1) -> Tensor:
    """Cross-correlation of ``x`` (B,C,H,W) with ``w`` (O,C/groups,kh,kw).

    Output extent per axis is floor((H + 2p - d*(k-1) - 1)/s) + 1.
    Accumulation runs in a fixed kernel-position order, so results are
    reproducible bit-for-bit.
    """
    x, w = as_tensor(x), as_tensor(w)
    if bias is not None:
        bias = as_tensor(bias)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input/weight, got {x.shape} and {w.shape}")
    sh, sw = _pair(stride)
    dh, dw = _pair(dilation)
    ph, pw = _pair(padding)
    b, c, h, wd = x.shape
    o, cg, kh, kw = w.shape
    if c != cg * groups or o % groups != 0:
        raise ShapeError(
            f"conv2d channel mismatch: input {c} channels, weight {w.shape} with groups={groups}"
        )
    eh = dh * (kh - 1) + 1
    ew = dw * (kw - 1) + 1
    oh = (h + 2 * ph - eh) // sh + 1
    ow = (wd + 2 * pw - ew) // sw + 1
    if h + 2 * ph < eh or wd + 2 * pw < ew:
        raise ShapeError(
            f"conv2d kernel {(kh, kw)} (dilation {(dh, dw)}) larger than padded input {(h + 2 * ph, wd + 2 * pw)}"
        )

    if (kh == kw == 1 and sh == sw == 1 and ph == pw == 0 and groups == 1):
        return _conv1x1(x, w, bias, b, c, h, wd, o)
    if (groups == c and o == c and sh == sw == 1 and dh == dw == 1):
        return _conv_depthwise(x, w, bias, b, c, h, wd, kh, kw, ph, pw)

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    cols = _im2col(xp, kh, kw, sh, sw, dh, dw, oh, ow)
    og = o // groups
    if groups == 1:
        cols2 = cols.reshape(b, cg * kh * kw, oh * ow)
        w2 = w.data.reshape(o, cg * kh * kw)
        out_data = np.matmul(w2, cols2).reshape(b, o, oh, ow)
    else:
        cols2 = cols.reshape(b, groups, cg * kh * kw, oh * ow)
        w2 = w.data.reshape(groups, og, cg * kh * kw)
        out_data = np.matmul(w2, cols2).reshape(b, o, oh, ow)
    if bias is not None:
        out_data = out_data + bias.data.reshape(1, o, 1, 1)
    out = Tensor(out_data)

    inputs = (x, w) if bias is None else (x, w, bias)

    def vjp(g):
        gx = gw = gb = None
        if groups == 1:
            gg = g.reshape(b, o, oh * ow)
            if w.requires_grad:
                gw = np.matmul(gg, cols2.swapaxes(-1, -2)).sum(axis=0).reshape(o, cg, kh, kw)
            if x.requires_grad:
                dcols = np.matmul(w2.T, gg)
        else:
            gg = g.reshape(b, groups, og, oh * ow)
            if w.requires_grad:
                gw = np.matmul(gg, cols2.swapaxes(-1, -2)).sum(axis=0).reshape(o, cg, kh, kw)
            if x.requires_grad:
                dcols = np.matmul(w2.swapaxes(-1, -2), gg)
        if x.requires_grad:
            dcols = dcols.reshape(b, c, kh, kw, oh, ow)
            dxp = _col2im(dcols, xp.shape, kh, kw, sh, sw, dh, dw, oh, ow)
            gx = dxp[:, :, ph: ph + h, pw: pw + wd] if (ph or pw) else dxp
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _record(out, inputs, vjp)


def conv_transpose2d(x, w, bias=None, stride: int = 2, padding: int = 0) -> Tensor:
    """Transposed convolution; ``w`` has layout (C_in, C_out, kh, kw)."""
    x, w = as_tensor(x), as_tensor(w)
    if bias is not None:
        bias = as_tensor(bias)
    b, c, h, wd = x.shape
    cin, o, kh, kw = w.shape
    if c != cin:
        raise ShapeError(f"conv_transpose2d channel mismatch: input {c} vs weight {w.shape}")
    s = int(stride)
    hp = (h - 1) * s + kh
    wp = (wd - 1) * s + kw
    out_full = np.zeros((b, o, hp, wp), dtype=x.data.dtype)
    x2 = x.data.reshape(b, c, h * wd)
    for i in range(kh):
        for j in range(kw):
            contrib = np.matmul(w.data[:, :, i, j].T, x2).reshape(b, o, h, wd)
            out_full[:, :, i: i + (h - 1) * s + 1: s, j: j + (wd - 1) * s + 1: s] += contrib
    p = int(padding)
    out_data = out_full[:, :, p: hp - p, p: wp - p] if p else out_full
    if bias is not None:
        out_data = out_data + bias.data.reshape(1, o, 1, 1)
    out = Tensor(out_data)

    inputs = (x, w) if bias is None else (x, w, bias)

    def vjp(g):
        gfull = np.pad(g, ((0, 0), (0, 0), (p, p), (p, p))) if p else g
        gx = gw = gb = None
        if x.requires_grad:
            gx = np.zeros((b, c, h, wd), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    patch = gfull[:, :, i: i + (h - 1) * s + 1: s, j: j + (wd - 1) * s + 1: s]
                    gx += np.matmul(w.data[:, :, i, j], patch.reshape(b, o, -1)).reshape(b, c, h, wd)
        if w.requires_grad:
            gw = np.empty_like(w.data)
            x2g = x.data.reshape(b, c, -1)
            for i in range(kh):
                for j in range(kw):
                    patch = gfull[:, :, i: i + (h - 1) * s + 1: s, j: j + (wd - 1) * s + 1: s]
                    gw[:, :, i, j] = np.matmul(x2g, patch.reshape(b, o, -1).swapaxes(-1, -2)).sum(axis=0)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _record(out, inputs, vjp)


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def avg_pool2(x) -> Tensor:
    """2x2 average pooling; backward spreads the gradient uniformly."""
    x = as_tensor(x)
    h, w = x.shape[-2], x.shape[-1]
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 needs even spatial extents, got {(h, w)}")
    lead = x.shape[:-2]
    v = x.data.reshape(*lead, h // 2, 2, w // 2, 2)
    out = Tensor(v.mean(axis=(-3, -1)))

    def vjp(g):
        gq = (g * g.dtype.type(0.25))[..., :, None, :, None]
        return (np.broadcast_to(gq, (*lead, h // 2, 2, w // 2, 2)).reshape(x.shape).copy(),)

    return _record(out, (x,), vjp)


def _up2_axis_fwd(v: np.ndarray, axis: int) -> np.ndarray:
    n = v.shape[axis]
    lo = np.concatenate([v.take([0], axis=axis), v.take(range(n - 1), axis=axis)], axis=axis)
    hi = np.concatenate([v.take(range(1, n), axis=axis), v.take([n - 1], axis=axis)], axis=axis)
    even = 0.25 * lo + 0.75 * v
    odd = 0.75 * v + 0.25 * hi
    out_shape = list(v.shape)
    out_shape[axis] = 2 * n
    out = np.empty(out_shape, dtype=v.dtype)
    sl_e = [slice(None)] * v.ndim
    sl_o = [slice(None)] * v.ndim
    sl_e[axis] = slice(0, 2 * n, 2)
    sl_o[axis] = slice(1, 2 * n, 2)
    out[tuple(sl_e)] = even
    out[tuple(sl_o)] = odd
    return out


def _up2_axis_bwd(g: np.ndarray, axis: int, n: int) -> np.ndarray:
    sl_e = [slice(None)] * g.ndim
    sl_o = [slice(None)] * g.ndim
    sl_e[axis] = slice(0, 2 * n, 2)
    sl_o[axis] = slice(1, 2 * n, 2)
    ge = g[tuple(sl_e)]
    go = g[tuple(sl_o)]
    dv = 0.75 * ge + 0.75 * go
    # even output i also reads input i-1 (clamped); odd output i reads input i+1
    shift_fwd = np.concatenate([ge.take(range(1, n), axis=axis), np.zeros_like(ge.take([0], axis=axis))], axis=axis)
    shift_bwd = np.concatenate([np.zeros_like(go.take([0], axis=axis)), go.take(range(n - 1), axis=axis)], axis=axis)
    dv = dv + 0.25 * shift_fwd + 0.25 * shift_bwd
    # clamped edges fold back onto the first/last sample
    first = [slice(None)] * g.ndim
    first[axis] = slice(0, 1)
    last = [slice(None)] * g.ndim
    last[axis] = slice(n - 1, n)
    dv[tuple(first)] += 0.25 * ge[tuple(first)]
    dv[tuple(last)] += 0.25 * go[tuple(last)]
    return dv


def _up2(x: Tensor, axis: int) -> Tensor:
    x = as_tensor(x)
    n = x.shape[axis]
    out = Tensor(_up2_axis_fwd(x.data, axis))
    return _record(out, (x,), lambda g: (_up2_axis_bwd(g, axis, n).astype(x.dtype, copy=False),))


def bilinear_up2(x) -> Tensor:
    """Doubles both spatial extents with half-pixel-centred linear weights."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError("bilinear_up2 expects at least 2 dimensions")
    return _up2(_up2(x, x.ndim - 2), x.ndim - 1)


def resample(x, mode: str, weight=None, bias=None) -> Tensor:
    """Halve or double spatial extents.

    Modes: ``avgpool2`` and ``bilinear_up2`` are parameter-free;
    ``strided_conv`` / ``transposed_conv`` apply the given weight with
    stride 2.
    """
    if mode == "avgpool2":
        return avg_pool2(x)
    if mode == "bilinear_up2":
        return bilinear_up2(x)
    if mode == "strided_conv":
        if weight is None:
            raise UsageError("strided_conv resampling requires a weight")
        k = as_tensor(weight).shape[-1]
        return conv2d(x, weight, bias=bias, stride=2, padding=(k - 2) // 2)
    if mode == "transposed_conv":
        if weight is None:
            raise UsageError("transposed_conv resampling requires a weight")
        return conv_transpose2d(x, weight, bias=bias, stride=2)
    raise UsageError(f"unknown resample mode {mode!r}")
