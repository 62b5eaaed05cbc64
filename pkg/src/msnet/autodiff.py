"""Dense float64 tensors with reverse-mode automatic differentiation.

Data lives in row-major numpy arrays. Every operation validates shapes,
computes the forward value eagerly, and records a vector-Jacobian closure
on the output. ``backward`` walks the recorded graph once per call, so
calling it twice without clearing gradients accumulates exactly twice the
gradient. Operations raise ``NumericError`` instead of returning NaN/Inf.

Most operations accept an optional leading batch axis beyond the shapes
documented here; gradients flow through the batch axis unchanged.
"""
from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from .errors import DimensionError, NumericError, StateError

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording inside the context (also used for frozen nets)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A float64 array plus an optional recorded backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor constructed from non-finite values")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None

    # -- construction ------------------------------------------------------

    @classmethod
    def _wrap(cls, arr: np.ndarray, parents, vjp) -> "Tensor":
        out = cls.__new__(cls)
        out.data = arr
        out.grad = None
        out.requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._vjp = vjp
        else:
            out._parents = ()
            out._vjp = None
        return out

    # -- basic protocol ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """A defensive copy of the underlying array."""
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def relu(self):
        return relu(self)

    def backward(self):
        backward(self)


def _coerce(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op} produced non-finite values")
    return arr


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor.

    ``loss`` must be scalar. Cotangents are tracked per call in a scratch
    map and only added into ``.grad`` as each node finishes, so a second
    call on the same graph adds the same gradients again (exact doubling).
    """
    if loss.data.size != 1:
        raise DimensionError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise StateError("backward on a tensor with no recorded graph")

    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    cotangent = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = cotangent.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = g.copy()
        else:
            node.grad = node.grad + g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = cotangent.get(id(parent))
            cotangent[id(parent)] = pg if acc is None else acc + pg


def zero_grad(tensors) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# elementwise and arithmetic operations
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = _check_finite(a.data + b.data, "add")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._wrap(out, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = _check_finite(a.data - b.data, "sub")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._wrap(out, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = _check_finite(a.data * b.data, "mul")

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._wrap(out, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return Tensor._wrap(-a.data, (a,), lambda g: (-g,))


def mul_scalar(a: Tensor, s: float) -> Tensor:
    s = float(s)
    if not math.isfinite(s):
        raise NumericError("mul_scalar with non-finite scalar")
    out = _check_finite(a.data * s, "mul_scalar")
    return Tensor._wrap(out, (a,), lambda g: (g * s,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    out = np.where(mask, a.data, 0.0)
    return Tensor._wrap(out, (a,), lambda g: (g * mask,))


def sin(a: Tensor) -> Tensor:
    cached = np.cos(a.data)
    return Tensor._wrap(np.sin(a.data), (a,), lambda g: (g * cached,))


def cos(a: Tensor) -> Tensor:
    cached = np.sin(a.data)
    return Tensor._wrap(np.cos(a.data), (a,), lambda g: (g * -cached,))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # _check_finite turns overflow into NumericError
        out = _check_finite(np.exp(a.data), "exp")
    return Tensor._wrap(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise NumericError("log of a non-positive value")
    out = np.log(a.data)
    data = a.data
    return Tensor._wrap(out, (a,), lambda g: (g / data,))


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}") from e
    orig = a.shape
    return Tensor._wrap(out, (a,), lambda g: (g.reshape(orig),))


def concat(parts, axis: int = 0) -> Tensor:
    parts = [_coerce(p) for p in parts]
    if not parts:
        raise DimensionError("concat of an empty sequence")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat shapes incompatible: {[p.shape for p in parts]}") from e
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._wrap(out, tuple(parts), vjp)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` elements along ``axis``."""
    ax = axis % a.ndim
    n = a.shape[ax]
    start, length = int(start), int(length)
    if length < 1 or start < 0 or start + length > n:
        raise DimensionError(f"narrow [{start}:{start + length}] out of range for axis size {n}")
    index = [slice(None)] * a.ndim
    index[ax] = slice(start, start + length)
    index = tuple(index)
    out = a.data[index]
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape, dtype=np.float64)
        full[index] = g
        return (full,)

    return Tensor._wrap(out.copy(), (a,), vjp)


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows of a 2-D tensor by index (duplicates allowed)."""
    if a.ndim != 2:
        raise DimensionError(f"gather_rows expects a 2-D tensor, got shape {a.shape}")
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise DimensionError("gather_rows with no indices")
    if idx.min() < 0 or idx.max() >= a.shape[0]:
        raise DimensionError(f"row index out of range for {a.shape[0]} rows")
    out = a.data[idx]
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape, dtype=np.float64)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._wrap(out.copy(), (a,), vjp)


def take(a: Tensor, index: int) -> Tensor:
    """Pick one element of a 1-D tensor as a scalar."""
    if a.ndim != 1:
        raise DimensionError(f"take expects a 1-D tensor, got shape {a.shape}")
    index = int(index)
    if not 0 <= index < a.data.shape[0]:
        raise DimensionError(f"take index {index} out of range for length {a.data.shape[0]}")
    out = a.data[index].reshape(())
    n = a.data.shape[0]

    def vjp(g):
        full = np.zeros(n, dtype=np.float64)
        full[index] = g
        return (full,)

    return Tensor._wrap(out, (a,), vjp)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    shape = a.shape

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._wrap(np.asarray(out, dtype=np.float64), (a,), vjp)


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    if count == 0:
        raise DimensionError("mean over zero elements")
    out = a.data.mean(axis=axes, keepdims=keepdims)
    shape = a.shape

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(g, shape).copy() / count,)

    return Tensor._wrap(np.asarray(out, dtype=np.float64), (a,), vjp)


def logsumexp(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Numerically stable log-sum-exp along one axis."""
    ax = axis % a.ndim
    m = a.data.max(axis=ax, keepdims=True)
    shifted = np.exp(a.data - m)
    total = shifted.sum(axis=ax, keepdims=True)
    out = m + np.log(total)
    soft = shifted / total
    if not keepdims:
        out = np.squeeze(out, axis=ax)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (g * soft,)

    return Tensor._wrap(out, (a,), vjp)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.ndim == 2 and b.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul {a.shape} @ {b.shape}")
        out = a.data @ b.data

        def vjp(g):
            return g @ b.data.T, a.data.T @ g

    elif a.ndim == 2 and b.ndim == 1:
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul {a.shape} @ {b.shape}")
        out = a.data @ b.data

        def vjp(g):
            return np.outer(g, b.data), a.data.T @ g

    elif a.ndim == 1 and b.ndim == 2:
        if a.shape[0] != b.shape[0]:
            raise DimensionError(f"matmul {a.shape} @ {b.shape}")
        out = a.data @ b.data

        def vjp(g):
            return b.data @ g, np.outer(a.data, g)

    else:
        raise DimensionError(f"matmul unsupported ranks {a.ndim} and {b.ndim}")
    return Tensor._wrap(_check_finite(out, "matmul"), (a, b), vjp)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix-vector product: (N,i,j) @ (N,j) -> (N,i)."""
    if a.ndim != 3 or b.ndim != 2 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise DimensionError(f"bmm {a.shape} @ {b.shape}")
    out = np.einsum("nij,nj->ni", a.data, b.data)

    def vjp(g):
        da = np.einsum("ni,nj->nij", g, b.data)
        db = np.einsum("nij,ni->nj", a.data, g)
        return da, db

    return Tensor._wrap(_check_finite(out, "bmm"), (a, b), vjp)


def dot(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"dot expects equal-length vectors, got {a.shape} and {b.shape}")
    out = np.asarray(a.data @ b.data)

    def vjp(g):
        return g * b.data, g * a.data

    return Tensor._wrap(_check_finite(out, "dot"), (a, b), vjp)


# ---------------------------------------------------------------------------
# normalization and softmax
# ---------------------------------------------------------------------------


def layer_norm(a: Tensor, axes=None, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance normalization over ``axes`` (default: all).

    Pure normalization: any affine transform is applied by the caller.
    The epsilon inside the square root makes an all-constant slice map
    to exact zeros rather than dividing by zero.
    """
    ax = _norm_axes(axes, a.ndim)
    if any(a.shape[i] == 0 for i in ax):
        raise DimensionError("layer_norm over a zero-length axis")
    count = int(np.prod([a.shape[i] for i in ax]))
    mu = a.data.mean(axis=ax, keepdims=True)
    centered = a.data - mu
    var = np.mean(centered * centered, axis=ax, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = centered * inv

    def vjp(g):
        g_mean = g.mean(axis=ax, keepdims=True)
        gy_mean = (g * out).mean(axis=ax, keepdims=True)
        return (inv * (g - g_mean - out * gy_mean),)

    return Tensor._wrap(out, (a,), vjp)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    ax = axis % a.ndim
    shifted = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=ax, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=ax, keepdims=True)
        return (out * (g - inner),)

    return Tensor._wrap(out, (a,), vjp)


def l2_normalize(a: Tensor, axis: int = -1) -> Tensor:
    """Scale vectors along ``axis`` to unit Euclidean norm."""
    ax = axis % a.ndim
    norm = np.sqrt((a.data * a.data).sum(axis=ax, keepdims=True))
    if np.any(norm < 1e-12):
        raise NumericError("l2_normalize of a (near-)zero vector")
    out = a.data / norm

    def vjp(g):
        inner = (g * out).sum(axis=ax, keepdims=True)
        return ((g - out * inner) / norm,)

    return Tensor._wrap(out, (a,), vjp)


# ---------------------------------------------------------------------------
# spatial operations
# ---------------------------------------------------------------------------


def _as_batched(x: np.ndarray, want: int):
    """Add a leading singleton axis if x has rank want-1."""
    if x.ndim == want - 1:
        return x[None], True
    if x.ndim == want:
        return x, False
    raise DimensionError(f"expected rank {want - 1} or {want}, got shape {x.shape}")


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding=None) -> Tensor:
    """2-D cross-correlation of (C_in,H,W) maps with (C_out,C_in,kh,kw) kernels.

    Zero padding defaults to half the kernel extent, which preserves the
    spatial size at stride 1 for odd kernels. A leading batch axis on x
    is allowed.
    """
    xb, squeeze = _as_batched(x.data, 4)
    if w.ndim != 4:
        raise DimensionError(f"conv2d kernel must be rank 4, got {w.shape}")
    n, cin, h, wd = xb.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise DimensionError(f"conv2d channel mismatch: input {cin}, kernel {cin_w}")
    stride = int(stride)
    if stride < 1:
        raise DimensionError(f"conv2d stride must be >= 1, got {stride}")
    if padding is None:
        ph, pw = kh // 2, kw // 2
    elif isinstance(padding, int):
        ph = pw = padding
    else:
        ph, pw = padding
    if h + 2 * ph < kh or wd + 2 * pw < kw:
        raise DimensionError("conv2d kernel larger than padded input")

    xp = np.pad(xb, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    out = np.einsum("nihwkl,oikl->nohw", win, w.data, optimize=True)
    ho, wo = out.shape[2], out.shape[3]

    def vjp(g):
        if squeeze:
            g = g[None]
        dw = np.einsum("nohw,nihwkl->oikl", g, win, optimize=True)
        dxp = np.zeros_like(xp)
        for ki in range(kh):
            for kj in range(kw):
                patch = np.einsum("nohw,oi->nihw", g, w.data[:, :, ki, kj], optimize=True)
                dxp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += patch
        dx = dxp[:, :, ph : ph + h, pw : pw + wd]
        if squeeze:
            dx = dx[0]
        return dx, dw

    if squeeze:
        out = out[0]
    return Tensor._wrap(_check_finite(out, "conv2d"), (x, w), vjp)


def global_avg_pool(a: Tensor) -> Tensor:
    """Mean over the two trailing spatial axes: (...,C,H,W) -> (...,C)."""
    if a.ndim < 3:
        raise DimensionError(f"global_avg_pool expects spatial maps, got shape {a.shape}")
    h, w = a.shape[-2], a.shape[-1]
    out = a.data.mean(axis=(-2, -1))

    def vjp(g):
        return (np.broadcast_to(g[..., None, None], a.shape).copy() / (h * w),)

    return Tensor._wrap(out, (a,), vjp)


def shift(a: Tensor, rows: int, cols: int) -> Tensor:
    """Translate a (...,H,W) map so out[...,i,j] = in[...,i+rows,j+cols].

    Positions that fall outside the input become zero; this is the footprint
    alignment used to assemble convolutions out of pointwise products.
    """
    if a.ndim < 2:
        raise DimensionError(f"shift expects at least 2-D input, got shape {a.shape}")
    rows, cols = int(rows), int(cols)
    h, w = a.shape[-2], a.shape[-1]
    out = np.zeros_like(a.data)
    r0, r1 = max(0, -rows), min(h, h - rows)
    c0, c1 = max(0, -cols), min(w, w - cols)
    if r1 > r0 and c1 > c0:
        out[..., r0:r1, c0:c1] = a.data[..., r0 + rows : r1 + rows, c0 + cols : c1 + cols]

    def vjp(g):
        dx = np.zeros_like(g)
        if r1 > r0 and c1 > c0:
            dx[..., r0 + rows : r1 + rows, c0 + cols : c1 + cols] = g[..., r0:r1, c0:c1]
        return (dx,)

    return Tensor._wrap(out, (a,), vjp)


def window_attention(
    query: Tensor,
    key: Tensor,
    value: Tensor,
    heads: int,
    window: int,
    return_weights: bool = False,
):
    """Per-pixel multi-head attention over a local window.

    Each output position attends to the ``window`` x ``window`` neighborhood
    centered on it, per head, with dot products scaled by sqrt(channels/heads).
    Neighbors outside the image are excluded from the softmax (no phantom
    zero keys), so border positions renormalize over fewer cells.

    With ``return_weights`` the attention distributions are also returned as
    a plain (heads,H,W,window,window) array (batched: leading N axis), for
    diagnostics only; invalid cells hold weight 0.
    """
    qb, squeeze = _as_batched(query.data, 4)
    kb, _ = _as_batched(key.data, 4)
    vb, _ = _as_batched(value.data, 4)
    if qb.shape != kb.shape or qb.shape != vb.shape:
        raise DimensionError(
            f"window_attention shape mismatch: {query.shape}, {key.shape}, {value.shape}"
        )
    n, c, h, w = qb.shape
    heads = int(heads)
    window = int(window)
    if heads < 1 or c % heads != 0:
        raise DimensionError(f"channel count {c} not divisible by {heads} heads")
    if window < 1 or window % 2 == 0:
        raise DimensionError(f"window must be odd and positive, got {window}")
    d = c // heads
    r = window // 2
    scale = 1.0 / math.sqrt(d)

    kp = np.pad(kb, ((0, 0), (0, 0), (r, r), (r, r)))
    vp = np.pad(vb, ((0, 0), (0, 0), (r, r), (r, r)))
    valid = np.pad(np.ones((h, w), dtype=bool), ((r, r), (r, r)))
    kwin = np.lib.stride_tricks.sliding_window_view(kp, (window, window), axis=(2, 3))
    vwin = np.lib.stride_tricks.sliding_window_view(vp, (window, window), axis=(2, 3))
    mwin = np.lib.stride_tricks.sliding_window_view(valid, (window, window), axis=(0, 1))

    qh = qb.reshape(n, heads, d, h, w)
    kh_ = kwin.reshape(n, heads, d, h, w, window, window)
    vh_ = vwin.reshape(n, heads, d, h, w, window, window)

    logits = np.einsum("nmdhw,nmdhwuv->nmhwuv", qh, kh_, optimize=True) * scale
    logits = np.where(mwin[None, None], logits, -np.inf)
    peak = logits.max(axis=(-2, -1), keepdims=True)
    expv = np.exp(logits - peak)
    weights = expv / expv.sum(axis=(-2, -1), keepdims=True)

    out = np.einsum("nmhwuv,nmdhwuv->nmdhw", weights, vh_, optimize=True)
    out = out.reshape(n, c, h, w)

    def vjp(g):
        if squeeze:
            g = g[None]
        gh = g.reshape(n, heads, d, h, w)
        d_weights = np.einsum("nmdhw,nmdhwuv->nmhwuv", gh, vh_, optimize=True)
        dv_win = np.einsum("nmhwuv,nmdhw->nmdhwuv", weights, gh, optimize=True)
        inner = (d_weights * weights).sum(axis=(-2, -1), keepdims=True)
        d_logits = weights * (d_weights - inner)
        dq = np.einsum("nmhwuv,nmdhwuv->nmdhw", d_logits, kh_, optimize=True) * scale
        dk_win = np.einsum("nmhwuv,nmdhw->nmdhwuv", d_logits, qh, optimize=True) * scale

        dkp = np.zeros_like(kp).reshape(n, heads, d, h + 2 * r, w + 2 * r)
        dvp = np.zeros_like(vp).reshape(n, heads, d, h + 2 * r, w + 2 * r)
        for u in range(window):
            for v in range(window):
                dkp[:, :, :, u : u + h, v : v + w] += dk_win[..., u, v]
                dvp[:, :, :, u : u + h, v : v + w] += dv_win[..., u, v]
        dk = dkp.reshape(n, c, h + 2 * r, w + 2 * r)[:, :, r : r + h, r : r + w]
        dv = dvp.reshape(n, c, h + 2 * r, w + 2 * r)[:, :, r : r + h, r : r + w]
        dq = dq.reshape(n, c, h, w)
        if squeeze:
            dq, dk, dv = dq[0], dk[0], dv[0]
        return dq, dk, dv

    if squeeze:
        out = out[0]
    result = Tensor._wrap(_check_finite(out, "window_attention"), (query, key, value), vjp)
    if return_weights:
        wout = weights if not squeeze else weights[0]
        return result, wout.copy()
    return result
