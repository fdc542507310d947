"""Differentiable operations on :class:`~coadnet.tensor.Tensor`.

Image-like tensors are channel-first, either ``C x H x W`` or batched
``N x C x H x W``. Convolutions are im2col + BLAS matmul.
"""
from __future__ import annotations

from typing import List, Optional, Sequence, Union

import numpy as np

from .tensor import Tensor, make_result

Scalar = Union[int, float]


class ShapeError(ValueError):
    """Operand extents are incompatible."""


class ConfigError(ValueError):
    """Operation hyperparameters are inconsistent with the input."""


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _check_same(a: Tensor, b: Tensor, name: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        a = _t(a)
        return make_result(a.data + np.asarray(b, a.dtype), (a,), lambda g: (g,), "add")
    if not isinstance(a, Tensor):
        return add(b, a)
    _check_same(a, b, "add")
    return make_result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        b = _t(b)
        return make_result(np.asarray(a, b.dtype) - b.data, (b,), lambda g: (-g,), "sub")
    if not isinstance(b, Tensor):
        return make_result(a.data - np.asarray(b, a.dtype), (a,), lambda g: (g,), "sub")
    _check_same(a, b, "sub")
    return make_result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    """Hadamard product, or scaling by a Python scalar."""
    if not isinstance(b, Tensor):
        a = _t(a)
        c = np.asarray(b, a.dtype)
        return make_result(a.data * c, (a,), lambda g: (g * c,), "mul")
    if not isinstance(a, Tensor):
        return mul(b, a)
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return make_result(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)
    return make_result(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def mul_channels(x: Tensor, s: Tensor) -> Tensor:
    """Scale each channel plane of ``x`` (``[N,]C,H,W``) by ``s`` (``[N,]C``)."""
    if s.shape != x.shape[:-2]:
        raise ShapeError(f"mul_channels: vector {s.shape} does not match channels of {x.shape}")
    xd, sd = x.data, s.data
    sb = sd[..., None, None]

    def bw(g):
        return g * sb, (g * xd).sum(axis=(-2, -1))

    return make_result(xd * sb, (x, s), bw, "mul_channels")


def mul_plane(x: Tensor, p: Tensor) -> Tensor:
    """Multiply every channel of ``x`` by a single-channel plane ``p``."""
    want = x.shape[:-3] + (1,) + x.shape[-2:]
    if p.shape != want:
        raise ShapeError(f"mul_plane: plane {p.shape} incompatible with {x.shape}, expected {want}")
    xd, pd = x.data, p.data

    def bw(g):
        return g * pd, (g * xd).sum(axis=-3, keepdims=True)

    return make_result(xd * pd, (x, p), bw, "mul_plane")


def expand_batch(x: Tensor, n: int) -> Tensor:
    """Repeat an unbatched tensor ``n`` times along a new leading axis."""
    out = np.broadcast_to(x.data, (n,) + x.shape).copy()
    return make_result(out, (x,), lambda g: (g.sum(axis=0),), "expand_batch")


# ------------------------------------------------------------------- shaping


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose2d(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    return make_result(np.swapaxes(x.data, -1, -2).copy(), (x,), lambda g: (np.swapaxes(g, -1, -2),), "transpose2d")


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    xs = list(xs)
    ref = xs[0].shape
    ax = axis % len(ref)
    for t in xs[1:]:
        if len(t.shape) != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat along axis {axis}: {t.shape} incompatible with {ref}")
    sizes = [t.shape[ax] for t in xs]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return np.split(g, bounds, axis=ax)

    return make_result(np.concatenate([t.data for t in xs], axis=ax), xs, bw, "concat")


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    return concat(xs, axis=-3)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    ax = axis % x.ndim
    idx = [slice(None)] * x.ndim
    idx[ax] = slice(start, stop)
    idx = tuple(idx)
    shape = x.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return make_result(x.data[idx].copy(), (x,), bw, "slice")


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = list(xs)
    for t in xs[1:]:
        _check_same(xs[0], t, "stack")

    def bw(g):
        return [np.take(g, i, axis=axis) for i in range(len(xs))]

    return make_result(np.stack([t.data for t in xs], axis=axis), xs, bw, "stack")


# --------------------------------------------------------------- reductions


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return make_result(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mean_all(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return make_result(np.asarray(x.data.mean()), (x,), lambda g: (np.full(shape, g / n, dtype=x.dtype),), "mean")


def channel_mean(x: Tensor) -> Tensor:
    c = x.shape[-3]
    y = x.data.mean(axis=-3, keepdims=True)
    shape = x.shape
    return make_result(y, (x,), lambda g: (np.broadcast_to(g / c, shape).copy(),), "channel_mean")


def channel_max(x: Tensor) -> Tensor:
    d = np.moveaxis(x.data, -3, -1)
    idx = d.argmax(axis=-1)  # first occurrence -> lowest channel index on ties
    y = np.take_along_axis(d, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        out = np.zeros(d.shape, dtype=g.dtype)
        np.put_along_axis(out, idx[..., None], g[..., 0, :, :][..., None], axis=-1)
        return (np.ascontiguousarray(np.moveaxis(out, -1, -3)),)

    return make_result(np.expand_dims(y, -3), (x,), bw, "channel_max")


def global_mean(x: Tensor) -> Tensor:
    """Global average pooling: ``[N,]C,H,W -> [N,]C``."""
    h, w = x.shape[-2:]
    shape = x.shape

    def bw(g):
        return (np.broadcast_to(g[..., None, None] / (h * w), shape).copy(),)

    return make_result(x.data.mean(axis=(-2, -1)), (x,), bw, "global_mean")


def max_pool2d(x: Tensor, window: int, stride: Optional[int] = None) -> Tensor:
    """Spatial max pooling; gradient goes to the lowest flat index in a tie."""
    if window is None or window < 1:
        raise ConfigError(f"max_pool2d: window must be >= 1, got {window}")
    stride = window if stride is None else stride
    if stride < 1:
        raise ConfigError(f"max_pool2d: stride must be >= 1, got {stride}")
    h, w = x.shape[-2:]
    if window > h or window > w:
        raise ConfigError(f"max_pool2d: window {window} larger than input {h}x{w}")
    win = np.lib.stride_tricks.sliding_window_view(x.data, (window, window), axis=(-2, -1))
    win = win[..., ::stride, ::stride, :, :]
    flat = win.reshape(win.shape[:-2] + (window * window,))
    arg = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    shape = x.shape
    ho, wo = y.shape[-2:]

    def bw(g):
        out = np.zeros(shape, dtype=g.dtype)
        lead = shape[:-2]
        rows = (np.arange(ho)[:, None] * stride + arg // window).reshape(lead + (ho, wo))
        cols = (np.arange(wo)[None, :] * stride + arg % window).reshape(lead + (ho, wo))
        out2 = out.reshape(-1, h, w)
        r2, c2, g2 = rows.reshape(-1, ho * wo), cols.reshape(-1, ho * wo), g.reshape(-1, ho * wo)
        for i in range(out2.shape[0]):
            np.add.at(out2[i], (r2[i], c2[i]), g2[i])
        return (out2.reshape(shape),)

    return make_result(np.ascontiguousarray(y), (x,), bw, "max_pool2d")


def reduce_pool(x: Tensor, kind: str, window: Optional[int] = None, stride: Optional[int] = None) -> Tensor:
    if kind == "channel_mean":
        return channel_mean(x)
    if kind == "channel_max":
        return channel_max(x)
    if kind == "spatial_global_mean":
        return global_mean(x)
    if kind == "spatial_max":
        return max_pool2d(x, window, stride)
    raise ConfigError(f"unknown pooling kind {kind!r}")


# ------------------------------------------------------------ softmax family


def _softmax_np(d: np.ndarray, axis: int) -> np.ndarray:
    e = np.exp(d - d.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x: Tensor, axis: int) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax: axis {axis} out of range for shape {x.shape}")
    y = _softmax_np(x.data, axis)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result(y, (x,), bw, "softmax")


def softmax_pool(x: Tensor, axis: int = 0) -> Tensor:
    """Softmax-weighted sum over ``axis``: ``sum_n softmax_n(x) * x_n``.

    Values are sorted along ``axis`` before the reduction, so the result is
    bit-identical for any ordering of the slices.
    """
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax_pool: axis {axis} out of range for shape {x.shape}")
    xs = np.sort(x.data, axis=axis)
    ws = _softmax_np(xs, axis)
    y = (ws * xs).sum(axis=axis)
    xd = x.data

    def bw(g):
        w = _softmax_np(xd, axis)
        ye, ge = np.expand_dims(y, axis), np.expand_dims(g, axis)
        return (ge * w * (1.0 + xd - ye),)

    return make_result(y, (x,), bw, "softmax_pool")


# ------------------------------------------------------------------- linear


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents of {a.shape} and {b.shape} differ")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        # fold broadcast batch axes back
        while ga.ndim > ad.ndim:
            ga = ga.sum(axis=0)
        while gb.ndim > bd.ndim:
            gb = gb.sum(axis=0)
        return ga, gb

    return make_result(ad @ bd, (a, b), bw, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` for ``x`` of shape ``(..., in)``."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input width {x.shape[-1]} != weight fan-in {weight.shape[1]}")
    xd, wd = x.data, weight.data
    y = xd @ wd.T
    if bias is not None:
        y = y + bias.data

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ wd
        gw = g2.T @ xd.reshape(-1, xd.shape[-1])
        gb = g2.sum(axis=0) if bias is not None else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return make_result(y, parents, bw, "linear")


# -------------------------------------------------------------- convolution


def _out_extent(n: int, k: int, stride: int, padding: int, dilation: int, name: str) -> int:
    span = n + 2 * padding - dilation * (k - 1) - 1
    if span < 0 or span % stride:
        raise ConfigError(
            f"{name}: extent {n} with k={k}, stride={stride}, padding={padding}, "
            f"dilation={dilation} gives a non-integral or empty output"
        )
    return span // stride + 1


def _im2col(xp: np.ndarray, k: int, stride: int, dilation: int, ho: int, wo: int) -> np.ndarray:
    """Channel-major patches: ``(C,N,Hp,Wp) -> (C*k*k, N*ho*wo)``."""
    c, n = xp.shape[:2]
    cols = np.empty((c, k, k, n, ho, wo), dtype=xp.dtype)
    for i in range(k):
        r0 = i * dilation
        for j in range(k):
            c0 = j * dilation
            cols[:, i, j] = xp[:, :, r0:r0 + stride * (ho - 1) + 1:stride, c0:c0 + stride * (wo - 1) + 1:stride]
    return cols.reshape(c * k * k, n * ho * wo)


def _col2im(cols: np.ndarray, c: int, n: int, k: int, stride: int, dilation: int,
            hp: int, wp: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add patches into ``(C,N,Hp,Wp)``."""
    cols = cols.reshape(c, k, k, n, ho, wo)
    out = np.zeros((c, n, hp, wp), dtype=cols.dtype)
    for i in range(k):
        r0 = i * dilation
        for j in range(k):
            c0 = j * dilation
            out[:, :, r0:r0 + stride * (ho - 1) + 1:stride, c0:c0 + stride * (wo - 1) + 1:stride] += cols[:, i, j]
    return out


def _pad_cm(x: np.ndarray, padding: int) -> np.ndarray:
    if not padding:
        return x
    c, n, h, w = x.shape
    out = np.zeros((c, n, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
    out[:, :, padding:padding + h, padding:padding + w] = x
    return out


def _to_cm(x: np.ndarray) -> np.ndarray:
    return x.transpose(1, 0, 2, 3)


def _from_cm(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.transpose(1, 0, 2, 3))


def _batched(x: Tensor, name: str):
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise ShapeError(f"{name}: expected C x H x W or N x C x H x W input, got {x.shape}")


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``x``: ``[N,]Cin,H,W``; ``weight``: ``Cout,Cin,k,k``; ``bias``: ``Cout``.
    """
    xd, squeeze = _batched(x, "conv2d")
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"conv2d: weight must be Cout x Cin x k x k, got {weight.shape}")
    cout, cin, k, _ = weight.shape
    if xd.shape[1] != cin:
        raise ShapeError(f"conv2d: input has {xd.shape[1]} channels, weight expects {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    if k < 1 or dilation < 1 or stride < 1 or padding < 0:
        raise ConfigError(f"conv2d: invalid k={k}, stride={stride}, padding={padding}, dilation={dilation}")
    n, _, h, w = xd.shape
    ho = _out_extent(h, k, stride, padding, dilation, "conv2d")
    wo = _out_extent(w, k, stride, padding, dilation, "conv2d")

    pointwise = k == 1 and stride == 1 and padding == 0
    if pointwise:
        cols = _to_cm(xd).reshape(cin, n * h * w)
    else:
        cols = _im2col(_pad_cm(_to_cm(xd), padding), k, stride, dilation, ho, wo)
    wmat = weight.data.reshape(cout, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = _from_cm(out.reshape(cout, n, ho, wo))
    if squeeze:
        out = out[0]

    def bw(g):
        g4 = g[None] if squeeze else g
        gcm = _to_cm(g4).reshape(cout, n * ho * wo)
        gw = (gcm @ cols.T).reshape(weight.shape)
        if not x.requires_grad:
            gx = None
        elif pointwise:
            gx = _from_cm((wmat.T @ gcm).reshape(cin, n, h, w))
        else:
            gcols = wmat.T @ gcm
            gxp = _col2im(gcols, cin, n, k, stride, dilation, h + 2 * padding, w + 2 * padding, ho, wo)
            gx = _from_cm(gxp[:, :, padding:padding + h, padding:padding + w])
        if squeeze and gx is not None:
            gx = gx[0]
        grads = [gx, gw]
        if bias is not None:
            grads.append(gcm.sum(axis=1))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, bw, "conv2d")


def conv_transpose2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Fractionally strided convolution, the adjoint of :func:`conv2d`.

    ``weight``: ``Cin,Cout,k,k``. Output extent ``(H-1)*stride - 2*padding + k``.
    """
    xd, squeeze = _batched(x, "conv_transpose2d")
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"conv_transpose2d: weight must be Cin x Cout x k x k, got {weight.shape}")
    cin, cout, k, _ = weight.shape
    if xd.shape[1] != cin:
        raise ShapeError(f"conv_transpose2d: input has {xd.shape[1]} channels, weight expects {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv_transpose2d: bias shape {bias.shape} != ({cout},)")
    if stride < 1 or padding < 0:
        raise ConfigError(f"conv_transpose2d: invalid stride={stride}, padding={padding}")
    n, _, h, w = xd.shape
    hp, wp = (h - 1) * stride + k, (w - 1) * stride + k
    ho, wo = hp - 2 * padding, wp - 2 * padding
    if ho < 1 or wo < 1:
        raise ConfigError(f"conv_transpose2d: padding {padding} leaves an empty output")

    wmat = weight.data.reshape(cin, cout * k * k)
    xcm = _to_cm(xd).reshape(cin, n * h * w)
    outp = _col2im(wmat.T @ xcm, cout, n, k, stride, 1, hp, wp, h, w)
    out = outp[:, :, padding:padding + ho, padding:padding + wo]
    if bias is not None:
        out = out + bias.data[:, None, None, None]
    out = _from_cm(out)
    if squeeze:
        out = out[0]

    def bw(g):
        g4 = g[None] if squeeze else g
        gcols = _im2col(_pad_cm(_to_cm(g4), padding), k, stride, 1, h, w)
        gx = _from_cm((wmat @ gcols).reshape(cin, n, h, w))
        gw = (xcm @ gcols.T).reshape(weight.shape)
        if squeeze:
            gx = gx[0]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g4.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, bw, "conv_transpose2d")


# --------------------------------------------------------------- resampling


def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Row-stochastic ``n_out x n_in`` interpolation matrix, align_corners=False."""
    a = np.zeros((n_out, n_in), dtype=dtype)
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        a[i, i0] += 1.0 - frac
        a[i, i1] += frac
    return a


def bilinear_resize(x: Tensor, target_h: int, target_w: int) -> Tensor:
    if target_h < 1 or target_w < 1:
        raise ShapeError(f"bilinear_resize: target {target_h}x{target_w} must be positive")
    if x.ndim < 2:
        raise ShapeError(f"bilinear_resize: need at least 2 dims, got {x.shape}")
    h, w = x.shape[-2:]
    if (h, w) == (target_h, target_w):
        return make_result(x.data.copy(), (x,), lambda g: (g,), "bilinear_resize")
    ah = bilinear_matrix(h, target_h, x.dtype)
    aw = bilinear_matrix(w, target_w, x.dtype)
    y = ah @ x.data @ aw.T

    def bw(g):
        return (ah.T @ g @ aw,)

    return make_result(y, (x,), bw, "bilinear_resize")


# -------------------------------------------------------------------- loss


def bce(pred: Tensor, target, eps: float = 1e-7) -> Tensor:
    """Mean binary cross-entropy with predictions clamped to ``[eps, 1-eps]``."""
    p = pred.data
    t = (target.data if isinstance(target, Tensor) else np.asarray(target)).astype(p.dtype, copy=False)
    if pred.shape != t.shape:
        raise ShapeError(f"bce: prediction {pred.shape} and mask {t.shape} differ")
    pc = np.clip(p, eps, 1.0 - eps)
    loss = -(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc)).mean()
    inside = (p >= eps) & (p <= 1.0 - eps)

    def bw(g):
        d = (pc - t) / (pc * (1.0 - pc)) / p.size
        return (g * d * inside,)

    return make_result(np.asarray(loss, dtype=p.dtype), (pred,), bw, "bce")
