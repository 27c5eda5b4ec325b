"""Network-level primitives: convolutions, batch normalization, linear layers.

Convolutions use "same" zero padding: the output spatial size is
``ceil(in / stride)``. Transposed convolutions invert that mapping exactly,
producing ``in * stride``. Both are im2col/col2im around one BLAS matmul;
the col shuffles are JIT-compiled since they dominate wall time otherwise.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

from .tensor import Tensor, ShapeError, _accum, _make, as_tensor


def _same_pad(in_size, kernel, stride):
    out = -(-in_size // stride)  # ceil division
    total = max((out - 1) * stride + kernel - in_size, 0)
    return out, total // 2, total - total // 2


@njit(cache=True, nogil=True, parallel=True)
def _im2col(xp, kh, kw, sh, sw, oh, ow, cols):
    n, c, hp, wp = xp.shape
    for row in prange(n * oh):
        b = row // oh
        i = row % oh
        for j in range(ow):
            base = (row * ow + j)
            for ch in range(c):
                off = ch * kh * kw
                for ki in range(kh):
                    src = xp[b, ch, i * sh + ki]
                    for kj in range(kw):
                        cols[base, off + ki * kw + kj] = src[j * sw + kj]


@njit(cache=True, nogil=True, parallel=True)
def _col2im(dcols, kh, kw, sh, sw, oh, ow, dxp):
    n, c, hp, wp = dxp.shape
    for ch in prange(c):  # each channel's writes are disjoint
        off = ch * kh * kw
        for b in range(n):
            for i in range(oh):
                for j in range(ow):
                    base = (b * oh + i) * ow + j
                    for ki in range(kh):
                        dst = dxp[b, ch, i * sh + ki]
                        for kj in range(kw):
                            dst[j * sw + kj] += dcols[base, off + ki * kw + kj]


@njit(cache=True, nogil=True, parallel=True)
def _scatter_full(cols, kh, kw, s, h, w, full):
    n, oc, fh, fw = full.shape
    for ch in prange(oc):
        off = ch * kh * kw
        for b in range(n):
            for i in range(h):
                for j in range(w):
                    base = (b * h + i) * w + j
                    for ki in range(kh):
                        dst = full[b, ch, i * s + ki]
                        for kj in range(kw):
                            dst[j * s + kj] += cols[base, off + ki * kw + kj]


@njit(cache=True, nogil=True, parallel=True)
def _gather_full(dfull, kh, kw, s, h, w, dcols):
    n, oc, fh, fw = dfull.shape
    for row in prange(n * h):
        b = row // h
        i = row % h
        for j in range(w):
            base = row * w + j
            for ch in range(oc):
                off = ch * kh * kw
                for ki in range(kh):
                    src = dfull[b, ch, i * s + ki]
                    for kj in range(kw):
                        dcols[base, off + ki * kw + kj] = src[j * s + kj]


@njit(cache=True, nogil=True, parallel=True)
def _nhwc_to_nchw(src, dst):
    n, oh, ow, oc = src.shape
    for b in prange(n):
        for ch in range(oc):
            for i in range(oh):
                for j in range(ow):
                    dst[b, ch, i, j] = src[b, i, j, ch]


@njit(cache=True, nogil=True, parallel=True)
def _nchw_to_nhwc(src, dst):
    n, oc, oh, ow = src.shape
    for b in prange(n):
        for ch in range(oc):
            for i in range(oh):
                for j in range(ow):
                    dst[b, i, j, ch] = src[b, ch, i, j]


def conv2d(x, weight, bias, stride=1):
    """Strided 2-D convolution with same padding.

    ``x`` is (N, C, H, W) or (C, H, W); ``weight`` is (outC, inC, k, k).
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise ShapeError(f"conv2d input must be rank 3 or 4, got shape {x.data.shape}")
    oc, ic, kh, kw = weight.data.shape
    n, c, h, w = xd.shape
    if c != ic:
        raise ShapeError(f"conv2d input channels {xd.shape} do not match kernel {weight.data.shape}")
    oh, ph0, ph1 = _same_pad(h, kh, stride)
    ow, pw0, pw1 = _same_pad(w, kw, stride)
    xp = np.pad(xd, ((0, 0), (0, 0), (ph0, ph1), (pw0, pw1)))
    cols = np.empty((n * oh * ow, ic * kh * kw), dtype=xd.dtype)
    _im2col(xp, kh, kw, stride, stride, oh, ow, cols)
    wmat = weight.data.reshape(oc, ic * kh * kw)
    out = cols @ wmat.T
    out += bias.data[None, :]
    out_data = np.empty((n, oc, oh, ow), dtype=xd.dtype)
    _nhwc_to_nchw(out.reshape(n, oh, ow, oc), out_data)
    if squeeze:
        out_data = out_data[0]

    def backward(dout):
        d = dout[None] if squeeze else dout
        dmat = np.empty((n, oh, ow, oc), dtype=d.dtype)
        _nchw_to_nhwc(np.ascontiguousarray(d), dmat)
        dmat = dmat.reshape(n * oh * ow, oc)
        _accum(bias, dmat.sum(axis=0))
        _accum(weight, (dmat.T @ cols).reshape(weight.data.shape))
        if x.requires_grad:
            dcols = dmat @ wmat
            dxp = np.zeros_like(xp)
            _col2im(dcols, kh, kw, stride, stride, oh, ow, dxp)
            dx = dxp[:, :, ph0 : ph0 + h, pw0 : pw0 + w]
            _accum(x, dx[0] if squeeze else dx)

    return _make(out_data, (x, weight, bias), backward)


def conv_transpose2d(x, weight, bias, stride=1):
    """Transposed convolution upsampling by ``stride`` (inverse of conv2d's
    same-padded shape map). ``weight`` is (outC, inC, k, k) with inC matching
    the input; kernel must be >= stride.
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    oc, ic, kh, kw = weight.data.shape
    if kh < stride or kw < stride:
        raise ShapeError(f"transposed conv kernel {kh}x{kw} smaller than stride {stride}")
    n, c, h, w = xd.shape
    if c != ic:
        raise ShapeError(f"transposed conv input channels {xd.shape} do not match kernel {weight.data.shape}")
    oh, ow = h * stride, w * stride
    fh, fw = (h - 1) * stride + kh, (w - 1) * stride + kw
    ch0, cw0 = (kh - stride) // 2, (kw - stride) // 2
    xm = np.empty((n, h, w, ic), dtype=xd.dtype)
    _nchw_to_nhwc(np.ascontiguousarray(xd), xm)
    xm = xm.reshape(n * h * w, ic)
    wmat = weight.data.transpose(1, 0, 2, 3).reshape(ic, oc * kh * kw)
    cols = xm @ wmat
    full = np.zeros((n, oc, fh, fw), dtype=xd.dtype)
    _scatter_full(cols, kh, kw, stride, h, w, full)
    out_data = full[:, :, ch0 : ch0 + oh, cw0 : cw0 + ow].copy()
    out_data += bias.data[None, :, None, None]
    if squeeze:
        out_data = out_data[0]

    def backward(dout):
        d = dout[None] if squeeze else dout
        _accum(bias, d.sum(axis=(0, 2, 3)))
        dfull = np.zeros((n, oc, fh, fw), dtype=d.dtype)
        dfull[:, :, ch0 : ch0 + oh, cw0 : cw0 + ow] = d
        dcols = np.empty((n * h * w, oc * kh * kw), dtype=d.dtype)
        _gather_full(dfull, kh, kw, stride, h, w, dcols)
        _accum(weight, (xm.T @ dcols).reshape(ic, oc, kh, kw).transpose(1, 0, 2, 3))
        if x.requires_grad:
            dxm = dcols @ wmat.T
            dx = np.empty((n, ic, h, w), dtype=d.dtype)
            _nhwc_to_nchw(np.ascontiguousarray(dxm.reshape(n, h, w, ic)), dx)
            _accum(x, dx[0] if squeeze else dx)

    return _make(out_data, (x, weight, bias), backward)


def batch_norm_train(x, gamma, beta, eps=1e-5):
    """Batch normalization over (N, H, W) per channel using batch statistics.

    Returns ``(out, batch_mean, batch_var)``; the caller owns the running
    statistics update. Requires batch size >= 2.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    xd = x.data
    if xd.ndim != 4:
        raise ShapeError(f"batch norm expects (N, C, H, W), got {xd.shape}")
    if xd.shape[0] < 2:
        raise ShapeError(f"batch norm in training mode needs batch size >= 2, got {xd.shape[0]} (variance undefined)")
    axes = (0, 2, 3)
    m = xd.shape[0] * xd.shape[2] * xd.shape[3]
    mean = xd.mean(axis=axes)
    xc = xd - mean[None, :, None, None]
    var = np.mean(xc * xc, axis=axes)
    istd = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = xc * istd[None, :, None, None]
    out_data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(dout):
        _accum(gamma, (dout * xhat).sum(axis=axes))
        _accum(beta, dout.sum(axis=axes))
        if x.requires_grad:
            dxhat = dout * gamma.data[None, :, None, None]
            t1 = dxhat.sum(axis=axes, keepdims=True)
            t2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
            dx = (istd[None, :, None, None] / m) * (m * dxhat - t1 - xhat * t2)
            _accum(x, dx.astype(xd.dtype, copy=False))

    return _make(out_data, (x, gamma, beta), backward), mean, var


def batch_norm_infer(x, gamma, beta, running_mean, running_var, eps=1e-5):
    """Batch normalization using fixed running statistics."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if np.any(running_var <= 0):
        raise ValueError("running variance must be strictly positive")
    inv = (1.0 / np.sqrt(running_var + eps)).astype(xd.dtype)
    scale = (gamma.data * inv)[None, :, None, None]
    shift = (beta.data - running_mean.astype(xd.dtype) * gamma.data * inv)[None, :, None, None]
    out_data = xd * scale + shift
    if squeeze:
        out_data = out_data[0]

    def backward(dout):
        d = dout[None] if squeeze else dout
        xhat = (xd - running_mean[None, :, None, None].astype(xd.dtype)) * inv[None, :, None, None]
        _accum(gamma, (d * xhat).sum(axis=(0, 2, 3)))
        _accum(beta, d.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dx = d * scale
            _accum(x, dx[0] if squeeze else dx)

    return _make(out_data, (x, gamma, beta), backward)


def linear(x, weight, bias):
    """Fully connected layer: ``x @ weight.T + bias`` with (out, in) weights."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    xd = x.data
    if xd.ndim != 2:
        raise ShapeError(f"fully connected input must be (N, D), got {xd.shape}")
    if xd.shape[1] != weight.data.shape[1]:
        raise ShapeError(f"fully connected input {xd.shape} does not match weight {weight.data.shape}")
    out_data = xd @ weight.data.T + bias.data[None, :]

    def backward(dout):
        _accum(weight, dout.T @ xd)
        _accum(bias, dout.sum(axis=0))
        if x.requires_grad:
            _accum(x, dout @ weight.data)

    return _make(out_data, (x, weight, bias), backward)


def global_avg_pool(x):
    """(N, C, H, W) -> (N, C) spatial mean."""
    x = as_tensor(x)
    n, c, h, w = x.data.shape

    def backward(dout):
        _accum(x, np.broadcast_to(dout[:, :, None, None] / (h * w), x.data.shape).astype(x.data.dtype))

    return _make(x.data.mean(axis=(2, 3)), (x,), backward)


def upsample_nearest(x, factor):
    """Nearest-neighbor upsampling of (N, C, H, W) by an integer factor."""
    x = as_tensor(x)
    if factor == 1:
        return x
    xd = x.data
    n, c, h, w = xd.shape
    out_data = np.repeat(np.repeat(xd, factor, axis=2), factor, axis=3)

    def backward(dout):
        g = dout.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5))
        _accum(x, g)

    return _make(out_data, (x,), backward)
