"""Hot numeric kernels: numba-jitted versions with pure-NumPy fallbacks.

Backend selection is controlled by the ``T2L_NUMBA`` environment variable,
read once at import time:

* unset or ``auto``: use numba when importable, NumPy otherwise
* ``0`` / ``off`` / ``false``: force the NumPy path
* ``1`` / ``on`` / ``true``: require numba, raise if missing

Both variants of every kernel are importable directly (``*_numpy`` /
``*_numba``) so tests and benchmarks can compare them; the unsuffixed names
are the dispatched entry points the rest of the package uses.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("T2L_NUMBA", "auto").strip().lower()

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False
    if _FLAG in ("1", "on", "true"):
        raise ImportError("T2L_NUMBA=1 requires numba to be installed")

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("0", "off", "false")

# Kernel-kind ids shared with synthgen (white noise and linear are handled
# outside the stationary evaluator).
KIND_CONSTANT = 0
KIND_RBF = 1
KIND_RATQUAD = 2
KIND_PERIODIC = 3


# ---------------------------------------------------------------------------
# stationary kernel evaluation on |a - b| arrays
# ---------------------------------------------------------------------------

def stationary_kernel_numpy(kind, p0, p1, d):
    """Evaluate a stationary kernel on an array of absolute distances.

    Parameter layout: constant -> (variance, _), rbf -> (length_scale, _),
    rational quadratic -> (length_scale, alpha),
    periodic -> (length_scale, period).
    """
    if kind == KIND_CONSTANT:
        return np.full_like(d, p0)
    if kind == KIND_RBF:
        return np.exp(-(d * d) / (2.0 * p0 * p0))
    if kind == KIND_RATQUAD:
        return (1.0 + (d * d) / (2.0 * p1 * p0 * p0)) ** (-p1)
    if kind == KIND_PERIODIC:
        s = np.sin(np.pi * d / p1)
        return np.exp(-2.0 * s * s / (p0 * p0))
    raise ValueError(f"unknown stationary kernel kind {kind}")


if HAVE_NUMBA:

    @njit(cache=True)
    def _stationary_kernel_flat(kind, p0, p1, d, out):
        n = d.size
        if kind == KIND_CONSTANT:
            for i in range(n):
                out[i] = p0
        elif kind == KIND_RBF:
            for i in range(n):
                out[i] = np.exp(-(d[i] * d[i]) / (2.0 * p0 * p0))
        elif kind == KIND_RATQUAD:
            for i in range(n):
                out[i] = (1.0 + (d[i] * d[i]) / (2.0 * p1 * p0 * p0)) ** (-p1)
        else:
            for i in range(n):
                s = np.sin(np.pi * d[i] / p1)
                out[i] = np.exp(-2.0 * s * s / (p0 * p0))

    def stationary_kernel_numba(kind, p0, p1, d):
        d = np.ascontiguousarray(d, dtype=np.float64)
        out = np.empty(d.size, dtype=np.float64)
        _stationary_kernel_flat(int(kind), float(p0), float(p1), d.ravel(), out)
        return out.reshape(d.shape)


# ---------------------------------------------------------------------------
# symmetric Toeplitz expansion: K[i, j] = v[|i - j|]
# ---------------------------------------------------------------------------

def toeplitz_from_lags_numpy(v):
    n = v.shape[0]
    idx = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :])
    return v[idx]


if HAVE_NUMBA:

    @njit(cache=True)
    def _toeplitz_fill(v, out):
        n = v.shape[0]
        for i in range(n):
            for j in range(n):
                out[i, j] = v[abs(i - j)]

    def toeplitz_from_lags_numba(v):
        v = np.ascontiguousarray(v, dtype=np.float64)
        out = np.empty((v.shape[0], v.shape[0]), dtype=np.float64)
        _toeplitz_fill(v, out)
        return out


# ---------------------------------------------------------------------------
# 1-D convolution im2col / col2im
# ---------------------------------------------------------------------------

def conv_out_len(length, ksize, stride, pad):
    return (length + 2 * pad - ksize) // stride + 1


def im2col1d_numpy(x, ksize, stride, pad):
    """(N, C, L) -> (N, C * ksize, L_out) patch matrix."""
    n, c, length = x.shape
    lout = conv_out_len(length, ksize, stride, pad)
    if pad > 0:
        xp = np.zeros((n, c, length + 2 * pad), dtype=x.dtype)
        xp[:, :, pad:pad + length] = x
    else:
        xp = x
    cols = np.empty((n, c, ksize, lout), dtype=x.dtype)
    for k in range(ksize):
        cols[:, :, k, :] = xp[:, :, k:k + stride * lout:stride]
    return cols.reshape(n, c * ksize, lout)


def col2im1d_numpy(cols, length, ksize, stride, pad):
    """Adjoint of im2col1d: scatter patch gradients back to (N, C, L)."""
    n, ck, lout = cols.shape
    c = ck // ksize
    cols = cols.reshape(n, c, ksize, lout)
    xp = np.zeros((n, c, length + 2 * pad), dtype=cols.dtype)
    for k in range(ksize):
        xp[:, :, k:k + stride * lout:stride] += cols[:, :, k, :]
    if pad > 0:
        return xp[:, :, pad:pad + length]
    return xp


if HAVE_NUMBA:

    @njit(cache=True)
    def _im2col_fill(xp, cols, ksize, stride, lout):
        n, c, _ = xp.shape
        for b in range(n):
            for ch in range(c):
                for k in range(ksize):
                    row = ch * ksize + k
                    for t in range(lout):
                        cols[b, row, t] = xp[b, ch, k + stride * t]

    def im2col1d_numba(x, ksize, stride, pad):
        n, c, length = x.shape
        lout = conv_out_len(length, ksize, stride, pad)
        if pad > 0:
            xp = np.zeros((n, c, length + 2 * pad), dtype=x.dtype)
            xp[:, :, pad:pad + length] = x
        else:
            xp = np.ascontiguousarray(x)
        cols = np.empty((n, c * ksize, lout), dtype=x.dtype)
        _im2col_fill(xp, cols, ksize, stride, lout)
        return cols

    @njit(cache=True)
    def _col2im_fill(cols, xp, ksize, stride, lout):
        n, ck, _ = cols.shape
        c = ck // ksize
        for b in range(n):
            for ch in range(c):
                for k in range(ksize):
                    row = ch * ksize + k
                    for t in range(lout):
                        xp[b, ch, k + stride * t] += cols[b, row, t]

    def col2im1d_numba(cols, length, ksize, stride, pad):
        n, ck, lout = cols.shape
        c = ck // ksize
        xp = np.zeros((n, c, length + 2 * pad), dtype=cols.dtype)
        _col2im_fill(np.ascontiguousarray(cols), xp, ksize, stride, lout)
        if pad > 0:
            return np.ascontiguousarray(xp[:, :, pad:pad + length])
        return xp


# ---------------------------------------------------------------------------
# max pooling, kernel 2 stride 2 (the only pooling the encoder uses)
# ---------------------------------------------------------------------------

def maxpool2_fwd_numpy(x):
    n, c, length = x.shape
    lout = length // 2
    pairs = x[:, :, :2 * lout].reshape(n, c, lout, 2)
    arg = pairs.argmax(axis=3)
    y = np.take_along_axis(pairs, arg[..., None], axis=3)[..., 0]
    return y, arg.astype(np.int8)


def maxpool2_bwd_numpy(dy, arg, length):
    n, c, lout = dy.shape
    dpairs = np.zeros((n, c, lout, 2), dtype=dy.dtype)
    np.put_along_axis(dpairs, arg[..., None].astype(np.int64), dy[..., None], axis=3)
    dx = np.zeros((n, c, length), dtype=dy.dtype)
    dx[:, :, :2 * lout] = dpairs.reshape(n, c, 2 * lout)
    return dx


if HAVE_NUMBA:

    @njit(cache=True)
    def _maxpool2_fwd(x, y, arg):
        n, c, lout = y.shape
        for b in range(n):
            for ch in range(c):
                for t in range(lout):
                    a = x[b, ch, 2 * t]
                    bb = x[b, ch, 2 * t + 1]
                    if bb > a:
                        y[b, ch, t] = bb
                        arg[b, ch, t] = 1
                    else:
                        y[b, ch, t] = a
                        arg[b, ch, t] = 0

    def maxpool2_fwd_numba(x):
        n, c, length = x.shape
        lout = length // 2
        y = np.empty((n, c, lout), dtype=x.dtype)
        arg = np.empty((n, c, lout), dtype=np.int8)
        _maxpool2_fwd(np.ascontiguousarray(x), y, arg)
        return y, arg

    @njit(cache=True)
    def _maxpool2_bwd(dy, arg, dx):
        n, c, lout = dy.shape
        for b in range(n):
            for ch in range(c):
                for t in range(lout):
                    dx[b, ch, 2 * t + arg[b, ch, t]] = dy[b, ch, t]

    def maxpool2_bwd_numba(dy, arg, length):
        n, c, lout = dy.shape
        dx = np.zeros((n, c, length), dtype=dy.dtype)
        _maxpool2_bwd(np.ascontiguousarray(dy), arg, dx)
        return dx


# ---------------------------------------------------------------------------
# adaptive average pooling (handles both down- and up-sampling)
# ---------------------------------------------------------------------------

def adaptive_window(j, lin, lout):
    """Input window [start, end) feeding output position j."""
    start = (j * lin) // lout
    end = -((-(j + 1) * lin) // lout)  # ceil((j + 1) * lin / lout)
    return start, max(end, start + 1)


def adaptive_avgpool_fwd_numpy(x, lout):
    n, c, lin = x.shape
    y = np.empty((n, c, lout), dtype=x.dtype)
    for j in range(lout):
        s, e = adaptive_window(j, lin, lout)
        y[:, :, j] = x[:, :, s:e].mean(axis=2)
    return y


def adaptive_avgpool_bwd_numpy(dy, lin):
    n, c, lout = dy.shape
    dx = np.zeros((n, c, lin), dtype=dy.dtype)
    for j in range(lout):
        s, e = adaptive_window(j, lin, lout)
        dx[:, :, s:e] += (dy[:, :, j] / (e - s))[..., None]
    return dx


if HAVE_NUMBA:

    @njit(cache=True)
    def _adaptive_fwd(x, y, lin, lout):
        n, c, _ = x.shape
        for j in range(lout):
            s = (j * lin) // lout
            e = -((-(j + 1) * lin) // lout)
            if e <= s:
                e = s + 1
            w = e - s
            for b in range(n):
                for ch in range(c):
                    acc = 0.0
                    for t in range(s, e):
                        acc += x[b, ch, t]
                    y[b, ch, j] = acc / w

    def adaptive_avgpool_fwd_numba(x, lout):
        n, c, lin = x.shape
        y = np.empty((n, c, lout), dtype=x.dtype)
        _adaptive_fwd(np.ascontiguousarray(x), y, lin, lout)
        return y

    @njit(cache=True)
    def _adaptive_bwd(dy, dx, lin, lout):
        n, c, _ = dy.shape
        for j in range(lout):
            s = (j * lin) // lout
            e = -((-(j + 1) * lin) // lout)
            if e <= s:
                e = s + 1
            w = e - s
            for b in range(n):
                for ch in range(c):
                    g = dy[b, ch, j] / w
                    for t in range(s, e):
                        dx[b, ch, t] += g

    def adaptive_avgpool_bwd_numba(dy, lin):
        n, c, lout = dy.shape
        dx = np.zeros((n, c, lin), dtype=dy.dtype)
        _adaptive_bwd(np.ascontiguousarray(dy), dx, lin, lout)
        return dx


# ---------------------------------------------------------------------------
# uniform-bin quantization
# ---------------------------------------------------------------------------

def quantize_bins_numpy(scaled, clip_limit, n_bins):
    v = np.clip(scaled, -clip_limit, clip_limit)
    ids = np.floor((v + clip_limit) / (2.0 * clip_limit) * n_bins).astype(np.int64)
    return np.minimum(ids, n_bins - 1)


if HAVE_NUMBA:

    @njit(cache=True)
    def _quantize(scaled, clip_limit, n_bins, out):
        for i in range(scaled.size):
            v = scaled[i]
            if v < -clip_limit:
                v = -clip_limit
            elif v > clip_limit:
                v = clip_limit
            b = int(np.floor((v + clip_limit) / (2.0 * clip_limit) * n_bins))
            if b > n_bins - 1:
                b = n_bins - 1
            out[i] = b

    def quantize_bins_numba(scaled, clip_limit, n_bins):
        scaled = np.ascontiguousarray(scaled, dtype=np.float64)
        out = np.empty(scaled.size, dtype=np.int64)
        _quantize(scaled.ravel(), float(clip_limit), int(n_bins), out)
        return out.reshape(scaled.shape)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if USE_NUMBA:
    stationary_kernel = stationary_kernel_numba
    toeplitz_from_lags = toeplitz_from_lags_numba
    im2col1d = im2col1d_numba
    col2im1d = col2im1d_numba
    maxpool2_fwd = maxpool2_fwd_numba
    maxpool2_bwd = maxpool2_bwd_numba
    adaptive_avgpool_fwd = adaptive_avgpool_fwd_numba
    adaptive_avgpool_bwd = adaptive_avgpool_bwd_numba
    quantize_bins = quantize_bins_numba
else:
    stationary_kernel = stationary_kernel_numpy
    toeplitz_from_lags = toeplitz_from_lags_numpy
    im2col1d = im2col1d_numpy
    col2im1d = col2im1d_numpy
    maxpool2_fwd = maxpool2_fwd_numpy
    maxpool2_bwd = maxpool2_bwd_numpy
    adaptive_avgpool_fwd = adaptive_avgpool_fwd_numpy
    adaptive_avgpool_bwd = adaptive_avgpool_bwd_numpy
    quantize_bins = quantize_bins_numpy

DUAL_KERNELS = [
    "stationary_kernel",
    "toeplitz_from_lags",
    "im2col1d",
    "col2im1d",
    "maxpool2_fwd",
    "maxpool2_bwd",
    "adaptive_avgpool_fwd",
    "adaptive_avgpool_bwd",
    "quantize_bins",
]
