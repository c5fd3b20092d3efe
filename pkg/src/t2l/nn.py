"""Minimal NumPy layer library with hand-written backward passes.

Trainable layers bind named parameter blocks to a single flat vector
(ParamStore) so the optimizer and the finite-difference gradient checker can
address every weight by flat index. Frozen transformer backbones use the
stateless functional blocks at the bottom of the module; their backward
passes propagate input gradients only, since frozen weights never receive
updates.

Shape conventions: convolutional activations are (N, C, L); fully-connected
activations are (N, F); transformer activations are (N, T, D).
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import InvalidArgumentError, ShapeError


class ParamStore:
    """Named parameter blocks backed by one flat vector plus a flat gradient."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._specs = []  # (name, shape, init, fan_in)
        self._offsets = {}
        self.flat = None
        self.grad = None

    def declare(self, name, shape, init, fan_in=None):
        if self.flat is not None:
            raise RuntimeError("store already finalized")
        if any(n == name for n, _, _, _ in self._specs):
            raise ValueError(f"duplicate parameter {name}")
        self._specs.append((name, tuple(shape), init, fan_in))
        return name

    def finalize(self, seed):
        """Allocate and initialize the flat vector in declaration order."""
        total = sum(int(np.prod(s)) for _, s, _, _ in self._specs)
        self.flat = np.zeros(total, dtype=self.dtype)
        self.grad = np.zeros(total, dtype=self.dtype)
        rng = np.random.default_rng(seed)
        offset = 0
        for name, shape, init, fan_in in self._specs:
            size = int(np.prod(shape))
            self._offsets[name] = (offset, shape)
            block = self.flat[offset:offset + size]
            if init == "zeros":
                pass
            elif init == "ones":
                block[:] = 1.0
            elif init == "fan_in":
                bound = 1.0 / np.sqrt(fan_in)
                block[:] = rng.uniform(-bound, bound, size=size)
            else:
                raise ValueError(f"unknown init {init}")
            offset += size

    def view(self, name):
        offset, shape = self._offsets[name]
        return self.flat[offset:offset + int(np.prod(shape))].reshape(shape)

    def gview(self, name):
        offset, shape = self._offsets[name]
        return self.grad[offset:offset + int(np.prod(shape))].reshape(shape)

    def slot(self, name):
        """(start, end) of a named block inside the flat vector."""
        offset, shape = self._offsets[name]
        return offset, offset + int(np.prod(shape))

    def zero_grad(self):
        self.grad[:] = 0.0

    @property
    def size(self):
        return 0 if self.flat is None else self.flat.size

    def block_names(self):
        return [name for name, _, _, _ in self._specs]


class StateStore:
    """Non-trainable state (BN running statistics) in one flat vector."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._specs = []
        self._offsets = {}
        self.flat = None

    def declare(self, name, shape, fill):
        self._specs.append((name, tuple(shape), fill))
        return name

    def finalize(self):
        total = sum(int(np.prod(s)) for _, s, _ in self._specs)
        self.flat = np.zeros(total, dtype=self.dtype)
        offset = 0
        for name, shape, fill in self._specs:
            size = int(np.prod(shape))
            self._offsets[name] = (offset, shape)
            self.flat[offset:offset + size] = fill
            offset += size

    def view(self, name):
        offset, shape = self._offsets[name]
        return self.flat[offset:offset + int(np.prod(shape))].reshape(shape)


# ---------------------------------------------------------------------------
# trainable layers
# ---------------------------------------------------------------------------

class Conv1d:
    def __init__(self, store, name, c_in, c_out, ksize, stride=1, pad=0):
        self.c_in, self.c_out = c_in, c_out
        self.ksize, self.stride, self.pad = ksize, stride, pad
        self.store = store
        self.w = store.declare(f"{name}.w", (c_out, c_in * ksize), "fan_in", c_in * ksize)
        self.b = store.declare(f"{name}.b", (c_out,), "zeros")
        self._cache = None

    def out_len(self, length):
        return _kernels.conv_out_len(length, self.ksize, self.stride, self.pad)

    def forward(self, x):
        if x.shape[1] != self.c_in:
            raise ShapeError(f"conv expects {self.c_in} channels, got {x.shape[1]}")
        cols = _kernels.im2col1d(x, self.ksize, self.stride, self.pad)
        w = self.store.view(self.w)
        y = np.matmul(w, cols) + self.store.view(self.b)[:, None]
        self._cache = (cols, x.shape[2])
        return y

    def backward(self, dy):
        cols, length = self._cache
        w = self.store.view(self.w)
        self.store.gview(self.w)[:] += np.tensordot(dy, cols, axes=([0, 2], [0, 2]))
        self.store.gview(self.b)[:] += dy.sum(axis=(0, 2))
        dcols = np.matmul(w.T, dy)
        return _kernels.col2im1d(dcols, length, self.ksize, self.stride, self.pad)


class Linear:
    def __init__(self, store, name, f_in, f_out):
        self.f_in, self.f_out = f_in, f_out
        self.store = store
        self.w = store.declare(f"{name}.w", (f_out, f_in), "fan_in", f_in)
        self.b = store.declare(f"{name}.b", (f_out,), "zeros")
        self._cache = None

    def forward(self, x):
        if x.shape[1] != self.f_in:
            raise ShapeError(f"linear expects width {self.f_in}, got {x.shape[1]}")
        self._cache = x
        return x @ self.store.view(self.w).T + self.store.view(self.b)

    def backward(self, dy):
        x = self._cache
        self.store.gview(self.w)[:] += dy.T @ x
        self.store.gview(self.b)[:] += dy.sum(axis=0)
        return dy @ self.store.view(self.w)


class BatchNorm:
    """Batch normalization over (N, L) for conv maps or (N,) for FC features.

    Training mode normalizes with biased batch statistics and updates the
    running estimates; eval mode normalizes with the stored running
    statistics, which also makes backward treat them as constants (the mode
    the gradient checker uses).
    """

    def __init__(self, store, state, name, channels, axis="conv", momentum=0.1, eps=1e-5):
        self.channels = channels
        self.axis = axis
        self.momentum = momentum
        self.eps = eps
        self.store = store
        self.state = state
        self.gamma = store.declare(f"{name}.gamma", (channels,), "ones")
        self.beta = store.declare(f"{name}.beta", (channels,), "zeros")
        self.run_mean = state.declare(f"{name}.run_mean", (channels,), 0.0)
        self.run_var = state.declare(f"{name}.run_var", (channels,), 1.0)
        self._cache = None

    def _axes(self):
        return (0, 2) if self.axis == "conv" else (0,)

    def _shape(self, v):
        return v[None, :, None] if self.axis == "conv" else v[None, :]

    def forward(self, x, train):
        axes = self._axes()
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            rm = self.state.view(self.run_mean)
            rv = self.state.view(self.run_var)
            rm[:] = (1 - self.momentum) * rm + self.momentum * mean
            rv[:] = (1 - self.momentum) * rv + self.momentum * var
        else:
            mean = self.state.view(self.run_mean).copy()
            var = self.state.view(self.run_var).copy()
        invstd = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._shape(mean)) * self._shape(invstd)
        self._cache = (xhat, invstd, train, x.shape)
        return self._shape(self.store.view(self.gamma)) * xhat + self._shape(
            self.store.view(self.beta)
        )

    def backward(self, dy):
        xhat, invstd, train, shape = self._cache
        axes = self._axes()
        count = shape[0] * (shape[2] if self.axis == "conv" else 1)
        self.store.gview(self.gamma)[:] += (dy * xhat).sum(axis=axes)
        self.store.gview(self.beta)[:] += dy.sum(axis=axes)
        g = self._shape(self.store.view(self.gamma) * invstd)
        if not train:
            return dy * g
        dxhat_sum = self._shape(dy.sum(axis=axes))
        proj = self._shape((dy * xhat).sum(axis=axes))
        return g * (dy - dxhat_sum / count - xhat * proj / count)


class ReLU:
    def __init__(self):
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class Dropout:
    def __init__(self, rate):
        self.rate = rate
        self._mask = None

    def forward(self, x, train, rng=None):
        if not train or self.rate <= 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, dy):
        if self._mask is None:
            return dy
        return dy * self._mask


class MaxPool2:
    """Max pooling with kernel 2, stride 2 (odd tail position dropped)."""

    def __init__(self):
        self._cache = None

    @staticmethod
    def out_len(length):
        return length // 2

    def forward(self, x):
        y, arg = _kernels.maxpool2_fwd(x)
        self._cache = (arg, x.shape[2])
        return y

    def backward(self, dy):
        arg, length = self._cache
        return _kernels.maxpool2_bwd(dy, arg, length)


class AdaptiveAvgPool:
    def __init__(self, out_len):
        self.out = out_len
        self._in_len = None

    def forward(self, x):
        self._in_len = x.shape[2]
        return _kernels.adaptive_avgpool_fwd(x, self.out)

    def backward(self, dy):
        return _kernels.adaptive_avgpool_bwd(dy, self._in_len)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def cross_entropy_forward(logits, labels):
    """Mean negative log-likelihood with log-sum-exp stabilization."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or logits.shape[0] != labels.shape[0]:
        raise ShapeError("labels must be a vector matching the batch size")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise InvalidArgumentError("label outside the class range")
    logp = log_softmax(logits)
    loss = -float(logp[np.arange(labels.shape[0]), labels].mean())
    return loss, np.exp(logp)


def cross_entropy_backward(probs, labels):
    n = probs.shape[0]
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return grad / n


# ---------------------------------------------------------------------------
# functional pieces for the frozen transformer backbones
# ---------------------------------------------------------------------------

def layer_norm_f(x, gamma, beta, eps=1e-5):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * invstd
    return gamma * xhat + beta, (xhat, invstd, gamma)


def layer_norm_b(dy, cache):
    xhat, invstd, gamma = cache
    d = dy * gamma
    m = xhat.shape[-1]
    return invstd * (d - d.mean(axis=-1, keepdims=True)
                     - xhat * (d * xhat).mean(axis=-1, keepdims=True)), None


_GELU_C = 0.7978845608028654  # sqrt(2 / pi)
_GELU_A = 0.044715


def gelu_f(x):
    u = _GELU_C * (x + _GELU_A * (x * x * x))  # x**3 hits scalar libm, x*x*x is SIMD
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), (x, t)


def gelu_b(dy, cache):
    x, t = cache
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def rope_tables(max_positions, head_dim, dtype=np.float64, base=10000.0):
    """cos/sin tables (max_positions, head_dim // 2) for rotary mixing."""
    half = head_dim // 2
    freqs = base ** (-np.arange(half, dtype=np.float64) / half)
    angles = np.arange(max_positions, dtype=np.float64)[:, None] * freqs[None, :]
    return np.cos(angles).astype(dtype), np.sin(angles).astype(dtype)


def rope_apply(x, cos, sin):
    """Rotate adjacent feature pairs of (N, H, T, Dh) by position angles."""
    t = x.shape[2]
    xp = x.reshape(x.shape[:-1] + (-1, 2))
    x1, x2 = xp[..., 0], xp[..., 1]
    c = cos[:t][None, None, :, :]
    s = sin[:t][None, None, :, :]
    out = np.empty_like(xp)
    out[..., 0] = x1 * c - x2 * s
    out[..., 1] = x1 * s + x2 * c
    return out.reshape(x.shape)


def rope_unapply(g, cos, sin):
    """Adjoint of rope_apply (rotation by the negated angles)."""
    t = g.shape[2]
    gp = g.reshape(g.shape[:-1] + (-1, 2))
    g1, g2 = gp[..., 0], gp[..., 1]
    c = cos[:t][None, None, :, :]
    s = sin[:t][None, None, :, :]
    out = np.empty_like(gp)
    out[..., 0] = g1 * c + g2 * s
    out[..., 1] = -g1 * s + g2 * c
    return out.reshape(g.shape)


NEG_INF = -1e30

_CAUSAL_MASKS = {}


def _causal_mask(t, dtype):
    key = (t, np.dtype(dtype).str)
    mask = _CAUSAL_MASKS.get(key)
    if mask is None:
        mask = np.triu(np.full((t, t), NEG_INF, dtype=dtype), k=1)
        _CAUSAL_MASKS[key] = mask
    return mask


def _split_heads(x, heads):
    n, t, d = x.shape
    return x.reshape(n, t, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    n, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(n, t, h * dh)


def attention_f(x, wq, wk, wv, wo, heads, causal, rope=None, key_mask=None):
    """Multi-head self-attention (bias-free). Returns output and cache."""
    q = _split_heads(x @ wq, heads)
    k = _split_heads(x @ wk, heads)
    v = _split_heads(x @ wv, heads)
    if rope is not None:
        cos, sin = rope
        q = rope_apply(q, cos, sin)
        k = rope_apply(k, cos, sin)
    dh = q.shape[-1]
    scale = 1.0 / np.sqrt(dh)
    scores = np.matmul(q, k.transpose(0, 1, 3, 2)) * scale
    t = x.shape[1]
    if causal:
        scores = scores + _causal_mask(t, x.dtype)
    if key_mask is not None:
        scores = scores + np.where(key_mask[:, None, None, :], NEG_INF, 0.0).astype(x.dtype)
    scores -= scores.max(axis=-1, keepdims=True)
    probs = np.exp(scores)
    probs /= probs.sum(axis=-1, keepdims=True)
    ctx = np.matmul(probs, v)
    y = _merge_heads(ctx) @ wo
    cache = (x, q, k, v, probs, wq, wk, wv, wo, heads, rope, scale)
    return y, cache


def attention_b(dy, cache):
    x, q, k, v, probs, wq, wk, wv, wo, heads, rope, scale = cache
    dctx = _split_heads(dy @ wo.T, heads)
    dprobs = np.matmul(dctx, v.transpose(0, 1, 3, 2))
    dv = np.matmul(probs.transpose(0, 1, 3, 2), dctx)
    dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
    dscores *= scale
    dq = np.matmul(dscores, k)
    dk = np.matmul(dscores.transpose(0, 1, 3, 2), q)
    if rope is not None:
        cos, sin = rope
        dq = rope_unapply(dq, cos, sin)
        dk = rope_unapply(dk, cos, sin)
    dx = _merge_heads(dq) @ wq.T
    dx += _merge_heads(dk) @ wk.T
    dx += _merge_heads(dv) @ wv.T
    return dx


def block_f(x, w, heads, causal, rope=None, key_mask=None):
    """Pre-LN transformer block: x + attn(LN(x)), then h + mlp(LN(h))."""
    h1, ln1_cache = layer_norm_f(x, w["ln1_g"], w["ln1_b"])
    att, att_cache = attention_f(
        h1, w["wq"], w["wk"], w["wv"], w["wo"], heads, causal, rope, key_mask
    )
    h = x + att
    h2, ln2_cache = layer_norm_f(h, w["ln2_g"], w["ln2_b"])
    m1 = h2 @ w["w1"]
    g, gelu_cache = gelu_f(m1)
    y = h + g @ w["w2"]
    return y, (ln1_cache, att_cache, ln2_cache, gelu_cache, h2, g, w)


def block_b(dy, cache):
    ln1_cache, att_cache, ln2_cache, gelu_cache, h2, g, w = cache
    dg = dy @ w["w2"].T
    dm1 = gelu_b(dg, gelu_cache)
    dh2 = dm1 @ w["w1"].T
    dh, _ = layer_norm_b(dh2, ln2_cache)
    dh += dy
    datt = attention_b(dh, att_cache)
    dx, _ = layer_norm_b(datt, ln1_cache)
    dx += dh
    return dx
