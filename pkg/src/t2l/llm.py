"""Frozen causal language-model backbone fed at the embedding level.

The decoder stack accepts continuous embedding sequences directly (no token
ids, no tokenizer) and returns last-layer hidden states. Weights derive
deterministically from the init seed and never change; training-time
backward through the stack propagates input gradients only.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .errors import CapacityError, InvalidArgumentError, ShapeError

WEIGHT_SCALE = 0.02


@dataclass(frozen=True)
class LlmConfig:
    hidden: int = 2048
    layers: int = 2
    heads: int = 16
    ff_dim: int = 8192
    max_positions: int = 256
    init_seed: int = 202
    attend_padding: bool = True

    def __post_init__(self):
        if self.hidden < 1 or self.layers < 1 or self.ff_dim < 1:
            raise InvalidArgumentError("invalid decoder dimensions")
        if self.hidden % self.heads != 0:
            raise InvalidArgumentError("heads must divide hidden")
        if (self.hidden // self.heads) % 2 != 0:
            raise InvalidArgumentError("head dim must be even for rotary mixing")
        if self.max_positions < 1:
            raise InvalidArgumentError("max_positions must be >= 1")

    @classmethod
    def desk(cls, **overrides) -> "LlmConfig":
        base = cls(hidden=256, layers=2, heads=4, ff_dim=512, max_positions=128)
        return replace(base, **overrides)

    @classmethod
    def paper_shape(cls, **overrides) -> "LlmConfig":
        return replace(cls(), **overrides)


@dataclass
class PooledState:
    vector: np.ndarray  # (hidden,)


class LlmBackbone:
    """Frozen random-initialized causal decoder with rotary position mixing."""

    def __init__(self, config: LlmConfig, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        h = config.hidden
        rng = np.random.default_rng(config.init_seed)

        def w(*shape):
            return (rng.standard_normal(shape) * WEIGHT_SCALE).astype(self.dtype)

        self.blocks = []
        for _ in range(config.layers):
            self.blocks.append({
                "ln1_g": np.ones(h, dtype=self.dtype),
                "ln1_b": np.zeros(h, dtype=self.dtype),
                "wq": w(h, h), "wk": w(h, h), "wv": w(h, h), "wo": w(h, h),
                "ln2_g": np.ones(h, dtype=self.dtype),
                "ln2_b": np.zeros(h, dtype=self.dtype),
                "w1": w(h, config.ff_dim), "w2": w(config.ff_dim, h),
            })
        self.ln_f_g = np.ones(h, dtype=self.dtype)
        self.ln_f_b = np.zeros(h, dtype=self.dtype)
        self.rope = nn.rope_tables(
            config.max_positions, config.hidden // config.heads, dtype=self.dtype
        )

    def weight_arrays(self):
        for blk in self.blocks:
            for key in sorted(blk):
                yield blk[key]
        yield self.ln_f_g
        yield self.ln_f_b

    def fingerprint(self) -> bytes:
        import hashlib

        h = hashlib.sha256()
        for arr in self.weight_arrays():
            h.update(arr.tobytes())
        return h.digest()

    def dump_weights(self, path):
        """Concatenated float32 little-endian weight dump (comparison aid)."""
        blob = np.concatenate([a.astype("<f4").ravel() for a in self.weight_arrays()])
        blob.tofile(path)

    def _check(self, seq):
        if seq.shape[-1] != self.config.hidden:
            raise ShapeError(
                f"sequence width {seq.shape[-1]} != hidden {self.config.hidden}"
            )
        if seq.shape[-2] > self.config.max_positions:
            raise CapacityError(
                f"{seq.shape[-2]} tokens exceed max_positions {self.config.max_positions}"
            )

    def forward_with_cache(self, seq):
        """(B, T, H) -> (B, T, H) last-layer states plus backward caches."""
        self._check(seq)
        caches = []
        x = seq
        for blk in self.blocks:
            x, cache = nn.block_f(x, blk, self.config.heads, causal=True, rope=self.rope)
            caches.append(cache)
        x, ln_cache = nn.layer_norm_f(x, self.ln_f_g, self.ln_f_b)
        caches.append(ln_cache)
        return x, caches

    def backward(self, dy, caches):
        dx, _ = nn.layer_norm_b(dy, caches[-1])
        for cache in reversed(caches[:-1]):
            dx = nn.block_b(dx, cache)
        return dx

    def forward_embeddings(self, seq):
        """Run the frozen decoder over an embedding sequence.

        Accepts (T, H) or (B, T, H); returns hidden states of the same shape.
        """
        seq = np.asarray(seq, dtype=self.dtype)
        single = seq.ndim == 2
        if single:
            seq = seq[None]
        if seq.ndim != 3:
            raise ShapeError("expected (T, H) or (B, T, H)")
        out, _ = self.forward_with_cache(seq)
        return out[0] if single else out


def mean_pool(states) -> PooledState:
    """Mean over the token dimension of (T, H) hidden states."""
    states = np.asarray(states)
    if states.ndim != 2 or states.shape[0] < 1:
        raise InvalidArgumentError("mean_pool expects a non-empty (T, H) matrix")
    return PooledState(vector=states.mean(axis=0))


def mean_pool_batch(states: np.ndarray) -> np.ndarray:
    """(B, T, H) -> (B, H)."""
    return states.mean(axis=1)
