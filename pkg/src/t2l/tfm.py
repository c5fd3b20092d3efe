"""Frozen time-series encoder: tokenize-then-encode front end.

A series of any length is reduced to a fixed number of context points
(window means for long inputs), mean-abs scaled, quantized into uniform
bins, terminated with an end-of-sequence control token, left-padded to the
context length, and run through a frozen bidirectional transformer whose
weights are generated deterministically from the init seed. The output
feature matrix has shape (context, feature_dim) for every input length.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import _kernels, nn
from .errors import InvalidArgumentError

WEIGHT_SCALE = 0.02


@dataclass(frozen=True)
class TfmConfig:
    context: int = 513
    feature_dim: int = 768
    vocab_bins: int = 512
    clip_limit: float = 15.0
    layers: int = 2
    heads: int = 12
    ff_dim: int = 3072
    init_seed: int = 101

    def __post_init__(self):
        if self.context < 2:
            raise InvalidArgumentError("context must be >= 2")
        if self.feature_dim < 1:
            raise InvalidArgumentError("feature_dim must be >= 1")
        if self.vocab_bins < 2:
            raise InvalidArgumentError("vocab_bins must be >= 2")
        if self.feature_dim % self.heads != 0:
            raise InvalidArgumentError("heads must divide feature_dim")
        if self.clip_limit <= 0 or self.layers < 1 or self.ff_dim < 1:
            raise InvalidArgumentError("invalid transformer dimensions")

    @property
    def context_points(self) -> int:
        # one position is reserved for the end-of-sequence control token
        return self.context - 1

    @classmethod
    def desk(cls, **overrides) -> "TfmConfig":
        base = cls(context=129, feature_dim=96, layers=2, heads=4, ff_dim=384)
        return replace(base, **overrides)

    @classmethod
    def paper_shape(cls, **overrides) -> "TfmConfig":
        return replace(cls(), **overrides)


@dataclass
class TfmEmbedding:
    matrix: np.ndarray  # (context, feature_dim)
    scale: float


def adapt_length(series: Sequence[float], context_points: int) -> np.ndarray:
    """Reduce a long series to per-window means over near-equal windows.

    Series no longer than the target are returned unchanged (short inputs
    are handled later by left padding at tokenization).
    """
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 1 or series.size == 0:
        raise InvalidArgumentError("series must be a non-empty 1-D vector")
    if context_points < 1:
        raise InvalidArgumentError("context_points must be >= 1")
    n = series.size
    if n <= context_points:
        return series
    bounds = (np.arange(context_points + 1) * n) // context_points
    sums = np.concatenate([[0.0], np.cumsum(series)])
    widths = bounds[1:] - bounds[:-1]
    return (sums[bounds[1:]] - sums[bounds[:-1]]) / widths


def mean_scale(series: np.ndarray):
    """Scale by the mean absolute value (scale 1 for all-zero input)."""
    series = np.asarray(series, dtype=np.float64)
    if not np.all(np.isfinite(series)):
        raise InvalidArgumentError("series must be finite")
    scale = float(np.mean(np.abs(series)))
    if scale < 1e-12:
        scale = 1.0
    return series / scale, scale


def quantize(scaled: np.ndarray, config: TfmConfig) -> np.ndarray:
    """Clamp to [-clip, +clip] and map to uniform bin ids 0..vocab_bins-1."""
    return _kernels.quantize_bins(
        np.asarray(scaled, dtype=np.float64), config.clip_limit, config.vocab_bins
    )


class TfmBackbone:
    """Frozen random-initialized encoder behind the backbone interface.

    All weights derive from the config's init seed, are generated once in
    float64, and are cast to the requested dtype; they are never updated.
    """

    def __init__(self, config: TfmConfig, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.pad_id = config.vocab_bins
        self.eos_id = config.vocab_bins + 1
        d = config.feature_dim
        rng = np.random.default_rng(config.init_seed)

        def w(*shape):
            return (rng.standard_normal(shape) * WEIGHT_SCALE).astype(self.dtype)

        # Bin embeddings are a smooth function of the bin-center value sent
        # through a random projection: nearby values get nearby embeddings,
        # the ordinal structure a trained tokenizer embedding exhibits.
        # I.i.d. random rows would make adjacent bins orthogonal and erase
        # value similarity before the encoder ever sees it.
        centers = (-config.clip_limit
                   + (np.arange(config.vocab_bins) + 0.5)
                   * (2.0 * config.clip_limit / config.vocab_bins))
        u = centers / config.clip_limit  # (-1, 1)
        feats = [u]
        for k in range(1, 9):
            feats.append(np.sin(np.pi * k * u))
            feats.append(np.cos(np.pi * k * u))
        phi = np.stack(feats, axis=1) / np.sqrt(len(feats))
        w_val = rng.standard_normal((phi.shape[1], d)) * WEIGHT_SCALE
        bin_emb = phi @ w_val
        special = rng.standard_normal((2, d)) * WEIGHT_SCALE  # PAD, EOS rows
        self.tok_emb = np.concatenate([bin_emb, special]).astype(self.dtype)
        self.pos_emb = w(config.context, d)
        self.blocks = []
        for _ in range(config.layers):
            self.blocks.append({
                "ln1_g": np.ones(d, dtype=self.dtype),
                "ln1_b": np.zeros(d, dtype=self.dtype),
                "wq": w(d, d), "wk": w(d, d), "wv": w(d, d), "wo": w(d, d),
                "ln2_g": np.ones(d, dtype=self.dtype),
                "ln2_b": np.zeros(d, dtype=self.dtype),
                "w1": w(d, config.ff_dim), "w2": w(config.ff_dim, d),
            })
        self.ln_f_g = np.ones(d, dtype=self.dtype)
        self.ln_f_b = np.zeros(d, dtype=self.dtype)

    def weight_arrays(self):
        yield self.tok_emb
        yield self.pos_emb
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

    def tokenize(self, series):
        """Token ids (context,) plus the normalization scale."""
        points = adapt_length(series, self.config.context_points)
        scaled, scale = mean_scale(points)
        ids = quantize(scaled, self.config)
        ids = np.concatenate([ids, [self.eos_id]])
        pad = self.config.context - ids.size
        ids = np.concatenate([np.full(pad, self.pad_id, dtype=np.int64), ids])
        return ids, scale

    def encode_batch(self, series_list):
        """(B, context, feature_dim) stacked embeddings plus per-series scales."""
        ids = np.empty((len(series_list), self.config.context), dtype=np.int64)
        scales = np.empty(len(series_list))
        for i, series in enumerate(series_list):
            ids[i], scales[i] = self.tokenize(series)
        x = self.tok_emb[ids] + self.pos_emb[None, :, :]
        key_mask = ids == self.pad_id
        if not key_mask.any():
            key_mask = None
        for blk in self.blocks:
            x, _ = nn.block_f(x, blk, self.config.heads, causal=False, key_mask=key_mask)
        x, _ = nn.layer_norm_f(x, self.ln_f_g, self.ln_f_b)
        return x, scales

    def encode(self, series) -> TfmEmbedding:
        matrix, scales = self.encode_batch([series])
        return TfmEmbedding(matrix=matrix[0], scale=float(scales[0]))

    def dump_weights(self, path):
        """Concatenated float32 little-endian weight dump (comparison aid)."""
        blob = np.concatenate([a.astype("<f4").ravel() for a in self.weight_arrays()])
        blob.tofile(path)


def export_embeddings(path, embeddings):
    """Write embeddings as little-endian float32, one (context, feature_dim)
    record per row, plus a JSON metadata sidecar."""
    mats = [e.matrix for e in embeddings]
    if not mats:
        raise InvalidArgumentError("nothing to export")
    context, feature_dim = mats[0].shape
    stacked = np.stack(mats).astype("<f4")
    stacked.tofile(path)
    meta = {
        "records": len(mats),
        "context": int(context),
        "feature_dim": int(feature_dim),
        "dtype": "<f4",
        "scales": [float(e.scale) for e in embeddings],
    }
    with open(path + ".meta.json", "w") as fh:
        json.dump(meta, fh, sort_keys=True)
        fh.write("\n")


def import_embeddings(path):
    with open(path + ".meta.json") as fh:
        meta = json.load(fh)
    data = np.fromfile(path, dtype="<f4")
    shape = (meta["records"], meta["context"], meta["feature_dim"])
    if data.size != int(np.prod(shape)):
        raise InvalidArgumentError("embedding payload does not match its sidecar")
    data = data.reshape(shape)
    return [TfmEmbedding(matrix=data[i], scale=meta["scales"][i])
            for i in range(meta["records"])]
