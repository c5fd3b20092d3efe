"""Trainable adapter between the frozen backbones.

Three trainable pieces: an input encoder ``f`` (1-D residual CNN squeezing
the (feature_dim, context) encoder output to (out_channels, out_tokens)),
a projection ``g`` (two FC layers with a residual from the mean encoder
feature vector into the first layer, added before its batch norm), and an
output head ``l`` producing class logits.

The fixed output shape is guaranteed by an explicit head: a 1x1
convolution to out_channels followed by adaptive average pooling to
out_tokens. Channel widths double at the first and fourth Type-2 blocks
(32 -> 64 -> 128 for the default); residual shortcuts are parameter-free
(max-pooled identity, zero-padded across channels).
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import llm as llm_mod
from . import nn
from . import tfm as tfm_mod
from .errors import CheckpointError, InvalidArgumentError, ShapeError

CHECKPOINT_MAGIC = b"T2L1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class AdapterConfig:
    base_filters: int = 32
    blocks: int = 6
    kernel_size: int = 3
    stride: int = 2
    out_channels: int = 65
    out_tokens: int = 64
    proj_dims: tuple = (768, 256)
    num_classes: int = 6
    dropout: float = 0.1
    init_seed: int = 303

    def __post_init__(self):
        dims = (
            self.base_filters, self.blocks, self.kernel_size, self.stride,
            self.out_channels, self.out_tokens, self.num_classes,
            self.proj_dims[0], self.proj_dims[1],
        )
        if any(int(v) < 1 for v in dims):
            raise InvalidArgumentError("all adapter dimensions must be >= 1")
        if self.kernel_size % 2 == 0:
            raise InvalidArgumentError("kernel_size must be odd")
        if self.blocks < 2:
            raise InvalidArgumentError("need at least the Type-1 block plus one Type-2 block")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidArgumentError("dropout must be in [0, 1)")
        object.__setattr__(self, "proj_dims", tuple(int(v) for v in self.proj_dims))

    def type2_channels(self):
        """Output channels of each Type-2 block (doubling at blocks 1 and 4)."""
        widths = []
        width = self.base_filters
        for i in range(self.blocks - 1):
            if i in (0, 3):
                width *= 2
            widths.append(width)
        return widths


@dataclass
class AdapterParams:
    """Snapshot of every trainable weight plus normalization statistics."""

    flat: np.ndarray
    stats: np.ndarray

    def copy(self) -> "AdapterParams":
        return AdapterParams(self.flat.copy(), self.stats.copy())


class _Type1Block:
    """Conv-BN-ReLU-Dropout-Conv branch with an identity shortcut."""

    def __init__(self, store, state, name, channels, ksize, dropout):
        pad = (ksize - 1) // 2
        self.conv1 = nn.Conv1d(store, f"{name}.conv1", channels, channels, ksize, 1, pad)
        self.bn = nn.BatchNorm(store, state, f"{name}.bn", channels)
        self.relu = nn.ReLU()
        self.drop = nn.Dropout(dropout)
        self.conv2 = nn.Conv1d(store, f"{name}.conv2", channels, channels, ksize, 1, pad)

    def out_len(self, length):
        return length

    def forward(self, x, train, rng):
        b = self.conv1.forward(x)
        b = self.bn.forward(b, train)
        b = self.relu.forward(b)
        b = self.drop.forward(b, train, rng)
        return x + self.conv2.forward(b)

    def backward(self, dy):
        db = self.conv2.backward(dy)
        db = self.drop.backward(db)
        db = self.relu.backward(db)
        db = self.bn.backward(db)
        return dy + self.conv1.backward(db)


class _Type2Block:
    """Pre-activation double-conv branch ending in max pooling.

    Shortcut: max-pooled input, zero-padded across channels when the block
    widens.
    """

    def __init__(self, store, state, name, c_in, c_out, ksize, dropout):
        pad = (ksize - 1) // 2
        self.c_in, self.c_out = c_in, c_out
        self.bn1 = nn.BatchNorm(store, state, f"{name}.bn1", c_in)
        self.relu1 = nn.ReLU()
        self.drop1 = nn.Dropout(dropout)
        self.conv1 = nn.Conv1d(store, f"{name}.conv1", c_in, c_out, ksize, 1, pad)
        self.bn2 = nn.BatchNorm(store, state, f"{name}.bn2", c_out)
        self.relu2 = nn.ReLU()
        self.drop2 = nn.Dropout(dropout)
        self.conv2 = nn.Conv1d(store, f"{name}.conv2", c_out, c_out, ksize, 1, pad)
        self.pool_branch = nn.MaxPool2()
        self.pool_short = nn.MaxPool2()

    def out_len(self, length):
        return length // 2

    def forward(self, x, train, rng):
        b = self.bn1.forward(x, train)
        b = self.relu1.forward(b)
        b = self.drop1.forward(b, train, rng)
        b = self.conv1.forward(b)
        b = self.bn2.forward(b, train)
        b = self.relu2.forward(b)
        b = self.drop2.forward(b, train, rng)
        b = self.conv2.forward(b)
        b = self.pool_branch.forward(b)
        s = self.pool_short.forward(x)
        if self.c_out > self.c_in:
            padded = np.zeros((s.shape[0], self.c_out, s.shape[2]), dtype=s.dtype)
            padded[:, : self.c_in] = s
            s = padded
        return s + b

    def backward(self, dy):
        db = self.pool_branch.backward(dy)
        db = self.conv2.backward(db)
        db = self.drop2.backward(db)
        db = self.relu2.backward(db)
        db = self.bn2.backward(db)
        db = self.conv1.backward(db)
        db = self.drop1.backward(db)
        db = self.relu1.backward(db)
        db = self.bn1.backward(db)
        ds = self.pool_short.backward(dy[:, : self.c_in])
        return ds + db


class Adapter:
    """Trainable f / g / l bound to one flat parameter vector."""

    def __init__(self, config: AdapterConfig, feature_dim: int, llm_hidden: int,
                 context: int, dtype=np.float32):
        if config.out_channels > llm_hidden:
            raise ShapeError(
                f"out_channels {config.out_channels} exceeds llm hidden {llm_hidden}"
            )
        self.config = config
        self.feature_dim = feature_dim
        self.llm_hidden = llm_hidden
        self.context = context
        self.dtype = np.dtype(dtype)
        self.store = nn.ParamStore(dtype=dtype)
        self.state = nn.StateStore(dtype=dtype)

        k = config.kernel_size
        pad = (k - 1) // 2
        # ---- f: initial conv + 1 Type-1 block + (blocks - 1) Type-2 blocks
        self.init_conv = nn.Conv1d(
            self.store, "f.init_conv", feature_dim, config.base_filters, k, config.stride, pad
        )
        self.init_bn = nn.BatchNorm(self.store, self.state, "f.init_bn", config.base_filters)
        self.init_relu = nn.ReLU()
        self.res_blocks = [
            _Type1Block(self.store, self.state, "f.block0", config.base_filters, k, config.dropout)
        ]
        c_in = config.base_filters
        for i, c_out in enumerate(config.type2_channels()):
            self.res_blocks.append(
                _Type2Block(self.store, self.state, f"f.block{i + 1}", c_in, c_out, k, config.dropout)
            )
            c_in = c_out
        self.final_bn = nn.BatchNorm(self.store, self.state, "f.final_bn", c_in)
        self.final_relu = nn.ReLU()
        self.head_conv = nn.Conv1d(self.store, "f.head_conv", c_in, config.out_channels, 1, 1, 0)
        self.head_pool = nn.AdaptiveAvgPool(config.out_tokens)

        # spatial extent must survive the pooling pyramid for this context
        length = self.init_conv.out_len(context)
        for blk in self.res_blocks:
            length = blk.out_len(length)
            if length < 1:
                raise ShapeError(
                    f"context {context} too short for {config.blocks} blocks"
                )

        # ---- g: FC1 (+ residual from mean encoder features) -> FC2
        proj0, proj1 = config.proj_dims
        self.fc1 = nn.Linear(self.store, "g.fc1", llm_hidden, proj0)
        self.bn_g1 = nn.BatchNorm(self.store, self.state, "g.bn1", proj0, axis="fc")
        self.relu_g1 = nn.ReLU()
        self.fc2 = nn.Linear(self.store, "g.fc2", proj0, proj1)
        self.bn_g2 = nn.BatchNorm(self.store, self.state, "g.bn2", proj1, axis="fc")
        self.relu_g2 = nn.ReLU()

        # ---- l: output head
        self.out = nn.Linear(self.store, "l.out", proj1, config.num_classes)

        self.store.finalize(seed=config.init_seed)
        self.state.finalize()

        # fixed (non-trainable) resize for the residual when widths differ
        if feature_dim == proj0:
            self.resid_map = None
        else:
            rng = np.random.default_rng([config.init_seed, 0x52])
            self.resid_map = (
                rng.standard_normal((proj0, feature_dim)) / np.sqrt(feature_dim)
            ).astype(self.dtype)

    # -- parameter bookkeeping ------------------------------------------------

    def param_count(self, prefix=None) -> int:
        total = 0
        for name in self.store.block_names():
            if prefix is None or name.startswith(prefix):
                lo, hi = self.store.slot(name)
                total += hi - lo
        return total

    def snapshot(self) -> AdapterParams:
        return AdapterParams(self.store.flat.copy(), self.state.flat.copy())

    def load_snapshot(self, params: AdapterParams):
        if params.flat.size != self.store.flat.size or params.stats.size != self.state.flat.size:
            raise ShapeError("parameter snapshot does not match this architecture")
        self.store.flat[:] = params.flat.astype(self.dtype)
        self.state.flat[:] = params.stats.astype(self.dtype)

    # -- f ---------------------------------------------------------------------

    def input_encode(self, zc_t, train=False, rng=None):
        """(B, feature_dim, context) -> (B, out_channels, out_tokens)."""
        if zc_t.ndim != 3 or zc_t.shape[1] != self.feature_dim:
            raise ShapeError(
                f"expected (B, {self.feature_dim}, L) input, got {zc_t.shape}"
            )
        x = self.init_conv.forward(zc_t)
        x = self.init_bn.forward(x, train)
        x = self.init_relu.forward(x)
        for blk in self.res_blocks:
            x = blk.forward(x, train, rng)
        x = self.final_bn.forward(x, train)
        x = self.final_relu.forward(x)
        x = self.head_conv.forward(x)
        return self.head_pool.forward(x)

    def input_encode_backward(self, dz):
        dx = self.head_pool.backward(dz)
        dx = self.head_conv.backward(dx)
        dx = self.final_relu.backward(dx)
        dx = self.final_bn.backward(dx)
        for blk in reversed(self.res_blocks):
            dx = blk.backward(dx)
        dx = self.init_relu.backward(dx)
        dx = self.init_bn.backward(dx)
        return self.init_conv.backward(dx)

    # -- feature padding ---------------------------------------------------------

    def pad_features(self, zi_t):
        """(B, out_tokens, out_channels) -> (B, out_tokens, llm_hidden), zero right-pad."""
        if zi_t.shape[-1] > self.llm_hidden:
            raise ShapeError("row width exceeds llm hidden size")
        if zi_t.shape[-1] == self.llm_hidden:
            return zi_t
        out = np.zeros(zi_t.shape[:-1] + (self.llm_hidden,), dtype=zi_t.dtype)
        out[..., : zi_t.shape[-1]] = zi_t
        return out

    # -- g ---------------------------------------------------------------------

    def _resize_residual(self, zc_mean):
        if self.resid_map is None:
            return zc_mean
        return zc_mean @ self.resid_map.T

    def project(self, z_m, zc_mean=None, train=False, with_residual=True):
        """(B, llm_hidden) [+ (B, feature_dim) residual] -> (B, proj_dims[1])."""
        h = self.fc1.forward(z_m)
        if with_residual:
            if zc_mean is None:
                raise InvalidArgumentError("residual path requires zc_mean")
            h = h + self._resize_residual(zc_mean)
        h = self.bn_g1.forward(h, train)
        h = self.relu_g1.forward(h)
        h = self.fc2.forward(h)
        h = self.bn_g2.forward(h, train)
        return self.relu_g2.forward(h)

    def project_backward(self, dz):
        dh = self.relu_g2.backward(dz)
        dh = self.bn_g2.backward(dh)
        dh = self.fc2.backward(dh)
        dh = self.relu_g1.backward(dh)
        dh = self.bn_g1.backward(dh)
        return self.fc1.backward(dh)  # residual addend is constant data

    # -- l ---------------------------------------------------------------------

    def classify(self, z_o):
        return self.out.forward(z_o)

    def classify_backward(self, dlogits):
        return self.out.backward(dlogits)


class Pipeline:
    """End-to-end forward path: encoder -> f -> decoder -> pool -> g -> l."""

    def __init__(self, tfm_backbone: tfm_mod.TfmBackbone, llm_backbone: llm_mod.LlmBackbone,
                 adapter: Adapter):
        if adapter.feature_dim != tfm_backbone.config.feature_dim:
            raise ShapeError("adapter feature_dim does not match the encoder")
        if adapter.llm_hidden != llm_backbone.config.hidden:
            raise ShapeError("adapter llm_hidden does not match the decoder")
        if adapter.config.out_tokens > llm_backbone.config.max_positions:
            raise ShapeError("out_tokens exceeds decoder position capacity")
        self.tfm = tfm_backbone
        self.llm = llm_backbone
        self.adapter = adapter
        self._llm_caches = None

    def encode_series(self, series_list):
        """TFM features as (B, feature_dim, context) plus (B, feature_dim) means."""
        zc, _ = self.tfm.encode_batch(series_list)
        zc_mean = zc.mean(axis=1)
        zc_t = np.ascontiguousarray(zc.transpose(0, 2, 1))
        return zc_t, zc_mean

    def forward_cached(self, zc_t, zc_mean, train=False, rng=None, with_residual=True,
                       keep_cache=False):
        zi = self.adapter.input_encode(zc_t, train, rng)  # (B, d, c)
        zi_t = np.ascontiguousarray(zi.transpose(0, 2, 1))  # (B, c, d)
        seq = self.adapter.pad_features(zi_t)
        states, caches = self.llm.forward_with_cache(seq)
        self._llm_caches = caches if keep_cache else None
        z_m = llm_mod.mean_pool_batch(states)
        z_o = self.adapter.project(z_m, zc_mean, train, with_residual)
        logits = self.adapter.classify(z_o)
        return logits, z_o

    def backward_cached(self, dlogits):
        if self._llm_caches is None:
            raise RuntimeError("no cached forward pass to backpropagate through")
        dz_o = self.adapter.classify_backward(dlogits)
        dz_m = self.adapter.project_backward(dz_o)
        tokens = self.adapter.config.out_tokens
        dstates = np.broadcast_to(
            dz_m[:, None, :] / tokens, (dz_m.shape[0], tokens, dz_m.shape[1])
        ).astype(dz_m.dtype)
        dseq = self.llm.backward(dstates, self._llm_caches)
        self._llm_caches = None
        dzi_t = dseq[..., : self.adapter.config.out_channels]
        dzi = np.ascontiguousarray(dzi_t.transpose(0, 2, 1))
        self.adapter.input_encode_backward(dzi)

    def forward(self, series, train=False, rng=None, with_residual=True):
        """Single series -> (logits, z_o, z_c) with intermediates for probing."""
        zc_t, zc_mean = self.encode_series([series])
        logits, z_o = self.forward_cached(zc_t, zc_mean, train, rng, with_residual)
        return logits[0], z_o[0], np.ascontiguousarray(zc_t[0].T)

    def extract_embedding(self, series):
        """Penultimate activation with the residual addend forced to zero."""
        logits, z_o, _ = self.forward(series, with_residual=False)
        return z_o

    def extract_batch(self, series_list, batch_size=64):
        out = []
        for i in range(0, len(series_list), batch_size):
            chunk = series_list[i:i + batch_size]
            zc_t, zc_mean = self.encode_series(chunk)
            _, z_o = self.forward_cached(zc_t, zc_mean, with_residual=False)
            out.append(z_o)
        return np.concatenate(out, axis=0)


def build_pipeline(tfm_config, llm_config, adapter_config, dtype=np.float32) -> Pipeline:
    tfm_backbone = tfm_mod.TfmBackbone(tfm_config, dtype=dtype)
    llm_backbone = llm_mod.LlmBackbone(llm_config, dtype=dtype)
    adapter = Adapter(
        adapter_config,
        feature_dim=tfm_config.feature_dim,
        llm_hidden=llm_config.hidden,
        context=tfm_config.context,
        dtype=dtype,
    )
    return Pipeline(tfm_backbone, llm_backbone, adapter)


# ---------------------------------------------------------------------------
# checkpoint format: magic, version, JSON header, float64 LE params + stats
# ---------------------------------------------------------------------------

def save_checkpoint(path, adapter: Adapter, tfm_config, llm_config):
    header = {
        "adapter_config": dataclasses.asdict(adapter.config),
        "tfm_config": dataclasses.asdict(tfm_config),
        "llm_config": dataclasses.asdict(llm_config),
        "n_params": int(adapter.store.flat.size),
        "n_stats": int(adapter.state.flat.size),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(adapter.store.flat.astype("<f8").tobytes())
        fh.write(adapter.state.flat.astype("<f8").tobytes())


def load_checkpoint(path):
    """Returns (adapter_config, tfm_config, llm_config, AdapterParams)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad checkpoint magic {magic!r}")
        version, blob_len = struct.unpack("<IQ", fh.read(12))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        n_params = header["n_params"]
        n_stats = header["n_stats"]
        flat = np.frombuffer(fh.read(8 * n_params), dtype="<f8").copy()
        stats = np.frombuffer(fh.read(8 * n_stats), dtype="<f8").copy()
    if flat.size != n_params or stats.size != n_stats:
        raise CheckpointError("checkpoint truncated")
    acfg = dict(header["adapter_config"])
    acfg["proj_dims"] = tuple(acfg["proj_dims"])
    adapter_config = AdapterConfig(**acfg)
    tfm_config = tfm_mod.TfmConfig(**header["tfm_config"])
    llm_config = llm_mod.LlmConfig(**header["llm_config"])
    return adapter_config, tfm_config, llm_config, AdapterParams(flat, stats)


def pipeline_from_checkpoint(path, dtype=np.float32) -> Pipeline:
    adapter_config, tfm_config, llm_config, params = load_checkpoint(path)
    pipe = build_pipeline(tfm_config, llm_config, adapter_config, dtype=dtype)
    pipe.adapter.load_snapshot(params)
    return pipe
