"""Pretext training: periodicity classification over frozen backbones.

Only the adapter's parameters enter the optimizer; encoder features are
précomputed once per run since the frozen encoder cannot change. Training
is serial and fully seeded (shuffle and dropout streams derive from the
train seed), so identical configs reproduce identical checkpoints.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import nn
from .adapter import Pipeline
from .errors import InvalidArgumentError, TrainingDivergedError
from .synthgen import derive_seed


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 25
    batch_size: int = 16
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 404
    eval_every: int = 1
    grad_clip: Optional[float] = None  # off by default; divergence recovery knob

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise InvalidArgumentError("epochs, batch_size, eval_every must be >= 1")
        if self.learning_rate <= 0:
            raise InvalidArgumentError("learning_rate must be positive")


@dataclass
class MetricRecord:
    epoch: int
    split: str
    loss: float
    accuracy: float
    seconds: float

    def as_dict(self):
        return {
            "epoch": self.epoch,
            "split": self.split,
            "loss": self.loss,
            "accuracy": self.accuracy,
            "seconds": self.seconds,
        }


def cross_entropy(logits_batch, labels) -> float:
    """Mean multi-class cross entropy with log-sum-exp stabilization."""
    loss, _ = nn.cross_entropy_forward(np.asarray(logits_batch, dtype=np.float64), labels)
    return loss


class Adam:
    """Standard Adam over one flat parameter vector."""

    def __init__(self, size, config: TrainConfig, dtype):
        self.m = np.zeros(size, dtype=dtype)
        self.v = np.zeros(size, dtype=dtype)
        self.t = 0
        self.config = config

    def step(self, flat, grad):
        c = self.config
        if c.grad_clip is not None:
            norm = float(np.linalg.norm(grad))
            if norm > c.grad_clip:
                grad = grad * (c.grad_clip / norm)
        self.t += 1
        self.m += (1 - c.beta1) * (grad - self.m)
        self.v += (1 - c.beta2) * (grad * grad - self.v)
        mhat = self.m / (1 - c.beta1 ** self.t)
        vhat = self.v / (1 - c.beta2 ** self.t)
        flat -= (c.learning_rate * mhat / (np.sqrt(vhat) + c.adam_eps)).astype(flat.dtype)


def _encode_features(pipeline: Pipeline, series_rows, chunk=128):
    """Precompute (N, feat, ctx) transposed encoder outputs and (N, feat) means."""
    zc_t_parts, mean_parts = [], []
    for i in range(0, len(series_rows), chunk):
        zc_t, zc_mean = pipeline.encode_series(series_rows[i:i + chunk])
        zc_t_parts.append(zc_t)
        mean_parts.append(zc_mean)
    return np.concatenate(zc_t_parts), np.concatenate(mean_parts)


def _eval_cached(pipeline, zc_t, zc_mean, labels, batch_size=64):
    n = zc_t.shape[0]
    total_loss = 0.0
    n_classes = pipeline.adapter.config.num_classes
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    for i in range(0, n, batch_size):
        sl = slice(i, min(i + batch_size, n))
        logits, _ = pipeline.forward_cached(zc_t[sl], zc_mean[sl], train=False)
        loss, probs = nn.cross_entropy_forward(logits.astype(np.float64), labels[sl])
        total_loss += loss * (sl.stop - sl.start)
        pred = logits.argmax(axis=1)
        np.add.at(confusion, (labels[sl], pred), 1)
    accuracy = float(np.trace(confusion)) / n
    return total_loss / n, accuracy, confusion


def fit(dataset, pipeline: Pipeline, config: TrainConfig):
    """Mini-batch Adam over f, g, l. Returns (best params, metric records)."""
    train_idx = dataset.indices("train")
    val_idx = dataset.indices("val")
    if train_idx.size == 0 or val_idx.size == 0:
        raise InvalidArgumentError("dataset needs non-empty train and val splits")

    labels = dataset.labels()
    series = [s.series.astype(np.float64) for s in dataset.samples]
    need = np.concatenate([train_idx, val_idx])
    zc_t, zc_mean = _encode_features(pipeline, [series[i] for i in need])
    row_of = {int(idx): row for row, idx in enumerate(need)}
    train_rows = np.array([row_of[int(i)] for i in train_idx])
    val_rows = np.array([row_of[int(i)] for i in val_idx])
    y_train = labels[train_idx]
    y_val = labels[val_idx]

    adapter = pipeline.adapter
    optimizer = Adam(adapter.store.size, config, adapter.dtype)
    metrics = []
    best_val = np.inf
    best_params = adapter.snapshot()

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        shuffle_rng = np.random.default_rng(derive_seed(config.seed, 2, epoch))
        drop_rng = np.random.default_rng(derive_seed(config.seed, 3, epoch))
        order = shuffle_rng.permutation(train_rows.size)
        epoch_loss = 0.0
        n_correct = 0
        for start in range(0, order.size, config.batch_size):
            rows = train_rows[order[start:start + config.batch_size]]
            yb = y_train[order[start:start + config.batch_size]]
            logits, _ = pipeline.forward_cached(
                zc_t[rows], zc_mean[rows], train=True, rng=drop_rng, keep_cache=True
            )
            loss, probs = nn.cross_entropy_forward(logits.astype(np.float64), yb)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}", last_checkpoint=best_params
                )
            epoch_loss += loss * rows.size
            n_correct += int((logits.argmax(axis=1) == yb).sum())
            dlogits = nn.cross_entropy_backward(probs, yb).astype(adapter.dtype)
            adapter.store.zero_grad()
            pipeline.backward_cached(dlogits)
            optimizer.step(adapter.store.flat, adapter.store.grad)
        seconds = time.perf_counter() - t0
        metrics.append(MetricRecord(
            epoch, "train", epoch_loss / order.size, n_correct / order.size, seconds
        ))

        if epoch % config.eval_every == 0 or epoch == config.epochs:
            t1 = time.perf_counter()
            val_loss, val_acc, _ = _eval_cached(
                pipeline, zc_t[val_rows], zc_mean[val_rows], y_val
            )
            metrics.append(MetricRecord(
                epoch, "val", val_loss, val_acc, time.perf_counter() - t1
            ))
            if val_loss < best_val:
                best_val = val_loss
                best_params = adapter.snapshot()

    return best_params, metrics


def evaluate_pretext(pipeline: Pipeline, dataset, split="test", batch_size=64):
    """Eval-mode pass over a split: (loss, accuracy, confusion matrix)."""
    idx = dataset.indices(split) if isinstance(split, str) else np.asarray(split)
    if idx.size == 0:
        raise InvalidArgumentError(f"split {split!r} is empty")
    labels = dataset.labels()[idx]
    series = [dataset.samples[i].series.astype(np.float64) for i in idx]
    zc_t, zc_mean = _encode_features(pipeline, series)
    return _eval_cached(pipeline, zc_t, zc_mean, labels, batch_size)


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_err: float
    n_checked: int
    n_zero_excluded: int
    passed: bool
    tolerance: float
    per_section: dict


def gradient_check(pipeline: Pipeline, series, label, tolerance=1e-4, n_params=200,
                   seed=90, step=1e-5, zero_tol=1e-10) -> GradCheckReport:
    """Compare analytic gradients to central differences on one sample.

    Requires a float64 pipeline. Runs in eval mode, which freezes batch-norm
    statistics so the loss is smooth in the parameters. Parameters whose
    analytic and numeric gradients are both below zero_tol have no effective
    path to the loss and are excluded (reported separately).
    """
    adapter = pipeline.adapter
    if adapter.dtype != np.float64:
        raise InvalidArgumentError("gradient_check needs a float64 pipeline")
    zc_t, zc_mean = pipeline.encode_series([np.asarray(series, dtype=np.float64)])
    labels = np.array([label])

    logits, _ = pipeline.forward_cached(zc_t, zc_mean, train=False, keep_cache=True)
    _, probs = nn.cross_entropy_forward(logits, labels)
    adapter.store.zero_grad()
    pipeline.backward_cached(nn.cross_entropy_backward(probs, labels))
    analytic = adapter.store.grad.copy()

    def loss_at():
        lg, _ = pipeline.forward_cached(zc_t, zc_mean, train=False)
        return nn.cross_entropy_forward(lg, labels)[0]

    # stratified draw across f / g / l so all three sections are covered
    rng = np.random.default_rng(seed)
    section_of = np.empty(adapter.store.size, dtype="U2")
    sections = {}
    for prefix in ("f.", "g.", "l."):
        pool = []
        for name in adapter.store.block_names():
            if name.startswith(prefix):
                lo, hi = adapter.store.slot(name)
                pool.extend(range(lo, hi))
                section_of[lo:hi] = prefix
        sections[prefix] = np.array(pool)
    chosen = []
    share = max(n_params // 3, 1)
    for prefix, pool in sections.items():
        take = min(share, pool.size)
        chosen.extend(rng.choice(pool, size=take, replace=False).tolist())
    extra = n_params - len(chosen)
    if extra > 0:
        all_idx = np.arange(adapter.store.size)
        chosen.extend(rng.choice(all_idx, size=extra, replace=False).tolist())

    flat = adapter.store.flat
    max_rel = 0.0
    n_zero = 0
    per_section = {p: 0.0 for p in sections}
    for idx in chosen:
        orig = flat[idx]
        h = step * max(1.0, abs(orig))
        flat[idx] = orig + h
        fp = loss_at()
        flat[idx] = orig - h
        fm = loss_at()
        flat[idx] = orig
        g_fd = (fp - fm) / (2 * h)
        g_an = analytic[idx]
        if abs(g_an) < zero_tol and abs(g_fd) < zero_tol:
            n_zero += 1
            continue
        rel = abs(g_an - g_fd) / max(abs(g_an), abs(g_fd))
        max_rel = max(max_rel, rel)
        sec = str(section_of[idx])
        per_section[sec] = max(per_section[sec], rel)
    return GradCheckReport(
        max_rel_err=max_rel,
        n_checked=len(chosen) - n_zero,
        n_zero_excluded=n_zero,
        passed=max_rel < tolerance,
        tolerance=tolerance,
        per_section=per_section,
    )
