"""Embedding structure analysis and the inference micro-benchmark.

Two studies: (1) Spearman rank correlation between each autocorrelation lag
of raw series and each embedding dimension across samples, summarized by
the signed strongest coefficient per dimension; (2) latency / throughput
of a pipeline across input lengths with a warm-up phase and repeat
statistics, warm-up iterations excluded.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, UndefinedAcfError, UndefinedMetricError


def acf(series, n_lags: int = 10) -> np.ndarray:
    """Sample autocorrelation at lags 0..n_lags (biased normalization)."""
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.size <= n_lags:
        raise InvalidArgumentError("series must be 1-D with length > n_lags")
    x = x - x.mean()
    denom = float(np.dot(x, x))
    if denom < 1e-300:
        raise UndefinedAcfError("autocorrelation undefined for a constant series")
    out = np.empty(n_lags + 1)
    out[0] = 1.0
    for lag in range(1, n_lags + 1):
        out[lag] = float(np.dot(x[:-lag], x[lag:])) / denom
    return out


def _midranks(values):
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * ((i + 1) + (j + 1))
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Pearson correlation of mid-ranks (average ranks on ties)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 3:
        raise InvalidArgumentError("spearman needs two equal-length vectors, n >= 3")
    rx = _midranks(x)
    ry = _midranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    vx = float(np.dot(rx, rx))
    vy = float(np.dot(ry, ry))
    if vx < 1e-300 or vy < 1e-300:
        raise UndefinedMetricError("spearman undefined when a rank vector is constant")
    return float(np.dot(rx, ry) / np.sqrt(vx * vy))


@dataclass
class AcfCorrelationReport:
    matrix: np.ndarray        # (embed_dim, n_lags), column i is lag i+1
    max_per_dim: np.ndarray   # signed coefficient with the largest magnitude
    count_above_threshold: int
    threshold: float
    n_lags: int
    n_skipped: int            # degenerate (dim, lag) cells


def embedding_acf_correlation(series_list, embeddings, n_lags: int = 10,
                              threshold: float = 0.3) -> AcfCorrelationReport:
    """Spearman of (acf lag, embedding dim) pairs across samples."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[0] != len(series_list):
        raise InvalidArgumentError("need one embedding row per series")
    if len(series_list) < 3:
        raise InvalidArgumentError("need at least 3 samples")
    n, dim = embeddings.shape
    acfs = np.empty((n, n_lags))
    for i, series in enumerate(series_list):
        acfs[i] = acf(series, n_lags)[1:]
    matrix = np.full((dim, n_lags), np.nan)
    n_skipped = 0
    for j in range(dim):
        col = embeddings[:, j]
        for lag in range(n_lags):
            try:
                matrix[j, lag] = spearman(acfs[:, lag], col)
            except UndefinedMetricError:
                n_skipped += 1
    if n_skipped:
        warnings.warn(f"{n_skipped} degenerate (dimension, lag) cells skipped")
    max_per_dim = np.full(dim, np.nan)
    for j in range(dim):
        row = matrix[j]
        valid = ~np.isnan(row)
        if valid.any():
            k = np.argmax(np.abs(np.where(valid, row, 0.0)))
            max_per_dim[j] = row[k]
    count = int(np.nansum(np.abs(max_per_dim) > threshold))
    return AcfCorrelationReport(
        matrix=matrix,
        max_per_dim=max_per_dim,
        count_above_threshold=count,
        threshold=threshold,
        n_lags=n_lags,
        n_skipped=n_skipped,
    )


# ---------------------------------------------------------------------------
# latency / throughput micro-benchmark
# ---------------------------------------------------------------------------

@dataclass
class BenchRow:
    length: int
    latency_mean_ms: float
    latency_std_ms: float
    throughput_mean: float   # predictions per second at the given batch size
    throughput_std: float
    repeats: int
    warmup: int
    batch: int
    unreliable_timer: bool


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)

    def row_for(self, length):
        for row in self.rows:
            if row.length == length:
                return row
        raise KeyError(length)


def _timer_resolution():
    deltas = []
    prev = time.perf_counter()
    for _ in range(500):
        now = time.perf_counter()
        if now > prev:
            deltas.append(now - prev)
        prev = now
    return min(deltas) if deltas else 1e-9


def bench_latency(single_fn, batch_fn, lengths, repeats: int = 100, warmup: int = 100,
                  batch: int = 16, seed: int = 0) -> BenchReport:
    """Time single-sample latency and batch throughput per input length.

    single_fn(series) and batch_fn(list_of_series) must run the pipeline end
    to end. Every length gets `warmup` untimed passes and `repeats` timed
    passes; timed rounds cycle through the lengths so slow clock or
    scheduler drift cancels out of cross-length ratios instead of biasing
    whichever length was measured last. Warm-up is excluded throughout.
    """
    if repeats < 1 or warmup < 0 or batch < 1:
        raise InvalidArgumentError("repeats >= 1, warmup >= 0, batch >= 1")
    resolution = _timer_resolution()
    report = BenchReport()
    rng = np.random.default_rng(seed)
    singles = {}
    batches = {}
    for length in lengths:
        singles[length] = rng.standard_normal(int(length))
        batches[length] = [rng.standard_normal(int(length)) for _ in range(batch)]
    for length in lengths:
        for _ in range(warmup):
            single_fn(singles[length])
        batch_fn(batches[length])  # one batch warm pass (shapes/JIT)
    lat = {length: np.empty(repeats) for length in lengths}
    thr = {length: np.empty(repeats) for length in lengths}
    for r in range(repeats):
        for length in lengths:
            t0 = time.perf_counter()
            single_fn(singles[length])
            lat[length][r] = time.perf_counter() - t0
    for r in range(repeats):
        for length in lengths:
            t0 = time.perf_counter()
            batch_fn(batches[length])
            thr[length][r] = batch / (time.perf_counter() - t0)
    for length in lengths:
        lat_mean = float(lat[length].mean())
        unreliable = resolution > 0.01 * lat_mean
        if unreliable:
            warnings.warn(
                f"timer resolution {resolution:.2e}s exceeds 1% of latency {lat_mean:.2e}s"
            )
        report.rows.append(BenchRow(
            length=int(length),
            latency_mean_ms=lat_mean * 1e3,
            latency_std_ms=float(lat[length].std()) * 1e3,
            throughput_mean=float(thr[length].mean()),
            throughput_std=float(thr[length].std()),
            repeats=repeats,
            warmup=warmup,
            batch=batch,
            unreliable_timer=unreliable,
        ))
    return report
