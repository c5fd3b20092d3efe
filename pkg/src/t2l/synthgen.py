"""Synthetic periodic time-series generation from composed GP kernels.

A sample is drawn from a zero-mean Gaussian process whose covariance is a
random composition (binary + / *) of one to four non-periodic kernels and
exactly one exponential-sine-squared kernel carrying the period label.

Covariances are factorized with a rank-revealing pivoted Cholesky
(LAPACK ``pstrf``), which samples exactly from rank-deficient PSD matrices
such as the pure-periodic kernel; a diagonal-jitter ladder (1e-6 doubling
to 1e-2, scaled by trace/n) is kept as the fallback for matrices the
pivoted factorization cannot certify.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy.linalg.lapack import dpstrf

from . import _kernels
from .errors import InvalidArgumentError, NumericalInstabilityError

DEFAULT_PERIODS = (30, 60, 90, 120, 150, 180)
DEFAULT_LENGTH = 1440

CONSTANT = "constant"
WHITE_NOISE = "white_noise"
LINEAR = "linear"
RBF = "rbf"
RATIONAL_QUADRATIC = "rational_quadratic"
PERIODIC_SINE = "periodic_sine"

NON_PERIODIC_KINDS = (CONSTANT, WHITE_NOISE, LINEAR, RBF, RATIONAL_QUADRATIC)

# Hyperparameter ranges (log-uniform) used by random_expr.
HYPER_RANGES = {
    CONSTANT: {"variance": (0.1, 2.0)},
    WHITE_NOISE: {"variance": (0.01, 0.5)},
    LINEAR: {"variance": (1e-6, 1e-4)},
    RBF: {"length_scale": (10.0, 400.0)},
    RATIONAL_QUADRATIC: {"length_scale": (10.0, 400.0), "alpha": (0.1, 10.0)},
    PERIODIC_SINE: {"length_scale": (0.5, 2.0)},
}

_PARAM_NAMES = {
    CONSTANT: ("variance",),
    WHITE_NOISE: ("variance",),
    LINEAR: ("variance",),
    RBF: ("length_scale",),
    RATIONAL_QUADRATIC: ("length_scale", "alpha"),
    PERIODIC_SINE: ("length_scale", "period"),
}

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One splitmix64 scramble step (unsigned 64-bit arithmetic)."""
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(master: int, *path: int) -> int:
    """Splittable counter: derive an independent child seed from a path."""
    s = master & _MASK64
    for p in path:
        s = splitmix64((s ^ ((p + 1) * _GOLDEN)) & _MASK64)
    return s


@dataclass(frozen=True)
class KernelSpec:
    """One base kernel with its positive hyperparameters."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _PARAM_NAMES:
            raise InvalidArgumentError(f"unknown kernel kind {self.kind!r}")
        expected = _PARAM_NAMES[self.kind]
        if set(self.params) != set(expected):
            raise InvalidArgumentError(
                f"{self.kind} expects params {expected}, got {tuple(self.params)}"
            )
        for name, value in self.params.items():
            v = float(value)
            if not np.isfinite(v) or v <= 0.0:
                raise InvalidArgumentError(
                    f"{self.kind}.{name} must be strictly positive and finite, got {value}"
                )

    def __getitem__(self, name: str) -> float:
        return float(self.params[name])


def constant(variance: float) -> KernelSpec:
    return KernelSpec(CONSTANT, {"variance": variance})


def white_noise(variance: float) -> KernelSpec:
    return KernelSpec(WHITE_NOISE, {"variance": variance})


def linear(variance: float) -> KernelSpec:
    return KernelSpec(LINEAR, {"variance": variance})


def rbf(length_scale: float) -> KernelSpec:
    return KernelSpec(RBF, {"length_scale": length_scale})


def rational_quadratic(length_scale: float, alpha: float) -> KernelSpec:
    return KernelSpec(RATIONAL_QUADRATIC, {"length_scale": length_scale, "alpha": alpha})


def periodic_sine(length_scale: float, period: float) -> KernelSpec:
    return KernelSpec(PERIODIC_SINE, {"length_scale": length_scale, "period": period})


@dataclass(frozen=True)
class KernelExpr:
    """Binary composition tree; a node is a leaf iff ``spec`` is set."""

    spec: Optional[KernelSpec] = None
    op: Optional[str] = None  # "add" | "mul"
    left: Optional["KernelExpr"] = None
    right: Optional["KernelExpr"] = None

    def __post_init__(self):
        if self.spec is not None:
            if self.op is not None or self.left is not None or self.right is not None:
                raise InvalidArgumentError("leaf nodes carry only a KernelSpec")
        else:
            if self.op not in ("add", "mul") or self.left is None or self.right is None:
                raise InvalidArgumentError("internal nodes need op and two children")

    @property
    def is_leaf(self) -> bool:
        return self.spec is not None

    def leaves(self) -> Iterator[KernelSpec]:
        if self.is_leaf:
            yield self.spec
        else:
            yield from self.left.leaves()
            yield from self.right.leaves()


def leaf(spec: KernelSpec) -> KernelExpr:
    return KernelExpr(spec=spec)


def add(left: KernelExpr, right: KernelExpr) -> KernelExpr:
    return KernelExpr(op="add", left=left, right=right)


def mul(left: KernelExpr, right: KernelExpr) -> KernelExpr:
    return KernelExpr(op="mul", left=left, right=right)


def check_composition(expr: KernelExpr, max_nonperiodic: int = 4) -> None:
    """Validate the 1..max non-periodic + exactly-one-periodic invariant."""
    kinds = [s.kind for s in expr.leaves()]
    n_per = sum(k == PERIODIC_SINE for k in kinds)
    n_non = len(kinds) - n_per
    if n_per != 1:
        raise InvalidArgumentError(f"expected exactly one periodic leaf, found {n_per}")
    if not 1 <= n_non <= max_nonperiodic:
        raise InvalidArgumentError(
            f"expected 1..{max_nonperiodic} non-periodic leaves, found {n_non}"
        )


# ---------------------------------------------------------------------------
# kernel evaluation
# ---------------------------------------------------------------------------

_STATIONARY_IDS = {
    CONSTANT: _kernels.KIND_CONSTANT,
    RBF: _kernels.KIND_RBF,
    RATIONAL_QUADRATIC: _kernels.KIND_RATQUAD,
    PERIODIC_SINE: _kernels.KIND_PERIODIC,
}


def _stationary_params(spec: KernelSpec):
    if spec.kind == CONSTANT:
        return spec["variance"], 0.0
    if spec.kind == RBF:
        return spec["length_scale"], 0.0
    if spec.kind == RATIONAL_QUADRATIC:
        return spec["length_scale"], spec["alpha"]
    return spec["length_scale"], spec["period"]


def eval_kernel(spec: KernelSpec, a: float, b: float) -> float:
    """Evaluate one kernel at a pair of scalar inputs."""
    a = float(a)
    b = float(b)
    if not (np.isfinite(a) and np.isfinite(b)):
        raise InvalidArgumentError("kernel inputs must be finite")
    if spec.kind == WHITE_NOISE:
        return spec["variance"] if a == b else 0.0
    if spec.kind == LINEAR:
        return spec["variance"] * a * b
    kid = _STATIONARY_IDS[spec.kind]
    p0, p1 = _stationary_params(spec)
    d = np.array([abs(a - b)], dtype=np.float64)
    return float(_kernels.stationary_kernel(kid, p0, p1, d)[0])


def _leaf_matrix(spec: KernelSpec, grid: np.ndarray) -> np.ndarray:
    if spec.kind == WHITE_NOISE:
        d = np.abs(grid[:, None] - grid[None, :])
        return np.where(d == 0.0, spec["variance"], 0.0)
    if spec.kind == LINEAR:
        return spec["variance"] * np.outer(grid, grid)
    kid = _STATIONARY_IDS[spec.kind]
    p0, p1 = _stationary_params(spec)
    d = np.abs(grid[:, None] - grid[None, :])
    return _kernels.stationary_kernel(kid, p0, p1, d)


def eval_expr(expr: KernelExpr, grid: Sequence[float]) -> np.ndarray:
    """Evaluate the composed covariance on an arbitrary finite grid."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size < 1:
        raise InvalidArgumentError("grid must be a non-empty 1-D vector")
    if not np.all(np.isfinite(grid)):
        raise InvalidArgumentError("grid values must be finite")
    if expr.is_leaf:
        return _leaf_matrix(expr.spec, grid)
    kl = eval_expr(expr.left, grid)
    kr = eval_expr(expr.right, grid)
    return kl + kr if expr.op == "add" else kl * kr


# ---------------------------------------------------------------------------
# regular-grid evaluation split into smooth + diagonal parts
# ---------------------------------------------------------------------------

class _Split:
    """Covariance on grid 0..n-1 as K = smooth + diag(d).

    The smooth part is carried as a Toeplitz lag vector while the chain stays
    stationary, widening to a full matrix only when a linear leaf appears.
    Additive/multiplicative white-noise contributions stay in the diagonal
    term, which is sampled separately without a matrix factorization.
    """

    __slots__ = ("n", "lags", "mat", "diag")

    def __init__(self, n, lags=None, mat=None, diag=None):
        self.n = n
        self.lags = lags
        self.mat = mat
        self.diag = diag if diag is not None else np.zeros(n)

    def smooth_matrix(self) -> Optional[np.ndarray]:
        if self.mat is not None:
            return self.mat
        if self.lags is not None:
            return _kernels.toeplitz_from_lags(self.lags)
        return None

    def smooth_diag(self) -> np.ndarray:
        if self.mat is not None:
            return np.diagonal(self.mat).copy()
        if self.lags is not None:
            return np.full(self.n, self.lags[0])
        return np.zeros(self.n)

    def is_zero_smooth(self) -> bool:
        if self.mat is not None:
            return not np.any(self.mat)
        if self.lags is not None:
            return not np.any(self.lags)
        return True


def _leaf_split(spec: KernelSpec, n: int) -> _Split:
    if spec.kind == WHITE_NOISE:
        return _Split(n, diag=np.full(n, spec["variance"]))
    if spec.kind == LINEAR:
        grid = np.arange(n, dtype=np.float64)
        return _Split(n, mat=spec["variance"] * np.outer(grid, grid))
    kid = _STATIONARY_IDS[spec.kind]
    p0, p1 = _stationary_params(spec)
    lags = _kernels.stationary_kernel(kid, p0, p1, np.arange(n, dtype=np.float64))
    return _Split(n, lags=np.asarray(lags, dtype=np.float64))


def _combine(a: _Split, b: _Split, op: str) -> _Split:
    n = a.n
    if op == "add":
        if a.mat is None and b.mat is None:
            la = a.lags if a.lags is not None else np.zeros(n)
            lb = b.lags if b.lags is not None else np.zeros(n)
            return _Split(n, lags=la + lb, diag=a.diag + b.diag)
        ma = a.smooth_matrix()
        mb = b.smooth_matrix()
        mat = (ma if ma is not None else 0.0) + (mb if mb is not None else 0.0)
        if np.isscalar(mat):
            mat = np.zeros((n, n))
        return _Split(n, mat=mat, diag=a.diag + b.diag)
    # elementwise product: (S_a + D_a) * (S_b + D_b)
    diag = a.diag * b.smooth_diag() + b.diag * a.smooth_diag() + a.diag * b.diag
    if a.is_zero_smooth() or b.is_zero_smooth():
        return _Split(n, diag=diag)
    if a.mat is None and b.mat is None:
        return _Split(n, lags=a.lags * b.lags, diag=diag)
    return _Split(n, mat=a.smooth_matrix() * b.smooth_matrix(), diag=diag)


def _split_expr(expr: KernelExpr, n: int) -> _Split:
    if expr.is_leaf:
        return _leaf_split(expr.spec, n)
    return _combine(_split_expr(expr.left, n), _split_expr(expr.right, n), expr.op)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

JITTER_START = 1e-6
JITTER_MAX = 1e-2


def cholesky_with_jitter(k: np.ndarray) -> np.ndarray:
    """Plain Cholesky with the doubling jitter ladder (trace/n scaled)."""
    n = k.shape[0]
    scale = max(float(np.trace(k)) / n, 1e-12)
    ladder = []
    eps = JITTER_START
    while eps < JITTER_MAX:
        ladder.append(eps)
        eps *= 2.0
    ladder.append(JITTER_MAX)
    for eps in ladder:
        try:
            return np.linalg.cholesky(k + (eps * scale) * np.eye(n))
        except np.linalg.LinAlgError:
            continue
    raise NumericalInstabilityError(
        f"covariance factorization failed at jitter {JITTER_MAX}"
    )


def _psd_factor(mat: np.ndarray) -> np.ndarray:
    """Rank-revealing factor F with F @ F.T ~= mat for a PSD matrix.

    Falls back to the jitter ladder when the pivoted factorization cannot
    reproduce the diagonal (indefinite input).
    """
    n = mat.shape[0]
    c, piv, rank, info = dpstrf(np.asfortranarray(mat), lower=1, tol=-1.0, overwrite_a=1)
    if info < 0:
        raise NumericalInstabilityError(f"pstrf illegal argument at position {-info}")
    low = np.tril(c)[:, :rank]
    factor = np.empty((n, rank))
    factor[piv - 1, :] = low
    resid = np.diagonal(mat) - np.einsum("ij,ij->i", factor, factor)
    tol = 1e-8 * max(float(np.max(np.diagonal(mat))), 1.0)
    if np.max(np.abs(resid)) > tol:
        return cholesky_with_jitter(mat)
    return factor


def sample_gp(expr: KernelExpr, length: int, seed: int) -> np.ndarray:
    """Draw one sample from N(0, K) with K the composed covariance on 0..length-1.

    Deterministic given (expr, length, seed): the smooth part consumes the
    first rank(K) entries of one standard-normal draw of size ``length``; the
    diagonal part, when present, consumes a second draw.
    """
    if length < 1:
        raise InvalidArgumentError("length must be >= 1")
    split = _split_expr(expr, length)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(length)
    x = np.zeros(length)
    smooth = split.smooth_matrix()
    if smooth is not None and not split.is_zero_smooth():
        factor = _psd_factor(smooth)
        x += factor @ z[: factor.shape[1]]
    if np.any(split.diag > 0):
        z2 = rng.standard_normal(length)
        x += np.sqrt(np.maximum(split.diag, 0.0)) * z2
    return x


# ---------------------------------------------------------------------------
# random expressions and datasets
# ---------------------------------------------------------------------------

def _log_uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def _random_spec(rng: np.random.Generator, kind: str) -> KernelSpec:
    params = {
        name: _log_uniform(rng, lo, hi) for name, (lo, hi) in HYPER_RANGES[kind].items()
    }
    return KernelSpec(kind, params)


def random_expr(seed: int, period: int, max_nonperiodic: int = 4) -> KernelExpr:
    """Random composition: 1..max non-periodic leaves plus one periodic leaf.

    Draw order (frozen for reproducibility): leaf count, then per-leaf kind
    and hyperparameters, then the periodic length-scale, then one uniform
    add/mul tag per composition step, applied left to right.
    """
    if period <= 0:
        raise InvalidArgumentError("period must be positive")
    rng = np.random.default_rng(seed)
    n_leaves = int(rng.integers(1, max_nonperiodic + 1))
    specs = []
    for _ in range(n_leaves):
        kind = NON_PERIODIC_KINDS[int(rng.integers(0, len(NON_PERIODIC_KINDS)))]
        specs.append(_random_spec(rng, kind))
    ell = _log_uniform(rng, *HYPER_RANGES[PERIODIC_SINE]["length_scale"])
    specs.append(periodic_sine(ell, float(period)))
    expr = leaf(specs[0])
    for spec in specs[1:]:
        op = "add" if rng.random() < 0.5 else "mul"
        expr = KernelExpr(op=op, left=expr, right=leaf(spec))
    return expr


@dataclass
class SyntheticSample:
    series: np.ndarray  # float32, fixed length
    period_class: int
    seed: int


@dataclass
class SyntheticDataset:
    samples: list
    split: np.ndarray  # int8 per sample: 0 train, 1 val, 2 test
    period_set: tuple
    length: int
    master_seed: int

    SPLIT_NAMES = ("train", "val", "test")

    def indices(self, split_name: str) -> np.ndarray:
        code = self.SPLIT_NAMES.index(split_name)
        return np.nonzero(self.split == code)[0]

    def labels(self) -> np.ndarray:
        return np.array([s.period_class for s in self.samples], dtype=np.int64)

    def series_matrix(self) -> np.ndarray:
        return np.stack([s.series for s in self.samples])


def plan_dataset(n: int, period_set: Sequence[int], seed: int):
    """Deterministic generation plan: periods, classes, per-sample seeds, split.

    Splitting is stratified per class with largest-remainder rounding so the
    global 70/10/20 counts are exact.
    """
    period_set = tuple(int(p) for p in period_set)
    if len(period_set) < 1 or any(p <= 0 for p in period_set):
        raise InvalidArgumentError("period_set must contain positive periods")
    if n < len(period_set):
        raise InvalidArgumentError(f"n={n} smaller than the class count {len(period_set)}")
    k = len(period_set)
    classes = np.arange(n, dtype=np.int64) % k
    periods = np.array([period_set[c] for c in classes], dtype=np.int64)
    seeds = np.array([derive_seed(seed, 0, i) for i in range(n)], dtype=np.uint64)

    split = np.empty(n, dtype=np.int8)
    targets = _split_targets(np.bincount(classes, minlength=k), (0.7, 0.1))
    for c in range(k):
        idx = np.nonzero(classes == c)[0]
        rng = np.random.default_rng(derive_seed(seed, 1, c))
        idx = idx[rng.permutation(idx.size)]
        n_train, n_val = targets[c]
        split[idx[:n_train]] = 0
        split[idx[n_train:n_train + n_val]] = 1
        split[idx[n_train + n_val:]] = 2
    return periods, classes, seeds, split


def _split_targets(class_counts: np.ndarray, fractions) -> list:
    """Per-class (train, val) counts; global totals match round(frac * n)."""
    n = int(class_counts.sum())
    out = [[0, 0] for _ in class_counts]
    for which, frac in enumerate(fractions):
        total = round(frac * n)
        base = [int(np.floor(frac * c)) for c in class_counts]
        remainders = [frac * c - b for c, b in zip(class_counts, base)]
        deficit = total - sum(base)
        order = sorted(range(len(class_counts)), key=lambda i: (-remainders[i], i))
        for i in order[:deficit]:
            base[i] += 1
        for i, b in enumerate(base):
            out[i][which] = b
    return [tuple(pair) for pair in out]


def generate_dataset(
    n: int,
    period_set: Sequence[int] = DEFAULT_PERIODS,
    seed: int = 0,
    length: int = DEFAULT_LENGTH,
    max_nonperiodic: int = 4,
) -> SyntheticDataset:
    """Generate n labeled samples with periods cycled over the period set."""
    periods, classes, seeds, split = plan_dataset(n, period_set, seed)
    workers = _worker_count()
    args = [
        (int(seeds[i]), int(periods[i]), length, max_nonperiodic) for i in range(n)
    ]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            series_list = list(pool.map(_generate_one, args, chunksize=64))
    else:
        series_list = [_generate_one(a) for a in args]
    samples = [
        SyntheticSample(series=series_list[i], period_class=int(classes[i]), seed=int(seeds[i]))
        for i in range(n)
    ]
    return SyntheticDataset(
        samples=samples,
        split=split,
        period_set=tuple(int(p) for p in period_set),
        length=length,
        master_seed=seed,
    )


def _generate_one(arg) -> np.ndarray:
    sample_seed, period, length, max_nonperiodic = arg
    expr = random_expr(derive_seed(sample_seed, 0), period, max_nonperiodic)
    series = sample_gp(expr, length, derive_seed(sample_seed, 1))
    return series.astype(np.float32)


def _worker_count() -> int:
    raw = os.environ.get("T2L_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# persistence: meta.json sidecar + raw little-endian float32 payload + labels.csv
# ---------------------------------------------------------------------------

FORMAT_VERSION = 1
META_NAME = "meta.json"
SERIES_NAME = "series.f32"
LABELS_NAME = "labels.csv"


def save_dataset(dataset: SyntheticDataset, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    n = len(dataset.samples)
    meta = {
        "version": FORMAT_VERSION,
        "n": n,
        "length": dataset.length,
        "period_set": list(dataset.period_set),
        "master_seed": dataset.master_seed,
        "split_counts": {
            name: int(np.sum(dataset.split == code))
            for code, name in enumerate(SyntheticDataset.SPLIT_NAMES)
        },
    }
    with open(os.path.join(out_dir, META_NAME), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    payload = np.stack([s.series for s in dataset.samples]).astype("<f4")
    payload.tofile(os.path.join(out_dir, SERIES_NAME))
    with open(os.path.join(out_dir, LABELS_NAME), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "period_class", "period", "seed", "split"])
        for i, s in enumerate(dataset.samples):
            writer.writerow([
                i,
                s.period_class,
                dataset.period_set[s.period_class],
                s.seed,
                SyntheticDataset.SPLIT_NAMES[dataset.split[i]],
            ])


def load_dataset(in_dir: str) -> SyntheticDataset:
    with open(os.path.join(in_dir, META_NAME)) as fh:
        meta = json.load(fh)
    if meta.get("version") != FORMAT_VERSION:
        raise InvalidArgumentError(
            f"dataset version {meta.get('version')} unsupported (expected {FORMAT_VERSION})"
        )
    n = meta["n"]
    length = meta["length"]
    payload = np.fromfile(os.path.join(in_dir, SERIES_NAME), dtype="<f4")
    if payload.size != n * length:
        raise InvalidArgumentError("series payload size does not match metadata")
    payload = payload.reshape(n, length)
    samples = []
    split = np.empty(n, dtype=np.int8)
    with open(os.path.join(in_dir, LABELS_NAME), newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            i = int(row["index"])
            if i != len(samples):
                raise InvalidArgumentError("labels table rows out of order")
            samples.append(
                SyntheticSample(
                    series=payload[i],
                    period_class=int(row["period_class"]),
                    seed=int(row["seed"]),
                )
            )
            split[i] = SyntheticDataset.SPLIT_NAMES.index(row["split"])
    if len(samples) != n:
        raise InvalidArgumentError("labels table does not match metadata")
    return SyntheticDataset(
        samples=samples,
        split=split,
        period_set=tuple(meta["period_set"]),
        length=length,
        master_seed=meta["master_seed"],
    )
