"""Downstream ingestion and linear-probe evaluation.

CSV records (one labeled series per row, empty cells for missing values)
are zero-filled when missingness stays below the threshold and dropped
otherwise. Probing follows a subject-wise protocol: an outer train/test
split by subject, grid-searched logistic regression with subject-wise CV
folds on the training side, and AUROC/AUPRC on the held-out subjects,
repeated over shuffled splits.

The logistic solver is FISTA-style proximal gradient on the logistic loss,
which covers the none / l2 / l1 / elastic-net penalty grid with one code
path. Features are standardized per training fold.
"""

from __future__ import annotations

import csv
import json
import os
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DegenerateLabelError,
    EmptyDatasetError,
    InvalidArgumentError,
    ParseError,
    UndefinedMetricError,
)
from .synthgen import derive_seed


@dataclass
class LabeledSeries:
    subject_id: str
    series: np.ndarray
    label: int


@dataclass
class IngestSummary:
    total: int
    kept: int
    dropped: int


@dataclass(frozen=True)
class ProbeConfig:
    test_fraction: float = 0.2
    cv_folds: int = 3
    n_shuffles: int = 5
    classifier: str = "logistic"
    c_grid: tuple = (0.1, 1.0, 10.0, 100.0)
    penalties: tuple = ("l2", "l1", "elasticnet", "none")
    l1_ratios: tuple = (0.5, 0.7, 0.9)
    max_iter: int = 400

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise InvalidArgumentError("test_fraction must be in (0, 1)")
        if self.cv_folds < 2:
            raise InvalidArgumentError("cv_folds must be >= 2")
        if self.n_shuffles < 1:
            raise InvalidArgumentError("n_shuffles must be >= 1")
        if self.classifier != "logistic":
            raise InvalidArgumentError(f"unsupported classifier {self.classifier!r}")

    def grid(self):
        """Deterministic hyperparameter grid order."""
        combos = []
        for penalty in self.penalties:
            if penalty == "none":
                combos.append({"penalty": "none", "c": 1.0, "l1_ratio": 0.0})
            elif penalty == "elasticnet":
                for c in self.c_grid:
                    for r in self.l1_ratios:
                        combos.append({"penalty": penalty, "c": c, "l1_ratio": r})
            else:
                for c in self.c_grid:
                    combos.append({"penalty": penalty, "c": c, "l1_ratio": 0.0})
        return combos


@dataclass
class ShuffleResult:
    auroc: float
    auprc: float
    chosen: dict


@dataclass
class ProbeReport:
    auroc_mean: float
    auroc_std: float
    auprc_mean: float
    auprc_std: float
    shuffles: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------

def ingest_csv(path, missing_threshold: float = 0.25):
    """Read `subject_id,label,v0,v1,...` rows; zero-fill or drop by missingness."""
    records = []
    dropped = 0
    total = 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["subject_id", "label"]:
            raise ParseError("line 1: expected header starting 'subject_id,label'")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            total += 1
            if len(row) < 3:
                raise ParseError(f"line {lineno}: record has no series cells")
            subject = row[0].strip()
            if not subject:
                raise ParseError(f"line {lineno}: empty subject_id")
            try:
                label = int(row[1])
            except ValueError:
                raise ParseError(f"line {lineno}: label {row[1]!r} is not an integer")
            if label not in (0, 1):
                raise ParseError(f"line {lineno}: label must be 0 or 1")
            cells = row[2:]
            missing = np.array([c.strip() == "" for c in cells])
            frac = missing.mean()
            if frac >= missing_threshold:
                dropped += 1
                continue
            values = np.zeros(len(cells))
            for j, cell in enumerate(cells):
                if missing[j]:
                    continue
                try:
                    values[j] = float(cell)
                except ValueError:
                    raise ParseError(f"line {lineno}: cell {j} value {cell!r} is not numeric")
            if not np.all(np.isfinite(values)):
                raise ParseError(f"line {lineno}: non-finite value")
            records.append(LabeledSeries(subject_id=subject, series=values, label=label))
    if not records:
        raise EmptyDatasetError(f"no records retained from {path}")
    return records, IngestSummary(total=total, kept=len(records), dropped=dropped)


# ---------------------------------------------------------------------------
# subject-wise splitting
# ---------------------------------------------------------------------------

def _subject_majority_labels(subjects, labels):
    by_subject = {}
    for s, y in zip(subjects, labels):
        by_subject.setdefault(s, []).append(int(y))
    return {s: int(round(np.mean(ys) + 1e-9)) for s, ys in by_subject.items()}


def _split_subjects(subjects, labels, test_fraction, rng):
    """Partition subject ids into (train, test), stratified by majority label."""
    majority = _subject_majority_labels(subjects, labels)
    all_subjects = sorted(majority)
    if len(all_subjects) < 2:
        raise InvalidArgumentError("subject split needs at least 2 subjects")
    n_test = int(round(test_fraction * len(all_subjects)))
    n_test = min(max(n_test, 1), len(all_subjects) - 1)
    strata = {}
    for s in all_subjects:
        strata.setdefault(majority[s], []).append(s)
    test = []
    quotas = []
    for y in sorted(strata):
        members = strata[y]
        exact = test_fraction * len(members)
        quotas.append((y, int(np.floor(exact)), exact - np.floor(exact)))
    take = {y: q for y, q, _ in quotas}
    deficit = n_test - sum(take.values())
    for y, _, _ in sorted(quotas, key=lambda t: (-t[2], t[0]))[:max(deficit, 0)]:
        take[y] += 1
    for y in sorted(strata):
        members = list(strata[y])
        rng.shuffle(members)
        test.extend(members[: take[y]])
    test = set(test)
    # quota rounding can drift off n_test; rebalance deterministically
    pool = [s for s in all_subjects if s not in test]
    rng.shuffle(pool)
    while len(test) < n_test and len(pool) > 1:
        test.add(pool.pop())
    while len(test) > n_test:
        test.discard(sorted(test)[-1])
    train = [s for s in all_subjects if s not in test]
    return train, sorted(test)


def subject_split(records, test_fraction=0.2, seed=0):
    """Partition records by subject; no subject appears on both sides."""
    subjects = [r.subject_id for r in records]
    labels = [r.label for r in records]
    rng = np.random.default_rng(seed)
    train_subj, test_subj = _split_subjects(subjects, labels, test_fraction, rng)
    train_set = set(train_subj)
    train = [r for r in records if r.subject_id in train_set]
    test = [r for r in records if r.subject_id not in train_set]
    return train, test


# ---------------------------------------------------------------------------
# ranking metrics
# ---------------------------------------------------------------------------

def _midranks(values):
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    sorted_vals = values[order]
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * ((i + 1) + (j + 1))
        i = j + 1
    return ranks


def _check_binary(labels):
    labels = np.asarray(labels)
    if labels.size == 0 or not np.isin(labels, (0, 1)).all():
        raise InvalidArgumentError("labels must be binary 0/1")
    return labels


def auroc(scores, labels) -> float:
    """Probability a random positive outranks a random negative, ties at 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _check_binary(labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("auroc needs both classes present")
    ranks = _midranks(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(scores, labels) -> float:
    """Area under the precision-recall step curve, descending-score sweep."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _check_binary(labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetricError("auprc needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    area = 0.0
    prev_recall = 0.0
    tp = 0
    fp = 0
    i = 0
    n = len(s)
    while i < n:
        j = i
        while j + 1 < n and s[j + 1] == s[i]:
            j += 1
        tp += int(y[i:j + 1].sum())
        fp += int((1 - y[i:j + 1]).sum())
        recall = tp / n_pos
        precision = tp / (tp + fp)
        area += (recall - prev_recall) * precision
        prev_recall = recall
        i = j + 1
    return float(area)


# ---------------------------------------------------------------------------
# logistic probe (proximal gradient)
# ---------------------------------------------------------------------------

def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class LogisticProbe:
    """Binary logistic regression trained by FISTA proximal gradient.

    Objective: mean logistic loss + (1 / (C n)) * penalty, bias unpenalized.
    """

    def __init__(self, penalty="l2", c=1.0, l1_ratio=0.0, max_iter=400, tol=1e-8):
        if penalty not in ("none", "l1", "l2", "elasticnet"):
            raise InvalidArgumentError(f"unknown penalty {penalty!r}")
        self.penalty = penalty
        self.c = float(c)
        self.l1_ratio = float(l1_ratio)
        self.max_iter = max_iter
        self.tol = tol
        self.w = None
        self.b = 0.0

    def _lambdas(self, n):
        base = 1.0 / (self.c * n)
        if self.penalty == "none":
            return 0.0, 0.0
        if self.penalty == "l2":
            return 0.0, base
        if self.penalty == "l1":
            return base, 0.0
        return self.l1_ratio * base, (1.0 - self.l1_ratio) * base

    def fit(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        n, d = x.shape
        lam1, lam2 = self._lambdas(n)
        # Lipschitz bound for the smooth part: sigma_max(X)^2 / (4n) + lam2
        sq_norm = np.linalg.norm(x, 2) ** 2 if min(n, d) <= 512 else np.linalg.norm(x) ** 2
        step = 1.0 / (sq_norm / (4.0 * n) + lam2 + 1e-12)
        w = np.zeros(d)
        b = 0.0
        wv, bv = w.copy(), b
        t_momentum = 1.0
        for _ in range(self.max_iter):
            z = x @ wv + bv
            p = _sigmoid(z)
            gw = x.T @ (p - y) / n + lam2 * wv
            gb = float((p - y).mean())
            w_new = wv - step * gw
            if lam1 > 0:
                thr = step * lam1
                w_new = np.sign(w_new) * np.maximum(np.abs(w_new) - thr, 0.0)
            b_new = bv - step * gb
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_momentum ** 2))
            beta = (t_momentum - 1.0) / t_new
            wv = w_new + beta * (w_new - w)
            bv = b_new + beta * (b_new - b)
            delta = max(np.abs(w_new - w).max() if d else 0.0, abs(b_new - b))
            w, b, t_momentum = w_new, b_new, t_new
            if delta < self.tol * max(1.0, np.abs(w).max()):
                break
        self.w, self.b = w, b
        return self

    def decision(self, x):
        return np.asarray(x, dtype=np.float64) @ self.w + self.b

    def predict_proba(self, x):
        return _sigmoid(self.decision(x))


class _Scaler:
    def fit(self, x):
        self.mean = x.mean(axis=0)
        std = x.std(axis=0)
        std[std < 1e-12] = 1.0
        self.std = std
        return self

    def transform(self, x):
        return (x - self.mean) / self.std


def _subject_folds(subjects, labels, k, rng):
    """Subject-wise CV folds, subjects dealt round-robin per label stratum."""
    majority = _subject_majority_labels(subjects, labels)
    strata = {}
    for s in sorted(majority):
        strata.setdefault(majority[s], []).append(s)
    fold_of = {}
    counter = 0
    for y in sorted(strata):
        members = list(strata[y])
        rng.shuffle(members)
        for s in members:
            fold_of[s] = counter % k
            counter += 1
    return fold_of


def _fit_eval(x_tr, y_tr, x_te, y_te, combo, max_iter):
    scaler = _Scaler().fit(x_tr)
    model = LogisticProbe(
        penalty=combo["penalty"], c=combo["c"], l1_ratio=combo["l1_ratio"],
        max_iter=max_iter,
    ).fit(scaler.transform(x_tr), y_tr)
    scores = model.decision(scaler.transform(x_te))
    return auroc(scores, y_te), scores, model


def probe(embeddings, labels, subjects, config: ProbeConfig = ProbeConfig(), seed=0):
    """Grid-searched subject-wise linear probing; mean/std over shuffles."""
    x = np.asarray(embeddings, dtype=np.float64)
    y = _check_binary(labels)
    subjects = np.asarray(subjects)
    if x.shape[0] != y.size or x.shape[0] != subjects.size:
        raise InvalidArgumentError("embeddings, labels, subjects must align")
    grid = config.grid()
    results = []
    for shuffle in range(config.n_shuffles):
        rng = np.random.default_rng(derive_seed(seed, 4, shuffle))
        train_subj, test_subj = _split_subjects(subjects, y, config.test_fraction, rng)
        train_set = set(train_subj)
        tr = np.array([s in train_set for s in subjects])
        te = ~tr
        assert not (set(subjects[tr]) & set(subjects[te]))
        x_tr, y_tr = x[tr], y[tr]
        x_te, y_te = x[te], y[te]

        fold_of = _subject_folds(subjects[tr], y_tr, config.cv_folds, rng)
        fold_ids = np.array([fold_of[s] for s in subjects[tr]])
        best = None
        for combo in grid:
            fold_scores = []
            for fold in range(config.cv_folds):
                va = fold_ids == fold
                fit_rows = ~va
                if len(np.unique(y_tr[fit_rows])) < 2:
                    warnings.warn(f"fold {fold}: single-class training fold skipped")
                    continue
                if len(np.unique(y_tr[va])) < 2 or va.sum() == 0:
                    warnings.warn(f"fold {fold}: single-class validation fold skipped")
                    continue
                score, _, _ = _fit_eval(
                    x_tr[fit_rows], y_tr[fit_rows], x_tr[va], y_tr[va], combo,
                    config.max_iter,
                )
                fold_scores.append(score)
            if fold_scores:
                mean_score = float(np.mean(fold_scores))
                if best is None or mean_score > best[0]:
                    best = (mean_score, combo)
        if best is None:
            raise DegenerateLabelError("all CV folds skipped: labels too degenerate")
        _, combo = best
        if len(np.unique(y_te)) < 2:
            raise DegenerateLabelError("hold-out subjects carry a single class")
        test_auroc, scores, _ = _fit_eval(x_tr, y_tr, x_te, y_te, combo, config.max_iter)
        results.append(ShuffleResult(
            auroc=test_auroc, auprc=auprc(scores, y_te), chosen=dict(combo)
        ))
    aurocs = np.array([r.auroc for r in results])
    auprcs = np.array([r.auprc for r in results])
    return ProbeReport(
        auroc_mean=float(aurocs.mean()),
        auroc_std=float(aurocs.std()),
        auprc_mean=float(auprcs.mean()),
        auprc_std=float(auprcs.std()),
        shuffles=results,
    )


# ---------------------------------------------------------------------------
# bundled synthetic downstream benchmark (periodic-heavy vs noise-heavy)
# ---------------------------------------------------------------------------

def make_downstream_benchmark(n_subjects=200, records_per_subject=3, length=1440,
                              seed=1234, periods=(30, 60, 90, 120, 150, 180)):
    """Binary benchmark: label 1 subjects emit periodicity-dominated series,
    label 0 subjects emit noise-dominated series. Subject labels are fixed;
    every record inherits its subject's label."""
    from . import synthgen as sg

    records = []
    for i in range(n_subjects):
        label = i % 2
        for r in range(records_per_subject):
            rec_seed = derive_seed(seed, i, r)
            rng = np.random.default_rng(rec_seed)
            period = float(periods[int(rng.integers(0, len(periods)))])
            ell = float(np.exp(rng.uniform(np.log(0.5), np.log(2.0))))
            if label == 1:
                amp = float(rng.uniform(0.8, 1.5))
                noise = float(np.exp(rng.uniform(np.log(0.01), np.log(0.05))))
            else:
                amp = float(rng.uniform(0.01, 0.05))
                noise = float(np.exp(rng.uniform(np.log(0.8), np.log(1.5))))
            expr = sg.add(
                sg.mul(sg.leaf(sg.constant(amp)), sg.leaf(sg.periodic_sine(ell, period))),
                sg.leaf(sg.white_noise(noise)),
            )
            series = sg.sample_gp(expr, length, derive_seed(rec_seed, 9))
            records.append(LabeledSeries(
                subject_id=f"s{i:04d}", series=series.astype(np.float32), label=label
            ))
    return records


def write_downstream_csv(records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        width = max(len(r.series) for r in records)
        writer.writerow(["subject_id", "label"] + [f"v{i}" for i in range(width)])
        for r in records:
            row = [r.subject_id, r.label] + [repr(float(v)) for v in r.series]
            row += [""] * (width - len(r.series))
            writer.writerow(row)


# ---------------------------------------------------------------------------
# embedding files: raw little-endian float32 + JSON sidecar + index CSV
# ---------------------------------------------------------------------------

def save_embeddings(path, matrix, index_rows: Optional[Sequence] = None):
    matrix = np.asarray(matrix, dtype="<f4")
    matrix.tofile(path)
    with open(path + ".meta.json", "w") as fh:
        json.dump({"rows": matrix.shape[0], "dim": matrix.shape[1], "dtype": "<f4"},
                  fh, sort_keys=True)
        fh.write("\n")
    if index_rows is not None:
        with open(os.path.splitext(path)[0] + ".index.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row", "subject_id", "label"])
            for i, (subject, label) in enumerate(index_rows):
                writer.writerow([i, subject, label])


def load_embeddings(path):
    with open(path + ".meta.json") as fh:
        meta = json.load(fh)
    data = np.fromfile(path, dtype="<f4")
    if data.size != meta["rows"] * meta["dim"]:
        raise InvalidArgumentError("embedding payload does not match its sidecar")
    return data.reshape(meta["rows"], meta["dim"]).astype(np.float64)


def load_index(path):
    subjects, labels = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            subjects.append(row["subject_id"])
            labels.append(int(row["label"]))
    return np.array(subjects), np.array(labels)
