"""Validation folds, ranking and thresholded metrics, paired significance test."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import norm, rankdata

from .errors import ConfigurationError, InsufficientDataError, UndefinedMetricError

EXACT_MAX_N = 12


@dataclass(frozen=True)
class ElectrodeKey:
    subject: str
    electrode: int
    label: int


@dataclass(frozen=True)
class Fold:
    train: tuple[int, ...]  # indices into the electrode list
    test: tuple[int, ...]
    name: str = ""


@dataclass(frozen=True)
class FoldPlan:
    mode: str
    folds: tuple[Fold, ...]
    seed: int


def make_folds(electrodes: Sequence[ElectrodeKey], mode: str = "loo", seed: int = 0, n_folds: int = 8) -> FoldPlan:
    """Electrode-level stratified CV (``cv8``) or leave-one-subject-out (``loo``).

    Fold members are indices into ``electrodes``, which must already be the
    labelled (tested) electrodes only.
    """
    n = len(electrodes)
    if mode == "cv8":
        if n < n_folds:
            raise ConfigurationError(f"cv8 needs at least {n_folds} labelled electrodes, got {n}")
        rng = np.random.default_rng(seed)
        labels = np.array([e.label for e in electrodes])
        assignment = np.empty(n, dtype=int)
        offset = 0
        # stratify: deal each class round-robin after a seeded shuffle
        for c in (1, 0):
            idx = rng.permutation(np.flatnonzero(labels == c))
            assignment[idx] = (np.arange(idx.size) + offset) % n_folds
            offset = (offset + idx.size) % n_folds
        folds = []
        for k in range(n_folds):
            test = tuple(int(i) for i in np.flatnonzero(assignment == k))
            train = tuple(int(i) for i in np.flatnonzero(assignment != k))
            folds.append(Fold(train, test, f"fold{k}"))
        return FoldPlan("cv8", tuple(folds), seed)
    if mode == "loo":
        subjects = sorted({e.subject for e in electrodes})
        if len(subjects) < 2:
            raise ConfigurationError("leave-one-subject-out needs at least 2 subjects")
        folds = []
        for s in subjects:
            test = tuple(i for i, e in enumerate(electrodes) if e.subject == s)
            train = tuple(i for i, e in enumerate(electrodes) if e.subject != s)
            folds.append(Fold(train, test, s))
        return FoldPlan("loo", tuple(folds), seed)
    raise ConfigurationError(f"unknown validation mode {mode!r}; choose 'cv8' or 'loo'")


def _check_binary(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).astype(int).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels must have equal length")
    return s, y


def roc_auc(scores, labels) -> float:
    """Mann-Whitney U / (n_pos n_neg), ties counted one half."""
    s, y = _check_binary(scores, labels)
    n_pos = int((y == 1).sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC-AUC needs both classes")
    ranks = rankdata(s)  # average ranks for ties
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s, y = _check_binary(scores, labels)
    n_pos = (y == 1).sum()
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC curve needs both classes")
    tp, fp = _block_counts(s, y)
    fpr = np.concatenate(([0.0], fp / n_neg))
    tpr = np.concatenate(([0.0], tp / n_pos))
    return fpr, tpr


def _block_counts(s, y):
    """Cumulative TP/FP after each distinct-score block, in descending score order."""
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    y_sorted = y[order]
    last_of_block = np.r_[np.flatnonzero(np.diff(s_sorted) != 0), y_sorted.size - 1]
    tp = np.cumsum(y_sorted == 1)[last_of_block].astype(np.float64)
    fp = np.cumsum(y_sorted == 0)[last_of_block].astype(np.float64)
    return tp, fp


def pr_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s, y = _check_binary(scores, labels)
    n_pos = (y == 1).sum()
    if n_pos == 0:
        raise UndefinedMetricError("PR curve needs at least one positive")
    tp, fp = _block_counts(s, y)
    return tp / n_pos, tp / (tp + fp)


def pr_auc(scores, labels) -> float:
    """Average precision: sum of recall increments times precision, ties as blocks.

    Accumulated in rational arithmetic so the result is the correctly rounded
    value of the step-form area, independent of summation order.
    """
    s, y = _check_binary(scores, labels)
    n_pos = int((y == 1).sum())
    if n_pos == 0:
        raise UndefinedMetricError("PR curve needs at least one positive")
    tp, fp = _block_counts(s, y)
    total = Fraction(0)
    prev = 0
    for a, b in zip(tp.astype(int).tolist(), fp.astype(int).tolist()):
        if a > prev:
            total += Fraction((a - prev) * a, a + b)
        prev = a
    return float(total / n_pos)


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2.0 * tp / denom


def select_threshold_max_f1(train_scores, train_labels) -> float:
    """F1-maximising threshold over {0, 1, midpoints of adjacent distinct scores}.

    A score ``>= threshold`` predicts positive. Ties go to the higher threshold.
    """
    s, y = _check_binary(train_scores, train_labels)
    if (y == 1).sum() == 0:
        raise UndefinedMetricError("threshold selection needs at least one positive")
    u = np.unique(s)
    cands = np.unique(np.r_[0.0, (u[:-1] + u[1:]) / 2.0, 1.0])
    best_t, best_f1 = 0.0, -1.0
    for t in cands:
        pred = s >= t
        tp = int(np.sum(pred & (y == 1)))
        fp = int(np.sum(pred & (y == 0)))
        fn = int(np.sum(~pred & (y == 1)))
        f1 = _f1(tp, fp, fn)
        if f1 >= best_f1:
            best_t, best_f1 = float(t), f1
    return best_t


@dataclass(frozen=True)
class ThresholdMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    balanced_accuracy: float


def thresholded_metrics(scores, labels, threshold: float) -> ThresholdMetrics:
    s, y = _check_binary(scores, labels)
    pred = s >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    tn = int(np.sum(~pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    n = tp + fp + tn + fn
    acc = (tp + tn) / n if n else 0.0
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    tnr = tn / (tn + fp) if tn + fp else 0.0
    if tp + fn == 0:
        bal = tnr
    elif tn + fp == 0:
        bal = rec
    else:
        bal = (rec + tnr) / 2.0
    return ThresholdMetrics(acc, prec, rec, _f1(tp, fp, fn), bal)


# ------------------------------------------------------------ Wilcoxon


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    n: int
    exact: bool


def _signed_ranks(a, b):
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    d = d[d != 0]
    if d.size < 5:
        raise InsufficientDataError(f"need at least 5 non-zero differences, got {d.size}")
    return d, rankdata(np.abs(d))


def _exact_lower_tail(ranks: np.ndarray, w: float) -> float:
    """P(T+ <= w) under the sign-flip null, counting rank sums on a half-integer grid."""
    r2 = np.rint(ranks * 2).astype(int)  # mid-ranks are multiples of 1/2
    total = int(r2.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in r2:
        counts[r:] = counts[r:] + counts[: total + 1 - r].copy()
    limit = int(np.floor(w * 2 + 1e-9))
    return float(counts[: limit + 1].sum() / 2.0 ** ranks.size)


def wilcoxon_signed_rank(paired_a, paired_b) -> WilcoxonResult:
    """Two-sided signed-rank test; W is the smaller of the two rank sums.

    Exact null for up to 12 non-zero differences, normal approximation
    with tie and continuity corrections beyond that.
    """
    d, ranks = _signed_ranks(paired_a, paired_b)
    n = d.size
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    if n <= EXACT_MAX_N:
        p = min(1.0, 2.0 * _exact_lower_tail(ranks, w))
        return WilcoxonResult(w, p, n, True)
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
    z = (w - mean + 0.5) / math.sqrt(var)
    p = min(1.0, 2.0 * float(norm.cdf(z)))
    return WilcoxonResult(w, p, n, False)


# ------------------------------------------------------------ reports


METRIC_NAMES = ("roc_auc", "pr_auc", "accuracy", "precision", "recall", "f1", "balanced_accuracy")


def metric_block(scores, labels, threshold: float) -> dict:
    """All report metrics for one score set; undefined ranking metrics become None."""
    s, y = _check_binary(scores, labels)
    out = {"n": int(y.size), "n_pos": int(y.sum()), "threshold": float(threshold)}
    try:
        out["roc_auc"] = roc_auc(s, y)
    except UndefinedMetricError:
        out["roc_auc"] = None
    try:
        out["pr_auc"] = pr_auc(s, y)
    except UndefinedMetricError:
        out["pr_auc"] = None
    tm = thresholded_metrics(s, y, threshold)
    out.update(
        accuracy=tm.accuracy,
        precision=tm.precision,
        recall=tm.recall,
        f1=tm.f1,
        balanced_accuracy=tm.balanced_accuracy,
    )
    return out


@dataclass
class EvalReport:
    folds: list[dict]
    pooled: dict
    fold_mean: dict
    roc_points: tuple[np.ndarray, np.ndarray] = field(repr=False, default=None)
    pr_points: tuple[np.ndarray, np.ndarray] = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {"pooled": self.pooled, "fold_mean": self.fold_mean, "folds": self.folds}


def build_report(fold_names, fold_scores, fold_labels, fold_thresholds) -> EvalReport:
    """Per-fold blocks, pooled block over concatenated held-out scores, and fold means.

    The pooled thresholded metrics apply each fold's own threshold to its
    own electrodes before pooling the confusion counts.
    """
    folds = []
    for name, s, y, t in zip(fold_names, fold_scores, fold_labels, fold_thresholds):
        blk = metric_block(s, y, t)
        blk["fold"] = name
        folds.append(blk)
    s_all = np.concatenate([np.asarray(s, dtype=np.float64) for s in fold_scores])
    y_all = np.concatenate([np.asarray(y, dtype=int) for y in fold_labels])
    pred_all = np.concatenate([np.asarray(s) >= t for s, t in zip(fold_scores, fold_thresholds)])
    pooled = metric_block(s_all, y_all, 0.5)
    tm = thresholded_metrics(pred_all.astype(float), y_all, 0.5)
    pooled.update(
        threshold=None,
        accuracy=tm.accuracy,
        precision=tm.precision,
        recall=tm.recall,
        f1=tm.f1,
        balanced_accuracy=tm.balanced_accuracy,
    )
    fold_mean = {}
    for m in METRIC_NAMES:
        vals = [f[m] for f in folds if f[m] is not None]
        fold_mean[m] = float(np.mean(vals)) if vals else None
    roc = roc_curve(s_all, y_all) if 0 < y_all.sum() < y_all.size else None
    pr = pr_curve(s_all, y_all) if y_all.sum() > 0 else None
    return EvalReport(folds, pooled, fold_mean, roc, pr)


def write_curve_csv(path, xs, ys, header: tuple[str, str]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for x, y in zip(xs, ys):
            w.writerow([repr(float(x)), repr(float(y))])


def grid_product(*axes) -> list[tuple]:
    return list(product(*axes))
