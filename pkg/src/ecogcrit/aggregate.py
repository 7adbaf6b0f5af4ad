"""Electrode-level aggregation of trial scores."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .dataset import N_REGIONS
from .errors import InvalidInputError, TrainingError
from .mlp import MLP, LossSpec, focal_loss  # noqa: F401  (re-exported)

N_BINS = 10
AGG_INPUT = N_BINS + N_REGIONS
AGG_METHODS = ("average", "mlp_hist", "mlp_hist_region")

VERDICT_HEADER = ["subject", "electrode", "score", "decision", "threshold", "n_trials", "fold"]


def _scores(trial_scores) -> np.ndarray:
    s = np.asarray(trial_scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise InvalidInputError("at least one trial score is required")
    return s


def aggregate_by_average(trial_scores) -> float:
    return float(np.mean(_scores(trial_scores)))


@dataclass(frozen=True, eq=False)
class ScoreHistogram:
    counts: np.ndarray

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, N_BINS + 1)


def score_histogram(trial_scores) -> ScoreHistogram:
    """Normalised 10-bin histogram over [0, 1]; the last bin includes 1.0."""
    s = _scores(trial_scores)
    if np.any(~np.isfinite(s)) or np.any(s < 0.0) or np.any(s > 1.0):
        raise InvalidInputError("trial scores must lie in [0, 1]")
    bins = np.minimum((s * N_BINS).astype(int), N_BINS - 1)
    counts = np.bincount(bins, minlength=N_BINS).astype(np.float64)
    return ScoreHistogram(counts / s.size)


def aggregator_input(trial_scores, region_one_hot=None, use_region: bool = True) -> np.ndarray:
    """36-long vector: histogram followed by the region block (zeros if unused)."""
    v = np.zeros(AGG_INPUT)
    v[:N_BINS] = score_histogram(trial_scores).counts
    if use_region and region_one_hot is not None:
        r = np.asarray(region_one_hot, dtype=np.float64)
        if r.shape != (N_REGIONS,):
            raise InvalidInputError(f"region one-hot must have {N_REGIONS} entries")
        v[N_BINS:] = r
    return v


@dataclass
class AggregatorMlp:
    """Histogram(+region) -> 64 -> 32 -> 1 network trained with focal loss."""

    net: MLP
    gamma_f: float = 2.0
    alpha_f: float = 0.83
    lr: float = 1e-3
    use_region: bool = True
    loss_history: list[float] = field(default_factory=list)

    HIDDEN = (64, 32)

    @classmethod
    def build(cls, seed: int, n_inputs: int = AGG_INPUT, **kw) -> "AggregatorMlp":
        if n_inputs != AGG_INPUT:
            raise InvalidInputError(f"aggregator input must be {AGG_INPUT}-dimensional, got {n_inputs}")
        return cls(MLP.init((AGG_INPUT,) + cls.HIDDEN + (1,), seed), **kw)

    @property
    def loss(self) -> LossSpec:
        return LossSpec("focal", self.gamma_f, self.alpha_f)

    def predict(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        if Z.shape[1] != AGG_INPUT:
            raise InvalidInputError(f"aggregator input must be {AGG_INPUT}-dimensional, got {Z.shape[1]}")
        if not self.use_region:
            Z = Z.copy()
            Z[:, N_BINS:] = 0.0
        return self.net.predict_proba(Z)

    def save(self, path) -> None:
        arrays = {f"W{k}": W for k, W in enumerate(self.net.weights)}
        arrays.update({f"b{k}": b for k, b in enumerate(self.net.biases)})
        meta = np.array([self.gamma_f, self.alpha_f, self.lr, float(self.use_region)])
        np.savez(path, meta=meta, **arrays)

    @classmethod
    def load(cls, path) -> "AggregatorMlp":
        z = np.load(path)
        n = sum(1 for k in z.files if k.startswith("W"))
        Ws = [z[f"W{k}"] for k in range(n)]
        bs = [z[f"b{k}"] for k in range(n)]
        sizes = (Ws[0].shape[0],) + tuple(W.shape[1] for W in Ws)
        g, a, lr, use_region = z["meta"].tolist()
        return cls(MLP(sizes, Ws, bs), g, a, lr, bool(use_region))


def train_aggregator_mlp(
    Z,
    labels,
    epochs: int = 20,
    lr: float = 1e-3,
    seed: int = 0,
    gamma_f: float = 2.0,
    alpha_f: float = 0.83,
    batch_size: int = 8,
    use_region: bool = True,
) -> AggregatorMlp:
    """Train the stage-2 network on [E x 36] inputs; records per-epoch mean loss."""
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(labels).astype(np.float64)
    if Z.ndim != 2 or Z.shape[1] != AGG_INPUT:
        raise InvalidInputError(f"aggregator input must be [E x {AGG_INPUT}], got {Z.shape}")
    if np.unique(y).size < 2:
        raise TrainingError("aggregator training needs both classes")
    if not use_region:
        Z = Z.copy()
        Z[:, N_BINS:] = 0.0
    agg = AggregatorMlp.build(seed, gamma_f=gamma_f, alpha_f=alpha_f, lr=lr, use_region=use_region)
    agg.net.fit(Z, y, agg.loss, epochs, lr, batch_size, seed + 1)
    agg.loss_history = list(agg.net.loss_history)
    return agg


@dataclass(frozen=True)
class ElectrodeVerdict:
    subject: str
    electrode: int
    score: float
    decision: bool
    threshold: float
    n_trials: int
    fold: int


def predict_electrode(
    agg,
    trial_scores,
    region_one_hot=None,
    threshold: float = 0.5,
    electrode: int = -1,
    subject: str = "",
    fold: int = -1,
) -> ElectrodeVerdict:
    """Score one electrode with ``agg`` (an AggregatorMlp, or None/'average')."""
    s = _scores(trial_scores)
    if agg is None or agg == "average":
        score = aggregate_by_average(s)
    else:
        score = float(agg.predict(aggregator_input(s, region_one_hot, agg.use_region))[0])
    return ElectrodeVerdict(subject, int(electrode), score, bool(score >= threshold), float(threshold), int(s.size), int(fold))


def write_verdicts(path, verdicts: Iterable[ElectrodeVerdict]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VERDICT_HEADER)
        for v in verdicts:
            w.writerow([v.subject, v.electrode, repr(v.score), int(v.decision), repr(v.threshold), v.n_trials, v.fold])

