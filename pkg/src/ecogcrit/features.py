"""Trial feature vectors: layout, family masks, assembly and standardisation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .dataset import N_REGIONS
from .errors import InvalidInputError, ValidationError
from .nmf import NmfModel, nmf_correlations

N_NMF = 5
N_FEATURES = 35
NMF_SLICE = slice(0, 5)
MEAN_INDEX = 5
REGION_SLICE = slice(6, 32)
GRAPH_SLICE = slice(32, 35)

FAMILIES = ("nmf", "mean", "region", "connectivity")
FAMILY_INDICES = {
    "nmf": list(range(0, 5)),
    "mean": [MEAN_INDEX],
    "region": list(range(6, 32)),
    "connectivity": [32, 33, 34],
}
CONTINUOUS_INDICES = FAMILY_INDICES["nmf"] + FAMILY_INDICES["mean"] + FAMILY_INDICES["connectivity"]

FEATURE_NAMES = (
    [f"nmf_{k}" for k in range(5)]
    + ["mean_activity"]
    + [f"region_{r:02d}" for r in range(N_REGIONS)]
    + ["strength", "eigenvector_centrality", "clustering"]
)

# named masks for the ablation grid
MASK_PRESETS = {
    "all": ("nmf", "mean", "region", "connectivity"),
    "region+connectivity": ("region", "connectivity"),
    "region": ("region",),
    "connectivity": ("connectivity",),
    "nmf+mean": ("nmf", "mean"),
}


def resolve_mask(mask) -> frozenset[str]:
    """Accept a preset name, a '+'-joined string or an iterable of family names."""
    if isinstance(mask, str):
        fams = MASK_PRESETS.get(mask, tuple(mask.split("+")))
    else:
        fams = tuple(mask)
    unknown = set(fams) - set(FAMILIES)
    if unknown or not fams:
        raise InvalidInputError(f"unknown feature families {sorted(unknown)}; choose from {FAMILIES}")
    return frozenset(fams)


def mask_name(mask) -> str:
    fams = resolve_mask(mask)
    return "+".join(f for f in FAMILIES if f in fams)


def active_columns(mask) -> np.ndarray:
    fams = resolve_mask(mask)
    cols = [i for f in FAMILIES if f in fams for i in FAMILY_INDICES[f]]
    return np.array(sorted(cols), dtype=int)


def mean_activity(epoch) -> float:
    x = np.asarray(getattr(epoch, "samples", epoch), dtype=np.float64)
    return float(x.mean())


def region_one_hot(region_index: int) -> np.ndarray:
    if not 0 <= int(region_index) < N_REGIONS:
        raise InvalidInputError(f"region_index {region_index} outside [0, {N_REGIONS - 1}]")
    v = np.zeros(N_REGIONS)
    v[int(region_index)] = 1.0
    return v


@dataclass(frozen=True, eq=False)
class TrialFeatureVector:
    values: np.ndarray
    electrode: int
    trial_id: int
    label: int | None = None


def assemble_trial_features(
    epoch,
    nmf_model: NmfModel | None,
    graph_metrics_for_electrode,
    region_index: int,
    feature_mask="all",
    electrode: int | None = None,
    trial_id: int | None = None,
    label: int | None = None,
) -> TrialFeatureVector:
    """Build one 35-long feature vector; masked-out families stay zero.

    ``graph_metrics_for_electrode`` is (strength, centrality, clustering) or
    an object with ``electrode``/``trial_id`` attributes plus ``values``.
    """
    fams = resolve_mask(feature_mask)
    ep_electrode = getattr(epoch, "electrode", electrode)
    ep_trial = getattr(epoch, "trial_id", trial_id)
    for name, want in (("electrode", electrode), ("trial_id", trial_id)):
        have = ep_electrode if name == "electrode" else ep_trial
        if want is not None and have is not None and want != have:
            raise ValidationError(f"{name} mismatch between epoch ({have}) and requested ({want})")
    g_el = getattr(graph_metrics_for_electrode, "electrode", None)
    g_tr = getattr(graph_metrics_for_electrode, "trial_id", None)
    if (g_el is not None and g_el != ep_electrode) or (g_tr is not None and g_tr != ep_trial):
        raise ValidationError(
            f"graph metrics for electrode {g_el}/trial {g_tr} do not match epoch "
            f"electrode {ep_electrode}/trial {ep_trial}"
        )
    g = np.asarray(getattr(graph_metrics_for_electrode, "values", graph_metrics_for_electrode), dtype=np.float64)

    v = np.zeros(N_FEATURES)
    if "nmf" in fams:
        if nmf_model is None:
            raise InvalidInputError("NMF family requested without an NMF model")
        v[NMF_SLICE] = nmf_correlations(nmf_model, epoch)
    if "mean" in fams:
        v[MEAN_INDEX] = mean_activity(epoch)
    if "region" in fams:
        v[REGION_SLICE] = region_one_hot(region_index)
    if "connectivity" in fams:
        if g.shape != (3,):
            raise InvalidInputError(f"expected 3 graph metrics, got shape {g.shape}")
        v[GRAPH_SLICE] = g
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"non-finite feature for electrode {ep_electrode}, trial {ep_trial}")
    return TrialFeatureVector(v, ep_electrode, ep_trial, label)


def feature_matrix(
    nmf_corr: np.ndarray | None,
    mean_act: np.ndarray,
    regions: np.ndarray,
    graph: np.ndarray,
    feature_mask="all",
) -> np.ndarray:
    """Vectorised assembly for n trials; inputs are [n x 5], [n], [n], [n x 3]."""
    fams = resolve_mask(feature_mask)
    n = len(mean_act)
    X = np.zeros((n, N_FEATURES))
    if "nmf" in fams:
        if nmf_corr is None:
            raise InvalidInputError("NMF family requested without correlations")
        X[:, NMF_SLICE] = nmf_corr
    if "mean" in fams:
        X[:, MEAN_INDEX] = mean_act
    if "region" in fams:
        regions = np.asarray(regions, dtype=int)
        if np.any((regions < 0) | (regions >= N_REGIONS)):
            raise InvalidInputError("region index out of range")
        X[np.arange(n), REGION_SLICE.start + regions] = 1.0
    if "connectivity" in fams:
        X[:, GRAPH_SLICE] = graph
    return X


@dataclass(frozen=True, eq=False)
class FeatureScaler:
    """Z-score for the active continuous columns; one-hot and masked columns pass through."""

    columns: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    fit_tag: str | None = None

    EPS = 1e-8

    @classmethod
    def fit(cls, X, feature_mask="all", tag: str | None = None) -> "FeatureScaler":
        X = np.asarray(X, dtype=np.float64)
        active = set(active_columns(feature_mask).tolist())
        cols = np.array([c for c in CONTINUOUS_INDICES if c in active], dtype=int)
        mu = X[:, cols].mean(axis=0) if cols.size else np.zeros(0)
        sd = X[:, cols].std(axis=0) if cols.size else np.zeros(0)
        return cls(cols, mu, np.maximum(sd, cls.EPS), tag)

    def transform(self, X) -> np.ndarray:
        X = np.array(X, dtype=np.float64, copy=True)
        if X.shape[-1] != N_FEATURES:
            raise InvalidInputError(f"expected {N_FEATURES} columns, got {X.shape[-1]}")
        if self.columns.size:
            X[:, self.columns] = (X[:, self.columns] - self.mean) / self.std
        return X


def write_feature_csv(path, X: np.ndarray, keys: Iterable[tuple], key_names=("subject", "electrode", "trial_id", "label")) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(key_names) + FEATURE_NAMES)
        for key, row in zip(keys, X):
            w.writerow(list(key) + [repr(float(v)) for v in row])
