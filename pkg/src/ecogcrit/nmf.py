"""Prototype temporal patterns by Frobenius NMF with multiplicative updates."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError

EPS = 1e-12


@dataclass(frozen=True, eq=False)
class NmfModel:
    basis: np.ndarray  # [M x K]
    n_iter: int = 0
    error: float = 0.0
    loss_history: tuple[float, ...] = field(default=(), repr=False)
    coefficients: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_components(self) -> int:
        return self.basis.shape[1]

    @property
    def n_samples(self) -> int:
        return self.basis.shape[0]

    def save(self, stem) -> None:
        """Write ``<stem>.json`` (metadata) and ``<stem>.f32`` (basis)."""
        stem = Path(stem)
        meta = {"shape": list(self.basis.shape), "n_iter": self.n_iter, "error": self.error}
        stem.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True))
        np.ascontiguousarray(self.basis, dtype="<f4").tofile(stem.with_suffix(".f32"))

    @classmethod
    def load(cls, stem) -> "NmfModel":
        stem = Path(stem)
        meta = json.loads(stem.with_suffix(".json").read_text())
        basis = np.fromfile(stem.with_suffix(".f32"), dtype="<f4").astype(np.float64)
        return cls(basis.reshape(meta["shape"]), meta["n_iter"], meta["error"])


def fit_nmf(X, K: int = 5, max_iters: int = 500, tol: float = 1e-5, seed: int = 0, check: bool = False) -> NmfModel:
    """Factor nonnegative ``X`` [M x N] as ``T @ H`` with ``T`` [M x K].

    Lee-Seung multiplicative updates for the Frobenius objective, alternating
    H then T. Stops after ``max_iters`` sweeps or when the relative decrease
    of ``||X - TH||_F`` drops below ``tol``. With ``check`` set, nonnegativity
    of both factors is asserted after every sweep.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise InvalidInputError(f"X must be 2-D, got shape {X.shape}")
    if np.any(X < 0) or not np.all(np.isfinite(X)):
        raise InvalidInputError("X must be finite and nonnegative (clamp before fitting)")
    m, n = X.shape
    if K < 1 or K > min(m, n):
        raise InvalidInputError(f"K={K} must lie in [1, min(M, N)] = [1, {min(m, n)}]")

    rng = np.random.default_rng(seed)
    # uniform on (0, 1]
    T = 1.0 - rng.random((m, K))
    H = 1.0 - rng.random((K, n))

    losses = []
    prev = np.linalg.norm(X - T @ H)
    it = 0
    for it in range(1, max_iters + 1):
        H *= (T.T @ X) / (T.T @ T @ H + EPS)
        T *= (X @ H.T) / (T @ (H @ H.T) + EPS)
        np.maximum(T, EPS, out=T)
        if check:
            assert np.all(T >= 0) and np.all(H >= 0)
        cur = np.linalg.norm(X - T @ H)
        losses.append(float(cur))
        if prev == 0.0 or (prev - cur) / prev < tol:
            break
        prev = cur
    return NmfModel(T, it, losses[-1] if losses else float(prev), tuple(losses), H)


def _pearson_rows(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pearson correlation of vector ``b`` with each column of ``A``; zero variance -> 0."""
    a = A - A.mean(axis=0, keepdims=True)
    bc = b - b.mean()
    na = np.sqrt((a * a).sum(axis=0))
    nb = np.sqrt(bc @ bc)
    denom = na * nb
    num = bc @ a
    out = np.zeros(A.shape[1])
    ok = denom > 0
    out[ok] = num[ok] / denom[ok]
    return np.clip(out, -1.0, 1.0)


def nmf_correlations(model: NmfModel, epoch) -> np.ndarray:
    """Pearson correlation of an epoch with each prototype, in [-1, 1]."""
    x = np.asarray(getattr(epoch, "samples", epoch), dtype=np.float64)
    if x.shape != (model.n_samples,):
        raise InvalidInputError(f"epoch length {x.shape} does not match basis length {model.n_samples}")
    return _pearson_rows(model.basis, x)


def nmf_correlation_matrix(model: NmfModel, epochs: np.ndarray) -> np.ndarray:
    """Batch form of :func:`nmf_correlations` for epochs [n x M] -> [n x K]."""
    E = np.asarray(epochs, dtype=np.float64)
    if E.ndim != 2 or E.shape[1] != model.n_samples:
        raise InvalidInputError(f"epochs must be [n x {model.n_samples}], got {E.shape}")
    Tc = model.basis - model.basis.mean(axis=0, keepdims=True)
    Ec = E - E.mean(axis=1, keepdims=True)
    denom = np.sqrt((Ec * Ec).sum(axis=1))[:, None] * np.sqrt((Tc * Tc).sum(axis=0))[None, :]
    num = Ec @ Tc
    out = np.divide(num, denom, out=np.zeros_like(num), where=denom > 0)
    return np.clip(out, -1.0, 1.0)
