"""Per-trial functional connectivity graphs and node metrics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGraphError, InvalidInputError


@dataclass(frozen=True, eq=False)
class ConnectivityGraph:
    W: np.ndarray

    @property
    def L(self) -> int:
        return self.W.shape[0]


@dataclass(frozen=True, eq=False)
class Centrality:
    vector: np.ndarray
    eigenvalue: float
    n_iter: int
    converged: bool


def _as_matrix(W) -> np.ndarray:
    W = np.asarray(getattr(W, "W", W), dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise InvalidInputError(f"connectivity must be square, got {W.shape}")
    return W


def trial_connectivity(epochs) -> ConnectivityGraph:
    """Absolute Pearson correlation between every pair of electrode epochs.

    ``epochs`` is a sequence of TrialEpoch or an [L x M] array. Channels with
    zero variance get zero edges.
    """
    if isinstance(epochs, np.ndarray):
        X = np.asarray(epochs, dtype=np.float64)
    else:
        rows = [np.asarray(getattr(e, "samples", e), dtype=np.float64) for e in epochs]
        if len({r.shape for r in rows}) != 1:
            raise InvalidInputError("all epochs of a trial must have the same length")
        X = np.stack(rows)
    if X.ndim != 2:
        raise InvalidInputError(f"epochs must form an [L x M] matrix, got {X.shape}")
    return ConnectivityGraph(_abs_corr(X))


def _abs_corr(X: np.ndarray) -> np.ndarray:
    Xc = X - X.mean(axis=-1, keepdims=True)
    norms = np.sqrt(np.einsum("...ij,...ij->...i", Xc, Xc))
    safe = np.where(norms > 0, norms, 1.0)
    Z = Xc / safe[..., None]
    Z[norms == 0] = 0.0
    C = np.abs(Z @ np.swapaxes(Z, -1, -2))
    # symmetrise exactly: one value per unordered pair
    iu = np.triu_indices(C.shape[-1], 1)
    upper = np.minimum(C[..., iu[0], iu[1]], 1.0)
    out = np.zeros_like(C)
    out[..., iu[0], iu[1]] = upper
    out[..., iu[1], iu[0]] = upper
    return out


def batch_connectivity(epochs: np.ndarray) -> np.ndarray:
    """Connectivity matrices for a stack of trials: [n x L x M] -> [n x L x L]."""
    return _abs_corr(np.asarray(epochs, dtype=np.float64))


def node_strength(W) -> np.ndarray:
    W = _as_matrix(W)
    L = W.shape[0]
    if L < 2:
        raise InvalidInputError("node strength needs at least 2 nodes")
    off = W.sum(axis=1) - np.diag(W)
    return off / (L - 1)


def eigenvector_centrality(W, tol: float = 1e-12, max_iters: int = 1000) -> Centrality:
    """Unit-norm leading eigenvector of W by power iteration from a uniform start.

    Iterates on ``W + I`` (same eigenvectors, spectrum shifted by one) so
    that bipartite graphs, whose spectrum is symmetric, still converge.
    Raises DegenerateGraphError for an all-zero matrix.
    """
    W = _as_matrix(W)
    L = W.shape[0]
    if not np.any(W):
        raise DegenerateGraphError("eigenvector centrality undefined for an all-zero graph")
    e = np.full(L, 1.0 / np.sqrt(L))
    best, best_res, lam = e, np.inf, 0.0
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        nxt = W @ e + e
        nxt /= np.linalg.norm(nxt)
        We = W @ nxt
        lam = float(nxt @ We)
        res = float(np.linalg.norm(We - lam * nxt))
        e = nxt
        if res < best_res:
            best, best_res = nxt, res
        if res < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"power iteration stopped at residual {best_res:.3g} after {max_iters} steps", RuntimeWarning)
        e = best
        lam = float(e @ (W @ e))
    return Centrality(np.abs(e), lam, it, converged)


def clustering_coefficient(W) -> np.ndarray:
    """Weighted clustering with geometric-mean triangle intensities.

    Sum over ordered neighbour pairs (j, k), j != k, both != i, of
    ``(w_ij w_ik w_jk)^(1/3)``, divided by ``(L-1)(L-2)``.
    """
    W = _as_matrix(W)
    L = W.shape[0]
    if L < 3:
        raise InvalidInputError("clustering coefficient needs at least 3 nodes")
    V = np.cbrt(W)
    np.fill_diagonal(V, 0.0)
    num = np.einsum("ij,jk,ki->i", V, V, V)
    return num / ((L - 1) * (L - 2))


def graph_metrics(W, tol: float = 1e-12, max_iters: int = 1000) -> np.ndarray:
    """[L x 3] array of (strength, eigenvector centrality, clustering).

    An all-zero graph maps to zero strength and clustering and a uniform
    centrality of 1/sqrt(L).
    """
    W = _as_matrix(W)
    L = W.shape[0]
    out = np.empty((L, 3))
    out[:, 0] = node_strength(W)
    if np.any(W):
        out[:, 1] = eigenvector_centrality(W, tol, max_iters).vector
    else:
        out[:, 1] = 1.0 / np.sqrt(L)
    out[:, 2] = clustering_coefficient(W)
    return out
