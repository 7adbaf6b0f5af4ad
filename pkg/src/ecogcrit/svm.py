"""Soft-margin SVM trained by SMO with maximal-violating-pair selection."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

TAU = 1e-12


def linear_kernel(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return A @ B.T


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    aa = np.einsum("ij,ij->i", A, A)[:, None]
    bb = np.einsum("ij,ij->i", B, B)[None, :]
    d2 = np.maximum(aa + bb - 2.0 * (A @ B.T), 0.0)
    return np.exp(-gamma * d2)


@dataclass
class SmoResult:
    alpha: np.ndarray
    bias: float
    n_iter: int
    kkt_gap: float
    converged: bool
    dual_trace: list[float] = field(default_factory=list)


def dual_objective(alpha: np.ndarray, grad: np.ndarray) -> float:
    """Dual value ``sum(alpha) - 0.5 alpha^T Q alpha`` from the gradient ``Q alpha - 1``."""
    return float(-0.5 * alpha @ (grad - 1.0))


def _violating_pair(y, alpha, C, G):
    yG = -y * G
    up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
    if not up.any() or not low.any():
        return -1, -1, 0.0, 0.0
    cand_up = np.where(up, yG, -np.inf)
    cand_low = np.where(low, yG, np.inf)
    i = int(np.argmax(cand_up))
    j = int(np.argmin(cand_low))
    return i, j, float(cand_up[i]), float(cand_low[j])


def kkt_gap(K: np.ndarray, y: np.ndarray, alpha: np.ndarray, C: np.ndarray) -> float:
    """Maximal KKT violation ``m(alpha) - M(alpha)`` of a dual point."""
    G = y * (K @ (alpha * y)) - 1.0
    i, j, m, M = _violating_pair(y, alpha, C, G)
    if i < 0:
        return 0.0
    return max(m - M, 0.0)


def smo(K: np.ndarray, y: np.ndarray, C: np.ndarray, tol: float = 1e-3, max_iter: int = 200_000, trace: bool = False) -> SmoResult:
    """Solve the C-SVM dual for a precomputed kernel.

    ``y`` in {-1, +1}; ``C`` is the per-sample box bound (class weighting is
    folded in by the caller). Stops when the maximal violating pair's gap
    falls below ``tol``.
    """
    y = np.asarray(y, dtype=np.float64)
    C = np.broadcast_to(np.asarray(C, dtype=np.float64), y.shape).copy()
    n = y.size
    alpha = np.zeros(n)
    G = -np.ones(n)
    diag = np.diag(K).copy()
    dual = [0.0] if trace else []
    converged = False
    gap = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        i, j, m, M = _violating_pair(y, alpha, C, G)
        if i < 0:
            gap = 0.0
            converged = True
            break
        gap = m - M
        if gap < tol:
            converged = True
            break
        Ki = K[i]
        Kj = K[j]
        curv = max(diag[i] + diag[j] - 2.0 * Ki[j], TAU)
        t = gap / curv
        t = min(t, C[i] - alpha[i] if y[i] > 0 else alpha[i])
        t = min(t, alpha[j] if y[j] > 0 else C[j] - alpha[j])
        alpha[i] += y[i] * t
        alpha[j] -= y[j] * t
        # snap to bounds against round-off
        for k in (i, j):
            if alpha[k] < 1e-14:
                alpha[k] = 0.0
            elif alpha[k] > C[k] - 1e-14 * C[k]:
                alpha[k] = C[k]
        G += t * y * (Ki - Kj)
        if trace:
            dual.append(dual_objective(alpha, G))
    else:
        warnings.warn(f"SMO hit max_iter={max_iter} with KKT gap {gap:.3g}", RuntimeWarning)
        it = max_iter

    yG = -y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        bias = float(yG[free].mean())
    else:
        _, _, m, M = _violating_pair(y, alpha, C, G)
        bias = (m + M) / 2.0
    return SmoResult(alpha, bias, it, float(max(gap, 0.0)), converged, dual)
