"""Small fully-connected binary classifier in numpy: ReLU hidden layers, sigmoid
output, Adam, and a choice of weighted cross-entropy or focal loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROB_EPS = 1e-7


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def focal_loss(p, y, gamma_f: float = 2.0, alpha_f: float = 0.83):
    """Elementwise focal loss; probabilities are clamped to [1e-7, 1 - 1e-7]."""
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(y, dtype=np.float64)
    pos = -alpha_f * (1.0 - p) ** gamma_f * np.log(p)
    neg = -(1.0 - alpha_f) * p**gamma_f * np.log1p(-p)
    out = np.where(y > 0.5, pos, neg)
    return float(out) if out.ndim == 0 else out


def focal_grad_logit(z, y, gamma_f: float, alpha_f: float) -> np.ndarray:
    """d focal_loss(sigmoid(z), y) / dz."""
    p = np.clip(sigmoid(z), PROB_EPS, 1.0 - PROB_EPS)
    q = 1.0 - p
    g_pos = alpha_f * q**gamma_f * (gamma_f * p * np.log(p) - q)
    g_neg = (1.0 - alpha_f) * p**gamma_f * (p - gamma_f * q * np.log(q))
    return np.where(y > 0.5, g_pos, g_neg)


def bce(p, y):
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(y, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


@dataclass
class LossSpec:
    kind: str = "bce"  # "bce" or "focal"
    gamma_f: float = 2.0
    alpha_f: float = 0.83

    def value(self, z, y, w):
        p = sigmoid(z)
        if self.kind == "focal":
            return focal_loss(p, y, self.gamma_f, self.alpha_f) * w
        return bce(p, y) * w

    def grad(self, z, y, w):
        if self.kind == "focal":
            return focal_grad_logit(z, y, self.gamma_f, self.alpha_f) * w
        return (sigmoid(z) - y) * w


@dataclass
class MLP:
    sizes: tuple[int, ...]  # input, hidden..., 1
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)
    loss_history: list[float] = field(default_factory=list)

    @classmethod
    def init(cls, sizes, seed: int) -> "MLP":
        rng = np.random.default_rng(seed)
        Ws, bs = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            Ws.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
            bs.append(np.zeros(fan_out))
        return cls(tuple(sizes), Ws, bs)

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def logits(self, X) -> np.ndarray:
        h = np.asarray(X, dtype=np.float64)
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if k < last:
                h = np.maximum(h, 0.0)
        return h[:, 0]

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.logits(X))

    def loss_and_grads(self, X, y, loss: LossSpec, w=None):
        """Mean loss over rows and its gradient for every parameter array."""
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        n = X.shape[0]
        w = np.ones(n) if w is None else np.asarray(w, dtype=np.float64)
        acts = [X]
        pre = []
        h = X
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            a = h @ W + b
            pre.append(a)
            h = np.maximum(a, 0.0) if k < last else a
            acts.append(h)
        z = pre[-1][:, 0]
        value = float(loss.value(z, y, w).mean())
        delta = (loss.grad(z, y, w) / n)[:, None]
        gW = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        for k in range(last, -1, -1):
            gW[k] = acts[k].T @ delta
            gb[k] = delta.sum(axis=0)
            if k > 0:
                delta = (delta @ self.weights[k].T) * (pre[k - 1] > 0)
        grads = []
        for a, b in zip(gW, gb):
            grads.extend((a, b))
        return value, grads

    def fit(self, X, y, loss: LossSpec, epochs: int, lr: float = 1e-3, batch_size: int = 16, seed: int = 0, w=None, betas=(0.9, 0.999), eps=1e-8) -> "MLP":
        """Adam on shuffled mini-batches; records the mean loss of each epoch."""
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        n = X.shape[0]
        w = np.ones(n) if w is None else np.asarray(w, dtype=np.float64)
        rng = np.random.default_rng(seed)
        params = self.params
        m = [np.zeros_like(p) for p in params]
        v = [np.zeros_like(p) for p in params]
        b1, b2 = betas
        step = 0
        for _ in range(epochs):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, batch_size):
                idx = order[start : start + batch_size]
                val, grads = self.loss_and_grads(X[idx], y[idx], loss, w[idx])
                total += val * idx.size
                step += 1
                for p, g, mk, vk in zip(params, grads, m, v):
                    mk *= b1
                    mk += (1 - b1) * g
                    vk *= b2
                    vk += (1 - b2) * g * g
                    mhat = mk / (1 - b1**step)
                    vhat = vk / (1 - b2**step)
                    p -= lr * mhat / (np.sqrt(vhat) + eps)
            self.loss_history.append(total / n)
        return self
