"""Trial-level classifiers with probability outputs.

Kinds: ``linear_svm`` and ``rbf_svm`` (SMO + Platt calibration), ``logreg``
(full-batch gradient descent) and ``mlp2`` (two ReLU hidden layers, Adam).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, TrainingError
from .mlp import MLP, LossSpec, bce, sigmoid
from .svm import kkt_gap, linear_kernel, rbf_kernel, smo

KINDS = ("linear_svm", "rbf_svm", "logreg", "mlp2")
SVM_KINDS = ("linear_svm", "rbf_svm")
N_INPUT = 35
PREDICT_BLOCK = 4096

_DEFAULT_LR = {"logreg": 0.1, "mlp2": 1e-3}


@dataclass(frozen=True)
class ClassifierSpec:
    kind: str = "rbf_svm"
    C: float = 1.0
    gamma: float | None = None  # None -> 1 / n_features
    learning_rate: float | None = None  # None -> per-kind default
    epochs: int = 100
    hidden: tuple[int, int] = (64, 32)
    batch_size: int = 64
    class_weight: str = "balanced"  # or "none"
    seed: int = 0
    tol: float = 1e-3
    max_iter: int = 200_000
    max_train: int | None = 3000  # SVM training rows, stratified subsample above this

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown classifier kind {self.kind!r}; choose from {KINDS}")
        if not self.C > 0:
            raise InvalidInputError("C must be positive")
        if self.gamma is not None and not self.gamma > 0:
            raise InvalidInputError("gamma must be positive")
        if self.epochs < 1:
            raise InvalidInputError("epochs must be >= 1")
        if self.class_weight not in ("balanced", "none"):
            raise InvalidInputError("class_weight must be 'balanced' or 'none'")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def lr(self) -> float:
        return self.learning_rate if self.learning_rate is not None else _DEFAULT_LR.get(self.kind, 1e-3)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierSpec":
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


@dataclass(frozen=True)
class PlattCalibrator:
    A: float
    B: float
    n_iter: int = 0
    converged: bool = True

    def __call__(self, f) -> np.ndarray:
        return sigmoid(self.A * np.asarray(f, dtype=np.float64) + self.B)


@dataclass(frozen=True, eq=False)
class TrainedModel:
    kind: str
    spec: ClassifierSpec
    arrays: dict = field(repr=False)
    scalars: dict = field(default_factory=dict)
    calibrator: PlattCalibrator | None = None
    diagnostics: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def n_features(self) -> int:
        a = self.arrays
        if "w" in a:
            return a["w"].shape[0]
        if "sv" in a:
            return a["sv"].shape[1]
        return a["W0"].shape[0]

    def decision_function(self, X) -> np.ndarray:
        X = _check_X(X, self.n_features)
        a = self.arrays
        if self.kind == "linear_svm" or self.kind == "logreg":
            return X @ a["w"] + self.scalars["b"]
        if self.kind == "rbf_svm":
            # blocks of rows bound the kernel's memory at PREDICT_BLOCK x n_sv
            out = np.empty(X.shape[0])
            for start in range(0, X.shape[0], PREDICT_BLOCK):
                K = rbf_kernel(X[start : start + PREDICT_BLOCK], a["sv"], self.scalars["gamma"])
                out[start : start + PREDICT_BLOCK] = K @ a["coef"]
            return out + self.scalars["b"]
        return self._mlp().logits(X)

    def predict_proba(self, X) -> np.ndarray:
        f = self.decision_function(X)
        if self.calibrator is not None:
            return self.calibrator(f)
        return sigmoid(f)

    def _mlp(self) -> MLP:
        n_layers = self.scalars["n_layers"]
        Ws = [self.arrays[f"W{k}"] for k in range(n_layers)]
        bs = [self.arrays[f"b{k}"] for k in range(n_layers)]
        sizes = (Ws[0].shape[0],) + tuple(W.shape[1] for W in Ws)
        return MLP(sizes, Ws, bs)

    # -- serialization: JSON header + one float32 blob
    def save(self, stem) -> None:
        stem = Path(stem)
        layout, offset = {}, 0
        blobs = []
        for name in sorted(self.arrays):
            arr = np.ascontiguousarray(self.arrays[name], dtype="<f4")
            layout[name] = {"shape": list(arr.shape), "offset": offset}
            offset += arr.size
            blobs.append(arr.ravel())
        header = {
            "kind": self.kind,
            "spec": self.spec.to_dict(),
            "scalars": self.scalars,
            "calibrator": None if self.calibrator is None else asdict(self.calibrator),
            "arrays": layout,
        }
        stem.with_suffix(".json").write_text(json.dumps(header, sort_keys=True, indent=1))
        (np.concatenate(blobs) if blobs else np.zeros(0, "<f4")).tofile(stem.with_suffix(".f32"))

    @classmethod
    def load(cls, stem) -> "TrainedModel":
        stem = Path(stem)
        header = json.loads(stem.with_suffix(".json").read_text())
        blob = np.fromfile(stem.with_suffix(".f32"), dtype="<f4").astype(np.float64)
        arrays = {}
        for name, meta in header["arrays"].items():
            size = int(np.prod(meta["shape"]))
            arrays[name] = blob[meta["offset"] : meta["offset"] + size].reshape(meta["shape"])
        cal = header["calibrator"]
        return cls(
            header["kind"],
            ClassifierSpec.from_dict(header["spec"]),
            arrays,
            header["scalars"],
            PlattCalibrator(**cal) if cal else None,
        )


def _check_X(X, n_features: int = N_INPUT) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != n_features:
        raise InvalidInputError(f"expected an [n x {n_features}] matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("feature matrix contains NaN or infinite values")
    return X


def class_weights(y: np.ndarray, mode: str = "balanced") -> np.ndarray:
    """Per-row weights ``n / (2 n_c)`` for ``balanced``; ones otherwise."""
    y = np.asarray(y)
    if mode == "none":
        return np.ones(y.size)
    n = y.size
    n_pos = int((y == 1).sum())
    n_neg = n - n_pos
    return np.where(y == 1, n / (2.0 * n_pos), n / (2.0 * n_neg))


def stratified_subsample(y: np.ndarray, cap: int, seed: int) -> np.ndarray:
    """Sorted row indices keeping at most ``cap`` rows in class proportion."""
    y = np.asarray(y)
    n = y.size
    if cap is None or n <= cap:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    keep = []
    for c in (0, 1):
        idx = np.flatnonzero(y == c)
        k = max(1, int(round(cap * idx.size / n)))
        keep.append(rng.choice(idx, size=min(k, idx.size), replace=False))
    return np.sort(np.concatenate(keep))


def calibrate_probabilities(decision_values, y, max_iter: int = 100) -> PlattCalibrator:
    """Fit ``p = sigmoid(A f + B)`` by Newton's method with Platt's smoothed targets."""
    f = np.asarray(decision_values, dtype=np.float64)
    y = np.asarray(y)
    n_pos = int((y == 1).sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise TrainingError("Platt calibration needs both classes")
    t = np.where(y == 1, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    A, B = 0.0, float(np.log((n_pos + 1.0) / (n_neg + 1.0)))
    sigma = 1e-12

    def objective(A, B):
        z = A * f + B
        # -[t log p + (1-t) log(1-p)] in a form stable for large |z|
        return float(np.sum(np.logaddexp(0.0, z) - t * z))

    fval = objective(A, B)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = sigmoid(A * f + B)
        d1 = p - t
        gA, gB = float(d1 @ f), float(d1.sum())
        if abs(gA) < 1e-5 and abs(gB) < 1e-5:
            converged = True
            break
        d2 = p * (1.0 - p)
        h11 = float(d2 @ (f * f)) + sigma
        h22 = float(d2.sum()) + sigma
        h21 = float(d2 @ f)
        det = h11 * h22 - h21 * h21
        dA = -(h22 * gA - h21 * gB) / det
        dB = -(-h21 * gA + h11 * gB) / det
        gd = gA * dA + gB * dB
        step = 1.0
        while step >= 1e-10:
            nA, nB = A + step * dA, B + step * dB
            nf = objective(nA, nB)
            if nf < fval + 1e-4 * step * gd:
                A, B, fval = nA, nB, nf
                break
            step /= 2.0
        else:
            converged = True  # no further decrease possible
            break
    if not converged:
        warnings.warn("Platt calibration reached the iteration limit", RuntimeWarning)
    return PlattCalibrator(float(A), float(B), it, converged)


def _train_svm(spec: ClassifierSpec, X, y):
    idx = stratified_subsample(y, spec.max_train, spec.seed)
    Xs, ys = X[idx], y[idx]
    ypm = np.where(ys == 1, 1.0, -1.0)
    Cvec = spec.C * class_weights(ys, spec.class_weight)
    gamma = spec.gamma if spec.gamma is not None else 1.0 / X.shape[1]
    K = linear_kernel(Xs, Xs) if spec.kind == "linear_svm" else rbf_kernel(Xs, Xs, gamma)
    res = smo(K, ypm, Cvec, tol=spec.tol, max_iter=spec.max_iter)
    sv = res.alpha > 0
    coef = res.alpha[sv] * ypm[sv]
    diag = {
        "n_iter": res.n_iter,
        "kkt_gap": kkt_gap(K, ypm, res.alpha, Cvec),
        "converged": res.converged,
        "n_sv": int(sv.sum()),
        "n_train": int(idx.size),
    }
    if spec.kind == "linear_svm":
        arrays = {"w": Xs[sv].T @ coef}
        scalars = {"b": res.bias}
    else:
        arrays = {"sv": Xs[sv], "coef": coef}
        scalars = {"b": res.bias, "gamma": gamma}
    f_train = K[:, sv] @ coef + res.bias
    cal = calibrate_probabilities(f_train, ys)
    return TrainedModel(spec.kind, spec, arrays, scalars, cal, diag)


def logreg_loss_grad(coef, b: float, X, y, w):
    """Weighted mean cross-entropy and its gradient in (coef, b)."""
    p = sigmoid(X @ coef + b)
    wsum = w.sum()
    loss = float((w * bce(p, y)).sum() / wsum)
    r = w * (p - y) / wsum
    return loss, X.T @ r, float(r.sum())


def train_logreg(X, y, w, lr: float, epochs: int):
    """Full-batch gradient descent on weighted cross-entropy; returns (w, b, losses)."""
    coef = np.zeros(X.shape[1])
    b = 0.0
    losses = []
    for _ in range(epochs):
        loss, g_coef, g_b = logreg_loss_grad(coef, b, X, y, w)
        losses.append(loss)
        coef -= lr * g_coef
        b -= lr * g_b
    losses.append(logreg_loss_grad(coef, b, X, y, w)[0])
    return coef, b, losses


def train_classifier(spec: ClassifierSpec, X, y) -> TrainedModel:
    """Fit one trial-level classifier; deterministic given ``spec.seed``."""
    X = _check_X(X, np.asarray(X).shape[1] if np.ndim(X) == 2 else N_INPUT)
    y = np.asarray(y).astype(int)
    if y.shape != (X.shape[0],):
        raise InvalidInputError("labels must be a vector matching the rows of X")
    if X.shape[0] < 2 or np.unique(y).size < 2:
        raise TrainingError("training data must contain both classes")
    if spec.kind in SVM_KINDS:
        return _train_svm(spec, X, y)
    w = class_weights(y, spec.class_weight)
    if spec.kind == "logreg":
        coef, b, losses = train_logreg(X, y.astype(float), w, spec.lr, spec.epochs)
        return TrainedModel("logreg", spec, {"w": coef}, {"b": b}, None, {"loss_history": losses})
    net = MLP.init((X.shape[1],) + spec.hidden + (1,), spec.seed)
    net.fit(X, y, LossSpec("bce"), spec.epochs, spec.lr, spec.batch_size, spec.seed + 1, w)
    arrays = {}
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"W{k}"] = W
        arrays[f"b{k}"] = b
    return TrainedModel("mlp2", spec, arrays, {"n_layers": len(net.weights)}, None, {"loss_history": net.loss_history})


def predict_trial_scores(model: TrainedModel, X) -> np.ndarray:
    return np.clip(model.predict_proba(X), 0.0, 1.0)
