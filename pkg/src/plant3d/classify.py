"""One-vs-all linear SVM trained by stochastic subgradient descent, and accuracy."""

import json
import logging
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptySetError,
    InvalidParameterError,
    LengthMismatchError,
    SingleClassError,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    c_reg: float = 1.0
    epochs: int = 200
    tolerance: float = 1e-5
    seed: int = 42

    def __post_init__(self):
        if not self.c_reg > 0:
            raise InvalidParameterError("c_reg must be > 0")
        if self.epochs < 1:
            raise InvalidParameterError("epochs must be >= 1")


@dataclass(eq=False)
class LinearSvmModel:
    classes: list
    weights: np.ndarray  # (n_classes, D)
    biases: np.ndarray  # (n_classes,)
    mean: np.ndarray
    std: np.ndarray

    @property
    def dim(self):
        return self.weights.shape[1]

    def decision_values(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise DimensionMismatchError(f"expected {self.dim} features, got {X.shape[1]}")
        return ((X - self.mean) / self.std) @ self.weights.T + self.biases

    def to_json(self):
        return json.dumps({
            "classes": list(self.classes),
            "w": self.weights.tolist(),
            "b": self.biases.tolist(),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
        })

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(list(d["classes"]), np.asarray(d["w"], dtype=np.float64),
                   np.asarray(d["b"], dtype=np.float64),
                   np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def _objective(w, Xb, t, lam):
    hinge = np.maximum(0.0, 1.0 - t * (Xb @ w))
    return 0.5 * lam * (w @ w) + hinge.mean()


def train_binary_svm(Xb, t, cfg, seed):
    """Pegasos on ``lam/2 |w|^2 + mean(hinge)`` with ``lam = 1 / (C N)``.

    ``Xb`` already carries a constant bias column. Training stops after an
    epoch whose objective drops by less than ``cfg.tolerance`` relative (an
    epoch that makes things worse does not count). The weights with the best
    objective at any epoch end are returned.
    """
    n, d = Xb.shape
    lam = 1.0 / (cfg.c_reg * n)
    radius = 1.0 / np.sqrt(lam)
    rng = np.random.default_rng(seed)
    w = np.zeros(d)
    best_w, best = w.copy(), np.inf
    prev = _objective(w, Xb, t, lam)
    step = 0
    for epoch in range(cfg.epochs):
        for i in rng.permutation(n):
            step += 1
            eta = 1.0 / (lam * step)
            margin = t[i] * (Xb[i] @ w)
            w *= 1.0 - eta * lam
            if margin < 1.0:
                w += eta * t[i] * Xb[i]
            norm = np.linalg.norm(w)
            if norm > radius:
                w *= radius / norm
        obj = _objective(w, Xb, t, lam)
        if obj < best:
            best_w, best = w.copy(), obj
        gain = (prev - obj) / prev if prev > 0 else 0.0
        prev = obj
        if obj == 0 or 0 <= gain < cfg.tolerance:
            break
    logger.debug("binary SVM: %d epochs, objective %.6g", epoch + 1, best)
    return best_w


def train_svm_ova(X, y, cfg=TrainConfig()):
    """One binary SVM per class (class vs rest) on standardised features.

    Class order is the sorted order of the distinct labels. Class ``c`` at
    position ``i`` trains with seed ``cfg.seed + i``.

    Raises:
        SingleClassError: fewer than two distinct labels.
        DimensionMismatchError: ``X`` and ``y`` disagree in length.
    """
    X = np.asarray(X, dtype=np.float64)
    y = list(y)
    if X.ndim != 2 or X.shape[0] != len(y):
        raise DimensionMismatchError(f"X has shape {X.shape} but there are {len(y)} labels")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    classes = sorted(set(y))
    if len(classes) < 2:
        raise SingleClassError("need at least two distinct labels to train")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    Xb = np.hstack([(X - mean) / std, np.ones((len(X), 1))])
    labels = np.asarray([classes.index(v) for v in y])
    W = np.empty((len(classes), X.shape[1]))
    b = np.empty(len(classes))
    for i in range(len(classes)):
        t = np.where(labels == i, 1.0, -1.0)
        w = train_binary_svm(Xb, t, cfg, cfg.seed + i)
        W[i], b[i] = w[:-1], w[-1]
    return LinearSvmModel(classes, W, b, mean, std)


def predict(model, x):
    """Label with the largest decision value; ties go to the earlier class."""
    scores = model.decision_values(x)[0]
    return model.classes[int(np.argmax(scores))]


def predict_many(model, X):
    scores = model.decision_values(X)
    return [model.classes[i] for i in np.argmax(scores, axis=1)]


def accuracy(predictions, truth):
    """Percentage of matches, rounded half-up to two decimals."""
    predictions, truth = list(predictions), list(truth)
    if len(predictions) != len(truth):
        raise LengthMismatchError(f"{len(predictions)} predictions vs {len(truth)} labels")
    if not truth:
        raise EmptySetError("accuracy of an empty set is undefined")
    hits = sum(p == t for p, t in zip(predictions, truth))
    pct = Decimal(100 * hits) / Decimal(len(truth))
    return float(pct.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))
