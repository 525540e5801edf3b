"""Linear probe on frozen representations and classification metrics."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from clar.autodiff import Adam, Dense, Module, Tape, Tensor, ops


class ClassifierError(ValueError):
    pass


class LinearProbe(Module):
    def __init__(self, d: int, num_classes: int, rng: np.random.Generator):
        if num_classes < 1:
            raise ClassifierError("num_classes must be >= 1")
        self.num_classes = num_classes
        self.linear = Dense(d, num_classes, rng)

    def __call__(self, h: Tensor) -> Tensor:
        return self.linear(h)

    def predict(self, H: np.ndarray) -> np.ndarray:
        return np.argmax(self(Tensor(np.atleast_2d(H))).data, axis=1)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy over rows."""
    labels = np.asarray(labels)
    picked = logits[np.arange(len(labels)), labels]
    return ops.mean(ops.logsumexp(logits, axis=1) - picked)


def fit_probe(
    embeddings: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    epochs: int = 200,
    lr: float = 1e-2,
    rng: np.random.Generator | None = None,
) -> LinearProbe:
    """Full-batch Adam on cross-entropy."""
    H = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if H.ndim != 2 or len(H) == 0:
        raise ClassifierError("need a non-empty (n, d) embedding matrix")
    if len(y) != len(H):
        raise ClassifierError(f"{len(H)} embeddings but {len(y)} labels")
    if y.min() < 0 or y.max() >= num_classes:
        raise ClassifierError(f"labels must lie in [0, {num_classes})")
    probe = LinearProbe(H.shape[1], num_classes, rng if rng is not None else np.random.default_rng(0))
    opt = Adam(probe.parameters(), lr=lr)
    X = Tensor(H)
    for _ in range(epochs):
        opt.zero_grad()
        with Tape() as tape:
            loss = cross_entropy(probe(X), y)
        tape.backward(loss)
        opt.step()
    return probe


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    macro_f1: float
    per_class_f1: tuple[float, ...]
    confusion: np.ndarray

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "confusion": self.confusion.astype(int).tolist(),
        }


def compute_metrics(y_true, y_pred, num_classes: int) -> Metrics:
    """Accuracy, per-class F1 (0 when undefined), macro F1 and the confusion matrix (rows = truth)."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if len(y_true) == 0 or len(y_true) != len(y_pred):
        raise ClassifierError("need equal-length, non-empty label arrays")
    for arr in (y_true, y_pred):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise ClassifierError(f"class id outside [0, {num_classes})")
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (y_true, y_pred), 1)
    tp = np.diag(conf).astype(np.float64)
    denom = conf.sum(axis=0) + conf.sum(axis=1)
    f1 = np.divide(2 * tp, denom, out=np.zeros(num_classes), where=denom > 0)
    return Metrics(
        accuracy=float(tp.sum() / conf.sum()),
        macro_f1=float(f1.mean()),
        per_class_f1=tuple(float(v) for v in f1),
        confusion=conf,
    )


def evaluate(probe: LinearProbe, encoder, X: np.ndarray, y: np.ndarray) -> Metrics:
    """Encode with the frozen encoder, classify with the probe, and score."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if len(X) == 0:
        raise ClassifierError("empty test set")
    return compute_metrics(y, probe.predict(encoder.features(X)), probe.num_classes)


def write_metrics(path: str | Path, metrics: Metrics) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(metrics.to_json(), indent=2) + "\n")
