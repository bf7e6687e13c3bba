"""Linear SVM: one-vs-rest hinge loss + L2, deterministic subgradient descent.

Features are z-scored with statistics saved at training time and reused
for every prediction, so decision values do not depend on whether the
caller standardized first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset


class NotStandardized(ValueError):
    code = "NOT_STANDARDIZED"


@dataclass
class SvmModel:
    classes: tuple[str, ...]
    feature_names: tuple[str, ...]
    weights: np.ndarray            # one row of weights per class (one-vs-rest)
    biases: np.ndarray
    lam: float
    feature_means: np.ndarray | None = None
    feature_stds: np.ndarray | None = None

    def _standardize(self, x: np.ndarray) -> np.ndarray:
        if self.feature_means is None or self.feature_stds is None:
            raise NotStandardized("model carries no z-score statistics")
        return (x - self.feature_means) / self.feature_stds

    def decision_values(self, features) -> np.ndarray:
        x = self._standardize(np.asarray(features, dtype=np.float64))
        return x @ self.weights.T + self.biases

    def predict(self, features) -> list[str]:
        scores = self.decision_values(features)
        return [self.classes[i] for i in np.argmax(scores, axis=1)]

    def to_record(self) -> dict:
        return {
            "kind": "svm",
            "classes": list(self.classes),
            "feature_names": list(self.feature_names),
            "weights": self.weights.tolist(),
            "biases": self.biases.tolist(),
            "lam": self.lam,
            "feature_means": self.feature_means.tolist(),
            "feature_stds": self.feature_stds.tolist(),
        }

    @staticmethod
    def from_record(d: dict) -> "SvmModel":
        return SvmModel(
            classes=tuple(d["classes"]),
            feature_names=tuple(d["feature_names"]),
            weights=np.asarray(d["weights"], dtype=np.float64),
            biases=np.asarray(d["biases"], dtype=np.float64),
            lam=float(d["lam"]),
            feature_means=np.asarray(d["feature_means"], dtype=np.float64),
            feature_stds=np.asarray(d["feature_stds"], dtype=np.float64),
        )


def hinge_objective(w, b, x, y, lam) -> float:
    """lam/2 ||w||^2 + mean hinge loss; y in {-1, +1}."""
    margins = 1.0 - y * (x @ w + b)
    return 0.5 * lam * float(w @ w) + float(np.mean(np.maximum(0.0, margins)))


def hinge_subgradient(w, b, x, y, lam):
    """Full-batch subgradient of hinge_objective at (w, b)."""
    margins = 1.0 - y * (x @ w + b)
    active = margins > 0.0
    n = x.shape[0]
    gw = lam * w - (y[active, None] * x[active]).sum(axis=0) / n
    gb = -float(y[active].sum()) / n
    return gw, gb


def _fit_binary(x, y, lam, epochs, rng):
    """Pegasos-style per-sample subgradient descent, deterministic shuffle.

    The bias rides as an appended constant-1 feature, so it picks up a
    little L2 too; that keeps the 1/(lam*t) step schedule stable.
    """
    n = x.shape[0]
    xa = np.hstack([x, np.ones((n, 1))])
    w = np.zeros(xa.shape[1])
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            step = (1.0 - eta * lam) * w
            if y[i] * (xa[i] @ w) < 1.0:
                step = step + eta * y[i] * xa[i]
            w = step
    return w[:-1], float(w[-1])


def train_svm(
    train: Dataset,
    lam: float = 1e-3,
    epochs: int = 100,
    seed: int = 0,
) -> SvmModel:
    classes = train.classes()
    x = train.features
    means = x.mean(axis=0)
    stds = x.std(axis=0)
    stds = np.where(stds < 1e-12, 1.0, stds)
    xs = (x - means) / stds
    weights = np.zeros((len(classes), x.shape[1]))
    biases = np.zeros(len(classes))
    for c, cls in enumerate(classes):
        y = np.array([1.0 if lbl == cls else -1.0 for lbl in train.labels])
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(c,)))
        weights[c], biases[c] = _fit_binary(xs, y, lam, epochs, rng)
    return SvmModel(
        classes=classes, feature_names=train.feature_names,
        weights=weights, biases=biases, lam=lam,
        feature_means=means, feature_stds=stds,
    )
