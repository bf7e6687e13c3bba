"""Labeled datasets, stratified splitting, cross-validation, and metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FEATURE_NAMES = (
    "cpk", "alt", "ast", "emg_rms", "spo2", "heart_rate", "hrv",
    "temperature", "humidity",
)


class EmptyStratum(ValueError):
    code = "EMPTY_STRATUM"


class LengthMismatch(ValueError):
    code = "LENGTH_MISMATCH"


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray          # rows = labeled windows
    labels: tuple[str, ...]       # tier per row
    feature_names: tuple[str, ...] = FEATURE_NAMES

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        object.__setattr__(self, "features", f)
        if f.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if f.shape[0] != len(self.labels):
            raise LengthMismatch("one label per feature row required")
        if f.shape[1] != len(self.feature_names):
            raise LengthMismatch("feature_names must match the column count")
        if np.any(~np.isfinite(f)):
            raise ValueError("missing or non-finite cells; impute upstream")

    def __len__(self) -> int:
        return self.features.shape[0]

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(
            self.features[idx],
            tuple(self.labels[i] for i in idx),
            self.feature_names,
        )

    def classes(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.labels)))

    def to_record(self) -> dict:
        return {
            "features": self.features.tolist(),
            "labels": list(self.labels),
            "feature_names": list(self.feature_names),
        }

    @staticmethod
    def from_record(d: dict) -> "Dataset":
        return Dataset(
            np.asarray(d["features"], dtype=np.float64),
            tuple(d["labels"]),
            tuple(d["feature_names"]),
        )


def split(dataset: Dataset, ratios, seed: int) -> tuple[Dataset, ...]:
    """Stratified, deterministic partition into len(ratios) disjoint parts.

    Per class, rows are shuffled under the seed and portioned by
    largest-remainder rounding so partition sizes hit the ratios exactly
    whenever they divide evenly.
    """
    ratios = [float(r) for r in ratios]
    if any(r <= 0 for r in ratios):
        raise ValueError("ratios must be positive")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    k = len(ratios)
    rng = np.random.default_rng(seed)
    parts: list[list[int]] = [[] for _ in range(k)]
    for cls in dataset.classes():
        rows = [i for i, y in enumerate(dataset.labels) if y == cls]
        if len(rows) < k:
            raise EmptyStratum(
                f"class {cls!r} has {len(rows)} rows, fewer than {k} partitions"
            )
        rows = [rows[i] for i in rng.permutation(len(rows))]
        counts = _largest_remainder(len(rows), ratios)
        at = 0
        for part, c in zip(parts, counts):
            part.extend(rows[at:at + c])
            at += c
    return tuple(dataset.take(sorted(p)) for p in parts)


def _largest_remainder(n: int, ratios: list[float]) -> list[int]:
    # floor with a one-row floor per partition (caller guarantees n >= k),
    # then settle the remainder greedily by largest deficit
    raw = [n * r for r in ratios]
    counts = [max(1, int(x)) for x in raw]
    while sum(counts) > n:
        j = max(
            (j for j in range(len(counts)) if counts[j] > 1),
            key=lambda j: (counts[j] - raw[j], -j),
        )
        counts[j] -= 1
    while sum(counts) < n:
        j = max(range(len(counts)), key=lambda j: (raw[j] - counts[j], -j))
        counts[j] += 1
    return counts


def cross_validate(dataset: Dataset, k: int, trainer, seed: int = 0) -> dict:
    """Stratified k-fold accuracy: mean and sd over folds.

    `trainer(train { Dataset }) -> model` where the model has
    `predict(features) -> labels`. Each row is tested exactly once.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    for cls in dataset.classes():
        rows = [i for i, y in enumerate(dataset.labels) if y == cls]
        rows = [rows[i] for i in rng.permutation(len(rows))]
        for j, r in enumerate(rows):
            folds[j % k].append(r)
    if any(not f for f in folds):
        raise EmptyStratum(f"{k} folds cannot all be non-empty with {len(dataset)} rows")
    accs = []
    for j in range(k):
        test_idx = sorted(folds[j])
        train_idx = sorted(i for jj in range(k) if jj != j for i in folds[jj])
        model = trainer(dataset.take(train_idx))
        test = dataset.take(test_idx)
        pred = model.predict(test.features)
        accs.append(metrics(pred, test.labels)["accuracy"])
    return {
        "mean_accuracy": float(np.mean(accs)),
        "sd_accuracy": float(np.std(accs)),
        "folds": k,
    }


def metrics(predicted, actual) -> dict:
    """Accuracy plus per-class precision/recall.

    Precision for a class nobody predicted (and recall for a class with
    no true rows) is reported as None, never as 0.
    """
    predicted = list(predicted)
    actual = list(actual)
    if len(predicted) != len(actual):
        raise LengthMismatch("predicted and actual must have equal length")
    classes = sorted(set(predicted) | set(actual))
    correct = sum(1 for p, a in zip(predicted, actual) if p == a)
    out: dict = {"accuracy": correct / len(actual) if actual else 0.0,
                 "precision": {}, "recall": {}}
    for c in classes:
        pred_c = [a for p, a in zip(predicted, actual) if p == c]
        true_c = [p for p, a in zip(predicted, actual) if a == c]
        out["precision"][c] = (
            None if not pred_c else sum(1 for a in pred_c if a == c) / len(pred_c)
        )
        out["recall"][c] = (
            None if not true_c else sum(1 for p in true_c if p == c) / len(true_c)
        )
    return out
