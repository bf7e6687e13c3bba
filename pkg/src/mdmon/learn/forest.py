"""Random forest of CART trees: Gini splits, bootstrap rows, random features.

Trees are seeded independently from the master seed, so per-tree fitting
could run on any schedule without changing the result.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset


@dataclass
class TreeNode:
    # leaf when feature is None; counts indexed by class position
    counts: np.ndarray
    feature: int | None = None
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    def to_record(self) -> dict:
        d: dict = {"counts": self.counts.tolist()}
        if self.feature is not None:
            d.update(
                feature=self.feature, threshold=self.threshold,
                left=self.left.to_record(), right=self.right.to_record(),
            )
        return d

    @staticmethod
    def from_record(d: dict) -> "TreeNode":
        node = TreeNode(counts=np.asarray(d["counts"], dtype=np.float64))
        if "feature" in d:
            node.feature = int(d["feature"])
            node.threshold = float(d["threshold"])
            node.left = TreeNode.from_record(d["left"])
            node.right = TreeNode.from_record(d["right"])
        return node


@dataclass
class ForestModel:
    trees: list[TreeNode]
    classes: tuple[str, ...]
    feature_names: tuple[str, ...]
    n_trees: int
    max_depth: int
    feature_importances: np.ndarray = field(default_factory=lambda: np.zeros(0))
    constant_class: str | None = None   # set when training data had one class

    def predict_row(self, row: np.ndarray) -> str:
        if self.constant_class is not None:
            return self.constant_class
        votes = np.zeros(len(self.classes))
        for tree in self.trees:
            node = tree
            while node.feature is not None:
                node = node.left if row[node.feature] <= node.threshold else node.right
            votes += node.counts / node.counts.sum()
        return self.classes[int(np.argmax(votes))]

    def predict(self, features) -> list[str]:
        x = np.asarray(features, dtype=np.float64)
        return [self.predict_row(r) for r in x]

    def ranked_features(self) -> list[tuple[str, float]]:
        order = np.argsort(self.feature_importances)[::-1]
        return [(self.feature_names[i], float(self.feature_importances[i])) for i in order]

    def to_record(self) -> dict:
        return {
            "kind": "forest",
            "trees": [t.to_record() for t in self.trees],
            "classes": list(self.classes),
            "feature_names": list(self.feature_names),
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "feature_importances": self.feature_importances.tolist(),
            "constant_class": self.constant_class,
        }

    @staticmethod
    def from_record(d: dict) -> "ForestModel":
        return ForestModel(
            trees=[TreeNode.from_record(t) for t in d["trees"]],
            classes=tuple(d["classes"]),
            feature_names=tuple(d["feature_names"]),
            n_trees=int(d["n_trees"]),
            max_depth=int(d["max_depth"]),
            feature_importances=np.asarray(d["feature_importances"], dtype=np.float64),
            constant_class=d.get("constant_class"),
        )


def _gini(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return float(1.0 - np.sum(p * p))


def _best_split(x, y_idx, rows, feat_ids, n_classes, min_leaf, rng):
    """Best (feature, threshold) by weighted Gini over candidate midpoints."""
    best = None  # (impurity_decrease, feature, threshold)
    parent_counts = np.bincount(y_idx[rows], minlength=n_classes).astype(np.float64)
    parent_gini = _gini(parent_counts)
    n = len(rows)
    for f in feat_ids:
        vals = x[rows, f]
        order = np.argsort(vals, kind="stable")
        sv, sy = vals[order], y_idx[rows][order]
        # left-side class counts at every cut position
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), sy] = 1.0
        left_counts = np.cumsum(onehot, axis=0)
        for cut in range(min_leaf, n - min_leaf + 1):
            if sv[cut - 1] == sv[cut]:
                continue  # can't separate equal values
            lc = left_counts[cut - 1]
            rc = parent_counts - lc
            impurity = (cut * _gini(lc) + (n - cut) * _gini(rc)) / n
            decrease = parent_gini - impurity
            if decrease > 1e-12 and (best is None or decrease > best[0]):
                best = (decrease, f, (sv[cut - 1] + sv[cut]) / 2.0)
    return best


def _grow(x, y_idx, rows, depth, params, rng, importances, n_total, n_classes):
    counts = np.bincount(y_idx[rows], minlength=n_classes).astype(np.float64)
    node = TreeNode(counts=counts)
    if (
        depth >= params["max_depth"]
        or len(rows) < 2 * params["min_leaf"]
        or _gini(counts) == 0.0
    ):
        return node
    n_feats = x.shape[1]
    k = max(1, int(round(np.sqrt(n_feats))))
    feat_ids = rng.choice(n_feats, size=k, replace=False)
    best = _best_split(x, y_idx, rows, feat_ids, n_classes, params["min_leaf"], rng)
    if best is None:
        return node
    decrease, f, threshold = best
    importances[f] += decrease * len(rows) / n_total
    mask = x[rows, f] <= threshold
    node.feature = int(f)
    node.threshold = float(threshold)
    node.left = _grow(x, y_idx, rows[mask], depth + 1, params, rng, importances,
                      n_total, n_classes)
    node.right = _grow(x, y_idx, rows[~mask], depth + 1, params, rng, importances,
                       n_total, n_classes)
    return node


def train_forest(
    train: Dataset,
    n_trees: int = 50,
    max_depth: int = 8,
    min_leaf: int = 2,
    seed: int = 0,
) -> ForestModel:
    """Fit a forest; single-class data yields a flagged constant classifier."""
    classes = train.classes()
    x = train.features
    y_idx = np.array([classes.index(y) for y in train.labels])
    model = ForestModel(
        trees=[], classes=classes, feature_names=train.feature_names,
        n_trees=n_trees, max_depth=max_depth,
        feature_importances=np.zeros(x.shape[1]),
    )
    if len(classes) < 2:
        model.constant_class = classes[0]
        return model
    params = {"max_depth": max_depth, "min_leaf": min_leaf}
    importances = np.zeros(x.shape[1])
    for i in range(n_trees):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
        boot = rng.integers(0, len(train), size=len(train))
        tree_imp = np.zeros(x.shape[1])
        tree = _grow(x, y_idx, boot, 0, params, rng, tree_imp, len(boot), len(classes))
        model.trees.append(tree)
        importances += tree_imp
    total = importances.sum()
    if total > 0:
        importances = importances / total
    model.feature_importances = importances
    return model
