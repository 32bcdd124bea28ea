"""Maneuver-probability model: framewise features, minority oversampling, and
a bootstrap-aggregated decision-tree classifier built on Gini impurity.

Every frame of a labeled vehicle trajectory is one sample; the learned model
returns a probability for each of the three supported maneuvers given a
single frame. Training data is class-balanced by interpolating synthetic
minority samples toward same-class nearest neighbors.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InputError
from .trajectory import (
    DIRECTION_CODES,
    Dataset,
    Direction,
    Maneuver,
    SUPPORTED_MANEUVERS,
    TrackPoint,
)

#: Class codes: left=0, right=1, straight=2.
MANEUVER_CODES = {m: i for i, m in enumerate(SUPPORTED_MANEUVERS)}

#: Column index of the integer-coded entering direction in the feature row.
DIRECTION_FEATURE_INDEX = 4

FOREST_FILE_VERSION = 1


def extract_features(p: TrackPoint, direction: Direction,
                     use_velocity_components: bool = False) -> np.ndarray:
    """Feature row for one frame: (x, y, speed, yaw_rate, direction code).

    With ``use_velocity_components`` the speed magnitude is replaced by the
    raw (vx, vy) pair, giving six features; the default five-feature form is
    what the rest of the pipeline trains on.
    """
    if not p.valid:
        raise ValueError("cannot extract features from an invalid point")
    if not math.isfinite(p.yaw_rate):
        raise ValueError("yaw rate must be finite for feature extraction")
    code = float(DIRECTION_CODES[direction])
    if use_velocity_components:
        return np.array([p.x, p.y, p.vx, p.vy, p.yaw_rate, code], dtype=float)
    return np.array([p.x, p.y, p.speed, p.yaw_rate, code], dtype=float)


def build_feature_table(dataset: Dataset, use_velocity_components: bool = False
                        ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack features over all labeled vehicle frames.

    Returns ``(X, y, groups)`` where ``y`` holds maneuver class codes and
    ``groups`` the row's trajectory index (for leakage-free splitting).
    Frames without finite yaw rate are skipped.
    """
    rows, labels, groups = [], [], []
    for g, traj in enumerate(dataset.vehicles):
        if traj.entering_direction is None or traj.maneuver not in MANEUVER_CODES:
            continue
        for p in traj.valid_points():
            if not math.isfinite(p.yaw_rate):
                continue
            rows.append(extract_features(p, traj.entering_direction,
                                          use_velocity_components))
            labels.append(MANEUVER_CODES[traj.maneuver])
            groups.append(g)
    if not rows:
        raise InputError("no labeled vehicle frames available for training")
    return np.asarray(rows), np.asarray(labels, dtype=int), np.asarray(groups, dtype=int)


@dataclass(frozen=True)
class ManeuverDistribution:
    p_left: float
    p_right: float
    p_straight: float

    def __post_init__(self) -> None:
        probs = (self.p_left, self.p_right, self.p_straight)
        if any(p < 0.0 or p > 1.0 for p in probs):
            raise ValueError(f"probabilities out of range: {probs}")
        if abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError(f"probabilities must sum to 1, got {sum(probs)!r}")

    @staticmethod
    def from_array(arr: Sequence[float]) -> "ManeuverDistribution":
        return ManeuverDistribution(float(arr[0]), float(arr[1]), float(arr[2]))

    def for_maneuver(self, m: Maneuver) -> float:
        return (self.p_left, self.p_right, self.p_straight)[MANEUVER_CODES[m]]

    def as_array(self) -> np.ndarray:
        return np.array([self.p_left, self.p_right, self.p_straight])


# ---------------------------------------------------------------------------
# Synthetic minority oversampling
# ---------------------------------------------------------------------------


def smote_oversample(X: np.ndarray, y: np.ndarray, k: int = 5, seed: int = 0,
                     categorical: Sequence[int] = (DIRECTION_FEATURE_INDEX,)
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Upsample every minority class to the majority count.

    Each synthetic row interpolates a base sample toward one of its ``k``
    same-class nearest neighbors (continuous features only; categorical
    columns are copied from the base sample). ``k`` is reduced to
    ``class size - 1`` for small classes; a singleton class is duplicated.
    Deterministic for a fixed seed.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y disagree in length")
    if X.shape[0] == 0:
        raise ValueError("cannot oversample an empty table")
    rng = np.random.default_rng(seed)
    cont = [j for j in range(X.shape[1]) if j not in set(categorical)]
    counts = Counter(y.tolist())
    majority = max(counts.values())

    new_rows, new_labels = [], []
    for cls in sorted(counts):
        need = majority - counts[cls]
        if need == 0:
            continue
        rows = X[y == cls]
        if len(rows) == 1:
            for _ in range(need):
                new_rows.append(rows[0].copy())
                new_labels.append(cls)
            continue
        k_eff = max(1, min(k, len(rows) - 1))
        sub = rows[:, cont]
        d2 = (
            np.sum(sub * sub, axis=1)[:, None]
            + np.sum(sub * sub, axis=1)[None, :]
            - 2.0 * (sub @ sub.T)
        )
        np.fill_diagonal(d2, np.inf)
        neighbor_idx = np.argsort(d2, axis=1, kind="stable")[:, :k_eff]
        for _ in range(need):
            s = int(rng.integers(len(rows)))
            nn = int(neighbor_idx[s, int(rng.integers(k_eff))])
            u = rng.random()
            row = rows[s].copy()
            row[cont] = rows[s][cont] + u * (rows[nn][cont] - rows[s][cont])
            new_rows.append(row)
            new_labels.append(cls)

    if not new_rows:
        return X.copy(), y.copy()
    return np.vstack([X, np.asarray(new_rows)]), np.concatenate([y, np.asarray(new_labels, dtype=int)])


# ---------------------------------------------------------------------------
# Decision trees and the forest
# ---------------------------------------------------------------------------


class _TreeNode:
    __slots__ = ("feature", "threshold", "left", "right", "histogram")

    def __init__(self, feature=None, threshold=None, left=None, right=None,
                 histogram=None):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.histogram = histogram  # leaf class counts

    @property
    def is_leaf(self) -> bool:
        return self.histogram is not None


def _best_split(X: np.ndarray, y: np.ndarray, features: Sequence[int],
                n_classes: int) -> Optional[tuple[float, int, float]]:
    """Lowest weighted Gini split over the candidate features.

    Returns (gini, feature, threshold); ties resolved by scanning features in
    ascending order and keeping strictly better splits only.
    """
    n = len(y)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0
    best = None
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        cum = np.cumsum(onehot[order], axis=0)
        cuts = np.nonzero(xs[:-1] < xs[1:])[0]
        if cuts.size == 0:
            continue
        left_n = (cuts + 1).astype(float)
        right_n = n - left_n
        left_counts = cum[cuts]
        right_counts = cum[-1] - left_counts
        gini_left = 1.0 - np.sum((left_counts / left_n[:, None]) ** 2, axis=1)
        gini_right = 1.0 - np.sum((right_counts / right_n[:, None]) ** 2, axis=1)
        weighted = (left_n * gini_left + right_n * gini_right) / n
        i = int(np.argmin(weighted))
        if best is None or weighted[i] < best[0]:
            threshold = 0.5 * (xs[cuts[i]] + xs[cuts[i] + 1])
            best = (float(weighted[i]), f, float(threshold))
    return best


def _grow_tree(X: np.ndarray, y: np.ndarray, depth: int, max_depth: Optional[int],
               mtry: int, n_classes: int, rng: np.random.Generator) -> _TreeNode:
    counts = np.bincount(y, minlength=n_classes)
    if (
        len(y) < 2
        or np.count_nonzero(counts) == 1
        or (max_depth is not None and depth >= max_depth)
    ):
        return _TreeNode(histogram=counts)
    features = np.sort(rng.choice(X.shape[1], size=mtry, replace=False))
    split = _best_split(X, y, features, n_classes)
    if split is None:
        # the sampled features are constant here; fall back to all features
        split = _best_split(X, y, range(X.shape[1]), n_classes)
    if split is None:
        return _TreeNode(histogram=counts)
    _, f, threshold = split
    mask = X[:, f] <= threshold
    left = _grow_tree(X[mask], y[mask], depth + 1, max_depth, mtry, n_classes, rng)
    right = _grow_tree(X[~mask], y[~mask], depth + 1, max_depth, mtry, n_classes, rng)
    return _TreeNode(feature=f, threshold=threshold, left=left, right=right)


def _tree_proba(node: _TreeNode, X: np.ndarray, out: np.ndarray,
                idx: np.ndarray) -> None:
    if idx.size == 0:
        return
    if node.is_leaf:
        total = node.histogram.sum()
        out[idx] = node.histogram / total if total > 0 else 1.0 / len(node.histogram)
        return
    mask = X[idx, node.feature] <= node.threshold
    _tree_proba(node.left, X, out, idx[mask])
    _tree_proba(node.right, X, out, idx[~mask])


@dataclass
class ForestModel:
    """Bagged Gini trees with class-frequency leaves."""

    trees: list
    n_trees: int
    max_depth: Optional[int]
    seed: int
    n_classes: int
    n_features: int

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(
                f"expected {self.n_features} features, got {X.shape[1]}"
            )
        acc = np.zeros((X.shape[0], self.n_classes))
        buf = np.zeros_like(acc)
        idx = np.arange(X.shape[0])
        for tree in self.trees:
            buf[:] = 0.0
            _tree_proba(tree, X, buf, idx)
            acc += buf
        return acc / len(self.trees)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)


def train_forest(X: np.ndarray, y: np.ndarray, n_trees: int,
                 max_depth: Optional[int] = None, seed: int = 0,
                 n_classes: int = 3) -> ForestModel:
    """Fit a forest of ``n_trees`` bootstrap trees; sqrt-feature subsampling."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if len(y) == 0:
        raise ValueError("cannot train on an empty split")
    if np.unique(y).size < 2:
        raise ValueError("training split contains a single class")
    mtry = max(1, int(round(math.sqrt(X.shape[1]))))
    rng = np.random.default_rng(seed)
    tree_seeds = rng.integers(0, 2**63 - 1, size=n_trees)
    trees = []
    for ts in tree_seeds:
        tree_rng = np.random.default_rng(int(ts))
        boot = tree_rng.integers(0, len(y), size=len(y))
        trees.append(
            _grow_tree(X[boot], y[boot], 0, max_depth, mtry, n_classes, tree_rng)
        )
    return ForestModel(trees=trees, n_trees=n_trees, max_depth=max_depth,
                       seed=seed, n_classes=n_classes, n_features=X.shape[1])


def predict_maneuver_proba(model: ForestModel, features: Sequence[float]
                           ) -> ManeuverDistribution:
    """Averaged leaf class frequencies for one frame; sums to one."""
    probs = model.predict_proba(np.asarray(features, dtype=float)[None, :])[0]
    probs = probs / probs.sum()
    return ManeuverDistribution.from_array(probs)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int
    flags: tuple = ()


@dataclass
class ClassificationReport:
    per_class: dict  # class code -> ClassMetrics
    macro_precision: float
    macro_recall: float
    macro_f1: float

    def metric_array(self, name: str) -> np.ndarray:
        return np.array([getattr(self.per_class[c], name) for c in sorted(self.per_class)])


def classification_metrics(y_true: np.ndarray, y_pred: np.ndarray,
                           n_classes: int) -> ClassificationReport:
    """One-vs-rest precision/recall/F1 per class plus macro averages.

    Ratios with a zero denominator are reported as 0 and flagged.
    """
    y = np.asarray(y_true, dtype=int)
    pred = np.asarray(y_pred, dtype=int)
    if len(y) == 0:
        raise ValueError("cannot evaluate on an empty split")
    per_class = {}
    for c in range(n_classes):
        tp = int(np.sum((pred == c) & (y == c)))
        fp = int(np.sum((pred == c) & (y != c)))
        fn = int(np.sum((pred != c) & (y == c)))
        flags = []
        if tp + fp > 0:
            precision = tp / (tp + fp)
        else:
            precision = 0.0
            flags.append("precision_undefined")
        if tp + fn > 0:
            recall = tp / (tp + fn)
        else:
            recall = 0.0
            flags.append("recall_undefined")
        if precision + recall > 0:
            f1 = 2 * precision * recall / (precision + recall)
        else:
            f1 = 0.0
            flags.append("f1_undefined")
        per_class[c] = ClassMetrics(precision=precision, recall=recall, f1=f1,
                                    support=int(np.sum(y == c)), flags=tuple(flags))
    return ClassificationReport(
        per_class=per_class,
        macro_precision=float(np.mean([m.precision for m in per_class.values()])),
        macro_recall=float(np.mean([m.recall for m in per_class.values()])),
        macro_f1=float(np.mean([m.f1 for m in per_class.values()])),
    )


def evaluate_classifier(model: ForestModel, X: np.ndarray, y: np.ndarray
                        ) -> ClassificationReport:
    """Score the model's predictions on a held-out split."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if len(y) == 0:
        raise ValueError("cannot evaluate on an empty split")
    return classification_metrics(y, model.predict(X), model.n_classes)


# ---------------------------------------------------------------------------
# Model selection and the repeated-split protocol
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForestGrid:
    n_trees: tuple = (100, 300)
    max_depth: tuple = (None, 10, 20)

    def points(self) -> list[tuple[int, Optional[int]]]:
        return [(n, d) for n in self.n_trees for d in self.max_depth]


def _size_key(params: tuple[int, Optional[int]]) -> tuple[float, float]:
    n, d = params
    return (float(n), math.inf if d is None else float(d))


def train_random_forest(train: tuple[np.ndarray, np.ndarray],
                        val: tuple[np.ndarray, np.ndarray],
                        grid: ForestGrid = ForestGrid(), seed: int = 0
                        ) -> tuple[ForestModel, tuple[int, Optional[int]]]:
    """Grid-search over forest size and depth on the validation macro-F1.

    Returns the winning model and its parameters; exact F1 ties go to the
    smaller model (fewer trees, then shallower).
    """
    train_X, train_y = train
    val_X, val_y = val
    if len(train_y) == 0 or len(val_y) == 0:
        raise ValueError("train and validation splits must be nonempty")
    best = None
    for params in grid.points():
        n_trees, depth = params
        model = train_forest(train_X, train_y, n_trees=n_trees, max_depth=depth,
                             seed=seed)
        f1 = evaluate_classifier(model, val_X, val_y).macro_f1
        entry = (f1, params, model)
        if (
            best is None
            or f1 > best[0]
            or (f1 == best[0] and _size_key(params) < _size_key(best[1]))
        ):
            best = entry
    return best[2], best[1]


def split_indices(n: int, ratios: tuple[float, float, float],
                  rng: np.random.Generator,
                  groups: Optional[np.ndarray] = None
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Random train/val/test index split; group-aware when groups are given."""
    if groups is None:
        perm = rng.permutation(n)
        n_train = int(round(ratios[0] * n))
        n_val = int(round(ratios[1] * n))
        return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]
    unique = np.unique(groups)
    perm = rng.permutation(unique)
    counts = {g: int(np.sum(groups == g)) for g in unique}
    train_g, val_g, test_g = [], [], []
    acc = 0
    for g in perm:
        if acc < ratios[0] * n:
            train_g.append(g)
        elif acc < (ratios[0] + ratios[1]) * n:
            val_g.append(g)
        else:
            test_g.append(g)
        acc += counts[g]
    to_idx = lambda gs: np.nonzero(np.isin(groups, gs))[0]
    return to_idx(train_g), to_idx(val_g), to_idx(test_g)


@dataclass
class ProtocolResult:
    reports: list  # ClassificationReport per split
    chosen_params: list
    n_classes: int

    def mean_metric(self, name: str) -> np.ndarray:
        return np.mean([r.metric_array(name) for r in self.reports], axis=0)

    def std_metric(self, name: str) -> np.ndarray:
        return np.std([r.metric_array(name) for r in self.reports], axis=0)

    def majority_params(self) -> tuple[int, Optional[int]]:
        counts = Counter(self.chosen_params)
        top = max(counts.values())
        for p in self.chosen_params:
            if counts[p] == top:
                return p
        raise AssertionError("unreachable")


def run_split_protocol(X: np.ndarray, y: np.ndarray,
                       grid: ForestGrid = ForestGrid(),
                       n_splits: int = 10,
                       ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
                       seed: int = 0,
                       groups: Optional[np.ndarray] = None,
                       smote_k: int = 5) -> ProtocolResult:
    """Repeat the random 80/10/10 evaluation: oversample the training split,
    tune on validation, score on the untouched test split."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    reports, chosen = [], []
    for s in range(n_splits):
        rng = np.random.default_rng(seed + s)
        tr, va, te = split_indices(len(y), ratios, rng, groups)
        if min(len(tr), len(va), len(te)) == 0:
            raise ValueError("split produced an empty partition; need more data")
        bal_X, bal_y = smote_oversample(X[tr], y[tr], k=smote_k, seed=seed + s)
        model, params = train_random_forest((bal_X, bal_y), (X[va], y[va]),
                                            grid=grid, seed=seed + s)
        reports.append(evaluate_classifier(model, X[te], y[te]))
        chosen.append(params)
    return ProtocolResult(reports=reports, chosen_params=chosen,
                          n_classes=int(np.max(y)) + 1)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def _node_to_dict(node: _TreeNode) -> dict:
    if node.is_leaf:
        return {"histogram": [int(c) for c in node.histogram]}
    return {
        "feature": int(node.feature),
        "threshold": float(node.threshold),
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def _node_from_dict(data: dict) -> _TreeNode:
    if "histogram" in data:
        return _TreeNode(histogram=np.asarray(data["histogram"], dtype=float))
    return _TreeNode(
        feature=data["feature"],
        threshold=data["threshold"],
        left=_node_from_dict(data["left"]),
        right=_node_from_dict(data["right"]),
    )


def save_forest(model: ForestModel, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": FOREST_FILE_VERSION,
        "n_trees": model.n_trees,
        "max_depth": model.max_depth,
        "seed": model.seed,
        "n_classes": model.n_classes,
        "n_features": model.n_features,
        "trees": [_node_to_dict(t) for t in model.trees],
    }
    path.write_text(json.dumps(payload, sort_keys=True))


def load_forest(path: str | Path) -> ForestModel:
    path = Path(path)
    if not path.exists():
        raise InputError(f"forest file not found: {path}")
    payload = json.loads(path.read_text())
    if payload.get("version") != FOREST_FILE_VERSION:
        raise InputError(f"unsupported forest file version: {payload.get('version')!r}")
    return ForestModel(
        trees=[_node_from_dict(t) for t in payload["trees"]],
        n_trees=payload["n_trees"],
        max_depth=payload["max_depth"],
        seed=payload["seed"],
        n_classes=payload["n_classes"],
        n_features=payload["n_features"],
    )
