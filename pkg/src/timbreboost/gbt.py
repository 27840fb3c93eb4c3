"""Regularized gradient-boosted regression trees with exact greedy splits.

Multiclass problems are handled one-vs-rest: every boosting round fits one
regression tree per class against that class's gradient statistics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .kvconfig import KeyValueConfig

LOSSES = ("squared_one_hot", "softmax")
MODEL_FORMAT = "timbreboost-gbt"
MODEL_VERSION = 1


@dataclass(frozen=True)
class Leaf:
    weight: float


@dataclass(frozen=True)
class Split:
    feature_index: int
    threshold: float
    left: "TreeNode"
    right: "TreeNode"


TreeNode = Union[Leaf, Split]


@dataclass(frozen=True)
class GradHess:
    g: np.ndarray
    h: np.ndarray


@dataclass(frozen=True)
class TrainConfig(KeyValueConfig):
    learning_rate: float = 0.05
    n_estimators: int = 100
    max_depth: int = 6
    min_child_weight: float = 1.0
    subsample: float = 0.8
    lambda_l2: float = 1.0
    gamma_leaf: float = 0.0
    loss: str = "squared_one_hot"
    seed: int = 0

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must be in (0, 1]")
        if self.lambda_l2 < 0 or self.gamma_leaf < 0:
            raise ValueError("regularization terms must be non-negative")
        if self.n_estimators < 0 or self.max_depth < 0:
            raise ValueError("n_estimators and max_depth must be non-negative")


@dataclass
class TreeEnsemble:
    trees: list  # [(class_index, TreeNode)] in training order
    num_classes: int
    learning_rate: float
    base_score: float = 0.0
    num_features: Optional[int] = None
    config: Optional[TrainConfig] = None
    feature_names: tuple = ()
    train_loss: list = field(default_factory=list)


# -- objective pieces ------------------------------------------------------

def softmax(scores) -> np.ndarray:
    z = np.asarray(scores, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def compute_grad_hess(predictions, targets, loss: str = "squared_one_hot") -> GradHess:
    """First and second derivatives of the loss at the current predictions.

    For ``squared_one_hot`` inputs are per-instance scores and 0/1 targets of
    one class, with loss 1/2 (pred - y)^2. For ``softmax`` inputs are
    (n, classes) score and one-hot target matrices.
    """
    pred = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if pred.shape != y.shape:
        raise ValueError(f"predictions {pred.shape} and targets {y.shape} differ in shape")
    if loss == "squared_one_hot":
        return GradHess(pred - y, np.ones_like(pred))
    if loss == "softmax":
        p = softmax(pred)
        return GradHess(p - y, p * (1.0 - p))
    raise ValueError(f"unknown loss {loss!r}")


def loss_value(predictions, targets, loss: str = "squared_one_hot") -> float:
    pred = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if loss == "squared_one_hot":
        return float(0.5 * np.sum((pred - y) ** 2))
    if loss == "softmax":
        z = pred - pred.max(axis=-1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        return float(-np.sum(y * logp))
    raise ValueError(f"unknown loss {loss!r}")


def _check_denominator(h_plus_lambda):
    if not h_plus_lambda > 0:
        raise ValueError(f"H + lambda must be positive, got {h_plus_lambda}")


def optimal_leaf_weight(G: float, H: float, lambda_l2: float) -> float:
    _check_denominator(H + lambda_l2)
    return -G / (H + lambda_l2)


def structure_score(leaf_stats, lambda_l2: float, gamma_leaf: float) -> float:
    """Minimized objective of a fixed partition given per-leaf (G, H) sums."""
    total = 0.0
    for G, H in leaf_stats:
        _check_denominator(H + lambda_l2)
        total += G * G / (H + lambda_l2)
    return -0.5 * total + gamma_leaf * len(leaf_stats)


def split_gain(G_L, H_L, G_R, H_R, lambda_l2: float, gamma_leaf: float) -> float:
    for d in (H_L + lambda_l2, H_R + lambda_l2, H_L + H_R + lambda_l2):
        _check_denominator(d)
    return _gain(G_L, H_L, G_R, H_R, lambda_l2, gamma_leaf)


def _gain(G_L, H_L, G_R, H_R, lam, gamma):
    # shared by the scalar and vectorized paths so both round identically
    return 0.5 * (G_L * G_L / (H_L + lam) + G_R * G_R / (H_R + lam)
                  - (G_L + G_R) * (G_L + G_R) / (H_L + H_R + lam)) - gamma


# -- split search ----------------------------------------------------------

def _midpoint(lo, hi):
    mid = lo + (hi - lo) / 2.0
    return np.where(mid > lo, mid, hi)


def find_best_split(X, grad_hess: GradHess, feature_subset=None, lambda_l2: float = 1.0,
                    gamma_leaf: float = 0.0, min_child_weight: float = 1.0):
    """Exact greedy search over every gap between distinct sorted feature values.

    Returns ``(feature, threshold, gain)`` for the best split with positive
    gain whose children both carry at least `min_child_weight` hessian, or
    None. Rows with ``x < threshold`` go left. Ties go to the lowest feature
    index, then the lowest threshold.
    """
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if n < 2:
        return None
    features = np.arange(d) if feature_subset is None else np.sort(np.asarray(feature_subset, dtype=int))
    if len(features) == 0:
        return None
    Xf = X[:, features]
    order = np.argsort(Xf, axis=0, kind="stable")
    xs = np.take_along_axis(Xf, order, axis=0)
    gs = grad_hess.g[order]
    hs = grad_hess.h[order]
    G_L = np.cumsum(gs, axis=0)[:-1]
    H_L = np.cumsum(hs, axis=0)[:-1]
    G_R = np.cumsum(gs[::-1], axis=0)[::-1][1:]
    H_R = np.cumsum(hs[::-1], axis=0)[::-1][1:]
    valid = (xs[1:] > xs[:-1]) & (H_L >= min_child_weight) & (H_R >= min_child_weight)
    if not valid.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        gains = _gain(G_L, H_L, G_R, H_R, lambda_l2, gamma_leaf)
    gains = np.where(valid, gains, -np.inf)
    best_row = np.argmax(gains, axis=0)  # first maximum: lowest threshold
    best_per_feature = gains[best_row, np.arange(len(features))]
    col = int(np.argmax(best_per_feature))  # first maximum: lowest feature
    gain = float(best_per_feature[col])
    if not gain > 0:
        return None
    r = best_row[col]
    threshold = float(_midpoint(xs[r, col], xs[r + 1, col]))
    return int(features[col]), threshold, gain


def build_tree(X, grad_hess: GradHess, config: TrainConfig, depth: int = 0) -> TreeNode:
    """Grow a tree greedily until max_depth or no positive-gain split remains."""
    X = np.asarray(X, dtype=np.float64)
    G = float(np.sum(grad_hess.g))
    H = float(np.sum(grad_hess.h))
    if depth < config.max_depth:
        found = find_best_split(X, grad_hess, None, config.lambda_l2, config.gamma_leaf,
                                config.min_child_weight)
        if found is not None:
            feature, threshold, _ = found
            go_left = X[:, feature] < threshold
            go_right = ~go_left
            left = build_tree(X[go_left], GradHess(grad_hess.g[go_left], grad_hess.h[go_left]),
                              config, depth + 1)
            right = build_tree(X[go_right], GradHess(grad_hess.g[go_right], grad_hess.h[go_right]),
                               config, depth + 1)
            return Split(feature, threshold, left, right)
    return Leaf(optimal_leaf_weight(G, H, config.lambda_l2))


def tree_predict(node: TreeNode, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    out = np.empty(X.shape[0])
    _fill(node, X, np.arange(X.shape[0]), out)
    return out


def _fill(node, X, rows, out):
    if isinstance(node, Leaf):
        out[rows] = node.weight
        return
    left = X[rows, node.feature_index] < node.threshold
    _fill(node.left, X, rows[left], out)
    _fill(node.right, X, rows[~left], out)


def tree_depth(node: TreeNode) -> int:
    if isinstance(node, Leaf):
        return 0
    return 1 + max(tree_depth(node.left), tree_depth(node.right))


def leaves(node: TreeNode):
    if isinstance(node, Leaf):
        yield node
    else:
        yield from leaves(node.left)
        yield from leaves(node.right)


# -- boosting --------------------------------------------------------------

def _subsample_rows(n, rate, seed, round_index, class_index):
    if rate >= 1.0:
        return np.arange(n)
    rng = np.random.default_rng([seed, round_index, class_index])
    k = max(1, int(round(rate * n)))
    return np.sort(rng.choice(n, size=k, replace=False))


def train(features, labels, config: TrainConfig | None = None, num_classes: int | None = None) -> TreeEnsemble:
    """Fit a one-vs-rest boosted ensemble; deterministic for a fixed config.seed."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training requires a nonempty 2-D feature matrix")
    if y.shape != (X.shape[0],):
        raise ValueError("labels must be one per row")
    if not np.issubdtype(y.dtype, np.integer) or y.min() < 0:
        raise ValueError("labels must be non-negative class indices")
    K = int(num_classes if num_classes is not None else y.max() + 1)
    if y.max() >= K:
        raise ValueError(f"label {int(y.max())} out of range for {K} classes")
    onehot = np.zeros((X.shape[0], K))
    onehot[np.arange(X.shape[0]), y] = 1.0
    return fit_targets(X, onehot, config)


def fit_targets(features, targets, config: TrainConfig | None = None) -> TreeEnsemble:
    """Boost one tree per target column per round against an (n, K) target matrix.

    With the squared loss the columns may hold arbitrary real targets, which
    makes this a plain multi-output regressor; `train` feeds it one-hot rows.
    """
    config = config or TrainConfig()
    X = np.asarray(features, dtype=np.float64)
    T = np.asarray(targets, dtype=np.float64)
    if T.ndim != 2 or T.shape[0] != X.shape[0]:
        raise ValueError("targets must be an (n, K) matrix matching the features")
    n, K = T.shape
    base = 0.0
    scores = np.full((n, K), base)
    ens = TreeEnsemble([], K, config.learning_rate, base, X.shape[1], config)
    ens.train_loss.append(loss_value(scores, T, config.loss))

    for t in range(config.n_estimators):
        gh = compute_grad_hess(scores, T, config.loss)
        for c in range(K):
            rows = _subsample_rows(n, config.subsample, config.seed, t, c)
            tree = build_tree(X[rows], GradHess(gh.g[rows, c], gh.h[rows, c]), config)
            ens.trees.append((c, tree))
            scores[:, c] += config.learning_rate * tree_predict(tree, X)
        ens.train_loss.append(loss_value(scores, T, config.loss))
    return ens


def predict_scores(ensemble: TreeEnsemble, X) -> np.ndarray:
    """Per-class scores: base_score + learning_rate * (sum of that class's tree outputs)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if ensemble.num_features is not None and X.shape[1] != ensemble.num_features:
        raise ValueError(f"expected {ensemble.num_features} features, got {X.shape[1]}")
    sums = np.zeros((X.shape[0], ensemble.num_classes))
    for c, tree in ensemble.trees:
        sums[:, c] += tree_predict(tree, X)
    return ensemble.base_score + ensemble.learning_rate * sums


def predict(ensemble: TreeEnsemble, x):
    """Class index and per-class scores for one feature vector."""
    values = getattr(x, "values", x)
    scores = predict_scores(ensemble, np.asarray(values, dtype=np.float64)[None, :])[0]
    return int(np.argmax(scores)), scores


def predict_classes(ensemble: TreeEnsemble, X) -> np.ndarray:
    return np.argmax(predict_scores(ensemble, X), axis=1)


# -- serialization ---------------------------------------------------------

def _preorder(node):
    if isinstance(node, Leaf):
        return [["leaf", node.weight]]
    return [["split", node.feature_index, node.threshold]] + _preorder(node.left) + _preorder(node.right)


def _from_preorder(items, pos=0):
    item = items[pos]
    if item[0] == "leaf":
        return Leaf(float(item[1])), pos + 1
    if item[0] != "split":
        raise ValueError(f"bad node tag {item[0]!r}")
    left, pos = _from_preorder(items, pos + 1)
    right, pos = _from_preorder(items, pos)
    return Split(int(item[1]), float(item[2]), left, right), pos


def ensemble_to_dict(ensemble: TreeEnsemble) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "config": ensemble.config.to_mapping() if ensemble.config else None,
        "num_classes": ensemble.num_classes,
        "num_features": ensemble.num_features,
        "feature_names": list(ensemble.feature_names),
        "learning_rate": ensemble.learning_rate,
        "base_score": ensemble.base_score,
        "trees": [{"class": c, "nodes": _preorder(t)} for c, t in ensemble.trees],
    }


def ensemble_from_dict(data: dict) -> TreeEnsemble:
    if data.get("format") != MODEL_FORMAT:
        raise ValueError("not a timbreboost model")
    if data.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {data.get('version')}")
    trees = []
    for entry in data["trees"]:
        node, used = _from_preorder(entry["nodes"])
        if used != len(entry["nodes"]):
            raise ValueError("trailing nodes in tree listing")
        trees.append((int(entry["class"]), node))
    config = TrainConfig.from_mapping(data["config"]) if data.get("config") else None
    return TreeEnsemble(trees, int(data["num_classes"]), float(data["learning_rate"]),
                        float(data["base_score"]), data.get("num_features"), config,
                        tuple(data.get("feature_names", ())))


def save_model(ensemble: TreeEnsemble, path) -> None:
    text = json.dumps(ensemble_to_dict(ensemble), indent=1, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_model(path) -> TreeEnsemble:
    return ensemble_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
