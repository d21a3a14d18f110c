"""Gradient-boosted decision trees for binary classification.

Second-order boosting on the logistic loss. Split gain for a candidate
partition (L, R) with gradient/hessian sums G, H and L2 penalty lambda:

    gain = GL^2/(HL+lambda) + GR^2/(HR+lambda) - (GL+GR)^2/(HL+HR+lambda)

Leaf values are -G/(H+lambda) * learning_rate. Split search is exact greedy
over sorted unique feature values with midpoint thresholds; rows with
x <= threshold go left. Gain ties keep the lower feature index and, within
a feature, the lower threshold. Per-tree feature subsets are drawn as
sorted(rng.sample(range(d), k)) from random.Random(seed) in tree order.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import ConfigError, DataError, PipelineError

MODEL_FORMAT = "privaml.gbt"
MODEL_VERSION = 1


class SingleClassData(DataError):
    """Training labels contain only one class."""


class ArityMismatch(PipelineError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"expected {expected} features, got {got}")
        self.expected = expected
        self.got = got


class ModelFormatError(DataError):
    """Serialized model has an unknown format or version."""


@dataclass(frozen=True)
class TrainConfig:
    n_estimators: int = 10
    max_depth: int = 3
    learning_rate: float = 0.1
    colsample_bytree: float = 1.0
    l2_lambda: float = 1.0
    min_child_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ConfigError("n_estimators must be >= 1")
        if self.max_depth < 1:
            raise ConfigError("max_depth must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 < self.colsample_bytree <= 1.0:
            raise ConfigError("colsample_bytree must be in (0, 1]")
        if self.l2_lambda < 0 or self.min_child_weight < 0:
            raise ConfigError("l2_lambda and min_child_weight must be >= 0")


@dataclass(frozen=True)
class Tree:
    """Flat node arrays; node 0 is the root. Internal nodes have
    feature >= 0; leaves carry feature == -1 and the leaf value."""

    feature: tuple[int, ...]
    threshold: tuple[float, ...]
    left: tuple[int, ...]
    right: tuple[int, ...]
    value: tuple[float, ...]

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return sum(1 for f in self.feature if f < 0)

    @property
    def n_internal(self) -> int:
        return self.n_nodes - self.n_leaves

    def depth(self) -> int:
        return tree_depth(self)

    def leaf_paths(self):
        return tree_leaf_paths(self)


def tree_depth(tree) -> int:
    """Depth of any flat-array tree (0 for a bare leaf)."""

    def rec(i: int) -> int:
        if tree.feature[i] < 0:
            return 0
        return 1 + max(rec(tree.left[i]), rec(tree.right[i]))

    return rec(0)


def tree_leaf_paths(tree) -> list[tuple[int, tuple[tuple[int, bool], ...]]]:
    """(leaf node id, ((internal node id, went_left), ...)) per leaf, in
    left-to-right order, for any flat-array tree."""
    out = []

    def rec(i: int, path: tuple[tuple[int, bool], ...]):
        if tree.feature[i] < 0:
            out.append((i, path))
            return
        rec(tree.left[i], path + ((i, True),))
        rec(tree.right[i], path + ((i, False),))

    rec(0, ())
    return out


@dataclass(frozen=True)
class Ensemble:
    trees: tuple[Tree, ...]
    base_score: float
    n_features: int


def _sigmoid(m: np.ndarray) -> np.ndarray:
    out = np.empty_like(m, dtype=np.float64)
    pos = m >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-m[pos]))
    em = np.exp(m[~pos])
    out[~pos] = em / (1.0 + em)
    return out


class _TreeBuilder:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def _new_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def build(self, X, g, h, feat_subset) -> Tree:
        lam = self.cfg.l2_lambda
        mcw = self.cfg.min_child_weight
        lr = self.cfg.learning_rate
        root = self._new_node()
        stack = [(root, np.arange(len(g)), 0)]
        while stack:
            node, rows, depth = stack.pop(0)
            G = float(g[rows].sum())
            H = float(h[rows].sum())
            best = None  # (gain, feature, threshold, left_mask)
            if depth < self.cfg.max_depth and len(rows) >= 2:
                for f in feat_subset:
                    xv = X[rows, f]
                    order = np.argsort(xv, kind="stable")
                    xs = xv[order]
                    cg = np.cumsum(g[rows][order])
                    ch = np.cumsum(h[rows][order])
                    cut = np.flatnonzero(xs[:-1] != xs[1:])
                    if cut.size == 0:
                        continue
                    GL = cg[cut]
                    HL = ch[cut]
                    GR = G - GL
                    HR = H - HL
                    ok = (HL >= mcw) & (HR >= mcw)
                    if not ok.any():
                        continue
                    gain = np.where(
                        ok,
                        GL * GL / (HL + lam) + GR * GR / (HR + lam) - G * G / (H + lam),
                        -np.inf,
                    )
                    i = int(np.argmax(gain))  # first max = lowest threshold
                    if gain[i] > 1e-12 and (best is None or gain[i] > best[0]):
                        thr = (float(xs[cut[i]]) + float(xs[cut[i] + 1])) / 2.0
                        best = (float(gain[i]), f, thr)
            if best is None:
                self.value[node] = -G / (H + lam) * lr
                continue
            _, f, thr = best
            self.feature[node] = f
            self.threshold[node] = thr
            lmask = X[rows, f] <= thr
            lchild = self._new_node()
            rchild = self._new_node()
            self.left[node] = lchild
            self.right[node] = rchild
            stack.append((lchild, rows[lmask], depth + 1))
            stack.append((rchild, rows[~lmask], depth + 1))
        return Tree(
            feature=tuple(self.feature),
            threshold=tuple(self.threshold),
            left=tuple(self.left),
            right=tuple(self.right),
            value=tuple(self.value),
        )


def train(X, y, cfg: Optional[TrainConfig] = None) -> Ensemble:
    """Fit an ensemble; deterministic for fixed inputs and cfg.seed."""
    cfg = cfg or TrainConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) == 0:
        raise DataError("training matrix must be non-empty and 2-d")
    if len(X) != len(y):
        raise DataError("rows and labels disagree in length")
    yb = y.astype(np.float64)
    if yb.min() == yb.max():
        raise SingleClassData("training labels contain a single class")
    n, d = X.shape
    p = min(max(float(yb.mean()), 1e-12), 1.0 - 1e-12)
    base = math.log(p / (1.0 - p))
    margin = np.full(n, base, dtype=np.float64)
    rng = random.Random(cfg.seed)
    k = max(1, round(cfg.colsample_bytree * d))
    trees = []
    for _ in range(cfg.n_estimators):
        subset = sorted(rng.sample(range(d), k))
        prob = _sigmoid(margin)
        g = prob - yb
        h = prob * (1.0 - prob)
        tree = _TreeBuilder(cfg).build(X, g, h, subset)
        trees.append(tree)
        margin += tree_margins(tree, X)
    return Ensemble(trees=tuple(trees), base_score=base, n_features=d)


def tree_margins(tree: Tree, X: np.ndarray) -> np.ndarray:
    """Leaf contribution of one tree for every row (vectorized walk)."""
    feature = np.asarray(tree.feature)
    threshold = np.asarray(tree.threshold)
    left = np.asarray(tree.left)
    right = np.asarray(tree.right)
    value = np.asarray(tree.value)
    nodes = np.zeros(len(X), dtype=np.int64)
    active = np.flatnonzero(feature[nodes] >= 0)
    while active.size:
        cur = nodes[active]
        goleft = X[active, feature[cur]] <= threshold[cur]
        nodes[active] = np.where(goleft, left[cur], right[cur])
        active = active[feature[nodes[active]] >= 0]
    return value[nodes]


def _as_matrix(e: Ensemble, row_or_rows) -> tuple[np.ndarray, bool]:
    X = np.asarray(row_or_rows, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != e.n_features:
        raise ArityMismatch(e.n_features, X.shape[1] if X.ndim == 2 else X.ndim)
    return X, single


def predict_margin(e: Ensemble, row_or_rows) -> Union[float, np.ndarray]:
    """base_score plus the routed leaf value of every tree."""
    X, single = _as_matrix(e, row_or_rows)
    margin = np.full(len(X), e.base_score, dtype=np.float64)
    for tree in e.trees:
        margin += tree_margins(tree, X)
    return float(margin[0]) if single else margin


def predict_proba(e: Ensemble, row_or_rows) -> Union[float, np.ndarray]:
    m = predict_margin(e, row_or_rows)
    if isinstance(m, float):
        return float(_sigmoid(np.array([m]))[0])
    return _sigmoid(m)


def predict(e: Ensemble, row_or_rows, threshold: float = 0.5):
    """sigmoid(margin) >= threshold (ties predict positive)."""
    p = predict_proba(e, row_or_rows)
    if isinstance(p, float):
        return bool(p >= threshold)
    return p >= threshold


def training_log_loss(e: Ensemble, X, y, n_trees: Optional[int] = None) -> float:
    """Log-loss using the first n_trees trees (all by default)."""
    X = np.asarray(X, dtype=np.float64)
    yb = np.asarray(y, dtype=np.float64)
    sub = Ensemble(trees=e.trees[: len(e.trees) if n_trees is None else n_trees],
                   base_score=e.base_score, n_features=e.n_features)
    p = np.clip(predict_proba(sub, X), 1e-15, 1.0 - 1e-15)
    return float(-(yb * np.log(p) + (1.0 - yb) * np.log(1.0 - p)).mean())


# ---------------------------------------------------------------------------
# Serialization: versioned, deterministic JSON


def to_json(e: Ensemble) -> str:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "base_score": e.base_score,
        "n_features": e.n_features,
        "trees": [
            {
                "feature": list(t.feature),
                "threshold": list(t.threshold),
                "left": list(t.left),
                "right": list(t.right),
                "value": list(t.value),
            }
            for t in e.trees
        ],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def from_json(text: str) -> Ensemble:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"not valid JSON: {exc}")
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError("unrecognized model format")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {doc.get('version')!r}")
    trees = tuple(
        Tree(
            feature=tuple(int(x) for x in t["feature"]),
            threshold=tuple(float(x) for x in t["threshold"]),
            left=tuple(int(x) for x in t["left"]),
            right=tuple(int(x) for x in t["right"]),
            value=tuple(float(x) for x in t["value"]),
        )
        for t in doc["trees"]
    )
    return Ensemble(
        trees=trees,
        base_score=float(doc["base_score"]),
        n_features=int(doc["n_features"]),
    )
