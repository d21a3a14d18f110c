"""Integer lowering of trained ensembles.

Features are quantized per column with a uniform affine map

    q = clamp(round_half_even((x - min) / scale), 0, 2^n - 1),
    scale = (max - min) / (2^n - 1)

calibrated on training data only. Thresholds are lowered with floor so the
integer comparison (q <= t_q) mirrors the float comparison (x <= t) on level
representatives. Leaf values (and the base score) are affinely mapped to
signed n-bit integers; evaluation is then pure integer routing plus integer
summation, with dequantization applied only to the final score. The lowered
model is checked against the encrypted backend's width limits up front.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, PipelineError
from .gbt import MODEL_FORMAT, ArityMismatch, Ensemble, Tree, _sigmoid

QUANT_FORMAT = "privaml.gbt.quantized"
QUANT_VERSION = 1

N_BITS_MIN = 2
N_BITS_MAX = 16


class RangeViolation(PipelineError):
    """A quantized input lies outside [0, 2^n - 1]."""


class LoweringError(ConfigError):
    """The lowered model cannot fit the backend's width limits."""


@dataclass(frozen=True)
class QuantParams:
    n_bits: int
    mins: tuple[float, ...]
    maxs: tuple[float, ...]
    scales: tuple[float, ...]  # 0.0 marks a constant feature (maps to level 0)
    leaf_min: Optional[float] = None
    leaf_max: Optional[float] = None
    leaf_scale: Optional[float] = None

    @property
    def n_features(self) -> int:
        return len(self.mins)

    @property
    def n_levels(self) -> int:
        return 1 << self.n_bits


@dataclass(frozen=True)
class QuantTree:
    feature: tuple[int, ...]
    threshold: tuple[int, ...]
    left: tuple[int, ...]
    right: tuple[int, ...]
    value: tuple[int, ...]  # signed n_bits leaf integers


@dataclass(frozen=True)
class QuantizedEnsemble:
    trees: tuple[QuantTree, ...]
    base_int: int
    n_bits: int
    n_features: int
    params: QuantParams

    @property
    def leaf_offset(self) -> int:
        return 1 << (self.n_bits - 1)

    @property
    def n_terms(self) -> int:
        # every tree contributes one leaf term; the base is one more
        return len(self.trees) + 1

    def dequant_margin(self, score: int) -> float:
        p = self.params
        return (score + self.n_terms * self.leaf_offset) * p.leaf_scale + (
            self.n_terms * p.leaf_min
        )


@dataclass(frozen=True)
class QuantPrediction:
    score: int
    probability: float
    label: bool


def calibrate(X, n_bits: int) -> QuantParams:
    """Per-feature min/max/scale from training rows."""
    if not N_BITS_MIN <= n_bits <= N_BITS_MAX:
        raise ConfigError(f"n_bits must be in [{N_BITS_MIN}, {N_BITS_MAX}]")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise DataError("calibration rows must be non-empty and 2-d")
    mins = X.min(axis=0)
    maxs = X.max(axis=0)
    levels = (1 << n_bits) - 1
    scales = np.where(maxs > mins, (maxs - mins) / levels, 0.0)
    return QuantParams(
        n_bits=n_bits,
        mins=tuple(float(v) for v in mins),
        maxs=tuple(float(v) for v in maxs),
        scales=tuple(float(v) for v in scales),
    )


def quantize_matrix(X, params: QuantParams) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != params.n_features:
        raise ArityMismatch(params.n_features, X.shape[1])
    mins = np.asarray(params.mins)
    scales = np.asarray(params.scales)
    q = np.zeros_like(X)
    nz = scales > 0
    q[:, nz] = (X[:, nz] - mins[nz]) / scales[nz]
    q = np.clip(np.rint(q), 0, params.n_levels - 1).astype(np.int64)
    return q[0] if single else q


def quantize_row(row, params: QuantParams) -> np.ndarray:
    return quantize_matrix(row, params)


def _quantize_threshold(t: float, fmin: float, scale: float, n_levels: int) -> int:
    if scale == 0.0:
        return 0 if t >= fmin else -1
    tq = math.floor((t - fmin) / scale)
    return max(-1, min(tq, n_levels - 1))


def required_accumulator_bits(n_bits: int, n_estimators: int) -> int:
    """Width needed to accumulate the ensemble's signed leaf terms."""
    return n_bits + math.ceil(math.log2(max(n_estimators, 1))) + 1


def quantize_ensemble(
    e: Ensemble,
    params: QuantParams,
    max_lut_bits: int = 16,
    max_accumulator_bits: int = 24,
) -> QuantizedEnsemble:
    """Lower a float ensemble onto the integer grid of `params`.

    Tree topology is preserved. Raises LoweringError when the accumulated
    margin or the per-path selection tables cannot fit the backend limits.
    """
    if e.n_features != params.n_features:
        raise ArityMismatch(params.n_features, e.n_features)
    n = params.n_bits
    if n > max_lut_bits:
        raise LoweringError(f"n_bits={n} exceeds the {max_lut_bits}-bit lookup limit")
    acc = required_accumulator_bits(n, len(e.trees))
    if acc > max_accumulator_bits:
        raise LoweringError(
            f"accumulating {len(e.trees)} trees at {n} bits needs {acc} bits, "
            f"over the {max_accumulator_bits}-bit accumulator"
        )
    depth = max((t.depth() for t in e.trees), default=0)
    if depth > max_lut_bits:
        raise LoweringError(f"tree depth {depth} exceeds the {max_lut_bits}-bit lookup limit")

    pool = [e.base_score] + [v for t in e.trees for v, f in zip(t.value, t.feature) if f < 0]
    leaf_min = min(pool)
    leaf_max = max(pool)
    levels = (1 << n) - 1
    leaf_scale = (leaf_max - leaf_min) / levels if leaf_max > leaf_min else 0.0
    offset = 1 << (n - 1)

    def leaf_int(w: float) -> int:
        if leaf_scale == 0.0:
            return -offset
        q = int(np.rint((w - leaf_min) / leaf_scale))
        return max(0, min(q, levels)) - offset

    trees = []
    for t in e.trees:
        thresholds = []
        values = []
        for i in range(t.n_nodes):
            if t.feature[i] >= 0:
                f = t.feature[i]
                thresholds.append(
                    _quantize_threshold(
                        t.threshold[i], params.mins[f], params.scales[f], params.n_levels
                    )
                )
                values.append(0)
            else:
                thresholds.append(0)
                values.append(leaf_int(t.value[i]))
        trees.append(
            QuantTree(
                feature=t.feature,
                threshold=tuple(thresholds),
                left=t.left,
                right=t.right,
                value=tuple(values),
            )
        )
    full = replace(params, leaf_min=leaf_min, leaf_max=leaf_max, leaf_scale=leaf_scale)
    return QuantizedEnsemble(
        trees=tuple(trees),
        base_int=leaf_int(e.base_score),
        n_bits=n,
        n_features=e.n_features,
        params=full,
    )


def _walk(tree: QuantTree, q: Sequence[int]) -> int:
    i = 0
    while tree.feature[i] >= 0:
        i = tree.left[i] if q[tree.feature[i]] <= tree.threshold[i] else tree.right[i]
    return tree.value[i]


def predict_quantized(qe: QuantizedEnsemble, qrow) -> QuantPrediction:
    """Pure integer evaluation of one quantized row."""
    q = np.asarray(qrow)
    if q.shape != (qe.n_features,):
        raise ArityMismatch(qe.n_features, int(q.shape[0]) if q.ndim == 1 else q.ndim)
    if q.min(initial=0) < 0 or q.max(initial=0) > (1 << qe.n_bits) - 1:
        raise RangeViolation(f"quantized inputs must lie in [0, {(1 << qe.n_bits) - 1}]")
    score = qe.base_int + sum(_walk(t, q) for t in qe.trees)
    margin = qe.dequant_margin(score)
    prob = float(_sigmoid(np.array([margin]))[0])
    return QuantPrediction(score=int(score), probability=prob, label=bool(prob >= 0.5))


def predict_quantized_batch(qe: QuantizedEnsemble, Q) -> np.ndarray:
    """Integer scores for a matrix of quantized rows (vectorized)."""
    Q = np.asarray(Q, dtype=np.int64)
    if Q.ndim != 2 or Q.shape[1] != qe.n_features:
        raise ArityMismatch(qe.n_features, Q.shape[1] if Q.ndim == 2 else Q.ndim)
    if len(Q) and (Q.min() < 0 or Q.max() > (1 << qe.n_bits) - 1):
        raise RangeViolation(f"quantized inputs must lie in [0, {(1 << qe.n_bits) - 1}]")
    scores = np.full(len(Q), qe.base_int, dtype=np.int64)
    for t in qe.trees:
        feature = np.asarray(t.feature)
        threshold = np.asarray(t.threshold)
        left = np.asarray(t.left)
        right = np.asarray(t.right)
        value = np.asarray(t.value)
        nodes = np.zeros(len(Q), dtype=np.int64)
        active = np.flatnonzero(feature[nodes] >= 0) if len(Q) else np.array([], dtype=int)
        while active.size:
            cur = nodes[active]
            goleft = Q[active, feature[cur]] <= threshold[cur]
            nodes[active] = np.where(goleft, left[cur], right[cur])
            active = active[feature[nodes[active]] >= 0]
        scores += value[nodes]
    return scores


def batch_predictions(qe: QuantizedEnsemble, Q, threshold: float = 0.5):
    """(scores, probabilities, labels) for a batch of quantized rows."""
    scores = predict_quantized_batch(qe, Q)
    margins = np.array([qe.dequant_margin(int(s)) for s in scores])
    probs = _sigmoid(margins)
    return scores, probs, probs >= threshold


# ---------------------------------------------------------------------------
# Serialization: the gbt format plus a "quantization" section


def to_json_quantized(qe: QuantizedEnsemble) -> str:
    p = qe.params
    doc = {
        "format": QUANT_FORMAT,
        "version": QUANT_VERSION,
        "base_format": MODEL_FORMAT,
        "base_int": qe.base_int,
        "n_bits": qe.n_bits,
        "n_features": qe.n_features,
        "trees": [
            {
                "feature": list(t.feature),
                "threshold": list(t.threshold),
                "left": list(t.left),
                "right": list(t.right),
                "value": list(t.value),
            }
            for t in qe.trees
        ],
        "quantization": {
            "n_bits": p.n_bits,
            "mins": list(p.mins),
            "maxs": list(p.maxs),
            "scales": list(p.scales),
            "leaf_min": p.leaf_min,
            "leaf_max": p.leaf_max,
            "leaf_scale": p.leaf_scale,
        },
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def from_json_quantized(text: str) -> QuantizedEnsemble:
    from .gbt import ModelFormatError

    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"not valid JSON: {exc}")
    if not isinstance(doc, dict) or doc.get("format") != QUANT_FORMAT:
        raise ModelFormatError("unrecognized quantized model format")
    if doc.get("version") != QUANT_VERSION:
        raise ModelFormatError(f"unsupported model version {doc.get('version')!r}")
    qz = doc["quantization"]
    params = QuantParams(
        n_bits=int(qz["n_bits"]),
        mins=tuple(float(x) for x in qz["mins"]),
        maxs=tuple(float(x) for x in qz["maxs"]),
        scales=tuple(float(x) for x in qz["scales"]),
        leaf_min=float(qz["leaf_min"]),
        leaf_max=float(qz["leaf_max"]),
        leaf_scale=float(qz["leaf_scale"]),
    )
    trees = tuple(
        QuantTree(
            feature=tuple(int(x) for x in t["feature"]),
            threshold=tuple(int(x) for x in t["threshold"]),
            left=tuple(int(x) for x in t["left"]),
            right=tuple(int(x) for x in t["right"]),
            value=tuple(int(x) for x in t["value"]),
        )
        for t in doc["trees"]
    )
    return QuantizedEnsemble(
        trees=trees,
        base_int=int(doc["base_int"]),
        n_bits=int(doc["n_bits"]),
        n_features=int(doc["n_features"]),
        params=params,
    )
