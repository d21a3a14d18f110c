"""Binary classification metrics with the illicit class as positive."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PipelineError


class LengthMismatch(PipelineError):
    """Label and prediction vectors disagree in length (or are empty)."""


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    avg_batch_time: float = 0.0
    total_time: float = 0.0
    time_ratio: float = 0.0
    lut_ops: int = 0
    add_ops: int = 0
    encrypt_ops: int = 0

    @property
    def confusion(self) -> tuple[int, int, int, int]:
        return (self.tp, self.fp, self.tn, self.fn)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "avg_batch_time": self.avg_batch_time,
            "total_time": self.total_time,
            "time_ratio": self.time_ratio,
            "lut_ops": self.lut_ops,
            "add_ops": self.add_ops,
            "encrypt_ops": self.encrypt_ops,
        }


def _as_bool(v) -> np.ndarray:
    return np.asarray(v).astype(bool)


def compute_metrics(y_true, y_pred) -> MetricsReport:
    """Standard confusion-matrix metrics; the positive class is illicit.
    F1 is defined as 0 when precision + recall vanishes."""
    t = _as_bool(y_true)
    p = _as_bool(y_pred)
    if len(t) != len(p) or len(t) == 0:
        raise LengthMismatch(f"got {len(t)} labels and {len(p)} predictions")
    tp = int(np.sum(t & p))
    fp = int(np.sum(~t & p))
    tn = int(np.sum(~t & ~p))
    fn = int(np.sum(t & ~p))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
    return MetricsReport(
        accuracy=(tp + tn) / len(t),
        precision=precision,
        recall=recall,
        f1=f1,
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
    )


def minority_f1(y_true, y_pred) -> float:
    """F1 of the illicit class."""
    return compute_metrics(y_true, y_pred).f1


def accuracy(y_true, y_pred) -> float:
    return compute_metrics(y_true, y_pred).accuracy
