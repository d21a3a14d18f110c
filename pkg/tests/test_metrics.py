import numpy as np
import pytest

from privaml.metrics import LengthMismatch, MetricsReport, accuracy, compute_metrics, minority_f1


class TestComputeMetrics:
    def test_frozen_confusion(self):
        # tp=2 fp=1 fn=3 tn=4
        y = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0]
        p = [1, 1, 0, 0, 0, 1, 0, 0, 0, 0]
        r = compute_metrics(y, p)
        assert (r.tp, r.fp, r.tn, r.fn) == (2, 1, 4, 3)
        assert r.confusion == (2, 1, 4, 3)
        assert r.accuracy == pytest.approx(0.6)
        assert r.precision == pytest.approx(2 / 3)
        assert r.recall == pytest.approx(0.4)
        assert r.f1 == pytest.approx(0.5)

    def test_perfect_and_inverted(self):
        y = [0, 1, 0, 1]
        assert compute_metrics(y, y).f1 == 1.0
        r = compute_metrics(y, [1 - v for v in y])
        assert (r.accuracy, r.f1) == (0.0, 0.0)

    def test_no_predicted_positives_gives_zero_f1(self):
        r = compute_metrics([1, 1, 0], [0, 0, 0])
        assert (r.precision, r.recall, r.f1) == (0.0, 0.0, 0.0)

    def test_no_true_positives_in_labels(self):
        r = compute_metrics([0, 0, 0], [0, 1, 0])
        assert (r.recall, r.f1) == (0.0, 0.0)
        assert r.accuracy == pytest.approx(2 / 3)

    def test_accepts_boolean_and_integer_arrays(self):
        a = compute_metrics(np.array([True, False]), np.array([1, 0]))
        assert a.accuracy == 1.0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            compute_metrics([1, 0], [1])
        with pytest.raises(LengthMismatch):
            compute_metrics([], [])

    def test_to_dict_keys(self):
        d = compute_metrics([1, 0], [1, 0]).to_dict()
        assert set(d) == {
            "accuracy", "precision", "recall", "f1", "tp", "fp", "tn", "fn",
            "avg_batch_time", "total_time", "time_ratio",
            "lut_ops", "add_ops", "encrypt_ops",
        }
        assert d["avg_batch_time"] == 0.0 and d["lut_ops"] == 0


class TestConvenienceWrappers:
    def test_minority_f1(self):
        y = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0]
        p = [1, 1, 0, 0, 0, 1, 0, 0, 0, 0]
        assert minority_f1(y, p) == pytest.approx(0.5)

    def test_accuracy(self):
        assert accuracy([1, 0, 1, 0], [1, 0, 0, 0]) == pytest.approx(0.75)


class TestReportTiming:
    def test_timing_fields_settable(self):
        r = MetricsReport(
            accuracy=1.0, precision=1.0, recall=1.0, f1=1.0,
            tp=1, fp=0, tn=1, fn=0,
            avg_batch_time=0.5, total_time=2.0, time_ratio=8.0,
            lut_ops=120, add_ops=60, encrypt_ops=31,
        )
        d = r.to_dict()
        assert d["time_ratio"] == 8.0 and d["encrypt_ops"] == 31
