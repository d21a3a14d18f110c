import json

import jsonschema
import numpy as np
import pytest

import privaml
from privaml import data, experiment
from privaml.data import PatternKind
from privaml.errors import ConfigError, DataError
from privaml.experiment import (
    MODES,
    REPORT_COLUMNS,
    ExperimentConfig,
    ReportRow,
    load_dataset,
    parse_report_csv,
    render_report,
    run_experiment,
)
from privaml.metrics import MetricsReport

SMALL_RAW = {
    "preset": "raw",
    "n_accounts": 50,
    "n_banks": 4,
    "n_background": 240,
    "span_days": 5,
    "group_counts": {k: 2 for k in PatternKind},
    "amount_signal": 1.0,
}


def fake_row(tier="basic", mode="clear", lut_ops=0):
    m = MetricsReport(
        accuracy=0.875, precision=0.8, recall=1.0, f1=8 / 9,
        tp=4, fp=1, tn=3, fn=0,
        avg_batch_time=0.001, total_time=0.02, time_ratio=1.0, lut_ops=lut_ops,
    )
    return ReportRow(tier=tier, mode=mode, metrics=m)


class TestConfigValidation:
    def test_mode_and_tier_whitelists(self):
        assert MODES == ("clear", "quant", "fhe-sim")
        with pytest.raises(ConfigError):
            ExperimentConfig(modes=("plain",))
        with pytest.raises(ConfigError):
            ExperimentConfig(tiers=("extra",))
        with pytest.raises(ConfigError):
            ExperimentConfig(modes=())

    def test_threshold_bounds(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(threshold=0.0)
        with pytest.raises(ConfigError):
            ExperimentConfig(threshold=1.0)


class TestLoadDataset:
    def test_raw_preset(self):
        ds = load_dataset(SMALL_RAW, seed=3)
        assert len(ds.groups) == 10
        assert ds.illicit_count > 0

    def test_preset_seed_key_wins(self):
        a = load_dataset({**SMALL_RAW, "seed": 5}, seed=0)
        b = load_dataset(SMALL_RAW, seed=5)
        assert a.transactions == b.transactions

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            load_dataset({"preset": "synthetic"})

    def test_bad_knob(self):
        with pytest.raises(ConfigError, match="bad option"):
            load_dataset({"preset": "raw", "n_account": 10})

    def test_csv_path_with_sidecar(self, tmp_path):
        ds = load_dataset(SMALL_RAW, seed=1)
        csv_path = tmp_path / "ds.csv"
        with open(csv_path, "w") as fh:
            data.write_csv(ds, fh)
        with open(tmp_path / "ds.groups.csv", "w") as fh:
            data.write_groups(ds, fh)
        back = load_dataset(str(csv_path))
        assert back.transactions == ds.transactions
        assert back.groups == ds.groups

    def test_csv_path_without_sidecar(self, tmp_path):
        ds = load_dataset(SMALL_RAW, seed=1)
        csv_path = tmp_path / "plain.csv"
        with open(csv_path, "w") as fh:
            data.write_csv(ds, fh)
        back = load_dataset(str(csv_path))
        assert back.groups == ()


@pytest.fixture(scope="module")
def report():
    cfg = ExperimentConfig(
        dataset=dict(SMALL_RAW),
        tiers=("basic", "single_hop"),
        modes=("clear", "quant", "fhe-sim"),
        n_bits=4,
        train=privaml.gbt.TrainConfig(n_estimators=3, max_depth=2, min_child_weight=1e-3),
        seed=3,
        n_batches=4,
    )
    return run_experiment(cfg)


class TestRunExperiment:
    def test_row_grid(self, report):
        assert [(r.tier, r.mode) for r in report] == [
            ("basic", "clear"), ("basic", "quant"), ("basic", "fhe-sim"),
            ("single_hop", "clear"), ("single_hop", "quant"), ("single_hop", "fhe-sim"),
        ]

    def test_quant_and_encrypted_agree_exactly(self, report):
        by = {(r.tier, r.mode): r.metrics for r in report}
        for tier in ("basic", "single_hop"):
            q, f = by[(tier, "quant")], by[(tier, "fhe-sim")]
            assert q.confusion == f.confusion
            assert (q.accuracy, q.f1) == (f.accuracy, f.f1)

    def test_clear_mode_is_the_time_baseline(self, report):
        by = {(r.tier, r.mode): r.metrics for r in report}
        assert by[("basic", "clear")].time_ratio == pytest.approx(1.0)
        assert by[("basic", "fhe-sim")].time_ratio > 1.0

    def test_operation_counters_only_in_encrypted_mode(self, report):
        by = {(r.tier, r.mode): r.metrics for r in report}
        assert by[("basic", "clear")].lut_ops == 0
        assert by[("basic", "fhe-sim")].lut_ops > 0
        assert by[("basic", "fhe-sim")].encrypt_ops > 0

    def test_row_dict_column_order(self, report):
        assert list(report[0].to_dict()) == list(REPORT_COLUMNS)

    def test_stage_attribution_on_bad_input(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text(
            "timestamp,from_bank,from_account,to_bank,to_account,"
            "amount,currency,payment_format,is_laundering\n"
            "0,1,a,2,b,1.00,USD,wire,0\n"
            "oops\n"
        )
        cfg = ExperimentConfig(dataset=str(bad))
        with pytest.raises(DataError) as exc_info:
            run_experiment(cfg)
        assert exc_info.value.stage == "load"


class TestRendering:
    def test_columns_frozen(self):
        assert REPORT_COLUMNS == (
            "tier", "mode", "accuracy", "f1", "precision", "recall",
            "avg_batch_time", "total_time", "time_ratio", "lut_ops",
        )

    def test_text_table(self):
        out = render_report([fake_row(), fake_row(tier="single_hop", mode="quant")])
        lines = out.strip().splitlines()
        assert len(lines) == 3
        assert lines[0].split()[:2] == ["tier", "mode"]
        assert "0.8750" in lines[1]

    def test_csv_round_trip(self):
        out = render_report([fake_row(lut_ops=120)], format="csv")
        rows = parse_report_csv(out)
        assert len(rows) == 1
        assert rows[0]["tier"] == "basic"
        assert rows[0]["accuracy"] == pytest.approx(0.875)
        assert rows[0]["lut_ops"] == 120
        assert isinstance(rows[0]["lut_ops"], int)

    def test_json_schema(self):
        from pathlib import Path

        out = render_report([fake_row(), fake_row(mode="fhe-sim", lut_ops=9)], format="json")
        doc = json.loads(out)
        assert doc["columns"] == list(REPORT_COLUMNS)
        schema = json.loads(
            (Path(privaml.__file__).parent / "report_schema.json").read_text()
        )
        jsonschema.validate(doc, schema)

    def test_unknown_format(self):
        with pytest.raises(ConfigError):
            render_report([fake_row()], format="yaml")

    def test_accepts_plain_dicts(self):
        d = fake_row().to_dict()
        out = render_report([d], format="csv")
        assert parse_report_csv(out)[0]["mode"] == "clear"
