"""End-to-end experiment harness.

One experiment = load or generate a dataset, enrich it at one or more
feature tiers, split it at a day boundary, optionally tune, train, quantize,
then evaluate the test rows in each requested mode:

  clear    float model on float features
  quant    integer model on quantized features
  fhe-sim  integer model evaluated row-by-row on the encrypted backend

The quant and fhe-sim modes are asserted to agree prediction-for-prediction
(the backend's exactness guarantee), so their metric columns are identical
by construction. Wall-clock timing is measured over equal batches of the
test set; time_ratio compares each mode's total to the clear mode's.
"""

from __future__ import annotations

import contextlib
import csv
import io
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import data, fhe, gbt, graphfeat, hpo, quant
from .errors import ConfigError, PipelineError, PrivamlError
from .metrics import MetricsReport, compute_metrics

MODES = ("clear", "quant", "fhe-sim")

REPORT_COLUMNS = (
    "tier",
    "mode",
    "accuracy",
    "f1",
    "precision",
    "recall",
    "avg_batch_time",
    "total_time",
    "time_ratio",
    "lut_ops",
)


@contextlib.contextmanager
def _stage(name: str):
    """Tag escaping package errors with the pipeline stage they came from."""
    try:
        yield
    except PrivamlError as exc:
        exc.stage = name
        raise


@dataclass
class ExperimentConfig:
    dataset: Union[str, dict] = field(default_factory=lambda: {"preset": "balanced"})
    tiers: tuple[str, ...] = ("basic",)
    modes: tuple[str, ...] = ("clear",)
    n_bits: int = 6
    train: gbt.TrainConfig = field(default_factory=gbt.TrainConfig)
    hpo_iterations: int = 0  # 0 disables tuning
    hpo_k: int = 3
    objective: str = "minority_f1"
    train_fraction: float = 0.75
    seed: int = 0
    threshold: float = 0.5
    n_batches: int = 20
    window: Optional[graphfeat.WindowConfig] = None

    def __post_init__(self):
        if not self.modes:
            raise ConfigError("at least one evaluation mode is required")
        for m in self.modes:
            if m not in MODES:
                raise ConfigError(f"unknown mode {m!r}; pick from {MODES}")
        for t in self.tiers:
            if t not in graphfeat.TIERS:
                raise ConfigError(f"unknown tier {t!r}; pick from {graphfeat.TIERS}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("threshold must be in (0, 1)")


@dataclass
class ReportRow:
    tier: str
    mode: str
    metrics: MetricsReport

    def to_dict(self) -> dict:
        doc = {"tier": self.tier, "mode": self.mode}
        doc.update(self.metrics.to_dict())
        return {k: doc[k] for k in REPORT_COLUMNS}


def load_dataset(spec: Union[str, dict], seed: int = 0) -> data.Dataset:
    """Resolve a dataset spec: a CSV path, or a generator preset dict
    ({"preset": "balanced"|"imbalanced"|"raw", ...knobs})."""
    if isinstance(spec, str):
        path = Path(spec)
        with open(path) as fh:
            ds = data.parse_transactions(fh)
        sidecar = path.with_suffix(".groups.csv")
        if sidecar.exists():
            with open(sidecar) as fh:
                ds = data.attach_groups(ds, data.read_groups(fh))
        return ds
    spec = dict(spec)
    preset = spec.pop("preset", "balanced")
    seed = int(spec.pop("seed", seed))
    try:
        if preset == "balanced":
            return data.dataset1(seed=seed, **spec)
        if preset == "imbalanced":
            return data.dataset2(seed=seed, **spec)
        if preset == "raw":
            return data.generate_synthetic(data.SyntheticConfig(seed=seed, **spec))
    except TypeError as exc:
        raise ConfigError(f"bad option for dataset preset {preset!r}: {exc}")
    raise ConfigError(f"unknown dataset preset {preset!r}")


def _timed_batches(n_rows: int, n_batches: int, run_batch) -> tuple[np.ndarray, float, float]:
    """Run `run_batch(start, stop)` over equal slices, timing each."""
    n_batches = max(1, min(n_batches, n_rows))
    cuts = [round(i * n_rows / n_batches) for i in range(n_batches + 1)]
    outputs = []
    times = []
    for lo, hi in zip(cuts, cuts[1:]):
        if lo == hi:
            continue
        started = time.perf_counter()
        outputs.append(run_batch(lo, hi))
        times.append(time.perf_counter() - started)
    preds = np.concatenate(outputs)
    return preds, float(np.mean(times)), float(np.sum(times))


def _evaluate_mode(
    mode: str,
    cfg: ExperimentConfig,
    model: gbt.Ensemble,
    qe: quant.QuantizedEnsemble,
    X_test: np.ndarray,
    Q_test: np.ndarray,
    y_test: np.ndarray,
) -> tuple[MetricsReport, np.ndarray]:
    if mode == "clear":
        def run(lo, hi):
            return np.asarray(gbt.predict(model, X_test[lo:hi], cfg.threshold))

        preds, avg_t, total_t = _timed_batches(len(X_test), cfg.n_batches, run)
        report = compute_metrics(y_test, preds)
        report.avg_batch_time, report.total_time = avg_t, total_t
        return report, preds
    if mode == "quant":
        def run(lo, hi):
            _, _, labels = quant.batch_predictions(qe, Q_test[lo:hi], cfg.threshold)
            return labels

        preds, avg_t, total_t = _timed_batches(len(Q_test), cfg.n_batches, run)
        report = compute_metrics(y_test, preds)
        report.avg_batch_time, report.total_time = avg_t, total_t
        return report, preds
    # fhe-sim
    keys = fhe.keygen(cfg.seed)
    ctx = fhe.EvalContext()

    def run(lo, hi):
        out = np.zeros(hi - lo, dtype=bool)
        for i in range(lo, hi):
            enc = [
                fhe.encrypt(keys.public, int(q), qe.n_bits, ctx=ctx)
                for q in Q_test[i]
            ]
            score = fhe.decrypt(keys.secret, fhe.eval_ensemble_encrypted(qe, enc, ctx))
            margin = qe.dequant_margin(score)
            prob = 1.0 / (1.0 + np.exp(-margin)) if margin >= 0 else np.exp(margin) / (
                1.0 + np.exp(margin)
            )
            out[i - lo] = prob >= cfg.threshold
        return out

    preds, avg_t, total_t = _timed_batches(len(Q_test), cfg.n_batches, run)
    report = compute_metrics(y_test, preds)
    report.avg_batch_time, report.total_time = avg_t, total_t
    counters = ctx.counters()
    report.lut_ops = counters["lut_ops"]
    report.add_ops = counters["add_ops"]
    report.encrypt_ops = counters["encrypt_ops"]
    return report, preds


def run_experiment(cfg: ExperimentConfig) -> list[ReportRow]:
    """Run the full pipeline and return one report row per (tier, mode)."""
    with _stage("load"):
        ds = load_dataset(cfg.dataset, cfg.seed)
    with _stage("split"):
        sp = data.temporal_split(ds, cfg.train_fraction)
    rows: list[ReportRow] = []
    for tier in cfg.tiers:
        with _stage("enrich"):
            fm = graphfeat.enrich_dataset(ds, tier, cfg.window)
            train_fm, test_fm = graphfeat.split_matrix(fm, sp.split_day)
        train_cfg = cfg.train
        if cfg.hpo_iterations > 0:
            with _stage("tune"):
                result = hpo.tune_cv(
                    train_fm.X,
                    train_fm.y,
                    iterations=cfg.hpo_iterations,
                    k=cfg.hpo_k,
                    seed=cfg.seed,
                    objective=cfg.objective,
                    base_config=train_cfg,
                )
                train_cfg = replace(train_cfg, **result.best_params)
        with _stage("train"):
            model = gbt.train(train_fm.X, train_fm.y, train_cfg)
        with _stage("quantize"):
            qparams = quant.calibrate(train_fm.X, cfg.n_bits)
            qe = quant.quantize_ensemble(model, qparams)
            Q_test = quant.quantize_matrix(test_fm.X, qparams)
        mode_preds: dict[str, np.ndarray] = {}
        mode_reports: dict[str, MetricsReport] = {}
        with _stage("evaluate"):
            for mode in cfg.modes:
                report, preds = _evaluate_mode(
                    mode, cfg, model, qe, test_fm.X, Q_test, test_fm.y
                )
                mode_preds[mode] = preds
                mode_reports[mode] = report
            if "quant" in mode_preds and "fhe-sim" in mode_preds:
                if not np.array_equal(mode_preds["quant"], mode_preds["fhe-sim"]):
                    raise PipelineError(
                        "quant and fhe-sim predictions diverged; exactness broken"
                    )
            if "clear" in mode_reports:
                clear_total = mode_reports["clear"].total_time
                for mode, report in mode_reports.items():
                    if clear_total > 0:
                        report.time_ratio = report.total_time / clear_total
        for mode in cfg.modes:
            rows.append(ReportRow(tier=tier, mode=mode, metrics=mode_reports[mode]))
    return rows


# ---------------------------------------------------------------------------
# Report rendering


def render_report(rows: Sequence[ReportRow], format: str = "text") -> str:
    """Render report rows as an aligned text table, CSV, or JSON document
    with a fixed column order."""
    dicts = [r.to_dict() if isinstance(r, ReportRow) else dict(r) for r in rows]

    def fmt(value) -> str:
        if isinstance(value, float):
            return f"{value:.4f}"
        return str(value)

    if format == "text":
        cells = [list(REPORT_COLUMNS)] + [[fmt(d[c]) for c in REPORT_COLUMNS] for d in dicts]
        widths = [max(len(row[i]) for row in cells) for i in range(len(REPORT_COLUMNS))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
        return "\n".join(lines) + "\n"
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for d in dicts:
            writer.writerow([d[c] for c in REPORT_COLUMNS])
        return buf.getvalue()
    if format == "json":
        return json.dumps(
            {"columns": list(REPORT_COLUMNS), "rows": dicts}, indent=2, sort_keys=True
        )
    raise ConfigError(f"unknown report format {format!r}")


def parse_report_csv(text: str) -> list[dict]:
    reader = csv.DictReader(io.StringIO(text))
    out = []
    for row in reader:
        parsed: dict = {}
        for key, value in row.items():
            if key in ("tier", "mode"):
                parsed[key] = value
            elif key in ("lut_ops",):
                parsed[key] = int(value)
            else:
                parsed[key] = float(value)
        out.append(parsed)
    return out
