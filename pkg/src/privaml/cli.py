"""Command line front end.

One subcommand per pipeline stage (gen, enrich, split, tune, train,
quantize, eval, report) plus the collaboration roles (serve, participate,
inquire). Global flags: --seed, --config <file>, --out-dir. Config files
are flat key=value lines with # comments; command line flags override
config values, which override built-in defaults.

Exit codes: 0 success, 2 configuration or usage error, 3 data error,
4 pipeline error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Optional

from . import collab, data, fhe, gbt, graphfeat, hpo, quant
from .errors import ConfigError, DataError, PrivamlError
from .experiment import (
    ExperimentConfig,
    load_dataset,
    render_report,
    run_experiment,
)
from .metrics import compute_metrics

# re-exported so the high-level pipeline surface lives in one module
__all__ = ["main", "compute_metrics", "run_experiment", "render_report", "load_config"]


# ---------------------------------------------------------------------------
# Config files


def _coerce(text: str):
    low = text.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def load_config(path) -> dict:
    """Flat key=value file; blank lines and # comments ignored."""
    mapping: dict = {}
    with open(path) as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            mapping[key.strip()] = _coerce(value.strip())
    return mapping


class _Options:
    """Resolution order: command line flag, then config file, then default."""

    def __init__(self, args: argparse.Namespace, config: dict):
        self.args = args
        self.config = config

    def get(self, name: str, default=None):
        value = getattr(self.args, name, None)
        if value is None:
            value = self.config.get(name, default)
        return value

    def require(self, name: str, flag: str):
        value = self.get(name)
        if value is None:
            raise ConfigError(f"missing required option {flag}")
        return value

    @property
    def seed(self) -> int:
        return int(self.get("seed", 0))

    @property
    def out_dir(self) -> Path:
        d = Path(self.get("out_dir", "."))
        d.mkdir(parents=True, exist_ok=True)
        return d

    def out_path(self, name: str, default_name: str) -> Path:
        value = self.get(name)
        return Path(value) if value is not None else self.out_dir / default_name


def _split_list(value) -> tuple[str, ...]:
    if isinstance(value, (tuple, list)):
        return tuple(value)
    return tuple(part.strip() for part in str(value).split(",") if part.strip())


def _parse_address(text: str) -> tuple[str, int]:
    host, sep, port = str(text).rpartition(":")
    if not sep or not port.isdigit():
        raise ConfigError(f"expected host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


# ---------------------------------------------------------------------------
# Shared loaders


def _load_features(path) -> graphfeat.FeatureMatrix:
    with open(path) as fh:
        return graphfeat.read_feature_csv(fh)


def _load_model(path) -> tuple[str, object]:
    """Returns ("clear", Ensemble) or ("quant", QuantizedEnsemble)."""
    text = Path(path).read_text()
    doc = json.loads(text)
    fmt = doc.get("format")
    if fmt == quant.QUANT_FORMAT:
        return "quant", quant.from_json_quantized(text)
    if fmt == gbt.MODEL_FORMAT:
        return "clear", gbt.from_json(text)
    raise gbt.ModelFormatError(f"unrecognized model format {fmt!r} in {path}")


def _window_overrides(opts: _Options, tier: str) -> graphfeat.WindowConfig:
    return graphfeat.WindowConfig(
        window_seconds=int(opts.get("window_seconds", 86_400)),
        max_cycle_length=int(opts.get("max_cycle_length", 6)),
        histogram_bins=tuple(int(b) for b in _split_list(opts.get("histogram_bins", "2,3,4,5"))),
        tier=tier,
    )


_TRAIN_KEYS = (
    "n_estimators",
    "max_depth",
    "learning_rate",
    "colsample_bytree",
    "l2_lambda",
    "min_child_weight",
)
_DATASET_KEYS = ("amount_signal", "n_groups", "n_accounts", "n_banks", "n_background", "span_days")


def _train_config(opts: _Options, params: Optional[dict] = None) -> gbt.TrainConfig:
    merged: dict = dict(params or {})
    for key in _TRAIN_KEYS:
        value = opts.get(key)
        if value is not None:
            merged[key] = value
    if "n_estimators" in merged:
        merged["n_estimators"] = int(round(merged["n_estimators"]))
    if "max_depth" in merged:
        merged["max_depth"] = int(round(merged["max_depth"]))
    return gbt.TrainConfig(seed=opts.seed, **merged)


def _dataset_spec(opts: _Options, default: str = "balanced"):
    dataset = opts.get("dataset", default)
    text = str(dataset)
    if text.endswith(".csv") or "/" in text:
        return text
    spec = {"preset": text}
    for key in _DATASET_KEYS:
        value = opts.get(key)
        if value is not None:
            spec[key] = value
    return spec


# ---------------------------------------------------------------------------
# Subcommands


def cmd_gen(opts: _Options) -> None:
    ds = load_dataset(_dataset_spec(opts, default="raw"), seed=opts.seed)
    out = opts.out_path("out", "transactions.csv")
    with open(out, "w") as fh:
        data.write_csv(ds, fh)
    groups_out = out.with_suffix(".groups.csv")
    with open(groups_out, "w") as fh:
        data.write_groups(ds, fh)
    print(
        f"wrote {len(ds)} transactions to {out} "
        f"({ds.illicit_count} illicit, ratio {ds.illicit_ratio:.4f}, "
        f"{len(ds.groups)} pattern groups)"
    )


def cmd_enrich(opts: _Options) -> None:
    tier = opts.get("tier", "vertex_stats")
    ds = load_dataset(str(opts.require("input", "--input")), seed=opts.seed)
    cfg = graphfeat.dataset_config(ds, _window_overrides(opts, tier), tier=tier)
    fm = graphfeat.enrich_dataset(ds, tier=tier, cfg=cfg)
    out = opts.out_path("out", f"features_{tier}.csv")
    with open(out, "w") as fh:
        graphfeat.write_feature_csv(fm, fh)
    if opts.get("manifest"):
        with open(opts.out_path("manifest_out", f"tiers_{tier}.csv"), "w") as fh:
            graphfeat.write_tier_manifest(cfg, fh)
    print(f"wrote {fm.X.shape[0]} rows x {fm.X.shape[1]} features ({tier}) to {out}")


def cmd_split(opts: _Options) -> None:
    path = Path(opts.require("input", "--input"))
    fraction = float(opts.get("train_fraction", 0.75))
    with open(path) as fh:
        first = fh.readline()
    if first.startswith("# tier="):
        fm = _load_features(path)
        split_day = data.choose_split_day(fm.timestamps, fraction)
        train, test = graphfeat.split_matrix(fm, split_day)
        out_train = opts.out_path("out_train", f"{path.stem}_train.csv")
        out_test = opts.out_path("out_test", f"{path.stem}_test.csv")
        with open(out_train, "w") as fh:
            graphfeat.write_feature_csv(train, fh)
        with open(out_test, "w") as fh:
            graphfeat.write_feature_csv(test, fh)
        n_train, n_test = train.X.shape[0], test.X.shape[0]
    else:
        ds = load_dataset(str(path), seed=opts.seed)
        res = data.temporal_split(ds, fraction)
        split_day = res.split_day
        out_train = opts.out_path("out_train", f"{path.stem}_train.csv")
        out_test = opts.out_path("out_test", f"{path.stem}_test.csv")
        for side, out in ((res.train, out_train), (res.test, out_test)):
            with open(out, "w") as fh:
                data.write_csv(side, fh)
            with open(out.with_suffix(".groups.csv"), "w") as fh:
                data.write_groups(side, fh)
        n_train, n_test = len(res.train), len(res.test)
    print(f"split at day {split_day}: {n_train} train rows -> {out_train}, {n_test} test rows -> {out_test}")


def cmd_tune(opts: _Options) -> None:
    fm = _load_features(opts.require("input", "--input"))
    history = opts.out_path("history", "tuning_history.jsonl")
    result = hpo.tune_cv(
        fm.X,
        fm.y,
        iterations=int(opts.get("iterations", 50)),
        k=int(opts.get("k", 3)),
        seed=opts.seed,
        objective=opts.get("objective", "minority_f1"),
        shuffled=bool(opts.get("shuffled", False)),
        base_config=_train_config(opts),
        history_path=history,
        resume=bool(opts.get("resume", False)),
    )
    out = opts.out_path("out", "best_params.json")
    doc = {
        "params": result.best_params,
        "score": result.best_score,
        "trial_index": result.best_index,
    }
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(
        f"best {opts.get('objective', 'minority_f1')}={result.best_score:.4f} "
        f"at trial {result.best_index} -> {out} (history: {history})"
    )


def _read_params_file(path) -> dict:
    doc = json.loads(Path(path).read_text())
    return doc.get("params", doc)


def cmd_train(opts: _Options) -> None:
    fm = _load_features(opts.require("input", "--input"))
    params = _read_params_file(opts.get("params")) if opts.get("params") else {}
    cfg = _train_config(opts, params)
    ensemble = gbt.train(fm.X, fm.y, cfg)
    out = opts.out_path("out", "model.json")
    out.write_text(gbt.to_json(ensemble))
    loss = gbt.training_log_loss(ensemble, fm.X, fm.y)
    print(
        f"trained {len(ensemble.trees)} trees on {fm.X.shape[0]} rows "
        f"(training log loss {loss:.4f}) -> {out}"
    )


def cmd_quantize(opts: _Options) -> None:
    kind, model = _load_model(opts.require("model", "--model"))
    if kind != "clear":
        raise ConfigError("quantize expects a clear-score model file")
    fm = _load_features(opts.require("input", "--input"))
    n_bits = int(opts.get("n_bits", 6))
    params = quant.calibrate(fm.X, n_bits)
    qe = quant.quantize_ensemble(
        model,
        params,
        max_lut_bits=int(opts.get("max_lut_bits", fhe.DEFAULT_MAX_LUT_BITS)),
        max_accumulator_bits=int(opts.get("max_accumulator_bits", fhe.DEFAULT_MAX_ACCUMULATOR_BITS)),
    )
    out = opts.out_path("out", "model_quantized.json")
    out.write_text(quant.to_json_quantized(qe))
    print(f"quantized {len(qe.trees)} trees at {n_bits} bits -> {out}")


def cmd_eval(opts: _Options) -> None:
    kind, model = _load_model(opts.require("model", "--model"))
    fm = _load_features(opts.require("input", "--input"))
    threshold = float(opts.get("threshold", 0.5))
    mode = opts.get("mode", "clear" if kind == "clear" else "quant")
    started = time.perf_counter()
    extra = {}
    if mode == "clear":
        if kind != "clear":
            raise ConfigError("clear evaluation needs a clear-score model file")
        preds = gbt.predict(model, fm.X, threshold=threshold)
    elif mode in ("quant", "fhe-sim"):
        if kind != "quant":
            raise ConfigError(f"{mode} evaluation needs a quantized model file")
        Q = quant.quantize_matrix(fm.X, model.params)
        if mode == "quant":
            _, _, preds = quant.batch_predictions(model, Q, threshold=threshold)
        else:
            keys = fhe.keygen(opts.seed)
            ctx = fhe.EvalContext()
            preds = []
            for qrow in Q:
                enc = [
                    fhe.encrypt(keys.public, int(v), bit_width=model.n_bits, ctx=ctx)
                    for v in qrow
                ]
                score = fhe.decrypt(keys.secret, fhe.eval_ensemble_encrypted(model, enc, ctx=ctx))
                margin = model.dequant_margin(score)
                preds.append(int(margin >= 0) if threshold == 0.5 else int(_prob(margin) >= threshold))
            extra = ctx.counters()
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    elapsed = time.perf_counter() - started
    report = compute_metrics(fm.y, preds)
    doc = report.to_dict()
    doc.update({"mode": mode, "n_rows": int(fm.X.shape[0]), "wall_time": elapsed})
    doc.update(extra)
    line = ", ".join(
        f"{k}={doc[k]:.4f}" for k in ("accuracy", "precision", "recall", "f1")
    )
    print(f"{mode}: {line} over {fm.X.shape[0]} rows in {elapsed:.2f}s")
    if extra:
        print(f"ops: lut={extra['lut_ops']} add={extra['add_ops']} encrypt={extra['encrypt_ops']}")
    if opts.get("out"):
        Path(opts.get("out")).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _prob(margin: float) -> float:
    import math

    if margin >= 0:
        return 1.0 / (1.0 + math.exp(-margin))
    z = math.exp(margin)
    return z / (1.0 + z)


def cmd_report(opts: _Options) -> None:
    cfg = ExperimentConfig(
        dataset=_dataset_spec(opts),
        tiers=_split_list(opts.get("tiers", "basic")),
        modes=_split_list(opts.get("modes", "clear")),
        n_bits=int(opts.get("n_bits", 6)),
        train=_train_config(opts),
        hpo_iterations=int(opts.get("hpo_iterations", 0)),
        hpo_k=int(opts.get("hpo_k", 3)),
        objective=opts.get("objective", "minority_f1"),
        train_fraction=float(opts.get("train_fraction", 0.75)),
        seed=opts.seed,
        threshold=float(opts.get("threshold", 0.5)),
        n_batches=int(opts.get("n_batches", 20)),
    )
    rows = run_experiment(cfg)
    fmt = opts.get("format", "text")
    text = render_report(rows, fmt)
    out = opts.get("out")
    if out:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")
        print(f"wrote {len(rows)} report rows to {out}")
    else:
        print(text)


def _load_model_store(opts: _Options) -> dict:
    store: dict = {}
    models_dir = opts.get("models")
    if models_dir:
        for path in sorted(Path(models_dir).glob("*.json")):
            kind, model = _load_model(path)
            if kind == "quant":
                store[path.stem] = model
    for entry in opts.get("model", ()) or ():
        path = Path(entry)
        kind, model = _load_model(path)
        if kind != "quant":
            raise ConfigError(f"{path} is not a quantized model")
        store[path.stem] = model
    if not store:
        raise ConfigError("no quantized models to serve; pass --models or --model")
    return store


def cmd_serve(opts: _Options) -> None:
    store = _load_model_store(opts)
    host = opts.get("host", "127.0.0.1")
    port = int(opts.get("port", 0))
    window = float(opts.get("batch_window", 10.0))
    max_seconds = opts.get("max_seconds")
    server = collab.CollabServer(store, host=host, port=port, batch_window=window)
    server.start()
    bound_host, bound_port = server.address
    print(f"serving {len(store)} model(s) on {bound_host}:{bound_port}", flush=True)
    try:
        if max_seconds is not None:
            time.sleep(float(max_seconds))
        else:
            while True:
                time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    print("server stopped")


def cmd_participate(opts: _Options) -> None:
    address = _parse_address(opts.require("server", "--server"))
    kind, model = _load_model(opts.require("model", "--model"))
    if kind != "quant":
        raise ConfigError("participants quantize against the quantized model file")
    fm = _load_features(opts.require("input", "--input"))
    Q = quant.quantize_matrix(fm.X, model.params)
    report = collab.participate(
        address,
        institution_id=opts.require("institution", "--institution"),
        quantized_rows=Q,
        tier=opts.get("tier", fm.tier),
        model_n_bits=model.n_bits,
        timeout=float(opts.get("timeout", 30.0)),
    )
    print(
        f"{report.institution_id}: sent {report.rows_sent} rows in "
        f"{report.batches_sent} batches ({report.acks_received} acks) "
        f"for session {report.session_id.hex()}"
    )


def cmd_inquire(opts: _Options) -> None:
    address = _parse_address(opts.require("server", "--server"))
    kind, model = _load_model(opts.require("model", "--model"))
    if kind != "quant":
        raise ConfigError("inquiry needs the quantized model file for dequantization")
    rows = None
    tier = opts.get("tier")
    if opts.get("input"):
        fm = _load_features(opts.get("input"))
        rows = quant.quantize_matrix(fm.X, model.params)
        tier = tier or fm.tier
    if tier is None:
        raise ConfigError("missing required option --tier (no --input to infer it from)")
    keys = fhe.keygen(opts.seed)
    result = collab.inquire(
        address,
        inquiry_id=opts.get("inquiry_id", "inquiry"),
        model_id=opts.require("model_id", "--model-id"),
        tier=tier,
        keypair=keys,
        model=model,
        quantized_rows=rows,
        threshold=float(opts.get("threshold", 0.5)),
        timeout=float(opts.get("timeout", 30.0)),
    )
    lines = ["institution,row_index,probability,label"]
    for r in result.rows:
        lines.append(f"{r.institution_id},{r.row_index},{r.probability!r},{r.label}")
    text = "\n".join(lines) + "\n"
    out = opts.get("out")
    if out:
        Path(out).write_text(text)
        print(f"wrote {len(result.rows)} scored rows to {out}")
    else:
        print(text, end="")


# ---------------------------------------------------------------------------
# Parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="privaml",
        description="Privacy-preserving transaction scoring pipeline.",
    )
    parser.add_argument("--seed", type=int, default=None, help="global random seed (default 0)")
    parser.add_argument("--config", default=None, help="flat key=value config file")
    parser.add_argument("--out-dir", dest="out_dir", default=None, help="directory for outputs")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, handler, help_text: str):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(handler=handler)
        return p

    p = command("gen", cmd_gen, "generate a synthetic transaction dataset")
    p.add_argument("--dataset", help="preset: raw, balanced, or imbalanced (default raw)")
    p.add_argument("--out", help="output CSV path")

    p = command("enrich", cmd_enrich, "compute sliding-window graph features")
    p.add_argument("--input", help="transactions CSV")
    p.add_argument("--tier", choices=graphfeat.TIERS, help="feature tier (default vertex_stats)")
    p.add_argument("--out", help="output feature CSV path")
    p.add_argument("--manifest", action="store_true", default=None, help="also write a column-tier manifest")

    p = command("split", cmd_split, "temporal train/test split at a day boundary")
    p.add_argument("--input", help="transactions or feature CSV")
    p.add_argument("--train-fraction", dest="train_fraction", type=float, help="default 0.75")
    p.add_argument("--out-train", dest="out_train", help="train-side output path")
    p.add_argument("--out-test", dest="out_test", help="test-side output path")

    p = command("tune", cmd_tune, "Bayesian hyperparameter search with cross-validation")
    p.add_argument("--input", help="training feature CSV")
    p.add_argument("--iterations", type=int, help="search trials (default 50)")
    p.add_argument("--k", type=int, help="CV folds (default 3)")
    p.add_argument("--objective", choices=("minority_f1", "accuracy"), help="default minority_f1")
    p.add_argument("--shuffled", action="store_true", default=None, help="shuffled folds instead of temporal blocks")
    p.add_argument("--history", help="trial history JSONL path")
    p.add_argument("--resume", action="store_true", default=None, help="resume from existing history")
    p.add_argument("--out", help="best-params JSON path")

    p = command("train", cmd_train, "train the boosted-tree model")
    p.add_argument("--input", help="training feature CSV")
    p.add_argument("--params", help="params JSON (e.g. tune output)")
    p.add_argument("--n-estimators", dest="n_estimators", type=int)
    p.add_argument("--max-depth", dest="max_depth", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--out", help="model JSON path")

    p = command("quantize", cmd_quantize, "quantize a trained model for encrypted evaluation")
    p.add_argument("--model", help="clear model JSON")
    p.add_argument("--input", help="calibration feature CSV")
    p.add_argument("--n-bits", dest="n_bits", type=int, help="quantization width (default 6)")
    p.add_argument("--out", help="quantized model JSON path")

    p = command("eval", cmd_eval, "evaluate a model on a feature CSV")
    p.add_argument("--model", help="model JSON (clear or quantized)")
    p.add_argument("--input", help="feature CSV")
    p.add_argument("--mode", choices=("clear", "quant", "fhe-sim"))
    p.add_argument("--threshold", type=float, help="decision threshold (default 0.5)")
    p.add_argument("--out", help="metrics JSON path")

    p = command("report", cmd_report, "run a full experiment and render the report table")
    p.add_argument("--dataset", help="CSV path or preset name")
    p.add_argument("--tiers", help="comma-separated feature tiers")
    p.add_argument("--modes", help="comma-separated modes: clear,quant,fhe-sim")
    p.add_argument("--n-bits", dest="n_bits", type=int)
    p.add_argument("--hpo-iterations", dest="hpo_iterations", type=int)
    p.add_argument("--format", choices=("text", "csv", "json"), help="default text")
    p.add_argument("--out", help="write the report here instead of stdout")

    p = command("serve", cmd_serve, "run the collaboration coordinator")
    p.add_argument("--models", help="directory of quantized model JSON files")
    p.add_argument("--model", action="append", help="quantized model JSON (repeatable)")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--batch-window", dest="batch_window", type=float, help="seconds to wait for batches")
    p.add_argument("--max-seconds", dest="max_seconds", type=float, help="stop after this long")

    p = command("participate", cmd_participate, "contribute encrypted rows to a session")
    p.add_argument("--server", help="coordinator host:port")
    p.add_argument("--institution", help="institution identifier")
    p.add_argument("--model", help="quantized model JSON (for calibration)")
    p.add_argument("--input", help="local feature CSV")
    p.add_argument("--tier", choices=graphfeat.TIERS, help="defaults to the feature file's tier")
    p.add_argument("--timeout", type=float)

    p = command("inquire", cmd_inquire, "open a scoring session and decrypt the results")
    p.add_argument("--server", help="coordinator host:port")
    p.add_argument("--model-id", dest="model_id", help="model name on the coordinator")
    p.add_argument("--model", help="quantized model JSON (for dequantization)")
    p.add_argument("--input", help="inquirer's own feature CSV (optional)")
    p.add_argument("--tier", choices=graphfeat.TIERS)
    p.add_argument("--inquiry-id", dest="inquiry_id")
    p.add_argument("--threshold", type=float)
    p.add_argument("--timeout", type=float)
    p.add_argument("--out", help="scored-rows CSV path")

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config) if args.config else {}
        opts = _Options(args, config)
        args.handler(opts)
    except ConfigError as exc:
        _print_error(exc)
        return 2
    except DataError as exc:
        _print_error(exc)
        return 3
    except PrivamlError as exc:
        _print_error(exc)
        return 4
    except OSError as exc:
        _print_error(exc)
        return 3
    return 0


def _print_error(exc: Exception) -> None:
    stage = getattr(exc, "stage", None)
    prefix = f"error [{stage}]" if stage else "error"
    print(f"{prefix}: {exc}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
