"""Train a boosted-tree detector and quantize it for integer-only inference.

The split is temporal (whole days, train strictly before test) so nothing
from the future leaks into training. Quantization maps features, thresholds,
and leaves to small integers; wider integers track the float model closer.
"""

import numpy as np

from privaml import data, gbt, graphfeat, metrics, quant


def main():
    ds = data.dataset1(seed=0)
    fm = graphfeat.enrich_dataset(ds, tier="single_hop")
    split = data.temporal_split(ds, 0.75)
    train, test = graphfeat.split_matrix(fm, split.split_day)
    print(f"split at day {split.split_day}: {len(train.X)} train rows, "
          f"{len(test.X)} test rows")

    cfg = gbt.TrainConfig(n_estimators=15, max_depth=4, min_child_weight=1e-3)
    model = gbt.train(train.X, train.y, cfg)
    report = metrics.compute_metrics(test.y, gbt.predict(model, test.X))
    print(f"float model: accuracy {report.accuracy:.4f}, "
          f"minority F1 {report.f1:.4f} "
          f"(tp {report.tp}, fp {report.fp}, tn {report.tn}, fn {report.fn})")

    print("bits  accuracy  f1      agreement with float labels")
    float_labels = gbt.predict(model, test.X)
    for n_bits in (2, 3, 4, 6):
        params = quant.calibrate(train.X, n_bits)
        qe = quant.quantize_ensemble(model, params)
        _, _, labels = quant.batch_predictions(qe, quant.quantize_matrix(test.X, params))
        rep = metrics.compute_metrics(test.y, labels)
        agree = float(np.mean(labels == float_labels))
        print(f"{n_bits:>4}  {rep.accuracy:.4f}    {rep.f1:.4f}  {agree:.2%}")

    # the quantized model serializes with its calibration attached
    params = quant.calibrate(train.X, 4)
    qe = quant.quantize_ensemble(model, params)
    text = quant.to_json_quantized(qe)
    assert quant.from_json_quantized(text) == qe
    print(f"quantized model round-trips through JSON ({len(text)} bytes)")


if __name__ == "__main__":
    main()
