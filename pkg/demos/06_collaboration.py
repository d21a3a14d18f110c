"""Multi-institution scoring where only the inquirer can read the results.

A coordinator holds the quantized model. Two banks register, receive the
session announcement, encrypt their already-quantized rows under the
inquirer's public key, and stream them in batches. The coordinator evaluates
every row homomorphically and returns ciphertexts it cannot read; the
inquirer decrypts locally and sees per-institution scores.
"""

import threading
import time

import numpy as np

from privaml import fhe, gbt, quant
from privaml.collab.clients import inquire, participate
from privaml.collab.service import CollabServer


def main():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(400, 5))
    y = (X[:, 0] - 0.7 * X[:, 3] > 0).astype(np.uint8)
    model = gbt.train(X, y, gbt.TrainConfig(n_estimators=6, min_child_weight=1e-3))
    qe = quant.quantize_ensemble(model, quant.calibrate(X, 4))

    rows = {
        "bank-east": rng.integers(0, 16, size=(4, 5)),
        "bank-west": rng.integers(0, 16, size=(3, 5)),
    }

    def contribute(name):
        report = participate(server.address, name, rows[name], "basic", qe.n_bits)
        print(f"{name}: sent {report.rows_sent} rows in {report.batches_sent} batches, "
              f"{report.acks_received} acknowledged")

    with CollabServer({"aml-detector": qe}) as server:
        print(f"coordinator listening on {server.address[0]}:{server.address[1]}")
        threads = []
        # a session only reaches institutions registered when it opens, and
        # registration order decides result grouping, so sequence the banks
        for i, name in enumerate(rows):
            t = threading.Thread(target=contribute, args=(name,))
            t.start()
            threads.append(t)
            while len(server.registered_institutions()) < i + 1:
                time.sleep(0.01)
        keys = fhe.keygen(seed=99)
        result = inquire(server.address, "inquiry-fi", "aml-detector", "basic",
                         keys, qe, quantized_rows=rng.integers(0, 16, size=(2, 5)))
        for t in threads:
            t.join(timeout=10)

    print(f"session {result.session_id.hex()[:16]}... returned {len(result.rows)} rows")
    print("institution  row  score  probability  label")
    for r in result.rows:
        print(f"{r.institution_id:<12} {r.row_index:>3}  {r.score:>5}  "
              f"{r.probability:.4f}       {r.label}")

    # each bank's decrypted scores equal what it would compute locally
    for name, local in rows.items():
        got = [r.score for r in result.by_institution(name)]
        want, _, _ = quant.batch_predictions(qe, local)
        assert got == want.tolist()
    print("decrypted scores match each bank's local quantized evaluation exactly")


if __name__ == "__main__":
    main()
