"""Train the default HPCNeuroNet on 4-class blobs, then check <16,6> agreement."""

import argparse
import json
import time

import numpy as np

from hpcneuronet import data, model, quant, training


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--separation", type=float, default=5.0)
    ap.add_argument("--precision", default="16,6")
    args = ap.parse_args()

    d = data.synth_dataset("blobs", args.n, args.seed, separation=args.separation)
    train, test = data.split(d, 0.5, args.seed)
    t0 = time.perf_counter()
    best, hist = training.train(model.build_model(model.HPCNeuroNetConfig(seed=args.seed)), train,
                                training.TrainConfig(epochs=args.epochs, seed=args.seed))
    secs = time.perf_counter() - t0
    met = training.evaluate(best, test)
    qm = quant.quantize_model(best, quant.parse_precision(args.precision))
    agree = float(np.mean(np.argmax(quant.forward_quantized(qm, test.features), axis=1)
                          == np.argmax(model.forward(best, test.features), axis=1)))
    print(json.dumps({"epochs": len(hist), "train_seconds": round(secs, 1),
                      "test_accuracy": met.accuracy, "quantized_agreement": agree,
                      "precision": args.precision}, indent=2))


if __name__ == "__main__":
    main()
