"""Train an HPCNeuroNet regressor on synthetic dielectron kinematics (log-mass target)."""

import argparse
import json
import time

from hpcneuronet import data, model, training


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--batch-size", type=int, default=64)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--patience", type=int, default=100)
    ap.add_argument("--tolerance", type=float, default=0.10)
    ap.add_argument("--model", default="{}", help="JSON overrides for the model config")
    args = ap.parse_args()

    d = data.synth_dataset("dielectron-kinematics", args.n, args.seed)
    train, test = data.split(d, 0.2, args.seed)
    cfg = model.HPCNeuroNetConfig.from_dict(
        {"n_features": 16, "n_outputs": 1, "task": "regression", "seed": args.seed,
         **json.loads(args.model)})
    tc = training.TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                              seed=args.seed, patience=args.patience, reg_tol=args.tolerance,
                              log_target=True)
    t0 = time.perf_counter()
    best, hist = training.train(model.build_model(cfg), train, tc)
    secs = time.perf_counter() - t0
    met = training.evaluate(best, test, args.tolerance)
    for row in hist:
        print(json.dumps(row))
    print(json.dumps({"epochs": len(hist), "train_seconds": round(secs, 1),
                      "regression_accuracy": met.regression_accuracy, "rmse": met.rmse,
                      "tolerance": args.tolerance}))


if __name__ == "__main__":
    main()
