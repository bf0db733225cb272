"""Profile a trained model on a dataset cache and print the markdown report.

Produce the inputs with the CLI, e.g. ``hpcneuronet synth`` then ``hpcneuronet train``.
"""

import argparse

from hpcneuronet import data, model, profiler, quant, training


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", required=True)
    ap.add_argument("--data", required=True)
    ap.add_argument("--iters", type=int, default=1000)
    ap.add_argument("--warmup", type=int, default=100)
    ap.add_argument("--power-watts", type=float, default=None)
    ap.add_argument("--precision", default=None, help="e.g. 16,6; omit for float")
    ap.add_argument("--tolerance", type=float, default=0.05)
    args = ap.parse_args()

    m = model.load_model(args.model)
    d = data.load_dataset(args.data)
    target, infer = m, None
    met = training.evaluate(m, d, args.tolerance)
    if args.precision:
        target = quant.quantize_model(m, quant.parse_precision(args.precision))
        infer = lambda v: quant.forward_quantized(target, v)  # noqa: E731
        met = quant.evaluate_quantized(target, d, args.tolerance)
    rep = profiler.profile(target, data.denormalize(d).features, args.iters, args.warmup,
                           args.power_watts, infer)
    print(profiler.emit_report(met, rep, "markdown", include_paper_reference=True))


if __name__ == "__main__":
    main()
