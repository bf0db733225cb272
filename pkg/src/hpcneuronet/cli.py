"""Command-line entry point: ingest, synth, train, eval, quantize, export-hw, profile, report.

Exit codes: 0 success, 1 usage error, 2 data validation failure, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

from . import container
from . import data as dt
from . import model as mdl
from . import profiler
from . import quant
from . import training as trn
from .errors import (ConfigError, ContractError, NumericError, SchemaError, ShapeError,
                     UsageError)

DATA_DIR_ENV = "HPCNEURONET_DATA_DIR"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("hpcneuronet")


class _ArgError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _ArgError(f"{self.prog}: error: {message}")


class _DataInvalid(Exception):
    pass


# -- helpers ---------------------------------------------------------------------------

def _input_path(p: str) -> Path:
    """Resolve an input path; relative paths missing locally fall back to the data dir."""
    path = Path(p)
    base = os.environ.get(DATA_DIR_ENV)
    if not path.exists() and not path.is_absolute() and base and (Path(base) / path).exists():
        return Path(base) / path
    if not path.exists():
        raise UsageError(f"no such file: {p}")
    return path


def _write_text(path: str, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


def _write_json(path: str, obj) -> None:
    _write_text(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        cfg = json.loads(_input_path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("experiment config must be a JSON object")
    return cfg


def _kv_pairs(items: list[str] | None) -> dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k] = v
    return out


def _number(s: str):
    try:
        return int(s)
    except ValueError:
        return float(s)


def _load_any_model(path: str) -> mdl.Model | quant.QuantizedModel:
    meta, arrays = container.read(_input_path(path))
    m = mdl.model_from_container(meta, arrays)
    if "precision" in meta:
        return quant.QuantizedModel(m, quant.PrecisionConfig.from_dict(meta["precision"]))
    return m


def _infer_fn(m):
    if isinstance(m, quant.QuantizedModel):
        return lambda x: quant.forward_quantized(m, x)
    return lambda x: mdl.forward(m, x)


# -- subcommands -----------------------------------------------------------------------

def cmd_ingest(a) -> int:
    column_map = _kv_pairs(a.column_map)
    ds, rep = dt.ingest_csv(_input_path(a.csv), a.schema, column_map)
    val = dt.validate_physics(ds, a.schema) if len(ds) else None
    summary = {"ingest": rep.to_dict(), "validation": val.to_dict() if val else None}
    if a.report:
        _write_json(a.report, summary)
    print(json.dumps({"events": rep.events, "skipped": rep.skipped,
                      "violations": val.violations if val else {}}, sort_keys=True))
    if len(ds) == 0:
        raise _DataInvalid(f"{a.csv}: no valid events")
    if not val.ok and not a.allow_violations:
        raise _DataInvalid(f"physics validation failed: {val.violations}")
    dt.save_dataset(ds, a.out)
    return EXIT_OK


def cmd_synth(a) -> int:
    params = {k: _number(v) for k, v in _kv_pairs(a.param).items()}
    ds = dt.synth_dataset(a.kind, a.n, a.seed, **params)
    dt.save_dataset(ds, a.out)
    print(json.dumps({"kind": a.kind, "events": len(ds), "features": ds.n_features}))
    return EXIT_OK


def _model_config(cfg: dict, a, ds: dt.Dataset) -> mdl.HPCNeuroNetConfig:
    mc = dict(cfg.get("model", {}))
    mc.pop("kind", None)
    mc.pop("hidden", None)
    mc["n_features"] = ds.n_features
    mc["task"] = ds.task
    mc["n_outputs"] = 1 if ds.task == "regression" else max(ds.n_classes, mc.get("n_outputs", 0))
    if a.seed is not None:
        mc["seed"] = a.seed
    return mdl.HPCNeuroNetConfig.from_dict(mc)


def _train_config(cfg: dict, a) -> trn.TrainConfig:
    tc = dict(cfg.get("train", {}))
    names = {f.name for f in fields(trn.TrainConfig)}
    unknown = set(tc) - names
    if unknown:
        raise UsageError(f"unknown train config keys: {sorted(unknown)}")
    for key in ("lr", "epochs", "batch_size", "seed", "patience"):
        if getattr(a, key) is not None:
            tc[key] = getattr(a, key)
    if a.tolerance is not None:
        tc["reg_tol"] = a.tolerance
    if a.log_target:
        tc["log_target"] = True
    return trn.TrainConfig(**tc)


def cmd_train(a) -> int:
    cfg = _load_config(a.config)
    ds = dt.load_dataset(_input_path(a.data))
    kind = a.model_kind or cfg.get("model", {}).get("kind", "hpcneuronet")
    seed = a.seed if a.seed is not None else cfg.get("model", {}).get("seed", 0)
    if kind == "mlp":
        hidden = a.hidden if a.hidden is not None else cfg.get("model", {}).get("hidden", [64, 64])
        k = 1 if ds.task == "regression" else ds.n_classes
        m = mdl.build_baseline_mlp(ds.n_features, hidden, k, seed, ds.task)
    elif kind == "hpcneuronet":
        m = mdl.build_model(_model_config(cfg, a, ds))
    else:
        raise UsageError(f"unknown model kind {kind!r}")
    tc = _train_config(cfg, a)
    best, history = trn.train(m, ds, tc)
    mdl.save_model(best, a.out)
    if a.history:
        _write_json(a.history, history)
    last = history[-1]
    print(json.dumps({"epochs": len(history), "train_loss": last["train_loss"],
                      "val_metric": last.get("val_metric")}, sort_keys=True))
    return EXIT_OK


def cmd_eval(a) -> int:
    m = _load_any_model(a.model)
    ds = dt.load_dataset(_input_path(a.data))
    tol = a.tolerance if a.tolerance is not None else 0.05
    if isinstance(m, quant.QuantizedModel):
        metrics = quant.evaluate_quantized(m, ds, tol)
    else:
        metrics = trn.evaluate(m, ds, tol)
    if a.out:
        _write_json(a.out, metrics.to_dict())
    print(json.dumps({"task": metrics.task, "n": metrics.n, "headline": metrics.headline}))
    return EXIT_OK


def _precision(cfg: dict, a) -> quant.PrecisionConfig:
    rounding = a.rounding or cfg.get("rounding", "nearest-even")
    overflow = a.overflow or cfg.get("overflow", "saturate")
    items = a.precision if a.precision is not None else cfg.get("precision", ["16,6"])
    if isinstance(items, dict):
        return quant.PrecisionConfig.from_dict(items)
    return quant.parse_precision(items, rounding, overflow)


def cmd_quantize(a) -> int:
    cfg = _load_config(a.config)
    m = _load_any_model(a.model)
    if isinstance(m, quant.QuantizedModel):
        raise UsageError("model is already quantized")
    qm = quant.quantize_model(m, _precision(cfg, a))
    mdl.save_model(qm.model, a.out, {"precision": qm.precision.to_dict()})
    print(json.dumps({"precision": qm.precision.to_dict()["default"]}))
    return EXIT_OK


def cmd_export_hw(a) -> int:
    m = _load_any_model(a.model)
    if not isinstance(m, quant.QuantizedModel):
        raise UsageError("export-hw needs a quantized model; run `quantize` first")
    desc = quant.export_hw_descriptor(m, a.name)
    _write_text(a.out, desc.to_json())
    print(json.dumps({"layers": len(desc.layers), "total_macs": desc.total_macs}))
    return EXIT_OK


def cmd_profile(a) -> int:
    cfg = _load_config(a.config).get("profile", {})
    m = _load_any_model(a.model)
    ds = dt.load_dataset(_input_path(a.data))
    iters = a.iters if a.iters is not None else cfg.get("iters", 1000)
    warmup = a.warmup if a.warmup is not None else cfg.get("warmup", 100)
    power = a.power_watts if a.power_watts is not None else cfg.get("power_watts")
    rep = profiler.profile(m, dt.denormalize(ds).features, iters, warmup, power, _infer_fn(m))
    _write_json(a.out, rep.to_dict())
    print(json.dumps({"mac_gop": rep.mac_gop, "mean_ms": rep.latency_ms["mean"],
                      "throughput": rep.throughput}))
    return EXIT_OK


def cmd_report(a) -> int:
    metrics = json.loads(_input_path(a.metrics).read_text(encoding="utf-8"))
    prof = profiler.ProfileReport.from_dict(
        json.loads(_input_path(a.profile).read_text(encoding="utf-8")))
    text = profiler.emit_report(metrics, prof, a.format, a.published_reference)
    _write_text(a.out, text)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hpcneuronet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", required=True)

    s = sub.add_parser("ingest", help="parse a physics CSV, validate, cache as a dataset")
    s.add_argument("csv")
    s.add_argument("--schema", required=True, choices=sorted(dt.SCHEMAS))
    s.add_argument("--out", required=True)
    s.add_argument("--column-map", nargs="*", metavar="CSV_NAME=SCHEMA_NAME")
    s.add_argument("--report", help="write ingest + validation summary JSON here")
    s.add_argument("--allow-violations", action="store_true",
                   help="cache the dataset even if physics validation reports violations")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--kind", required=True, choices=["blobs", "dielectron-kinematics"])
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--param", nargs="*", metavar="KEY=VALUE")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a model on a cached dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="JSON experiment file; flags override it")
    s.add_argument("--model-kind", choices=["hpcneuronet", "mlp"])
    s.add_argument("--hidden", type=int, nargs="*", help="MLP hidden widths")
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--patience", type=int)
    s.add_argument("--tolerance", type=float, help="regression accuracy tolerance")
    s.add_argument("--log-target", action="store_true", help="regress log(target)")
    s.add_argument("--history", help="write per-epoch history JSON here")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a (possibly quantized) model")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--tolerance", type=float)
    s.add_argument("--out", help="write metrics JSON here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("quantize", help="post-training fixed-point quantization")
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="JSON experiment file; its 'precision' entry is used")
    s.add_argument("--precision", nargs="+", metavar="W,I|NAME=W,I")
    s.add_argument("--rounding", choices=quant.ROUNDING)
    s.add_argument("--overflow", choices=quant.OVERFLOW)
    s.set_defaults(func=cmd_quantize)

    s = sub.add_parser("export-hw", help="write the hardware descriptor JSON")
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--name", default="hpcneuronet")
    s.set_defaults(func=cmd_export_hw)

    s = sub.add_parser("profile", help="count MACs and benchmark host latency")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--iters", type=int)
    s.add_argument("--warmup", type=int)
    s.add_argument("--power-watts", type=float)
    s.set_defaults(func=cmd_profile)

    s = sub.add_parser("report", help="render metrics + profile as markdown or JSON")
    s.add_argument("--metrics", required=True)
    s.add_argument("--profile", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=["markdown", "json"], default="markdown")
    s.add_argument("--published-reference", action="store_true",
                   help="append the published reference tables")
    s.set_defaults(func=cmd_report)
    return p


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _ArgError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (SchemaError, _DataInvalid) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, ShapeError, ContractError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())
