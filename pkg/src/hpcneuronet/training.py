"""Losses, Adam, and the train/evaluate loops for classification and regression."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import data as dt
from . import model as mdl
from . import tensor as tn
from .errors import NumericError, UsageError
from .tensor import Tensor

log = logging.getLogger(__name__)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean of ``-log softmax(logits)[label]`` over a batch (or a single ``[k]`` row)."""
    if logits.ndim == 1:
        logits = tn.reshape(logits, (1, logits.shape[0]))
    labels = np.atleast_1d(np.asarray(labels))
    k = logits.shape[-1]
    if labels.shape[0] != logits.shape[0]:
        raise UsageError(f"{labels.shape[0]} labels for {logits.shape[0]} rows")
    if labels.dtype.kind not in "iu" or np.any(labels < 0) or np.any(labels >= k):
        raise UsageError(f"labels must be integers in [0, {k})")
    onehot = np.zeros(logits.shape)
    onehot[np.arange(labels.shape[0]), labels] = 1.0
    return tn.neg(tn.mean(tn.sum(tn.log_softmax(logits, axis=-1) * onehot, axis=-1)))


def mse(pred, target) -> Tensor:
    pred = pred if isinstance(pred, Tensor) else Tensor(np.asarray(pred, dtype=np.float64))
    diff = pred - np.asarray(target, dtype=np.float64).reshape(pred.shape)
    return tn.mean(diff * diff)


def regression_accuracy(preds, targets, tol: float = 0.05) -> float:
    """Fraction of predictions within relative tolerance ``tol`` of the target."""
    preds = np.asarray(preds, dtype=np.float64).reshape(-1)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if preds.shape != targets.shape:
        raise UsageError(f"{preds.size} predictions vs {targets.size} targets")
    if tol < 0:
        raise UsageError("tol must be >= 0")
    if preds.size == 0:
        return 0.0
    rel = np.abs(preds - targets) / np.maximum(np.abs(targets), 1e-8)
    return float(np.mean(rel <= tol))


# -- optimiser ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, hyper: AdamHyper = AdamHyper()):
    """One bias-corrected Adam update; parameter arrays are modified in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - hyper.beta1 ** t
    c2 = 1.0 - hyper.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise UsageError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= hyper.beta1
        m += (1.0 - hyper.beta1) * g
        v *= hyper.beta2
        v += (1.0 - hyper.beta2) * g * g
        p -= hyper.lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)
    return params, state


# -- loops ----------------------------------------------------------------------------------

@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    loss: str = "auto"  # auto | cross_entropy | mse
    patience: int = 10
    val_fraction: float = 0.1
    reg_tol: float = 0.05
    # regress log(target); matches the relative-tolerance accuracy metric
    log_target: bool = False

    def validate(self) -> None:
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise UsageError("need lr > 0, epochs >= 1, batch_size >= 1")
        if self.loss not in ("auto", "cross_entropy", "mse"):
            raise UsageError(f"unknown loss {self.loss!r}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise UsageError("val_fraction must be in [0, 1)")
        if self.patience < 1:
            raise UsageError("patience must be >= 1")


@dataclass
class Metrics:
    task: str
    n: int
    loss: float
    accuracy: float | None = None
    confusion: list[list[int]] | None = None
    regression_accuracy: float | None = None
    rmse: float | None = None
    tol: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def headline(self) -> float:
        return self.accuracy if self.task == "classification" else self.regression_accuracy


def _check_match(m: mdl.Model, d: dt.Dataset) -> None:
    if d.n_features != m.n_features:
        raise UsageError(f"dataset has {d.n_features} features, model expects {m.n_features}")
    if d.task != m.task:
        raise UsageError(f"dataset task {d.task!r} does not match model task {m.task!r}")
    if d.task == "classification" and len(d) and int(d.targets.max()) >= m.n_outputs:
        raise UsageError(f"label {int(d.targets.max())} out of range for {m.n_outputs} outputs")


def _batch_loss(m: mdl.Model, x: np.ndarray, y: np.ndarray, loss_kind: str,
                params: dict[str, Tensor] | None = None) -> Tensor:
    out = mdl.forward_tensor(m, x, params, denormalize=False)
    if loss_kind == "cross_entropy":
        return cross_entropy(out, y)
    if m.target_log:
        y = np.log(y)
    y = (y - m.target_shift) / m.target_scale
    return mse(tn.reshape(out, (-1,)), y)


def predict(m: mdl.Model, x: np.ndarray, chunk: int = 256) -> np.ndarray:
    outs = []
    with tn.no_grad():
        for i in range(0, x.shape[0], chunk):
            outs.append(mdl.forward_tensor(m, x[i:i + chunk]).data)
    return np.concatenate(outs) if outs else np.zeros((0, m.n_outputs))


def evaluate(m: mdl.Model, d: dt.Dataset, tol: float = 0.05, predict_fn=None) -> Metrics:
    """Classification accuracy/confusion or regression accuracy/RMSE on ``d``.

    ``predict_fn(x [n, f]) -> [n, k]`` replaces the float forward (used for
    quantized inference).
    """
    _check_match(m, d)
    feats = dt.denormalize(d).features
    out = predict_fn(feats) if predict_fn is not None else predict(m, feats)
    out = out.reshape(len(d), -1)
    if m.task == "classification":
        k = m.n_outputs
        pred = np.argmax(out, axis=1)
        conf = np.zeros((k, k), dtype=np.int64)
        np.add.at(conf, (d.targets, pred), 1)
        with tn.no_grad():
            loss = cross_entropy(Tensor(out), d.targets).item() if len(d) else float("nan")
        acc = float(np.mean(pred == d.targets)) if len(d) else 0.0
        return Metrics("classification", len(d), loss, accuracy=acc, confusion=conf.tolist())
    pred = out.reshape(-1)
    err = pred - d.targets
    rmse = float(np.sqrt(np.mean(err * err))) if len(d) else float("nan")
    loss = float(np.mean(err * err)) if len(d) else float("nan")
    return Metrics("regression", len(d), loss, regression_accuracy=regression_accuracy(pred, d.targets, tol),
                   rmse=rmse, tol=tol)


def train(m: mdl.Model, d: dt.Dataset, cfg: TrainConfig) -> tuple[mdl.Model, list[dict]]:
    """Mini-batch Adam with early stopping on a held-out validation slice.

    Input statistics (and regression target statistics) are computed on the
    training rows and stored on the returned model, so it accepts raw
    features afterwards. Returns the best-by-validation-loss model.
    """
    cfg.validate()
    _check_match(m, d)
    loss_kind = cfg.loss if cfg.loss != "auto" else (
        "cross_entropy" if m.task == "classification" else "mse")
    raw = dt.denormalize(d)
    m = m.copy()
    rng = np.random.default_rng(cfg.seed)
    n_val = int(len(raw) * cfg.val_fraction)
    if n_val >= 1:
        perm = rng.permutation(len(raw))
        tr, va = raw.subset(np.sort(perm[n_val:])), raw.subset(np.sort(perm[:n_val]))
    else:
        tr, va = raw, None
    if len(tr) == 0:
        raise UsageError("no training rows")

    m.input_mean = tr.features.mean(axis=0)
    m.input_std = np.maximum(tr.features.std(axis=0), 1e-8)
    if m.task == "regression":
        if cfg.log_target and np.any(tr.targets <= 0):
            raise UsageError("log_target needs strictly positive targets")
        m.target_log = cfg.log_target
        y = np.log(tr.targets) if cfg.log_target else tr.targets
        m.target_shift = float(y.mean())
        m.target_scale = float(max(y.std(), 1e-8))

    hyper = AdamHyper(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    state = AdamState()
    params = dict(m.named_params())
    history: list[dict] = []
    best, best_loss, stale = m.copy(), float("inf"), 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(tr))
        total, count = 0.0, 0
        for start in range(0, len(tr), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            P = {name: Tensor(arr, requires_grad=True) for name, arr in params.items()}
            with tn.GradTape() as tape:
                loss = _batch_loss(m, tr.features[idx], tr.targets[idx], loss_kind, P)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"loss diverged at epoch {epoch}")
            tape.backward(loss)
            adam_step(params, {name: t.grad for name, t in P.items()}, state, hyper)
            total += value * len(idx)
            count += len(idx)
        row = {"epoch": epoch, "train_loss": total / count, "steps": state.step}
        if va is not None:
            with tn.no_grad():
                vloss = _batch_loss(m, va.features, va.targets, loss_kind).item()
            met = evaluate(m, va, cfg.reg_tol)
            row.update(val_loss=vloss, val_metric=met.headline)
            if vloss < best_loss:
                best, best_loss, stale = m.copy(), vloss, 0
            else:
                stale += 1
        else:
            best = m.copy()
        history.append(row)
        log.info("epoch %d: %s", epoch, row)
        if va is not None and stale >= cfg.patience:
            break
    return best, history
