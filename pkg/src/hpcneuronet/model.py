"""Full HPCNeuroNet pipeline and a reference MLP, both as ordered named layers.

Pipeline order::

    embed (+ sinusoidal PE) -> encoder x L -> spiking self-attention
    -> conv SNN encode -> linear SNN decode -> rate decode + affine head

Batched inputs are ``[B, N]``; spiking tensors inside the pipeline are laid
out ``[B, T, ...]``.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import attention as att
from . import container
from . import snn
from . import tensor as tn
from .errors import ConfigError, ShapeError, UsageError
from .tensor import Tensor

TASKS = ("classification", "regression")


@dataclass
class HPCNeuroNetConfig:
    n_features: int = 6
    d_model: int = 32
    n_heads: int = 4
    n_encoder_layers: int = 2
    d_ff: int = 128
    timesteps: int = 4
    conv_channels: int = 8
    conv_kernel: int = 3
    conv_stride: int = 1
    conv_padding: int = 0
    decode_width: int = 64
    n_outputs: int = 4
    task: str = "classification"
    lif: snn.LIFParams = field(default_factory=snn.LIFParams)
    ssa_scale: float = 0.125
    # init multiplier for layers that consume spike trains (sparse, non-negative inputs)
    spike_init_gain: float = 4.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_features < 1:
            raise ConfigError("n_features must be >= 1")
        if self.d_model < 2 or self.d_model % 2:
            raise ConfigError(f"d_model must be even, got {self.d_model}")
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.n_encoder_layers < 0:
            raise ConfigError("n_encoder_layers must be >= 0")
        if self.d_ff < self.d_model:
            raise ConfigError("d_ff must be >= d_model")
        if self.timesteps < 1:
            raise ConfigError("timesteps must be >= 1")
        if self.n_outputs < 1:
            raise ConfigError("n_outputs must be >= 1")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.task == "regression" and self.n_outputs != 1:
            raise ConfigError("regression head has exactly one output")
        if min(self.conv_channels, self.conv_kernel, self.conv_stride, self.decode_width) < 1:
            raise ConfigError("conv/decode sizes must be positive")
        if self.conv_padding < 0:
            raise ConfigError("conv_padding must be >= 0")
        length = self.n_features * self.d_model + 2 * self.conv_padding
        if self.conv_kernel > length:
            raise ConfigError(f"conv kernel {self.conv_kernel} exceeds encoder length {length}")
        if self.ssa_scale <= 0:
            raise ConfigError("ssa_scale must be positive")
        if self.spike_init_gain <= 0:
            raise ConfigError("spike_init_gain must be positive")

    @property
    def conv_out_len(self) -> int:
        length = self.n_features * self.d_model
        return (length + 2 * self.conv_padding - self.conv_kernel) // self.conv_stride + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> HPCNeuroNetConfig:
        d = dict(d)
        if isinstance(d.get("lif"), dict):
            d["lif"] = snn.LIFParams(**d["lif"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Layer:
    name: str
    kind: str
    params: dict[str, np.ndarray]
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    attrs: dict = field(default_factory=dict)

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))


@dataclass
class Model:
    kind: str  # "hpcneuronet" | "mlp"
    config: dict
    layers: list[Layer]
    task: str
    n_features: int
    n_outputs: int
    input_mean: np.ndarray | None = None
    input_std: np.ndarray | None = None
    target_shift: float = 0.0
    target_scale: float = 1.0
    target_log: bool = False

    def __post_init__(self):
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate layer names: {names}")

    @property
    def n_params(self) -> int:
        return sum(l.n_params for l in self.layers)

    def layer(self, name: str) -> Layer:
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(name)

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{l.name}.{k}", v) for l in self.layers for k, v in l.params.items()]

    def param_tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {name: Tensor(arr, requires_grad=requires_grad)
                for name, arr in self.named_params()}

    def copy(self) -> Model:
        return copy.deepcopy(self)

    def lif(self) -> snn.LIFParams:
        return snn.LIFParams(**self.config["lif"]) if self.kind == "hpcneuronet" else snn.LIFParams()


# -- construction ------------------------------------------------------------------

def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def build_model(cfg: HPCNeuroNetConfig) -> Model:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n, d, T = cfg.n_features, cfg.d_model, cfg.timesteps
    layers = [Layer("embed", "embed",
                    {"weight": _uniform(rng, (n, d), 1), "bias": _uniform(rng, (n, d), 1)},
                    (n,), (n, d))]
    for i in range(cfg.n_encoder_layers):
        p = {name: _uniform(rng, (d, d), d) for name in ("w_q", "w_k", "w_v", "w_o")}
        p["w1"] = _uniform(rng, (d, cfg.d_ff), d)
        p["b1"] = _uniform(rng, (cfg.d_ff,), d)
        p["w2"] = _uniform(rng, (cfg.d_ff, d), cfg.d_ff)
        p["b2"] = _uniform(rng, (d,), cfg.d_ff)
        p["ln1_gamma"], p["ln1_beta"] = np.ones(d), np.zeros(d)
        p["ln2_gamma"], p["ln2_beta"] = np.ones(d), np.zeros(d)
        layers.append(Layer(f"encoder{i}", "encoder", p, (n, d), (n, d),
                            {"n_heads": cfg.n_heads}))
    gain = cfg.spike_init_gain
    layers.append(Layer("ssa", "ssa",
                        {name: gain * _uniform(rng, (d, d), d) for name in ("w_q", "w_k", "w_v")},
                        (n, d), (T, n, d), {"timesteps": T, "scale": cfg.ssa_scale}))
    c, k, l_out = cfg.conv_channels, cfg.conv_kernel, cfg.conv_out_len
    layers.append(Layer("snn_encode", "snn_encode",
                        {"weight": gain * _uniform(rng, (c, 1, k), k),
                         "bias": gain * _uniform(rng, (c,), k)},
                        (T, n, d), (T, c, l_out),
                        {"stride": cfg.conv_stride, "padding": cfg.conv_padding}))
    m = c * l_out
    layers.append(Layer("snn_decode", "snn_decode",
                        {"weight": gain * _uniform(rng, (m, cfg.decode_width), m),
                         "bias": gain * _uniform(rng, (cfg.decode_width,), m)},
                        (T, c, l_out), (T, cfg.decode_width)))
    layers.append(Layer("head", "head",
                        {"weight": _uniform(rng, (cfg.decode_width, cfg.n_outputs), cfg.decode_width),
                         "bias": _uniform(rng, (cfg.n_outputs,), cfg.decode_width)},
                        (T, cfg.decode_width), (cfg.n_outputs,)))
    return Model("hpcneuronet", cfg.to_dict(), layers, cfg.task, n, cfg.n_outputs)


def build_baseline_mlp(n_features: int, hidden: list[int] | tuple[int, ...], n_outputs: int,
                       seed: int = 0, task: str = "classification") -> Model:
    """Plain affine+ReLU stack; no hidden widths gives a single affine map."""
    hidden = list(hidden)
    if n_features < 1 or n_outputs < 1 or any(w < 1 for w in hidden):
        raise ConfigError(f"MLP widths must be >= 1: {n_features}, {hidden}, {n_outputs}")
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}")
    rng = np.random.default_rng(seed)
    widths = [n_features, *hidden, n_outputs]
    layers = []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        last = i == len(widths) - 2
        layers.append(Layer(f"fc{i}", "affine",
                            {"weight": _uniform(rng, (a, b), a), "bias": _uniform(rng, (b,), a)},
                            (a,), (b,), {"relu": not last}))
    cfg = {"n_features": n_features, "hidden": hidden, "n_outputs": n_outputs,
           "seed": seed, "task": task}
    return Model("mlp", cfg, layers, task, n_features, n_outputs)


# -- layer application --------------------------------------------------------------

def _encoder_params(P: dict[str, Tensor], prefix: str, n_heads: int) -> att.EncoderLayerParams:
    g = lambda k: P[f"{prefix}.{k}"]  # noqa: E731
    mha = att.MHAParams(g("w_q"), g("w_k"), g("w_v"), g("w_o"), n_heads)
    return att.EncoderLayerParams(mha, g("w1"), g("b1"), g("w2"), g("b2"),
                                  g("ln1_gamma"), g("ln1_beta"), g("ln2_gamma"), g("ln2_beta"))


def apply_layer(layer: Layer, h: Tensor, P: dict[str, Tensor], lif: snn.LIFParams) -> Tensor:
    """Apply one layer to a batch-first tensor."""
    name, kind, a = layer.name, layer.kind, layer.attrs
    if kind == "affine":
        out = h @ P[f"{name}.weight"] + P[f"{name}.bias"]
        return tn.relu(out) if a.get("relu") else out
    if kind == "embed":
        p = att.EmbeddingParams(P[f"{name}.weight"], P[f"{name}.bias"])
        return att.embed_features(h, p) + att.positional_encoding(p.n_features, p.d_model)
    if kind == "encoder":
        return att.transformer_encoder_layer(h, _encoder_params(P, name, a["n_heads"]))
    if kind == "ssa":
        x_s = snn.lif_run(snn.direct_encode(h, a["timesteps"], time_axis=1), lif, time_axis=1)
        p = snn.SSAParams(P[f"{name}.w_q"], P[f"{name}.w_k"], P[f"{name}.w_v"], a["scale"], lif)
        return snn.spiking_self_attention(x_s, p, time_axis=1)
    if kind == "snn_encode":
        b, t = h.shape[:2]
        flat = tn.reshape(h, (b, t, 1, -1))
        return snn.snn_encode(flat, P[f"{name}.weight"], P[f"{name}.bias"], lif,
                              stride=a["stride"], padding=a["padding"], time_axis=1)
    if kind == "snn_decode":
        b, t = h.shape[:2]
        return snn.snn_decode(tn.reshape(h, (b, t, -1)), P[f"{name}.weight"],
                              P[f"{name}.bias"], lif, time_axis=1)
    if kind == "head":
        return snn.rate_decode(h, time_axis=1) @ P[f"{name}.weight"] + P[f"{name}.bias"]
    raise ConfigError(f"unknown layer kind {kind!r}")


ActHook = Callable[[Layer, Tensor], Tensor]


def _as_batch(m: Model, x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != m.n_features:
        raise ShapeError(f"model expects {m.n_features} features, got shape {np.shape(x)}")
    return arr, single


def forward_tensor(m: Model, x, params: dict[str, Tensor] | None = None,
                   act_hook: ActHook | None = None, denormalize: bool = True) -> Tensor:
    """Batch forward on a ``[B, N]`` input, returning ``[B, k]`` as a Tensor.

    Raw features are standardised with the model's stored input statistics
    when present; regression outputs are mapped back to target units unless
    ``denormalize`` is False.
    """
    arr, _ = _as_batch(m, x)
    if m.input_mean is not None:
        arr = (arr - m.input_mean) / m.input_std
    P = params if params is not None else m.param_tensors()
    lif = m.lif()
    h = Tensor(arr)
    for layer in m.layers:
        h = apply_layer(layer, h, P, lif)
        if act_hook is not None:
            h = act_hook(layer, h)
    if denormalize and m.task == "regression":
        if m.target_scale != 1.0 or m.target_shift != 0.0:
            h = h * m.target_scale + m.target_shift
        if m.target_log:
            h = tn.exp(h)
    return h


def forward(m: Model, x) -> np.ndarray:
    """Predictions for one event (``[k]``) or a batch (``[B, k]``)."""
    _, single = _as_batch(m, x)
    with tn.no_grad():
        out = forward_tensor(m, x).data
    return out[0] if single else out


def predict_labels(m: Model, x) -> np.ndarray:
    return np.argmax(forward(m, np.atleast_2d(x)), axis=-1)


# -- persistence ---------------------------------------------------------------------

def model_meta(m: Model, extra: dict | None = None) -> dict:
    meta = {"format": "hpcneuronet-model", "kind": m.kind, "config": m.config,
            "target_shift": m.target_shift, "target_scale": m.target_scale,
            "target_log": m.target_log,
            "layers": [{"name": l.name, "kind": l.kind, "in_shape": list(l.in_shape),
                        "out_shape": list(l.out_shape), "attrs": l.attrs} for l in m.layers]}
    if extra:
        meta.update(extra)
    return meta


def model_arrays(m: Model) -> dict[str, np.ndarray]:
    arrays = dict(m.named_params())
    if m.input_mean is not None:
        arrays["input.mean"] = m.input_mean
        arrays["input.std"] = m.input_std
    return arrays


def save_model(m: Model, path, extra_meta: dict | None = None) -> None:
    container.write(path, model_meta(m, extra_meta), model_arrays(m))


def model_from_container(meta: dict, arrays: dict[str, np.ndarray]) -> Model:
    if meta.get("format") != "hpcneuronet-model":
        raise UsageError("container does not hold a model")
    cfg = meta["config"]
    if meta["kind"] == "hpcneuronet":
        m = build_model(HPCNeuroNetConfig.from_dict(cfg))
    elif meta["kind"] == "mlp":
        m = build_baseline_mlp(cfg["n_features"], cfg["hidden"], cfg["n_outputs"],
                               cfg["seed"], cfg["task"])
    else:
        raise UsageError(f"unknown model kind {meta['kind']!r}")
    for layer in m.layers:
        for k in layer.params:
            layer.params[k] = arrays[f"{layer.name}.{k}"].astype(np.float64)
    if "input.mean" in arrays:
        m.input_mean = arrays["input.mean"].astype(np.float64)
        m.input_std = arrays["input.std"].astype(np.float64)
    m.target_shift = float(meta.get("target_shift", 0.0))
    m.target_scale = float(meta.get("target_scale", 1.0))
    m.target_log = bool(meta.get("target_log", False))
    return m


def load_model(path) -> Model:
    meta, arrays = container.read(path)
    return model_from_container(meta, arrays)
