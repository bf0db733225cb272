"""Post-training fixed-point quantization and the hardware deployment descriptor.

Formats follow the HLS ``ap_fixed<W,I>`` convention: ``W`` total bits, ``I``
integer bits *including* the sign bit, step ``2**(I-W)``. Values are
emulated in float64, which is exact for ``W <= 53``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from . import model as mdl
from . import profiler
from . import tensor as tn
from .errors import ConfigError, UsageError
from .tensor import Tensor

ROUNDING = ("nearest-even", "truncate")
OVERFLOW = ("saturate", "wrap")


@dataclass(frozen=True)
class FixedPointFormat:
    total_bits: int
    int_bits: int
    rounding: str = "nearest-even"
    overflow: str = "saturate"

    def __post_init__(self):
        if not 1 <= self.int_bits <= self.total_bits <= 64:
            raise ConfigError(f"need 1 <= I <= W <= 64, got W={self.total_bits}, I={self.int_bits}")
        if self.rounding not in ROUNDING:
            raise ConfigError(f"rounding must be one of {ROUNDING}")
        if self.overflow not in OVERFLOW:
            raise ConfigError(f"overflow must be one of {OVERFLOW}")

    @property
    def frac_bits(self) -> int:
        return self.total_bits - self.int_bits

    @property
    def step(self) -> float:
        return float(np.ldexp(1.0, -self.frac_bits))

    @property
    def min_value(self) -> float:
        return -float(np.ldexp(1.0, self.int_bits - 1))

    @property
    def max_value(self) -> float:
        return float(np.ldexp(1.0, self.int_bits - 1)) - self.step

    def grid(self) -> np.ndarray:
        """Every representable value, ascending (only sensible for small W)."""
        half = 1 << (self.total_bits - 1)
        return np.ldexp(np.arange(-half, half, dtype=np.float64), -self.frac_bits)

    def __str__(self) -> str:
        return f"fixed<{self.total_bits},{self.int_bits}>"


_FMT_RE = re.compile(r"^\s*(?:fixed<)?\s*(\d+)\s*,\s*(\d+)\s*>?\s*$")


def parse_format(text: str, rounding: str = "nearest-even", overflow: str = "saturate") -> FixedPointFormat:
    """Parse ``"16,6"`` or ``"fixed<16,6>"``."""
    mt = _FMT_RE.match(text)
    if not mt:
        raise ConfigError(f"cannot parse precision {text!r}; expected 'W,I' or 'fixed<W,I>'")
    return FixedPointFormat(int(mt.group(1)), int(mt.group(2)), rounding, overflow)


def quantize_array(x, f: FixedPointFormat) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    scaled = np.ldexp(x, f.frac_bits)
    codes = np.rint(scaled) if f.rounding == "nearest-even" else np.floor(scaled)
    half = float(np.ldexp(1.0, f.total_bits - 1))
    if f.overflow == "saturate":
        codes = np.clip(codes, -half, half - 1)
    else:
        codes = np.mod(codes + half, 2 * half) - half
    return np.ldexp(codes, -f.frac_bits) + 0.0  # + 0.0 turns -0.0 into 0.0


def quantize_value(x: float, f: FixedPointFormat) -> float:
    return float(quantize_array(x, f))


def quantize_tensor(t: Tensor, f: FixedPointFormat) -> Tensor:
    return Tensor(quantize_array(t.data, f))


@dataclass
class PrecisionConfig:
    default: FixedPointFormat = field(default_factory=lambda: FixedPointFormat(16, 6))
    weights: dict[str, FixedPointFormat] = field(default_factory=dict)
    activations: dict[str, FixedPointFormat] = field(default_factory=dict)

    def weight_format(self, layer: str) -> FixedPointFormat:
        return self.weights.get(layer, self.default)

    def activation_format(self, layer: str) -> FixedPointFormat:
        return self.activations.get(layer, self.default)

    def check(self, m: mdl.Model) -> None:
        names = {l.name for l in m.layers}
        unknown = sorted((set(self.weights) | set(self.activations)) - names)
        if unknown:
            raise ConfigError(f"precision override names unknown layer(s): {', '.join(unknown)}")

    def to_dict(self) -> dict:
        return {"default": str(self.default),
                "weights": {k: str(v) for k, v in sorted(self.weights.items())},
                "activations": {k: str(v) for k, v in sorted(self.activations.items())},
                "rounding": self.default.rounding, "overflow": self.default.overflow}

    @classmethod
    def from_dict(cls, d: dict) -> PrecisionConfig:
        r, o = d.get("rounding", "nearest-even"), d.get("overflow", "saturate")
        return cls(parse_format(d["default"], r, o),
                   {k: parse_format(v, r, o) for k, v in d.get("weights", {}).items()},
                   {k: parse_format(v, r, o) for k, v in d.get("activations", {}).items()})


def parse_precision(items: list[str] | str, rounding: str = "nearest-even",
                    overflow: str = "saturate") -> PrecisionConfig:
    """Build a config from ``["16,6", "head=24,10", "ssa.w=8,3", "ssa.a=8,3"]``.

    The first bare ``W,I`` is the default; ``name=W,I`` sets both weight and
    activation formats for a layer, ``name.w=`` / ``name.a=`` only one.
    """
    if isinstance(items, str):
        items = items.split()
    pc = PrecisionConfig(FixedPointFormat(16, 6, rounding, overflow))
    for item in items:
        if "=" not in item:
            pc.default = parse_format(item, rounding, overflow)
            continue
        name, fmt = item.split("=", 1)
        f = parse_format(fmt, rounding, overflow)
        if name.endswith(".w"):
            pc.weights[name[:-2]] = f
        elif name.endswith(".a"):
            pc.activations[name[:-2]] = f
        else:
            pc.weights[name] = f
            pc.activations[name] = f
    return pc


@dataclass
class QuantizedModel:
    model: mdl.Model
    precision: PrecisionConfig

    @property
    def layers(self):
        return self.model.layers


def quantize_model(m: mdl.Model, pc: PrecisionConfig) -> QuantizedModel:
    """Quantize every weight eagerly; activation formats are applied at inference."""
    pc.check(m)
    qm = m.copy()
    for layer in qm.layers:
        f = pc.weight_format(layer.name)
        for k, v in layer.params.items():
            layer.params[k] = quantize_array(v, f)
    return QuantizedModel(qm, pc)


def forward_quantized(qm: QuantizedModel, x) -> np.ndarray:
    """Float pipeline with every post-layer activation snapped to its format."""
    pc = qm.precision

    def hook(layer: mdl.Layer, h: Tensor) -> Tensor:
        return quantize_tensor(h, pc.activation_format(layer.name))

    _, single = mdl._as_batch(qm.model, x)
    with tn.no_grad():
        out = mdl.forward_tensor(qm.model, x, act_hook=hook).data
    return out[0] if single else out


def evaluate_quantized(qm: QuantizedModel, d, tol: float = 0.05):
    from . import training

    def fn(x):
        return forward_quantized(qm, x) if len(x) else np.zeros((0, qm.model.n_outputs))

    return training.evaluate(qm.model, d, tol, predict_fn=fn)


# -- descriptor ------------------------------------------------------------------------

@dataclass
class HwLayer:
    name: str
    kind: str
    input_shape: list[int]
    output_shape: list[int]
    weight_precision: str
    activation_precision: str
    parameters: int
    macs: int


@dataclass
class HwDescriptor:
    model_name: str
    model_kind: str
    layers: list[HwLayer]
    total_parameters: int
    total_macs: int
    mac_gop: float
    precision: dict = field(default_factory=dict)

    def to_json(self) -> str:
        body = {
            "model_name": self.model_name,
            "model_kind": self.model_kind,
            "precision": self.precision,
            "layers": [vars(l) for l in self.layers],
            "totals": {"parameters": self.total_parameters, "macs": self.total_macs,
                       "mac_gop": self.mac_gop},
        }
        return json.dumps(body, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> HwDescriptor:
        d = json.loads(text)
        try:
            layers = [HwLayer(**l) for l in d["layers"]]
            t = d["totals"]
            return cls(d["model_name"], d["model_kind"], layers, t["parameters"], t["macs"],
                       t["mac_gop"], d.get("precision", {}))
        except (KeyError, TypeError) as exc:
            raise UsageError(f"malformed hardware descriptor: {exc}") from None


def export_hw_descriptor(qm: QuantizedModel, name: str = "hpcneuronet") -> HwDescriptor:
    pc = qm.precision
    per_layer = profiler.layer_macs(qm.model)
    layers = [HwLayer(l.name, l.kind, list(l.in_shape), list(l.out_shape),
                      str(pc.weight_format(l.name)), str(pc.activation_format(l.name)),
                      l.n_params, per_layer[l.name])
              for l in qm.model.layers]
    total_macs = sum(l.macs for l in layers)
    return HwDescriptor(name, qm.model.kind, layers, sum(l.parameters for l in layers),
                        total_macs, total_macs / 1e9, pc.to_dict())
