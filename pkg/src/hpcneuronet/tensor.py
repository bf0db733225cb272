"""Dense tensors backed by numpy with tape-based reverse-mode autodiff.

Operations record themselves on the innermost active :class:`GradTape`.
Outside a tape (or under :func:`no_grad`) nothing is recorded, so inference
pays only for the numpy arithmetic.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import NumericError, ShapeError, UsageError

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


def _active_tape() -> GradTape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


# -- executed multiply-accumulate counter (profiling oracle) -----------------

def record_macs(n: int) -> None:
    counters = getattr(_local, "mac_counters", None)
    if counters:
        for c in counters:
            c[0] += int(n)


@contextmanager
def count_executed_macs() -> Iterator[list]:
    """Count multiply-accumulates executed by tensor ops inside the block.

    Yields a one-element list whose entry is updated in place.
    """
    counters = getattr(_local, "mac_counters", None)
    if counters is None:
        counters = _local.mac_counters = []
    box = [0]
    counters.append(box)
    try:
        yield box
    finally:
        counters.remove(box)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_tape", "_node")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float64, np.float32):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: GradTape | None = None
        self._node: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)


@dataclass
class Node:
    kind: str
    parents: tuple[int | None, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
    saved: tuple = ()


@dataclass
class GradTape:
    """Ordered record of differentiable operations.

    Parents are always appended before children, so node ids are a
    topological order by construction.
    """

    nodes: list[Node] = field(default_factory=list)
    gradients: dict[int, Tensor] = field(default_factory=dict)
    _leaves: dict[int, Tensor] = field(default_factory=dict, repr=False)

    def __enter__(self) -> GradTape:
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def watch(self, t: Tensor) -> int:
        if t._tape is self and t._node is not None:
            return t._node
        idx = len(self.nodes)
        self.nodes.append(Node("leaf", ()))
        t._tape, t._node = self, idx
        t.requires_grad = True
        self._leaves[idx] = t
        return idx

    def _track(self, t: Tensor) -> int | None:
        if t._tape is self:
            return t._node
        if t.requires_grad:
            return self.watch(t)
        return None

    def backward(self, loss: Tensor) -> dict[int, Tensor]:
        return backward(loss, self)


@contextmanager
def no_grad() -> Iterator[None]:
    stack = _tape_stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


def backward(loss: Tensor, tape: GradTape) -> dict[int, Tensor]:
    """Reverse sweep from ``loss``; returns gradients keyed by leaf node id.

    Every watched leaf receives a gradient (zeros when unreachable) and has
    its ``.grad`` attribute set.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is not tape or loss._node is None:
        raise UsageError("loss was not recorded on this tape")
    grads: dict[int, np.ndarray] = {loss._node: np.ones_like(loss.data)}
    nodes = tape.nodes
    for idx in range(loss._node, -1, -1):
        g = grads.get(idx)
        if g is None:
            continue
        node = nodes[idx]
        if node.vjp is None:
            continue
        del grads[idx]
        for pid, gp in zip(node.parents, node.vjp(g)):
            if pid is None or gp is None:
                continue
            prev = grads.get(pid)
            grads[pid] = gp if prev is None else prev + gp
    out: dict[int, Tensor] = {}
    for idx, leaf in tape._leaves.items():
        g = grads.get(idx)
        if g is None:
            g = np.zeros_like(leaf.data)
        leaf.grad = g
        out[idx] = Tensor(g)
    tape.gradients = out
    return out


# -- op plumbing --------------------------------------------------------------

def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _op(kind: str, out: np.ndarray, inputs: Sequence[Tensor], vjp, saved: tuple = ()) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NumericError(f"non-finite values produced by {kind}")
    res = Tensor(out)
    tape = _active_tape()
    if tape is not None:
        ids = tuple(tape._track(t) for t in inputs)
        if any(i is not None for i in ids):
            res._tape, res._node = tape, len(tape.nodes)
            tape.nodes.append(Node(kind, ids, vjp, saved))
    return res


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return _op("add", a.data + b.data, (a, b),
               lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return _op("sub", a.data - b.data, (a, b),
               lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    return _op("mul", ad * bd, (a, b),
               lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    return _op("div", ad / bd, (a, b),
               lambda g: (_unbroadcast(g / bd, ad.shape),
                          _unbroadcast(-g * ad / (bd * bd), bd.shape)))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _op("neg", -a.data, (a,), lambda g: (-g,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _op("relu", a.data * mask, (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _op("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ad)
    return _op("log", out, (a,), lambda g: (g / ad,))


# -- shape ops -----------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return _op("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    inv = np.argsort(axes)
    return _op("transpose", np.transpose(a.data, axes), (a,),
               lambda g: (np.transpose(g, inv),))


def swap_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis
               for i in items)


def index(a: Tensor, idx) -> Tensor:
    src_shape, dtype = a.shape, a.data.dtype
    basic = _is_basic_index(idx)

    def vjp(g):
        full = np.zeros(src_shape, dtype=dtype)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _op("index", np.array(a.data[idx]), (a,), vjp)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return _op("stack", out, tensors, vjp)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _op("concat", out, tensors, vjp)


# -- reductions ----------------------------------------------------------------

def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    src = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _op("sum", np.asarray(out), (a,), vjp)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else int(np.prod([a.shape[ax] for ax in np.atleast_1d(axis)]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- linear algebra --------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    if bd.ndim == 2 and ad.ndim > 2:
        # batch of rows times one weight matrix: fold the batch into one GEMM
        k = ad.shape[-1]
        out = (ad.reshape(-1, k) @ bd).reshape(ad.shape[:-1] + (bd.shape[1],))
        record_macs(out.size * k)

        def vjp2(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g2 @ bd.T).reshape(ad.shape), ad.reshape(-1, k).T @ g2

        return _op("matmul", out, (a, b), vjp2)
    out = ad @ bd
    record_macs(out.size * ad.shape[-1])

    def vjp(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _op("matmul", out, (a, b), vjp)


def conv1d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation over the last axis.

    ``x`` is ``[..., C_in, L]`` and ``w`` is ``[C_out, C_in, K]``; leading
    axes of ``x`` are treated as a batch.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if stride < 1 or padding < 0:
        raise ShapeError(f"bad stride/padding {stride}/{padding}")
    if x.ndim < 2 or w.ndim != 3 or x.shape[-2] != w.shape[1]:
        raise ShapeError(f"conv1d channel mismatch: x {x.shape}, w {w.shape}")
    c_out, c_in, k = w.shape
    length = x.shape[-1]
    if k > length + 2 * padding:
        raise ShapeError(f"kernel {k} larger than padded input {length + 2 * padding}")
    l_out = (length + 2 * padding - k) // stride + 1

    xd = x.data
    if padding:
        pad = [(0, 0)] * (xd.ndim - 1) + [(padding, padding)]
        xd = np.pad(xd, pad)
    win = np.lib.stride_tricks.sliding_window_view(xd, k, axis=-1)[..., ::stride, :]
    # [..., C_in, L_out, K] -> [..., L_out, C_in*K]
    cols = np.moveaxis(win, -3, -2).reshape(*win.shape[:-3], l_out, c_in * k)
    wmat = w.data.reshape(c_out, c_in * k)
    out = np.swapaxes(cols @ wmat.T, -1, -2)
    batch = int(np.prod(x.shape[:-2], dtype=np.int64))
    record_macs(batch * c_out * c_in * k * l_out)

    xshape, padded_len = x.shape, xd.shape[-1]

    def vjp(g):
        gt = np.swapaxes(g, -1, -2)  # [..., L_out, C_out]
        gw = (gt.reshape(-1, c_out).T @ cols.reshape(-1, c_in * k)).reshape(c_out, c_in, k)
        gcols = (gt @ wmat).reshape(*gt.shape[:-1], c_in, k)  # [..., L_out, C_in, K]
        gxp = np.zeros(xshape[:-1] + (padded_len,), dtype=g.dtype)
        stop = stride * (l_out - 1) + 1
        for j in range(k):
            gxp[..., j:j + stop:stride] += np.swapaxes(gcols[..., j], -1, -2)
        gx = gxp[..., padding:padded_len - padding] if padding else gxp
        return gx, gw

    return _op("conv1d", out, (x, w), vjp)


# -- normalisation / probability -----------------------------------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return _op("softmax", s, (a,),
               lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)
    return _op("log_softmax", out, (a,),
               lambda g: (g - s * g.sum(axis=axis, keepdims=True),))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm affine shape {gamma.shape}/{beta.shape} != ({d},)")
    if eps <= 0:
        raise UsageError("layer_norm eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd
    gd = gamma.data
    out = xhat * gd + beta.data

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=lead)
        gbeta = g.sum(axis=lead)
        dxhat = g * gd
        gx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, ggamma, gbeta

    return _op("layer_norm", out, (x, gamma, beta), vjp)


# -- spiking nonlinearity ------------------------------------------------------------

def arctan_surrogate(u: np.ndarray, threshold: float, alpha: float) -> np.ndarray:
    z = (np.pi / 2) * alpha * (u - threshold)
    return alpha / (2.0 * (1.0 + z * z))


def spike(u: Tensor, threshold: float, alpha: float, smooth: bool = False) -> Tensor:
    """Heaviside step at ``threshold`` with an arctan surrogate derivative.

    With ``smooth=True`` the forward pass uses the arctan sigmoid whose exact
    derivative is the surrogate; gradient checks rely on that mode.
    """
    ud = u.data
    if smooth:
        out = 0.5 + np.arctan((np.pi / 2) * alpha * (ud - threshold)) / np.pi
    else:
        out = (ud >= threshold).astype(ud.dtype)
    return _op("spike", out, (u,),
               lambda g: (g * arctan_surrogate(ud, threshold, alpha),))


def lif_scan(inputs: Tensor, beta: float, threshold: float, alpha: float,
             smooth: bool = False, axis: int = 0) -> tuple[Tensor, list[np.ndarray]]:
    """Fused LIF recurrence over ``axis`` with hard reset, starting from V = 0.

    Per step: ``U = beta*V + I``, ``S = H(U - threshold)``, ``V = U*(1 - S)``.
    The backward pass runs the same recurrence in reverse (BPTT) using the
    arctan surrogate for dS/dU. Returns the spikes and post-step membranes.
    """
    x = np.moveaxis(inputs.data, axis, 0)
    steps = x.shape[0]
    v = np.zeros(x.shape[1:], dtype=x.dtype)
    us, ss, vs = [], [], []
    for t in range(steps):
        u = v * beta + x[t]
        if smooth:
            s = 0.5 + np.arctan((np.pi / 2) * alpha * (u - threshold)) / np.pi
        else:
            s = (u >= threshold).astype(x.dtype)
        v = u * (1.0 - s)
        us.append(u)
        ss.append(s)
        vs.append(v)
    out = np.moveaxis(np.stack(ss), 0, axis)

    def vjp(g):
        g = np.moveaxis(g, axis, 0)
        gx = np.empty_like(g)
        gv = np.zeros_like(g[0])
        for t in range(steps - 1, -1, -1):
            u, s = us[t], ss[t]
            ds = arctan_surrogate(u, threshold, alpha)
            gu = g[t] * ds + gv * ((1.0 - s) - u * ds)
            gx[t] = gu
            gv = gu * beta
        return (np.moveaxis(gx, 0, axis),)

    return _op("lif", out, (inputs,), vjp), vs
