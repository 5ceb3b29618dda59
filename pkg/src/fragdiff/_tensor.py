"""Dense float arrays with reverse-mode automatic differentiation.

Forward arithmetic runs directly on numpy.  While a :class:`Graph` is
active, every operation additionally records a vector-Jacobian closure so
:func:`backward` can assemble gradients for the parameters that fed a
scalar loss.  Storage defaults to float32; float64 inputs stay float64 so
gradient checks can run at tight tolerances.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Array",
    "Graph",
    "GraphConsumedError",
    "NonFiniteError",
    "add",
    "add_bias",
    "backward",
    "concat",
    "conv2d",
    "group_norm",
    "matmul",
    "mean_all",
    "mul",
    "neg",
    "reshape",
    "scale",
    "silu",
    "softmax",
    "sub",
    "sum_all",
    "transpose",
    "upsample2x",
]

_FLOAT_DTYPES = (np.float32, np.float64)


class NonFiniteError(ArithmeticError):
    """Raised when an operation produces NaN or Inf values."""


class GraphConsumedError(RuntimeError):
    """Raised when backward is invoked twice on the same graph."""


def _require_finite(op: str, data: np.ndarray) -> None:
    if not np.isfinite(data).all():
        bad = int(np.size(data) - np.isfinite(data).sum())
        raise NonFiniteError(f"{op}: {bad} non-finite value(s) in result")


class Array:
    """A dense float tensor. Gradients flow into it iff requires_grad."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        _require_finite("Array", self.data)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Array":
        return Array(self.data.copy(), requires_grad=False)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Array(shape={self.shape}, dtype={self.data.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)


_ACTIVE_GRAPH: "Graph | None" = None


class Graph:
    """Tape of recorded operations, built by one forward pass.

    Single-owner: a graph is consumed by exactly one backward call, and
    only one graph may be active at a time.
    """

    def __init__(self):
        self._nodes: list[tuple[Array, tuple[Array, ...], Callable]] = []
        self._consumed = False

    def __enter__(self) -> "Graph":
        global _ACTIVE_GRAPH
        if _ACTIVE_GRAPH is not None:
            raise RuntimeError("another Graph is already active")
        _ACTIVE_GRAPH = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _ACTIVE_GRAPH
        _ACTIVE_GRAPH = None

    def __len__(self) -> int:
        return len(self._nodes)


def _record(out: Array, parents: tuple[Array, ...], vjp: Callable) -> Array:
    graph = _ACTIVE_GRAPH
    if graph is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        graph._nodes.append((out, parents, vjp))
    return out


def backward(loss: Array, graph: Graph, params: Iterable[Array] | None = None):
    """Accumulate d(loss)/d(p) for every parameter reachable from loss.

    Visits each recorded node exactly once in reverse construction order
    (a valid reverse-topological order).  Fan-out adds gradient
    contributions.  If ``params`` is given, the returned map covers all of
    them, with zeros for parameters the loss never touched.
    """
    if graph._consumed:
        raise GraphConsumedError("backward already ran on this graph")
    if loss.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    graph._consumed = True

    grads: dict[Array, np.ndarray] = {
        loss: np.ones_like(loss.data)
    }
    for out, parents, vjp in reversed(graph._nodes):
        g = grads.pop(out, None)
        if g is None:
            continue  # not an ancestor of the loss
        for parent, pg in zip(parents, vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            held = grads.get(parent)
            # out-of-place: vjps may alias g across parents
            grads[parent] = pg if held is None else held + pg
    graph._nodes.clear()

    if params is not None:
        return {
            p: grads.get(p, np.zeros_like(p.data)) for p in params
        }
    return {p: g for p, g in grads.items() if p.requires_grad}


def _as_constant(value, like: Array) -> Array:
    return Array(np.asarray(value, dtype=like.data.dtype))


def _binary_args(a, b):
    if not isinstance(a, Array):
        a = _as_constant(a, b)
    if not isinstance(b, Array):
        b = _as_constant(b, a)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape).astype(g.dtype)


def add(a, b) -> Array:
    a, b = _binary_args(a, b)
    out = Array(a.data + b.data)
    _require_finite("add", out.data)

    def vjp(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _record(out, (a, b), vjp)


def sub(a, b) -> Array:
    a, b = _binary_args(a, b)
    out = Array(a.data - b.data)
    _require_finite("sub", out.data)

    def vjp(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _record(out, (a, b), vjp)


def mul(a, b) -> Array:
    a, b = _binary_args(a, b)
    out = Array(a.data * b.data)
    _require_finite("mul", out.data)

    def vjp(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return _record(out, (a, b), vjp)


def neg(a: Array) -> Array:
    out = Array(-a.data)

    def vjp(g):
        return (-g,)

    return _record(out, (a,), vjp)


def scale(a: Array, s: float) -> Array:
    s = float(s)
    out = Array(a.data * s)
    _require_finite("scale", out.data)

    def vjp(g):
        return (g * s,)

    return _record(out, (a,), vjp)


def matmul(a: Array, b: Array) -> Array:
    """Matrix product: 2D @ 2D, batched 3D @ 3D, or 3D @ shared 2D."""
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise ValueError(f"matmul inner dims differ: {ad.shape} @ {bd.shape}")
    elif ad.ndim == 3 and bd.ndim == 3:
        if ad.shape[0] != bd.shape[0] or ad.shape[2] != bd.shape[1]:
            raise ValueError(f"batched matmul mismatch: {ad.shape} @ {bd.shape}")
    elif ad.ndim == 3 and bd.ndim == 2:
        if ad.shape[2] != bd.shape[0]:
            raise ValueError(f"matmul inner dims differ: {ad.shape} @ {bd.shape}")
    else:
        raise ValueError(f"unsupported matmul ranks: {ad.ndim} @ {bd.ndim}")
    out = Array(ad @ bd)
    _require_finite("matmul", out.data)

    def vjp(g):
        if ad.ndim == 2 and bd.ndim == 2:
            return g @ bd.T, ad.T @ g
        if bd.ndim == 3:
            return g @ bd.transpose(0, 2, 1), ad.transpose(0, 2, 1) @ g
        ga = g @ bd.T
        gb = np.tensordot(ad, g, axes=([0, 1], [0, 1]))
        return ga, gb

    return _record(out, (a, b), vjp)


def _conv_geometry(h: int, w: int, kh: int, kw: int, stride: int, padding: int):
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel extents must be odd, got {kh}x{kw}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    span_h = h + 2 * padding - kh
    span_w = w + 2 * padding - kw
    if span_h < 0 or span_w < 0:
        raise ValueError(
            f"kernel {kh}x{kw} with padding {padding} exceeds input {h}x{w}"
        )
    # Floor division: positions past the last full stride are dropped, so a
    # 3x3 stride-2 pad-1 conv halves even extents exactly.
    return span_h // stride + 1, span_w // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int):
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    b, c = xp.shape[0], xp.shape[1]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho * wo, c * kh * kw)


def conv2d(x: Array, kernels: Array, stride: int = 1, padding: int = 0) -> Array:
    """2D cross-correlation of [B,C,H,W] (or [C,H,W]) with [O,C,kh,kw]."""
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    kd = kernels.data
    if xd.ndim != 4 or kd.ndim != 4:
        raise ValueError(f"conv2d expects 4D input/kernels, got {x.shape} and {kernels.shape}")
    b, c, h, w = xd.shape
    o, kc, kh, kw = kd.shape
    if kc != c:
        raise ValueError(f"kernel channels {kc} do not match input channels {c}")
    ho, wo = _conv_geometry(h, w, kh, kw, stride, padding)

    if kh == kw == 1 and stride == 1 and padding == 0:
        flat = xd.reshape(b, c, h * w)
        od = np.matmul(kd.reshape(o, c), flat).reshape(b, o, h, w)
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
        cols = _im2col(xp, kh, kw, stride, ho, wo)
        od = np.matmul(cols, kd.reshape(o, -1).T).transpose(0, 2, 1).reshape(b, o, ho, wo)
    out = Array(od[0] if squeeze else od)
    _require_finite("conv2d", out.data)

    def vjp(g):
        gd = g[None] if squeeze else g
        if kh == kw == 1 and stride == 1 and padding == 0:
            g2 = gd.reshape(b, o, h * w)
            gx = np.matmul(kd.reshape(o, c).T, g2).reshape(b, c, h, w)
            gk = np.tensordot(g2, xd.reshape(b, c, h * w), axes=([0, 2], [0, 2]))
            gk = gk.reshape(o, c, 1, 1)
        else:
            xp = (
                np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
                if padding
                else xd
            )
            cols = _im2col(xp, kh, kw, stride, ho, wo)
            g2 = gd.reshape(b, o, ho * wo).transpose(0, 2, 1)
            gk = np.tensordot(g2, cols, axes=([0, 1], [0, 1])).reshape(o, c, kh, kw)
            gcols = np.matmul(g2, kd.reshape(o, -1))
            gc = gcols.reshape(b, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gc[
                        :, :, i, j
                    ]
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        return (gx[0] if squeeze else gx), gk

    return _record(out, (x, kernels), vjp)


def add_bias(x: Array, bias: Array) -> Array:
    """Add a bias along channels/features.

    Accepted pairings: [B,C,H,W]+[C], [B,C,H,W]+[B,C] (per-sample channel
    offsets, used for timestep embeddings), [N,F]+[F], [B,T,F]+[F].
    """
    xd, bd = x.data, bias.data
    if xd.ndim == 4 and bd.ndim == 1 and bd.shape[0] == xd.shape[1]:
        od = xd + bd[None, :, None, None]
        reduce_axes = (0, 2, 3)
    elif xd.ndim == 4 and bd.ndim == 2 and bd.shape == xd.shape[:2]:
        od = xd + bd[:, :, None, None]
        reduce_axes = (2, 3)
    elif xd.ndim == 2 and bd.ndim == 1 and bd.shape[0] == xd.shape[1]:
        od = xd + bd[None, :]
        reduce_axes = (0,)
    elif xd.ndim == 3 and bd.ndim == 1 and bd.shape[0] == xd.shape[2]:
        od = xd + bd[None, None, :]
        reduce_axes = (0, 1)
    else:
        raise ValueError(f"unsupported bias pairing: x {xd.shape}, bias {bd.shape}")
    out = Array(od)
    _require_finite("add_bias", out.data)

    def vjp(g):
        return g, g.sum(axis=reduce_axes)

    return _record(out, (x, bias), vjp)


def softmax(x: Array, axis: int = -1) -> Array:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    yd = e / e.sum(axis=axis, keepdims=True)
    out = Array(yd)
    _require_finite("softmax", out.data)

    def vjp(g):
        inner = (g * yd).sum(axis=axis, keepdims=True)
        return ((g - inner) * yd,)

    return _record(out, (x,), vjp)


def silu(x: Array) -> Array:
    sig = 1.0 / (1.0 + np.exp(-x.data))
    out = Array(x.data * sig)
    _require_finite("silu", out.data)

    def vjp(g):
        return (g * sig * (1.0 + x.data * (1.0 - sig)),)

    return _record(out, (x,), vjp)


def group_norm(
    x: Array, gamma: Array, beta: Array, groups: int = 8, eps: float = 1e-5
) -> Array:
    """Normalize [B,C,H,W] per (sample, channel group), then scale and shift."""
    xd = x.data
    if xd.ndim != 4:
        raise ValueError(f"group_norm expects [B,C,H,W], got {x.shape}")
    b, c, h, w = xd.shape
    if c % groups:
        raise ValueError(f"channels {c} not divisible by groups {groups}")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError("gamma/beta must have one entry per channel")
    xg = xd.reshape(b, groups, -1)
    mean = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat_g = (xg - mean) * inv_std
    xhat = xhat_g.reshape(b, c, h, w)
    od = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]
    out = Array(od)
    _require_finite("group_norm", out.data)

    def vjp(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        gxhat = (g * gamma.data[None, :, None, None]).reshape(b, groups, -1)
        xh = xhat_g
        gx = inv_std * (
            gxhat
            - gxhat.mean(axis=2, keepdims=True)
            - xh * (gxhat * xh).mean(axis=2, keepdims=True)
        )
        return gx.reshape(b, c, h, w), ggamma, gbeta

    return _record(out, (x, gamma, beta), vjp)


def reshape(x: Array, shape: Sequence[int]) -> Array:
    shape = tuple(shape)
    out = Array(x.data.reshape(shape))

    def vjp(g):
        return (g.reshape(x.shape),)

    return _record(out, (x,), vjp)


def transpose(x: Array, axes: Sequence[int]) -> Array:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = Array(np.ascontiguousarray(x.data.transpose(axes)))

    def vjp(g):
        return (g.transpose(inverse),)

    return _record(out, (x,), vjp)


def concat(parts: Sequence[Array], axis: int) -> Array:
    if not parts:
        raise ValueError("concat needs at least one array")
    out = Array(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _record(out, tuple(parts), vjp)


def mean_all(x: Array) -> Array:
    out = Array(np.asarray(x.data.mean(dtype=np.float64), dtype=x.data.dtype))
    _require_finite("mean_all", out.data)
    n = x.size

    def vjp(g):
        return (np.full(x.shape, g / n, dtype=x.data.dtype),)

    return _record(out, (x,), vjp)


def sum_all(x: Array) -> Array:
    out = Array(np.asarray(x.data.sum(dtype=np.float64), dtype=x.data.dtype))
    _require_finite("sum_all", out.data)

    def vjp(g):
        return (np.full(x.shape, g, dtype=x.data.dtype),)

    return _record(out, (x,), vjp)


def upsample2x(x: Array) -> Array:
    """Nearest-neighbour 2x spatial upsampling of [B,C,H,W]."""
    if x.ndim != 4:
        raise ValueError(f"upsample2x expects [B,C,H,W], got {x.shape}")
    out = Array(x.data.repeat(2, axis=2).repeat(2, axis=3))
    b, c, h, w = x.shape

    def vjp(g):
        return (g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _record(out, (x,), vjp)
