"""Denoising UNet with frame conditioning, plus the global sequence encoder.

Video windows are folded into channels: a window of F frames with C
channels enters as F*C image channels, concatenated with the P*(C+1)
condition/mask channels.  The UNet has two resolution levels (one
residual + self-attention block each), a middle block, and a mirrored
decoder; cross-attention against the encoder tokens sits at the middle
and the coarsest decoder level.  The sequence encoder reuses the encoder
half plus middle of the same design with its own parameters and emits one
token per coarsest-grid position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._tensor import (
    Array,
    add,
    add_bias,
    concat,
    conv2d,
    group_norm,
    matmul,
    reshape,
    scale,
    silu,
    softmax,
    transpose,
    upsample2x,
)

__all__ = [
    "DenoisingModel",
    "NetworkConfig",
    "cross_attention",
    "init_model",
    "residual_block",
    "self_attention",
    "sequence_encoder",
    "sinusoidal_embedding",
    "time_embedding",
    "unet_forward",
]

_GROUPS = 8
_NORM_EPS = 1e-5


@dataclass(frozen=True)
class NetworkConfig:
    """Shapes shared by the UNet and the sequence encoder."""

    frames: int  # frames per denoised window
    channels: int  # image channels per frame
    cond_slots: int  # condition entries in y_m
    base_width: int = 32
    frame_size: int = 16

    def __post_init__(self):
        if self.base_width < _GROUPS or self.base_width % _GROUPS:
            raise ValueError(f"base_width must be a positive multiple of {_GROUPS}")
        if self.frame_size % 4:
            raise ValueError("frame_size must be divisible by 4 (two downsamples)")
        if min(self.frames, self.channels, self.cond_slots) < 1:
            raise ValueError("frames, channels and cond_slots must be >= 1")

    @property
    def fragment_channels(self) -> int:
        return self.frames * self.channels

    @property
    def cond_channels(self) -> int:
        return self.cond_slots * (self.channels + 1)

    @property
    def input_channels(self) -> int:
        return self.fragment_channels + self.cond_channels

    @property
    def time_dim(self) -> int:
        return 4 * self.base_width

    @property
    def context_width(self) -> int:
        return 2 * self.base_width

    @property
    def tokens(self) -> int:
        return (self.frame_size // 4) ** 2


def sinusoidal_embedding(t: np.ndarray, dim: int, dtype=np.float32) -> np.ndarray:
    """Standard sinusoidal timestep features: [sin(t*w_i) | cos(t*w_i)].

    Frequencies fall geometrically from 1 to 1/10000, so integer steps up
    to a few thousands map to distinct embeddings.
    """
    if dim % 2:
        raise ValueError("embedding dim must be even")
    half = dim // 2
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    angles = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1).astype(dtype)


def _init_conv(rng, out_ch, in_ch, kh, kw, dtype, zero=False):
    if zero:
        w = np.zeros((out_ch, in_ch, kh, kw), dtype=dtype)
    else:
        std = 1.0 / math.sqrt(in_ch * kh * kw)
        w = rng.normal(0.0, std, size=(out_ch, in_ch, kh, kw)).astype(dtype)
    return Array(w, requires_grad=True), Array(np.zeros(out_ch, dtype=dtype), requires_grad=True)


def _init_linear(rng, in_dim, out_dim, dtype):
    std = 1.0 / math.sqrt(in_dim)
    w = rng.normal(0.0, std, size=(in_dim, out_dim)).astype(dtype)
    return Array(w, requires_grad=True), Array(np.zeros(out_dim, dtype=dtype), requires_grad=True)


def _init_norm(ch, dtype):
    return (
        Array(np.ones(ch, dtype=dtype), requires_grad=True),
        Array(np.zeros(ch, dtype=dtype), requires_grad=True),
    )


def _init_resblock(params, prefix, rng, in_ch, out_ch, time_dim, dtype):
    params[f"{prefix}.norm1.g"], params[f"{prefix}.norm1.b"] = _init_norm(in_ch, dtype)
    params[f"{prefix}.conv1.w"], params[f"{prefix}.conv1.b"] = _init_conv(
        rng, out_ch, in_ch, 3, 3, dtype
    )
    if time_dim:
        params[f"{prefix}.temb.w"], params[f"{prefix}.temb.b"] = _init_linear(
            rng, time_dim, out_ch, dtype
        )
    params[f"{prefix}.norm2.g"], params[f"{prefix}.norm2.b"] = _init_norm(out_ch, dtype)
    params[f"{prefix}.conv2.w"], params[f"{prefix}.conv2.b"] = _init_conv(
        rng, out_ch, out_ch, 3, 3, dtype, zero=True
    )
    if in_ch != out_ch:
        params[f"{prefix}.skip.w"], params[f"{prefix}.skip.b"] = _init_conv(
            rng, out_ch, in_ch, 1, 1, dtype
        )


def _init_attention(params, prefix, rng, ch, dtype, context_ch=None):
    kv_ch = ch if context_ch is None else context_ch
    params[f"{prefix}.wq"] = Array(
        rng.normal(0.0, 1.0 / math.sqrt(ch), size=(ch, ch)).astype(dtype), requires_grad=True
    )
    params[f"{prefix}.wk"] = Array(
        rng.normal(0.0, 1.0 / math.sqrt(kv_ch), size=(kv_ch, ch)).astype(dtype),
        requires_grad=True,
    )
    params[f"{prefix}.wv"] = Array(
        rng.normal(0.0, 1.0 / math.sqrt(kv_ch), size=(kv_ch, ch)).astype(dtype),
        requires_grad=True,
    )


def _sub(params: dict, prefix: str) -> dict:
    cut = len(prefix) + 1
    return {name[cut:]: arr for name, arr in params.items() if name.startswith(prefix + ".")}


def time_embedding(t, params: dict, base_width: int) -> Array:
    """Sinusoidal features of width base_width through a two-layer projection."""
    feats = Array(sinusoidal_embedding(t, base_width, dtype=params["lin1.w"].dtype))
    h = add_bias(matmul(feats, params["lin1.w"]), params["lin1.b"])
    h = silu(h)
    return add_bias(matmul(h, params["lin2.w"]), params["lin2.b"])


def residual_block(x: Array, t_emb: Array | None, params: dict) -> Array:
    """norm -> silu -> conv -> (+ projected t_emb) -> norm -> silu -> conv, + skip."""
    h = group_norm(x, params["norm1.g"], params["norm1.b"], _GROUPS, _NORM_EPS)
    h = silu(h)
    h = add_bias(conv2d(h, params["conv1.w"], stride=1, padding=1), params["conv1.b"])
    if t_emb is not None:
        proj = add_bias(matmul(silu(t_emb), params["temb.w"]), params["temb.b"])
        h = add_bias(h, proj)
    h = group_norm(h, params["norm2.g"], params["norm2.b"], _GROUPS, _NORM_EPS)
    h = silu(h)
    h = add_bias(conv2d(h, params["conv2.w"], stride=1, padding=1), params["conv2.b"])
    if "skip.w" in params:
        x = add_bias(conv2d(x, params["skip.w"]), params["skip.b"])
    return add(h, x)


def _to_tokens(x: Array) -> tuple[Array, tuple[int, int, int, int]]:
    b, c, h, w = x.shape
    return reshape(transpose(x, (0, 2, 3, 1)), (b, h * w, c)), (b, c, h, w)


def _from_tokens(tokens: Array, bchw: tuple[int, int, int, int]) -> Array:
    b, c, h, w = bchw
    return transpose(reshape(tokens, (b, h, w, c)), (0, 3, 1, 2))


def _attend(q: Array, k: Array, v: Array) -> Array:
    d = q.shape[-1]
    scores = scale(matmul(q, transpose(k, (0, 2, 1))), 1.0 / math.sqrt(d))
    return matmul(softmax(scores, axis=-1), v)


def self_attention(x: Array, params: dict) -> Array:
    """Scaled dot-product attention over the H*W positions, residual-added."""
    tokens, bchw = _to_tokens(x)
    q = matmul(tokens, params["wq"])
    k = matmul(tokens, params["wk"])
    v = matmul(tokens, params["wv"])
    return add(x, _from_tokens(_attend(q, k, v), bchw))


def cross_attention(x: Array, z: Array, params: dict) -> Array:
    """Attention with queries from x positions and keys/values from z tokens."""
    if z.ndim != 3:
        raise ValueError(f"context tokens must be [B,T,C], got {z.shape}")
    tokens, bchw = _to_tokens(x)
    q = matmul(tokens, params["wq"])
    k = matmul(z, params["wk"])
    v = matmul(z, params["wv"])
    return add(x, _from_tokens(_attend(q, k, v), bchw))


def _conv_in(x: Array, params: dict, prefix: str) -> Array:
    return add_bias(
        conv2d(x, params[f"{prefix}.w"], stride=1, padding=1), params[f"{prefix}.b"]
    )


def _down(x: Array, params: dict, prefix: str) -> Array:
    return add_bias(
        conv2d(x, params[f"{prefix}.w"], stride=2, padding=1), params[f"{prefix}.b"]
    )


def _up(x: Array, params: dict, prefix: str) -> Array:
    return add_bias(
        conv2d(upsample2x(x), params[f"{prefix}.w"], stride=1, padding=1),
        params[f"{prefix}.b"],
    )


def unet_forward(
    x_t: Array, t, y_m: Array, z: Array, params: dict, cfg: NetworkConfig
) -> Array:
    """Predict the velocity for a noisy window given conditions and context.

    ``x_t`` is [B, frames*C, H, W], ``y_m`` the [B, P*(C+1), H, W] condition
    channels, ``z`` the [B, tokens, context_width] global context.
    """
    if x_t.shape[1] != cfg.fragment_channels:
        raise ValueError(
            f"expected {cfg.fragment_channels} fragment channels, got {x_t.shape[1]}"
        )
    if y_m.shape[1] != cfg.cond_channels:
        raise ValueError(
            f"expected {cfg.cond_channels} condition channels, got {y_m.shape[1]}"
        )
    temb = time_embedding(t, _sub(params, "temb"), cfg.base_width)
    h = _conv_in(concat([x_t, y_m], axis=1), params, "in_conv")
    skip0 = self_attention(
        residual_block(h, temb, _sub(params, "enc0.res")), _sub(params, "enc0.attn")
    )
    h = _down(skip0, params, "down0")
    skip1 = self_attention(
        residual_block(h, temb, _sub(params, "enc1.res")), _sub(params, "enc1.attn")
    )
    h = _down(skip1, params, "down1")

    h = residual_block(h, temb, _sub(params, "mid.res"))
    h = self_attention(h, _sub(params, "mid.attn"))
    h = cross_attention(h, z, _sub(params, "mid.cross"))

    h = concat([_up(h, params, "dec1.up"), skip1], axis=1)
    h = residual_block(h, temb, _sub(params, "dec1.res"))
    h = self_attention(h, _sub(params, "dec1.attn"))
    h = cross_attention(h, z, _sub(params, "dec1.cross"))

    h = concat([_up(h, params, "dec0.up"), skip0], axis=1)
    h = residual_block(h, temb, _sub(params, "dec0.res"))
    h = self_attention(h, _sub(params, "dec0.attn"))

    h = group_norm(h, params["out.norm.g"], params["out.norm.b"], _GROUPS, _NORM_EPS)
    h = silu(h)
    return add_bias(conv2d(h, params["out.conv.w"], stride=1, padding=1), params["out.conv.b"])


def sequence_encoder(fragment: Array, params: dict, cfg: NetworkConfig) -> Array:
    """Encode a clean window into global-context tokens [B, tokens, width].

    Mirrors the UNet's encoder half plus middle (three residual and three
    attention blocks) with independent parameters and no timestep input.
    """
    if fragment.shape[1] != cfg.fragment_channels:
        raise ValueError(
            f"expected {cfg.fragment_channels} fragment channels, got {fragment.shape[1]}"
        )
    h = _conv_in(fragment, params, "in_conv")
    h = self_attention(
        residual_block(h, None, _sub(params, "enc0.res")), _sub(params, "enc0.attn")
    )
    h = _down(h, params, "down0")
    h = self_attention(
        residual_block(h, None, _sub(params, "enc1.res")), _sub(params, "enc1.attn")
    )
    h = _down(h, params, "down1")
    h = residual_block(h, None, _sub(params, "mid.res"))
    h = self_attention(h, _sub(params, "mid.attn"))
    tokens, _ = _to_tokens(h)
    return tokens


def init_model(cfg: NetworkConfig, rng: np.random.Generator, dtype=np.float32) -> dict:
    """Create all named parameters for the UNet and the sequence encoder."""
    bw = cfg.base_width
    cw = cfg.context_width
    p: dict[str, Array] = {}

    p["unet.temb.lin1.w"], p["unet.temb.lin1.b"] = _init_linear(rng, bw, cfg.time_dim, dtype)
    p["unet.temb.lin2.w"], p["unet.temb.lin2.b"] = _init_linear(
        rng, cfg.time_dim, cfg.time_dim, dtype
    )
    p["unet.in_conv.w"], p["unet.in_conv.b"] = _init_conv(
        rng, bw, cfg.input_channels, 3, 3, dtype
    )
    _init_resblock(p, "unet.enc0.res", rng, bw, bw, cfg.time_dim, dtype)
    _init_attention(p, "unet.enc0.attn", rng, bw, dtype)
    p["unet.down0.w"], p["unet.down0.b"] = _init_conv(rng, cw, bw, 3, 3, dtype)
    _init_resblock(p, "unet.enc1.res", rng, cw, cw, cfg.time_dim, dtype)
    _init_attention(p, "unet.enc1.attn", rng, cw, dtype)
    p["unet.down1.w"], p["unet.down1.b"] = _init_conv(rng, cw, cw, 3, 3, dtype)
    _init_resblock(p, "unet.mid.res", rng, cw, cw, cfg.time_dim, dtype)
    _init_attention(p, "unet.mid.attn", rng, cw, dtype)
    _init_attention(p, "unet.mid.cross", rng, cw, dtype, context_ch=cw)
    p["unet.dec1.up.w"], p["unet.dec1.up.b"] = _init_conv(rng, cw, cw, 3, 3, dtype)
    _init_resblock(p, "unet.dec1.res", rng, 2 * cw, cw, cfg.time_dim, dtype)
    _init_attention(p, "unet.dec1.attn", rng, cw, dtype)
    _init_attention(p, "unet.dec1.cross", rng, cw, dtype, context_ch=cw)
    p["unet.dec0.up.w"], p["unet.dec0.up.b"] = _init_conv(rng, bw, cw, 3, 3, dtype)
    _init_resblock(p, "unet.dec0.res", rng, 2 * bw, bw, cfg.time_dim, dtype)
    _init_attention(p, "unet.dec0.attn", rng, bw, dtype)
    p["unet.out.norm.g"], p["unet.out.norm.b"] = _init_norm(bw, dtype)
    p["unet.out.conv.w"], p["unet.out.conv.b"] = _init_conv(
        rng, cfg.fragment_channels, bw, 3, 3, dtype, zero=True
    )

    p["seq_encoder.in_conv.w"], p["seq_encoder.in_conv.b"] = _init_conv(
        rng, bw, cfg.fragment_channels, 3, 3, dtype
    )
    _init_resblock(p, "seq_encoder.enc0.res", rng, bw, bw, 0, dtype)
    _init_attention(p, "seq_encoder.enc0.attn", rng, bw, dtype)
    p["seq_encoder.down0.w"], p["seq_encoder.down0.b"] = _init_conv(rng, cw, bw, 3, 3, dtype)
    _init_resblock(p, "seq_encoder.enc1.res", rng, cw, cw, 0, dtype)
    _init_attention(p, "seq_encoder.enc1.attn", rng, cw, dtype)
    p["seq_encoder.down1.w"], p["seq_encoder.down1.b"] = _init_conv(rng, cw, cw, 3, 3, dtype)
    _init_resblock(p, "seq_encoder.mid.res", rng, cw, cw, 0, dtype)
    _init_attention(p, "seq_encoder.mid.attn", rng, cw, dtype)
    return p


class DenoisingModel:
    """Parameter container pairing the UNet with its sequence encoder."""

    def __init__(self, cfg: NetworkConfig, params: dict[str, Array]):
        self.cfg = cfg
        self.params = params
        self.frozen: set[str] = set()

    @classmethod
    def create(cls, cfg: NetworkConfig, seed: int = 0, dtype=np.float32) -> "DenoisingModel":
        rng = np.random.default_rng(seed)
        return cls(cfg, init_model(cfg, rng, dtype))

    def unet(self, x_t: Array, t, y_m: Array, z: Array) -> Array:
        return unet_forward(x_t, t, y_m, z, _sub(self.params, "unet"), self.cfg)

    def encode(self, fragment: Array) -> Array:
        return sequence_encoder(fragment, _sub(self.params, "seq_encoder"), self.cfg)

    def fold(self, window: np.ndarray) -> np.ndarray:
        """[B?, F, C, H, W] frames -> [B, F*C, H, W] channel stack."""
        w = np.asarray(window)
        if w.ndim == 4:
            w = w[None]
        b, f, c, h, gw = w.shape
        return w.reshape(b, f * c, h, gw)

    def unfold(self, stack: np.ndarray) -> np.ndarray:
        """[B, F*C, H, W] -> [B, F, C, H, W]."""
        b, fc, h, w = stack.shape
        return stack.reshape(b, self.cfg.frames, self.cfg.channels, h, w)

    def disable_global_context(self) -> None:
        """Zero and freeze the cross-attention value paths.

        With both value projections pinned at zero the UNet output is
        exactly independent of the encoder tokens.
        """
        for name in ("unet.mid.cross.wv", "unet.dec1.cross.wv"):
            self.params[name].data[:] = 0.0
            self.frozen.add(name)

    @property
    def global_context_enabled(self) -> bool:
        return not self.frozen
