"""Composite blocks: gated feed-forward, transformer block, resampling, skip fusion."""

from __future__ import annotations

from dataclasses import dataclass

from .attention import AxisAttentionParams, Projection, a_msa
from .errors import DimensionError
from .nnops import ConvWeights, LayerNormParams, conv2d, gelu, layer_norm, pixel_shuffle, pixel_unshuffle
from .tensor import Tensor, concat


@dataclass
class DgfnParams:
    branch1: Projection
    branch2: Projection
    out: ConvWeights


@dataclass
class AtbParams:
    norm1: LayerNormParams
    attn_h: AxisAttentionParams
    attn_w: AxisAttentionParams
    norm2: LayerNormParams
    ffn: DgfnParams


def dual_gate(a: Tensor, b: Tensor) -> Tensor:
    """``gelu(a) * b + a * gelu(b)``."""
    return gelu(a) * b + a * gelu(b)


def dgfn_body(y: Tensor, p: DgfnParams) -> Tensor:
    """Gated branches and output conv, without the residual."""
    return conv2d(dual_gate(p.branch1(y), p.branch2(y)), p.out)


def dgfn(y: Tensor, p: DgfnParams) -> Tensor:
    """Dual gated feed-forward network with residual."""
    return dgfn_body(y, p) + y


def atb(f_in: Tensor, p: AtbParams) -> Tensor:
    """Axis-based transformer block: pre-norm A-MSA and DGFN, each residual.

    Inside the block the feed-forward residual is taken around the norm
    (``F' + body(LN(F'))``), so zeroed output convs make the block an identity.
    """
    f = a_msa(layer_norm(f_in, p.norm1), p.attn_h, p.attn_w) + f_in
    return dgfn_body(layer_norm(f, p.norm2), p.ffn) + f


def downsample(x: Tensor, w: ConvWeights) -> Tensor:
    """3x3 conv C -> C/2, then pixel-unshuffle by 2: ``(B, 2C, H/2, W/2)``."""
    H, W = x.shape[-2:]
    if H % 2 or W % 2:
        raise DimensionError(f"downsample needs even spatial size, got {H}x{W}")
    return pixel_unshuffle(conv2d(x, w), 2)


def upsample(x: Tensor, w: ConvWeights) -> Tensor:
    """3x3 conv C -> 2C, then pixel-shuffle by 2: ``(B, C/2, 2H, 2W)``."""
    if w.out_channels % 4:
        raise DimensionError(f"upsample conv output {w.out_channels} not divisible by 4")
    return pixel_shuffle(conv2d(x, w), 2)


def skip_fuse(enc: Tensor, dec: Tensor, w: ConvWeights) -> Tensor:
    """Concatenate ``[enc, dec]`` along channels and mix with a 1x1 conv."""
    if enc.shape[0] != dec.shape[0] or enc.shape[2:] != dec.shape[2:]:
        raise DimensionError(f"skip_fuse: encoder {enc.shape} and decoder {dec.shape} do not align")
    return conv2d(concat([enc, dec], axis=1), w)
