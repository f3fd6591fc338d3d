"""Axis-based multi-head self-attention, a global baseline, and cross-layer fusion.

Queries, keys and values are each produced by a 1x1 convolution followed by a
3x3 depthwise convolution. Height attention mixes rows within every column,
width attention mixes columns within every row, and :func:`a_msa` chains the
two. :func:`cafb` attends over a stack of ``N`` same-shaped feature maps with an
``N x N`` layer-correlation matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DimensionError
from .nnops import ConvWeights, conv2d, softmax_lastdim
from .tensor import Tensor, concat, matmul_batched, permute, reshape


@dataclass
class Projection:
    """1x1 channel mixing followed by a 3x3 depthwise filter."""

    pointwise: ConvWeights
    depthwise: ConvWeights

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(conv2d(x, self.pointwise), self.depthwise)


@dataclass
class AxisAttentionParams:
    q: Projection
    k: Projection
    v: Projection
    out: ConvWeights
    heads: int = 1
    # None means sqrt(channels per head); a Tensor makes the temperature learnable.
    alpha: float | Tensor | None = None

    @property
    def channels(self) -> int:
        return self.out.out_channels


@dataclass
class CafbParams:
    q: Projection
    k: Projection
    v: Projection
    out: ConvWeights
    layers: int = 3
    # None means sqrt(C*H*W), the length of each layer's flattened vector.
    alpha: float | Tensor | None = None


def _project(x: Tensor, p) -> tuple:
    B, C, H, W = x.shape
    if p.q.pointwise.in_channels != C:
        raise DimensionError(f"attention params expect {p.q.pointwise.in_channels} channels, input has {C}")
    return p.q(x), p.k(x), p.v(x)


def _scale(logits: Tensor, alpha, default: float) -> Tensor:
    if alpha is None:
        return logits / default
    return logits / alpha


def _split_heads(C: int, heads: int) -> int:
    if heads < 1 or C % heads:
        raise DimensionError(f"{C} channels cannot be split into {heads} heads")
    return C // heads


def axis_attention_height(x: Tensor, p: AxisAttentionParams, return_attention: bool = False):
    """Self-attention along H, independently for every column and head.

    With ``return_attention`` the ``(B, heads, W, H, H)`` map is also returned.
    """
    B, C, H, W = x.shape
    d = _split_heads(C, p.heads)
    q, k, v = _project(x, p)
    q = permute(reshape(q, (B, p.heads, d, H, W)), (0, 1, 4, 3, 2))  # B,h,W,H,d
    k = permute(reshape(k, (B, p.heads, d, H, W)), (0, 1, 4, 2, 3))  # B,h,W,d,H
    v = permute(reshape(v, (B, p.heads, d, H, W)), (0, 1, 4, 3, 2))  # B,h,W,H,d
    attn = softmax_lastdim(_scale(matmul_batched(q, k), p.alpha, math.sqrt(d)))
    y = matmul_batched(attn, v)  # B,h,W,H,d
    y = reshape(permute(y, (0, 1, 4, 3, 2)), (B, C, H, W))
    y = conv2d(y, p.out)
    return (y, attn) if return_attention else y


def axis_attention_width(x: Tensor, p: AxisAttentionParams, return_attention: bool = False):
    """Self-attention along W, independently for every row and head."""
    B, C, H, W = x.shape
    d = _split_heads(C, p.heads)
    q, k, v = _project(x, p)
    q = permute(reshape(q, (B, p.heads, d, H, W)), (0, 1, 3, 4, 2))  # B,h,H,W,d
    k = permute(reshape(k, (B, p.heads, d, H, W)), (0, 1, 3, 2, 4))  # B,h,H,d,W
    v = permute(reshape(v, (B, p.heads, d, H, W)), (0, 1, 3, 4, 2))  # B,h,H,W,d
    attn = softmax_lastdim(_scale(matmul_batched(q, k), p.alpha, math.sqrt(d)))
    y = matmul_batched(attn, v)  # B,h,H,W,d
    y = reshape(permute(y, (0, 1, 4, 2, 3)), (B, C, H, W))
    y = conv2d(y, p.out)
    return (y, attn) if return_attention else y


def a_msa(x: Tensor, p_h: AxisAttentionParams, p_w: AxisAttentionParams) -> Tensor:
    return axis_attention_width(axis_attention_height(x, p_h), p_w)


def full_msa(x: Tensor, p: AxisAttentionParams, return_attention: bool = False):
    """Global self-attention over all H*W positions. Baseline only."""
    B, C, H, W = x.shape
    d = _split_heads(C, p.heads)
    q, k, v = _project(x, p)
    q = permute(reshape(q, (B, p.heads, d, H * W)), (0, 1, 3, 2))  # B,h,HW,d
    k = reshape(k, (B, p.heads, d, H * W))
    v = permute(reshape(v, (B, p.heads, d, H * W)), (0, 1, 3, 2))
    attn = softmax_lastdim(_scale(matmul_batched(q, k), p.alpha, math.sqrt(d)))
    y = matmul_batched(attn, v)  # B,h,HW,d
    y = reshape(permute(y, (0, 1, 3, 2)), (B, C, H, W))
    y = conv2d(y, p.out)
    return (y, attn) if return_attention else y


def cafb(features, p: CafbParams, return_attention: bool = False):
    """Cross-layer attention fusion over ``N`` feature maps of shape ``(B, C, H, W)``.

    Returns ``(B, N, C, H, W)``: the attended stack after the output 1x1 conv,
    plus the input stack.
    """
    features = list(features)
    N = len(features)
    if N != p.layers:
        raise DimensionError(f"cafb expects {p.layers} layers, got {N}")
    shape = features[0].shape
    for i, f in enumerate(features):
        if f.shape != shape:
            raise DimensionError(f"cafb layer {i} has shape {f.shape}, layer 0 has {shape}")
    B, C, H, W = shape
    stacked = concat(features, axis=1)  # B, N*C, H, W (layer-major channels)
    q, k, v = _project(stacked, p)
    L = C * H * W
    q = reshape(q, (B, N, L))
    k = permute(reshape(k, (B, N, L)), (0, 2, 1))
    v = reshape(v, (B, N, L))
    attn = softmax_lastdim(_scale(matmul_batched(q, k), p.alpha, math.sqrt(L)))  # B,N,N
    y = reshape(matmul_batched(attn, v), (B, N * C, H, W))
    y = conv2d(y, p.out) + stacked
    y = reshape(y, (B, N, C, H, W))
    return (y, attn) if return_attention else y


def attention_mac_count(kind: str, B: int, C: int, H: int, W: int, heads: int = 1) -> int:
    """Multiply-accumulates for attention logits plus value application.

    Projections are excluded (identical for both kinds). The head count does
    not change the total since heads partition the channels.
    """
    if min(B, C, H, W, heads) < 1:
        raise DimensionError("attention_mac_count needs positive dimensions")
    if kind == "full":
        return 2 * B * C * (H * W) ** 2
    if kind == "axis":
        return 2 * B * C * (H * H * W + W * W * H)
    raise ValueError(f"unknown attention kind {kind!r}; expected 'axis' or 'full'")
