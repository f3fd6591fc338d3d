"""Neural-network primitives on :class:`~llformer.tensor.Tensor`.

All feature maps use the ``(B, C, H, W)`` layout. Convolutions zero-pad;
layer normalization works over the channel axis at every spatial location.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from ._kernels import depthwise_forward, depthwise_input_grad
from .errors import ContractError, DimensionError
from .tensor import Tensor, permute, reshape, take

_SQRT_HALF = float(np.sqrt(0.5))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


@dataclass
class ConvWeights:
    """Kernel ``(C_out, C_in // groups, k_h, k_w)``, optional bias ``(C_out,)``."""

    kernel: Tensor
    bias: Tensor | None = None
    groups: int = 1

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1] * self.groups

    @property
    def kernel_size(self) -> int:
        return self.kernel.shape[2]


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor
    eps: float = 1e-5

    def __post_init__(self):
        if not self.eps > 0:
            raise ContractError("layer norm epsilon must be positive")


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    B, C, H, W = x.shape
    out = np.zeros((B, C, H + 2 * p, W + 2 * p), dtype=x.dtype)
    out[:, :, p : p + H, p : p + W] = x
    return out


def _unpad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return x[:, :, p:-p, p:-p]


def conv2d(x: Tensor, w: ConvWeights, padding: int | None = None) -> Tensor:
    """2-D cross-correlation with zero padding and stride 1.

    ``padding`` defaults to ``k // 2`` so odd kernels keep the spatial size.
    """
    if x.ndim != 4:
        raise DimensionError(f"conv2d expects (B, C, H, W), got {x.shape}")
    kernel = w.kernel
    c_out, c_in_g, kh, kw = kernel.shape
    groups = w.groups
    B, C, H, W = x.shape
    if C % groups or c_out % groups:
        raise DimensionError(f"conv2d: channels (in {C}, out {c_out}) not divisible by groups={groups}")
    if C // groups != c_in_g:
        raise DimensionError(
            f"conv2d: input has {C} channels but kernel expects {c_in_g * groups} (groups={groups})"
        )
    p = kh // 2 if padding is None else padding
    Ho, Wo = H + 2 * p - kh + 1, W + 2 * p - kw + 1
    if Ho < 1 or Wo < 1:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} does not fit input {H}x{W} with padding {p}")

    xd, kd = x.data, kernel.data
    parents = (x, kernel) if w.bias is None else (x, kernel, w.bias)

    if kh == 1 and kw == 1 and groups == 1 and p == 0:
        k2 = kd.reshape(c_out, C)
        xf = xd.reshape(B, C, H * W)
        out = np.matmul(k2, xf).reshape(B, c_out, H, W)

        def core_bw(g):
            gf = g.reshape(B, c_out, H * W)
            gx = np.matmul(k2.T, gf).reshape(B, C, H, W) if x.requires_grad else None
            gk = None
            if kernel.requires_grad:
                gk = np.matmul(gf, xf.transpose(0, 2, 1)).sum(axis=0).reshape(kd.shape)
            return gx, gk

    elif groups == C and c_in_g == 1 and c_out == C:
        xp = _pad(xd, p)
        k3 = np.ascontiguousarray(kd[:, 0])
        out = depthwise_forward(xp, k3, Ho, Wo)

        def core_bw(g):
            g = np.ascontiguousarray(g)
            gx = gk = None
            if x.requires_grad:
                gx = _unpad(depthwise_input_grad(g, k3, H + 2 * p, W + 2 * p), p)
            if kernel.requires_grad:
                gk = np.empty_like(kd)
                for i in range(kh):
                    for j in range(kw):
                        gk[:, 0, i, j] = np.einsum("bchw,bchw->c", g, xp[:, :, i : i + Ho, j : j + Wo])
            return gx, gk

    else:
        xp = _pad(xd, p)
        # (B, C, Ho, Wo, kh, kw)
        cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))
        cg, og = c_in_g, c_out // groups
        outs = []
        for gi in range(groups):
            cs = cols[:, gi * cg : (gi + 1) * cg]
            ks = kd[gi * og : (gi + 1) * og]
            outs.append(np.tensordot(cs, ks, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2))
        out = np.ascontiguousarray(np.concatenate(outs, axis=1))

        def core_bw(g):
            gxp = np.zeros_like(xp) if x.requires_grad else None
            gk = np.zeros_like(kd) if kernel.requires_grad else None
            for gi in range(groups):
                gs = g[:, gi * og : (gi + 1) * og]
                ks = kd[gi * og : (gi + 1) * og]
                if gk is not None:
                    cs = cols[:, gi * cg : (gi + 1) * cg]
                    gk[gi * og : (gi + 1) * og] = np.tensordot(gs, cs, axes=([0, 2, 3], [0, 2, 3]))
                if gxp is not None:
                    # (B, Ho, Wo, cg, kh, kw)
                    dcols = np.tensordot(gs, ks, axes=([1], [0]))
                    sub = gxp[:, gi * cg : (gi + 1) * cg]
                    for i in range(kh):
                        for j in range(kw):
                            sub[:, :, i : i + Ho, j : j + Wo] += dcols[..., i, j].transpose(0, 3, 1, 2)
            return (_unpad(gxp, p) if gxp is not None else None), gk

    if w.bias is not None:
        bd = w.bias.data
        if bd.shape != (c_out,):
            raise DimensionError(f"conv2d: bias shape {bd.shape} != ({c_out},)")
        out = out + bd[None, :, None, None]

        def bw(g):
            gx, gk = core_bw(g)
            gb = g.sum(axis=(0, 2, 3)) if w.bias.requires_grad else None
            return gx, gk, gb

    else:
        bw = core_bw
    return Tensor.from_op(out, parents, bw, "conv2d")


def layer_norm(x: Tensor, p: LayerNormParams, axis: int = 1) -> Tensor:
    """Standardize over ``axis`` (channels) with the biased variance, then affine."""
    C = x.shape[axis]
    if p.gamma.shape != (C,) or p.beta.shape != (C,):
        raise DimensionError(f"layer_norm: params sized {p.gamma.shape} for {C} channels")
    xd = x.data
    bshape = [1] * x.ndim
    bshape[axis] = C
    gamma = p.gamma.data.reshape(bshape)
    beta = p.beta.data.reshape(bshape)
    mu = xd.mean(axis=axis, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + xd.dtype.type(p.eps))
    xhat = xc * inv
    out = xhat * gamma + beta
    red = tuple(i for i in range(x.ndim) if i != axis)

    def bw(g):
        gx = None
        if x.requires_grad:
            gh = g * gamma
            gx = inv * (
                gh - gh.mean(axis=axis, keepdims=True) - xhat * (gh * xhat).mean(axis=axis, keepdims=True)
            )
        gg = (g * xhat).sum(axis=red) if p.gamma.requires_grad else None
        gb = g.sum(axis=red) if p.beta.requires_grad else None
        return gx, gg, gb

    return Tensor.from_op(out, (x, p.gamma, p.beta), bw, "layer_norm")


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)``."""
    xd = x.data
    cdf = erf(xd * _SQRT_HALF)
    cdf += 1.0
    cdf *= 0.5

    def bw(g):
        pdf = xd * xd
        pdf *= -0.5
        np.exp(pdf, out=pdf)
        pdf *= _INV_SQRT_2PI
        pdf *= xd
        pdf += cdf
        pdf *= g
        return (pdf,)

    return Tensor.from_op(xd * cdf, (x,), bw, "gelu")


def softmax_lastdim(x: Tensor) -> Tensor:
    xd = x.data
    y = np.subtract(xd, xd.max(axis=-1, keepdims=True))
    np.exp(y, out=y)
    y /= y.sum(axis=-1, keepdims=True)

    def bw(g):
        gx = g * y
        s = gx.sum(axis=-1, keepdims=True)
        np.subtract(g, s, out=gx)
        gx *= y
        return (gx,)

    return Tensor.from_op(y, (x,), bw, "softmax")


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Space-to-depth: ``(B, C, H, W) -> (B, C*r*r, H/r, W/r)``.

    Output channel ``c*r*r + i*r + j`` holds input pixel ``(r*h + i, r*w + j)``
    of channel ``c``.
    """
    B, C, H, W = x.shape
    if H % r or W % r:
        raise DimensionError(f"pixel_unshuffle: spatial size {H}x{W} not divisible by {r}")
    t = reshape(x, (B, C, H // r, r, W // r, r))
    t = permute(t, (0, 1, 3, 5, 2, 4))
    return reshape(t, (B, C * r * r, H // r, W // r))


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Depth-to-space, the exact inverse of :func:`pixel_unshuffle`."""
    B, C, H, W = x.shape
    if C % (r * r):
        raise DimensionError(f"pixel_shuffle: {C} channels not divisible by {r * r}")
    t = reshape(x, (B, C // (r * r), r, r, H, W))
    t = permute(t, (0, 1, 4, 2, 5, 3))
    return reshape(t, (B, C // (r * r), H * r, W * r))


def _reflect_index(n: int, extra: int) -> np.ndarray:
    idx = np.arange(n + extra)
    period = 2 * (n - 1) if n > 1 else 1
    idx = idx % period
    return np.where(idx < n, idx, period - idx)


def reflect_pad_to(x: Tensor, multiple: int) -> Tensor:
    """Reflect-pad bottom/right so H and W become multiples of ``multiple``."""
    H, W = x.shape[-2:]
    ph, pw = (-H) % multiple, (-W) % multiple
    if ph and ph >= H or pw and pw >= W:
        raise DimensionError(f"reflect pad of {ph}x{pw} exceeds input {H}x{W}")
    if ph:
        x = take(x, _reflect_index(H, ph), axis=x.ndim - 2)
    if pw:
        x = take(x, _reflect_index(W, pw), axis=x.ndim - 1)
    return x
