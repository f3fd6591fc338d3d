"""Compiled loops for the depthwise convolution.

Each kernel applies the taps in the same order as a plain numpy
multiply-accumulate over shifted slices, so results match that formulation
bit for bit. ``fastmath`` stays off to keep LLVM from reassociating or fusing
the multiply and add.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def depthwise_forward(xp, k, Ho, Wo):
    """``xp`` is the zero-padded input ``(B, C, Hp, Wp)``, ``k`` is ``(C, kh, kw)``."""
    B, C = xp.shape[0], xp.shape[1]
    kh, kw = k.shape[1], k.shape[2]
    out = np.empty((B, C, Ho, Wo), dtype=xp.dtype)
    for b in range(B):
        for c in range(C):
            src = xp[b, c]
            for y in range(Ho):
                row = out[b, c, y]
                k0 = k[c, 0, 0]
                for x in range(Wo):
                    row[x] = src[y, x] * k0
                for i in range(kh):
                    for j in range(kw):
                        if i == 0 and j == 0:
                            continue
                        kij = k[c, i, j]
                        line = src[y + i]
                        for x in range(Wo):
                            row[x] += line[x + j] * kij
    return out


@njit(cache=True)
def depthwise_input_grad(g, k, Hp, Wp):
    """Gradient w.r.t. the padded input: every tap scatters ``g * k`` back."""
    B, C, Ho, Wo = g.shape
    kh, kw = k.shape[1], k.shape[2]
    gxp = np.zeros((B, C, Hp, Wp), dtype=g.dtype)
    for b in range(B):
        for c in range(C):
            dst = gxp[b, c]
            src = g[b, c]
            for i in range(kh):
                for j in range(kw):
                    kij = k[c, i, j]
                    for y in range(Ho):
                        line = dst[y + i]
                        grow = src[y]
                        for x in range(Wo):
                            line[x + j] += grow[x] * kij
    return gxp
