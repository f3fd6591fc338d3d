"""Synthetic low-light degradation.

Three uniform draws ``X, Y, Z`` (PCG64 stream seeded by the image seed) set
five tone adjustments::

    exposure   = -5 + 5 X^2            in [-5, 0]   (stops)
    highlights = 50 min(Y, 0.5) + 75   in [75, 100]
    shadows    = -100 min(Z, 0.5)      in [-50, 0]
    vibrance   = -75 + 75 X^2          in [-75, 0]
    whites     = 16 (5 - 5 X^2)        in [0, 80]

Operators run in the order exposure, highlights, shadows, whites, vibrance,
each followed by a clamp to [0, 1]. Every operator is the identity when its
parameter is 0.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError

LUMA = np.array([0.2126, 0.7152, 0.0722])

RANGES = {
    "exposure": (-5.0, 0.0),
    "highlights": (75.0, 100.0),
    "shadows": (-50.0, 0.0),
    "vibrance": (-75.0, 0.0),
    "whites": (0.0, 80.0),
}


@dataclass(frozen=True)
class DegradationParams:
    exposure: float
    highlights: float
    shadows: float
    vibrance: float
    whites: float
    seed: int | None = None
    x: float | None = None
    y: float | None = None
    z: float | None = None

    @classmethod
    def from_draws(cls, x: float, y: float, z: float, seed: int | None = None) -> "DegradationParams":
        x2 = x * x
        return cls(
            exposure=-5.0 + 5.0 * x2,
            highlights=50.0 * min(y, 0.5) + 75.0,
            shadows=-100.0 * min(z, 0.5),
            vibrance=-75.0 + 75.0 * x2,
            whites=16.0 * (5.0 - 5.0 * x2),
            seed=seed,
            x=x,
            y=y,
            z=z,
        )

    @classmethod
    def neutral(cls) -> "DegradationParams":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)

    def as_dict(self) -> dict:
        return asdict(self)


def sample_params(seed: int) -> DegradationParams:
    """Draw ``X, Y, Z ~ U[0, 1)`` from ``PCG64(seed)`` and derive the five values."""
    rng = np.random.Generator(np.random.PCG64(seed))
    x, y, z = (float(v) for v in rng.random(3))
    return DegradationParams.from_draws(x, y, z, seed=seed)


def image_seed(seed: int, index: int) -> int:
    """Independent 64-bit seed for the ``index``-th image of a run."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


def smoothstep(a: float, b: float, t: np.ndarray) -> np.ndarray:
    """Cubic Hermite ramp from 0 at ``t = a`` to 1 at ``t = b`` (``a > b`` allowed)."""
    u = np.clip((t - a) / (b - a), 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def luminance(img: np.ndarray) -> np.ndarray:
    return np.tensordot(LUMA, img, axes=(0, 0))


def adjust_exposure(img: np.ndarray, stops: float) -> np.ndarray:
    if stops == 0:
        return img
    return np.clip(img * 2.0**stops, 0.0, 1.0)


def adjust_highlights(img: np.ndarray, amount: float) -> np.ndarray:
    if amount == 0:
        return img
    w = smoothstep(0.5, 1.0, luminance(img))
    return np.clip(img + (amount / 100.0) * w * (1.0 - img) * 0.5, 0.0, 1.0)


def adjust_shadows(img: np.ndarray, amount: float) -> np.ndarray:
    if amount == 0:
        return img
    w = smoothstep(0.5, 0.0, luminance(img))
    return np.clip(img + (amount / 100.0) * w * img * 0.5, 0.0, 1.0)


def adjust_whites(img: np.ndarray, amount: float) -> np.ndarray:
    if amount == 0:
        return img
    w = smoothstep(0.7, 1.0, luminance(img))
    return np.clip(img + (amount / 100.0) * w * (1.0 - img) * 0.5, 0.0, 1.0)


def adjust_vibrance(img: np.ndarray, amount: float) -> np.ndarray:
    """Scale HSV saturation by ``1 + v (1 - sat)``, keeping hue and value."""
    if amount == 0:
        return img
    v = amount / 100.0
    mx = img.max(axis=0)
    mn = img.min(axis=0)
    safe = np.where(mx > 0, mx, 1.0)
    sat = np.where(mx > 0, (mx - mn) / safe, 0.0)
    new_sat = np.clip(sat * (1.0 + v * (1.0 - sat)), 0.0, 1.0)
    ratio = np.where(sat > 0, new_sat / np.where(sat > 0, sat, 1.0), 1.0)
    out = mx - (mx - img) * ratio
    return np.clip(out, 0.0, 1.0)


def apply_degradation(img, p: DegradationParams) -> np.ndarray:
    """Degrade a ``(3, H, W)`` image with values in [0, 1].

    Computation runs in float64; the result keeps the input dtype.
    """
    arr = np.asarray(getattr(img, "data", img))
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ContractError(f"apply_degradation expects (3, H, W), got {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ContractError("apply_degradation input must lie in [0, 1]")
    out = arr.astype(np.float64)
    out = adjust_exposure(out, p.exposure)
    out = adjust_highlights(out, p.highlights)
    out = adjust_shadows(out, p.shadows)
    out = adjust_whites(out, p.whites)
    out = adjust_vibrance(out, p.vibrance)
    return out.astype(arr.dtype if arr.dtype.kind == "f" else np.float64)


def synthetic_scene(seed: int, height: int = 64, width: int = 64) -> np.ndarray:
    """Procedural normal-light ``(3, H, W)`` image: colored gradients plus soft blobs."""
    rng = np.random.Generator(np.random.PCG64(seed))
    yy, xx = np.meshgrid(np.linspace(0, 1, height), np.linspace(0, 1, width), indexing="ij")
    img = np.empty((3, height, width))
    for c in range(3):
        a, b, base = rng.uniform(-0.3, 0.3, size=3)
        img[c] = 0.5 + base + a * xx + b * yy
    for _ in range(4):
        cy, cx = rng.uniform(0, 1, size=2)
        r = rng.uniform(0.08, 0.25)
        color = rng.uniform(-0.4, 0.4, size=3)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
        img += color[:, None, None] * blob
    return np.clip(img, 0.0, 1.0)
