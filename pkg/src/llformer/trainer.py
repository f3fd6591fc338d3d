"""Training loop, optimizer, schedule, loss, and checkpoint persistence.

Checkpoint layout (all integers little-endian)::

    b"LLFK"                      magic
    u32                          format version
    u64, bytes                   model config as canonical JSON
    u64                          weight count n
    f32[n]                       weights, stable parameter-table order
    f32[n], f32[n]               Adam first and second moments, same order
    u64                          optimizer step counter
    u64, bytes                   training RNG state as canonical JSON
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import (
    BadMagicError,
    CheckpointMismatchError,
    ConfigError,
    ContractError,
    DimensionError,
    NumericError,
    TruncatedCheckpointError,
    VersionError,
)
from .model import Model, ModelConfig, analytic_param_count, build, forward
from .tensor import Tensor, backward

MAGIC = b"LLFK"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    patch_size: int = 128
    batch_size: int = 12
    lr_max: float = 1e-4
    lr_min: float = 1e-6
    total_steps: int = 1000
    smooth_l1_beta: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    hflip: bool = True
    vflip: bool = True

    def __post_init__(self):
        problems = []
        if not 0 < self.lr_min <= self.lr_max:
            problems.append(f"need 0 < lr_min <= lr_max, got lr_min={self.lr_min}, lr_max={self.lr_max}")
        if self.patch_size < 8 or self.patch_size % 8:
            problems.append(f"patch_size must be a positive multiple of 8, got {self.patch_size}")
        if self.total_steps < 1:
            problems.append(f"total_steps must be >= 1, got {self.total_steps}")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.smooth_l1_beta > 0:
            problems.append("smooth_l1_beta must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            problems.append("Adam hyperparameters out of range")
        if problems:
            raise ConfigError(problems)


# ---------------------------------------------------------------------------
# loss and schedule


def smooth_l1(pred: Tensor, target, beta: float = 1.0) -> Tensor:
    """Mean Huber-style loss: ``0.5 d^2 / beta`` inside ``|d| < beta``, else ``|d| - 0.5 beta``."""
    if beta <= 0:
        raise ContractError("smooth_l1 beta must be positive")
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if pred.shape != t.shape:
        raise DimensionError(f"smooth_l1: prediction {pred.shape} vs target {t.shape}")
    d = pred.data - t
    ad = np.abs(d)
    inside = ad < beta
    per = np.where(inside, 0.5 * d * d / beta, ad - 0.5 * beta)
    n = d.size
    loss = np.asarray(per.sum(dtype=np.float64) / n, dtype=pred.dtype)

    def bw(g):
        gd = np.where(inside, d / beta, np.sign(d)) * (g / n)
        gd = gd.astype(pred.dtype, copy=False)
        if isinstance(target, Tensor) and target.requires_grad:
            return gd, -gd
        return gd, None

    parents = (pred, target) if isinstance(target, Tensor) else (pred, Tensor(t))
    return Tensor.from_op(loss, parents, bw, "smooth_l1")


def cosine_lr(step: int, cfg: TrainConfig) -> float:
    """Cosine annealing from ``lr_max`` at step 0 to ``lr_min`` at ``total_steps``."""
    if step < 0:
        raise ContractError("step must be non-negative")
    if step >= cfg.total_steps:
        return cfg.lr_min
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + math.cos(math.pi * step / cfg.total_steps))


def adam_step(weights, grads, m, v, step, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update.

    All array arguments are equal-length sequences of same-shaped arrays;
    ``step`` counts from 1. Returns new ``(weights, m, v)`` lists.
    """
    if step < 1:
        raise ContractError("Adam step counter starts at 1")
    if not (len(weights) == len(grads) == len(m) == len(v)):
        raise DimensionError("adam_step: argument lists differ in length")
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    new_w, new_m, new_v = [], [], []
    for w, g, mi, vi in zip(weights, grads, m, v):
        if not (w.shape == g.shape == mi.shape == vi.shape):
            raise DimensionError(f"adam_step: shapes {w.shape}, {g.shape}, {mi.shape}, {vi.shape} differ")
        mi = beta1 * mi + (1.0 - beta1) * g
        vi = beta2 * vi + (1.0 - beta2) * (g * g)
        update = lr * (mi / c1) / (np.sqrt(vi / c2) + eps)
        new_w.append((w - update).astype(w.dtype, copy=False))
        new_m.append(mi.astype(w.dtype, copy=False))
        new_v.append(vi.astype(w.dtype, copy=False))
    return new_w, new_m, new_v


# ---------------------------------------------------------------------------
# checkpoint


@dataclass
class Checkpoint:
    config: ModelConfig
    weights: list  # arrays in parameter-table order
    adam_m: list
    adam_v: list
    step: int = 0
    rng_state: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @classmethod
    def from_model(cls, model: Model, adam_m=None, adam_v=None, step=0, rng_state=None) -> "Checkpoint":
        weights = [t.data.copy() for t in model.parameters()]
        zeros = [np.zeros_like(w) for w in weights]
        return cls(model.config, weights, adam_m or zeros, adam_v or [z.copy() for z in zeros], step,
                   rng_state or {})

    def to_model(self) -> Model:
        model = build(self.config, seed=0)
        params = model.parameters()
        if len(params) != len(self.weights):
            raise CheckpointMismatchError("parameter tensor count differs from config")
        for t, w in zip(params, self.weights):
            if t.shape != w.shape:
                raise CheckpointMismatchError(f"weight shape {w.shape} does not fit parameter {t.shape}")
            t.data = np.ascontiguousarray(w, dtype=t.dtype)
        return model


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    cfg_blob = _canonical(ckpt.config.to_dict())
    rng_blob = _canonical(ckpt.rng_state)
    flat = lambda arrs: np.concatenate([np.asarray(a, dtype="<f4").reshape(-1) for a in arrs]) if arrs else np.zeros(0, "<f4")
    w, m, v = flat(ckpt.weights), flat(ckpt.adam_m), flat(ckpt.adam_v)
    if not (w.size == m.size == v.size):
        raise DimensionError("checkpoint moments and weights differ in size")
    parts = [
        MAGIC,
        struct.pack("<I", ckpt.version),
        struct.pack("<Q", len(cfg_blob)),
        cfg_blob,
        struct.pack("<Q", w.size),
        w.tobytes(),
        m.tobytes(),
        v.tobytes(),
        struct.pack("<Q", ckpt.step),
        struct.pack("<Q", len(rng_blob)),
        rng_blob,
    ]
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(
                f"checkpoint truncated while reading {what}: need {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what):
        return struct.unpack("<Q", self.take(8, what))[0]


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    r = _Reader(data)
    if len(data) < 4:
        raise TruncatedCheckpointError("checkpoint shorter than its magic number")
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"not a checkpoint: magic {magic!r}, expected {MAGIC!r}")
    version = r.u32("version")
    if version != FORMAT_VERSION:
        raise VersionError(FORMAT_VERSION, version)
    cfg_len = r.u64("config length")
    try:
        cfg_dict = json.loads(r.take(cfg_len, "config").decode("utf-8"))
        config = ModelConfig.from_dict(cfg_dict)
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError, ConfigError) as exc:
        raise CheckpointMismatchError(f"embedded config is invalid: {exc}") from exc
    count = r.u64("weight count")
    expected = analytic_param_count(config)
    if count != expected:
        raise CheckpointMismatchError(f"checkpoint holds {count} weights, config implies {expected}")
    if len(data) - r.pos < 12 * count:
        raise TruncatedCheckpointError(
            f"checkpoint truncated: {12 * count} payload bytes expected, {len(data) - r.pos} remain"
        )
    shapes = [t.shape for t in build(config, seed=0).parameters()]

    def unflatten(buf):
        flat = np.frombuffer(buf, dtype="<f4").astype(np.float32)
        out, pos = [], 0
        for s in shapes:
            n = int(np.prod(s))
            out.append(flat[pos : pos + n].reshape(s).copy())
            pos += n
        return out

    weights = unflatten(r.take(4 * count, "weights"))
    adam_m = unflatten(r.take(4 * count, "Adam first moments"))
    adam_v = unflatten(r.take(4 * count, "Adam second moments"))
    step = r.u64("step counter")
    rng_len = r.u64("rng state length")
    try:
        rng_state = json.loads(r.take(rng_len, "rng state").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointMismatchError(f"rng state is not valid JSON: {exc}") from exc
    if r.pos != len(data):
        raise CheckpointMismatchError(f"{len(data) - r.pos} trailing bytes after checkpoint payload")
    return Checkpoint(config, weights, adam_m, adam_v, step, rng_state, version)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    losses: list
    lrs: list


def _as_pair(pair):
    low, normal = (np.asarray(getattr(a, "data", a), dtype=np.float32) for a in pair)
    if low.shape != normal.shape or low.ndim != 3:
        raise ContractError(f"training pair shapes differ or are not (3, H, W): {low.shape} vs {normal.shape}")
    return low, normal


def sample_batch(rng: np.random.Generator, dataset, cfg: TrainConfig):
    """Aligned random crops with shared random flips, as ``(B, 3, p, p)`` arrays."""
    p = cfg.patch_size
    lows, normals = [], []
    for _ in range(cfg.batch_size):
        low, normal = dataset[int(rng.integers(len(dataset)))]
        H, W = low.shape[1:]
        top = int(rng.integers(H - p + 1))
        left = int(rng.integers(W - p + 1))
        lo = low[:, top : top + p, left : left + p]
        no = normal[:, top : top + p, left : left + p]
        if cfg.hflip and rng.random() < 0.5:
            lo, no = lo[:, :, ::-1], no[:, :, ::-1]
        if cfg.vflip and rng.random() < 0.5:
            lo, no = lo[:, ::-1, :], no[:, ::-1, :]
        lows.append(lo)
        normals.append(no)
    return np.stack(lows), np.stack(normals)


def train(
    model: Model,
    dataset: Sequence,
    cfg: TrainConfig,
    on_step: Callable[[int, float, float], None] | None = None,
    resume: Checkpoint | None = None,
    steps: int | None = None,
) -> TrainResult:
    """Optimize ``model`` in place on ``(low, normal)`` pairs.

    ``on_step(step, loss, lr)`` is called after every update. ``steps`` caps
    the number of updates made by this call (the schedule still spans
    ``cfg.total_steps``), so a run can be split and resumed. Raises
    :class:`NumericError` carrying the step index if the loss turns non-finite.
    """
    if len(dataset) == 0:
        raise ContractError("training dataset is empty")
    pairs = [_as_pair(p) for p in dataset]
    for i, (low, _) in enumerate(pairs):
        if min(low.shape[1:]) < cfg.patch_size:
            raise ContractError(f"pair {i} is {low.shape[1]}x{low.shape[2]}, smaller than patch {cfg.patch_size}")

    params = model.parameters()
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    if resume is not None:
        m = [a.copy() for a in resume.adam_m]
        v = [a.copy() for a in resume.adam_v]
        start = resume.step
        if resume.rng_state:
            rng.bit_generator.state = resume.rng_state
    else:
        m = [np.zeros_like(t.data) for t in params]
        v = [np.zeros_like(t.data) for t in params]
        start = 0

    stop = cfg.total_steps if steps is None else min(cfg.total_steps, start + steps)
    losses, lrs = [], []
    for step in range(start, stop):
        low, normal = sample_batch(rng, pairs, cfg)
        pred = forward(model, Tensor(low))
        loss = smooth_l1(pred, normal, cfg.smooth_l1_beta)
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss {value} at step {step}", step=step)
        grads = backward(loss, params)
        lr = cosine_lr(step, cfg)
        new_w, m, v = adam_step([t.data for t in params], [grads[t] for t in params], m, v, step + 1, lr,
                                cfg.beta1, cfg.beta2, cfg.eps)
        for t, w in zip(params, new_w):
            t.data = w
            t.grad = None
        losses.append(value)
        lrs.append(lr)
        if on_step is not None:
            on_step(step, value, lr)

    ckpt = Checkpoint.from_model(model, m, v, max(start, stop), rng.bit_generator.state)
    return TrainResult(ckpt, losses, lrs)
