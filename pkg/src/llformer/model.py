"""LLFormer assembly, parameter table, and analytic cost accounting.

Pipeline (channels for base width ``C``)::

    3x3 projection (3 -> C)
    head: 3 ATBs at C, CAFB over their outputs, 1x1 fuse (N*C -> C)
    encoder level i = 0..3: [downsample] + ATBs at 2^i C, resolution H / 2^i
    decoder level i = 2..0: upsample, skip fuse with encoder level i,
                            ATBs at 2^(i+1) C
    tail: 3 ATBs at 2C, CAFB, 1x1 fuse (N*2C -> 2C)
    3x3 reconstruction (2C -> 3)

Inputs are reflect-padded to a multiple of ``2 ** (levels - 1)`` and the
output is cropped back.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .attention import AxisAttentionParams, CafbParams, Projection, attention_mac_count, cafb
from .blocks import AtbParams, DgfnParams, atb, downsample, skip_fuse, upsample
from .errors import ConfigError, DimensionError
from .nnops import ConvWeights, LayerNormParams, conv2d, reflect_pad_to
from .tensor import Tensor, no_grad, reshape

REFERENCE_PARAM_COUNT = 24_520_000
REFERENCE_MACS_256 = 22_520_000_000

# "fan_in": std 1/sqrt(3 * fan_in), the usual conv default; "fixed": std 0.02 for every kernel.
INIT_SCHEMES = ("fan_in", "fixed")


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 16
    encoder_depths: tuple = (2, 4, 8, 16)
    encoder_heads: tuple = (1, 2, 4, 8)
    decoder_depths: tuple = (2, 4, 8)
    decoder_heads: tuple = (1, 2, 4)
    head_tail_blocks: int = 3
    cafb_layers: int = 3
    dgfn_expansion: float = 2.0
    input_channels: int = 3
    global_residual: bool = False
    learnable_alpha: bool = False
    weight_init: str = "fan_in"

    def __post_init__(self):
        for name in ("encoder_depths", "encoder_heads", "decoder_depths", "decoder_heads"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        problems = self.violations()
        if problems:
            raise ConfigError(problems)

    @property
    def levels(self) -> int:
        return len(self.encoder_depths)

    def encoder_channels(self, i: int) -> int:
        return self.base_channels * 2**i

    def decoder_channels(self, i: int) -> int:
        return self.base_channels * 2 ** (i + 1)

    def hidden(self, c: int) -> int:
        return max(1, int(round(self.dgfn_expansion * c)))

    def violations(self) -> list:
        out = []
        C = self.base_channels
        if C < 1:
            out.append(f"base_channels must be positive, got {C}")
        L = len(self.encoder_depths)
        if L < 1:
            out.append("encoder_depths must not be empty")
        if len(self.encoder_heads) != L:
            out.append(f"encoder_heads has {len(self.encoder_heads)} entries, expected {L}")
        if len(self.decoder_depths) != L - 1:
            out.append(f"decoder_depths has {len(self.decoder_depths)} entries, expected {L - 1}")
        if len(self.decoder_heads) != len(self.decoder_depths):
            out.append(f"decoder_heads has {len(self.decoder_heads)} entries, expected {len(self.decoder_depths)}")
        for name in ("encoder_depths", "encoder_heads", "decoder_depths", "decoder_heads"):
            if any(v < 1 for v in getattr(self, name)):
                out.append(f"{name} entries must be positive")
        if C >= 1:
            for i, h in enumerate(self.encoder_heads):
                if h >= 1 and (C * 2**i) % h:
                    out.append(f"encoder level {i}: {C * 2**i} channels not divisible by {h} heads")
            for i, h in enumerate(self.decoder_heads):
                if h >= 1 and (C * 2 ** (i + 1)) % h:
                    out.append(f"decoder level {i}: {C * 2 ** (i + 1)} channels not divisible by {h} heads")
            if C % 2:
                out.append(f"base_channels must be even for the resampling convs, got {C}")
            heads = [h for h in (*self.encoder_heads, *self.decoder_heads) if h >= 1]
            if heads and C % max(heads):
                out.append(f"base_channels {C} not divisible by the largest head count {max(heads)}")
        if self.head_tail_blocks < 1:
            out.append("head_tail_blocks must be positive")
        if self.cafb_layers < 2:
            out.append(f"cafb_layers must be >= 2, got {self.cafb_layers}")
        if self.cafb_layers > self.head_tail_blocks:
            out.append(f"cafb_layers ({self.cafb_layers}) exceeds head_tail_blocks ({self.head_tail_blocks})")
        if not self.dgfn_expansion > 0:
            out.append("dgfn_expansion must be positive")
        if self.input_channels < 1:
            out.append("input_channels must be positive")
        if self.weight_init not in INIT_SCHEMES:
            out.append(f"weight_init must be one of {sorted(INIT_SCHEMES)}, got {self.weight_init!r}")
        return out

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        if not isinstance(d, dict):
            raise ConfigError(f"model config must be a JSON object, got {type(d).__name__}")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError([f"unknown config field {k!r}" for k in unknown])
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed model config: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


DESK_CONFIG = ModelConfig(
    base_channels=8,
    encoder_depths=(1, 1, 2, 2),
    encoder_heads=(1, 1, 2, 2),
    decoder_depths=(1, 1, 2),
    decoder_heads=(1, 1, 2),
)


@dataclass
class LLFormerParams:
    proj: ConvWeights
    head_blocks: list
    head_cafb: CafbParams
    head_fuse: ConvWeights
    encoder: list  # per level: list of AtbParams
    down: list  # ConvWeights for levels 1..L-1
    up: list  # per decoder level i
    skip: list  # per decoder level i
    decoder: list  # per decoder level i: list of AtbParams
    tail_blocks: list
    tail_cafb: CafbParams
    tail_fuse: ConvWeights
    recon: ConvWeights


def named_parameters(obj, prefix: str = ""):
    """Yield ``(name, Tensor)`` pairs in a fixed depth-first order."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            yield from named_parameters(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_parameters(item, f"{prefix}.{i}")


class _Init:
    def __init__(self, seed: int, dtype, scheme: str = "fan_in"):
        self.rng = np.random.Generator(np.random.PCG64(seed))
        self.dtype = dtype
        self.scheme = scheme

    def trunc_normal(self, shape, std=0.02):
        v = self.rng.standard_normal(shape)
        bad = np.abs(v) > 2.0
        while bad.any():
            v[bad] = self.rng.standard_normal(int(bad.sum()))
            bad = np.abs(v) > 2.0
        return Tensor(v * std, requires_grad=True, dtype=self.dtype)

    def const(self, shape, value):
        return Tensor(np.full(shape, value), requires_grad=True, dtype=self.dtype)

    def conv(self, c_in, c_out, k, bias=True, groups=1) -> ConvWeights:
        fan_in = (c_in // groups) * k * k
        std = 1.0 / math.sqrt(3 * fan_in) if self.scheme == "fan_in" else 0.02
        kernel = self.trunc_normal((c_out, c_in // groups, k, k), std)
        return ConvWeights(kernel, self.const((c_out,), 0.0) if bias else None, groups)

    def dw(self, c) -> ConvWeights:
        return self.conv(c, c, 3, bias=False, groups=c)

    def projection(self, c_in, c_out) -> Projection:
        return Projection(self.conv(c_in, c_out, 1, bias=False), self.dw(c_out))

    def norm(self, c) -> LayerNormParams:
        return LayerNormParams(self.const((c,), 1.0), self.const((c,), 0.0))

    def alpha(self, c, learnable):
        return self.const((), math.sqrt(c)) if learnable else None

    def axis_attention(self, c, heads, learnable) -> AxisAttentionParams:
        return AxisAttentionParams(
            q=self.projection(c, c),
            k=self.projection(c, c),
            v=self.projection(c, c),
            out=self.conv(c, c, 1),
            heads=heads,
            alpha=self.alpha(c // heads, learnable),
        )

    def atb(self, c, heads, cfg: ModelConfig) -> AtbParams:
        hidden = cfg.hidden(c)
        return AtbParams(
            norm1=self.norm(c),
            attn_h=self.axis_attention(c, heads, cfg.learnable_alpha),
            attn_w=self.axis_attention(c, heads, cfg.learnable_alpha),
            norm2=self.norm(c),
            ffn=DgfnParams(self.projection(c, hidden), self.projection(c, hidden), self.conv(hidden, c, 1)),
        )

    def cafb(self, c, n) -> CafbParams:
        nc = n * c
        return CafbParams(self.projection(nc, nc), self.projection(nc, nc), self.projection(nc, nc),
                          self.conv(nc, nc, 1), layers=n)


class Model:
    """A configured LLFormer with its ordered parameter table."""

    def __init__(self, config: ModelConfig, params: LLFormerParams):
        self.config = config
        self.params = params

    def named_parameters(self):
        return list(named_parameters(self.params))

    def parameters(self):
        return [t for _, t in named_parameters(self.params)]

    def __call__(self, image: Tensor) -> Tensor:
        return forward(self, image)


def build(config: ModelConfig, seed: int = 0, dtype=None) -> Model:
    """Instantiate every weight from a PCG64 stream seeded with ``seed``."""
    if not isinstance(config, ModelConfig):
        config = ModelConfig.from_dict(dict(config))
    from .tensor import default_dtype

    init = _Init(seed, dtype or default_dtype(), config.weight_init)
    cfg = config
    C, N, L = cfg.base_channels, cfg.cafb_layers, cfg.levels
    C_tail = cfg.decoder_channels(0) if L > 1 else C
    proj = init.conv(cfg.input_channels, C, 3)
    head_blocks = [init.atb(C, cfg.encoder_heads[0], cfg) for _ in range(cfg.head_tail_blocks)]
    head_cafb = init.cafb(C, N)
    head_fuse = init.conv(N * C, C, 1)
    encoder, down = [], []
    for i in range(L):
        c = cfg.encoder_channels(i)
        if i > 0:
            down.append(init.conv(c // 2, c // 4, 3, bias=False))
        encoder.append([init.atb(c, cfg.encoder_heads[i], cfg) for _ in range(cfg.encoder_depths[i])])
    up, skip, decoder = [None] * (L - 1), [None] * (L - 1), [None] * (L - 1)
    for i in reversed(range(L - 1)):
        c_src = cfg.encoder_channels(L - 1) if i == L - 2 else cfg.decoder_channels(i + 1)
        up[i] = init.conv(c_src, 2 * c_src, 3, bias=False)
        c_dec = cfg.decoder_channels(i)
        skip[i] = init.conv(cfg.encoder_channels(i) + c_src // 2, c_dec, 1)
        decoder[i] = [init.atb(c_dec, cfg.decoder_heads[i], cfg) for _ in range(cfg.decoder_depths[i])]
    tail_heads = cfg.decoder_heads[0] if L > 1 else cfg.encoder_heads[0]
    tail_blocks = [init.atb(C_tail, tail_heads, cfg) for _ in range(cfg.head_tail_blocks)]
    tail_cafb = init.cafb(C_tail, N)
    tail_fuse = init.conv(N * C_tail, C_tail, 1)
    recon = init.conv(C_tail, cfg.input_channels, 3)
    params = LLFormerParams(proj, head_blocks, head_cafb, head_fuse, encoder, down, up, skip, decoder,
                            tail_blocks, tail_cafb, tail_fuse, recon)
    return Model(cfg, params)


def _blocks_then_fuse(f: Tensor, blocks, cafb_p: CafbParams, fuse: ConvWeights) -> Tensor:
    outs = []
    for blk in blocks:
        f = atb(f, blk)
        outs.append(f)
    n = cafb_p.layers
    stacked = cafb(outs[-n:], cafb_p)
    B, _, C, H, W = stacked.shape
    return conv2d(reshape(stacked, (B, n * C, H, W)), fuse)


def forward(m: Model, image: Tensor) -> Tensor:
    """Enhance ``(B, 3, H, W)`` images; raw (unclamped) output of the same size."""
    if not isinstance(image, Tensor):
        image = Tensor(image)
    if image.ndim != 4:
        raise DimensionError(f"forward expects (B, C, H, W), got shape {image.shape}")
    cfg, P = m.config, m.params
    if image.shape[1] != cfg.input_channels:
        raise DimensionError(f"model expects {cfg.input_channels} input channels, got {image.shape[1]}")
    H, W = image.shape[2:]
    mult = 2 ** (cfg.levels - 1)
    if H < mult or W < mult:
        raise DimensionError(f"input {H}x{W} smaller than the minimum {mult}x{mult}")
    x = reflect_pad_to(image, mult)

    f = conv2d(x, P.proj)
    f = _blocks_then_fuse(f, P.head_blocks, P.head_cafb, P.head_fuse)
    skips = []
    for i, stage in enumerate(P.encoder):
        if i > 0:
            f = downsample(f, P.down[i - 1])
        for blk in stage:
            f = atb(f, blk)
        skips.append(f)
    for i in reversed(range(cfg.levels - 1)):
        f = skip_fuse(skips[i], upsample(f, P.up[i]), P.skip[i])
        for blk in P.decoder[i]:
            f = atb(f, blk)
    f = _blocks_then_fuse(f, P.tail_blocks, P.tail_cafb, P.tail_fuse)
    out = conv2d(f, P.recon)
    if cfg.global_residual:
        out = out + x
    if out.shape[2:] != (H, W):
        out = out[:, :, :H, :W]
    return out


def predict(m: Model, image: np.ndarray) -> np.ndarray:
    """Inference helper: no tape, numpy in and out."""
    with no_grad():
        return forward(m, Tensor(image, dtype=m.parameters()[0].dtype)).data


def param_count(m) -> int:
    """Exact number of scalar parameters in a model (or any param structure)."""
    obj = m.params if isinstance(m, Model) else m
    return int(sum(t.size for _, t in named_parameters(obj)))


def parameter_checksum(m: Model) -> str:
    h = hashlib.sha256()
    for name, t in m.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(t.data).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# analytic cost model


def _conv_macs(c_in, c_out, k, h, w, groups=1) -> int:
    return h * w * c_out * (c_in // groups) * k * k


def _conv_params(c_in, c_out, k, bias, groups=1) -> int:
    return c_out * (c_in // groups) * k * k + (c_out if bias else 0)


def _projection_cost(c_in, c_out, h, w):
    macs = _conv_macs(c_in, c_out, 1, h, w) + _conv_macs(c_out, c_out, 3, h, w, groups=c_out)
    params = _conv_params(c_in, c_out, 1, False) + _conv_params(c_out, c_out, 3, False, groups=c_out)
    return macs, params


def _atb_cost(cfg: ModelConfig, c, heads, h, w) -> dict:
    pm, pp = _projection_cost(c, c, h, w)
    out_m, out_p = _conv_macs(c, c, 1, h, w), _conv_params(c, c, 1, True)
    attn_conv_m = 2 * (3 * pm + out_m)
    attn_conv_p = 2 * (3 * pp + out_p)
    hid = cfg.hidden(c)
    bm, bp = _projection_cost(c, hid, h, w)
    ffn_m = 2 * bm + _conv_macs(hid, c, 1, h, w)
    ffn_p = 2 * bp + _conv_params(hid, c, 1, True)
    return {
        "conv_macs": attn_conv_m + ffn_m,
        "attention_macs": attention_mac_count("axis", 1, c, h, w, heads),
        "params": attn_conv_p + ffn_p + 4 * c + (2 if cfg.learnable_alpha else 0),
    }


def _cafb_cost(c, n, h, w) -> dict:
    nc = n * c
    pm, pp = _projection_cost(nc, nc, h, w)
    return {
        "conv_macs": 3 * pm + _conv_macs(nc, nc, 1, h, w) + _conv_macs(nc, c, 1, h, w),
        "attention_macs": 2 * n * n * c * h * w,
        "params": 3 * pp + _conv_params(nc, nc, 1, True) + _conv_params(nc, c, 1, True),
    }


def cost_breakdown(config: ModelConfig, H: int, W: int) -> dict:
    """Per-component ``{"conv_macs", "attention_macs", "params"}`` for batch 1.

    Resolution is the padded size the network actually runs at.
    """
    cfg = config
    mult = 2 ** (cfg.levels - 1)
    H, W = H + (-H) % mult, W + (-W) % mult
    C, N, L = cfg.base_channels, cfg.cafb_layers, cfg.levels
    parts = {}

    def add(name, cost):
        acc = parts.setdefault(name, {"conv_macs": 0, "attention_macs": 0, "params": 0})
        for k, v in cost.items():
            acc[k] += v

    add("projection", {"conv_macs": _conv_macs(cfg.input_channels, C, 3, H, W),
                       "params": _conv_params(cfg.input_channels, C, 3, True)})
    for _ in range(cfg.head_tail_blocks):
        add("head_atbs", _atb_cost(cfg, C, cfg.encoder_heads[0], H, W))
    add("head_cafb", _cafb_cost(C, N, H, W))
    for i in range(L):
        c, h, w = cfg.encoder_channels(i), H // 2**i, W // 2**i
        if i > 0:
            add(f"encoder_{i}", {"conv_macs": _conv_macs(c // 2, c // 4, 3, 2 * h, 2 * w),
                                 "params": _conv_params(c // 2, c // 4, 3, False)})
        for _ in range(cfg.encoder_depths[i]):
            add(f"encoder_{i}", _atb_cost(cfg, c, cfg.encoder_heads[i], h, w))
    for i in reversed(range(L - 1)):
        c_src = cfg.encoder_channels(L - 1) if i == L - 2 else cfg.decoder_channels(i + 1)
        h, w = H // 2**i, W // 2**i
        c_dec = cfg.decoder_channels(i)
        c_cat = cfg.encoder_channels(i) + c_src // 2
        add(f"decoder_{i}", {"conv_macs": _conv_macs(c_src, 2 * c_src, 3, h // 2, w // 2)
                             + _conv_macs(c_cat, c_dec, 1, h, w),
                             "params": _conv_params(c_src, 2 * c_src, 3, False) + _conv_params(c_cat, c_dec, 1, True)})
        for _ in range(cfg.decoder_depths[i]):
            add(f"decoder_{i}", _atb_cost(cfg, c_dec, cfg.decoder_heads[i], h, w))
    C_tail = cfg.decoder_channels(0) if L > 1 else C
    tail_heads = cfg.decoder_heads[0] if L > 1 else cfg.encoder_heads[0]
    for _ in range(cfg.head_tail_blocks):
        add("tail_atbs", _atb_cost(cfg, C_tail, tail_heads, H, W))
    add("tail_cafb", _cafb_cost(C_tail, N, H, W))
    add("reconstruction", {"conv_macs": _conv_macs(C_tail, cfg.input_channels, 3, H, W),
                           "params": _conv_params(C_tail, cfg.input_channels, 3, True)})
    return parts


def model_mac_count(config: ModelConfig, H: int, W: int) -> int:
    """Total multiply-accumulates (all convolutions plus attention) for one image."""
    parts = cost_breakdown(config, H, W)
    return int(sum(p["conv_macs"] + p["attention_macs"] for p in parts.values()))


def analytic_param_count(config: ModelConfig) -> int:
    return int(sum(p["params"] for p in cost_breakdown(config, 8, 8).values()))
