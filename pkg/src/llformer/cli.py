"""Command-line interface: ``synthesize``, ``train``, ``enhance``, ``eval``, ``bench``.

stdout carries CSV only; diagnostics go to stderr. Exit codes: 0 success,
1 usage or contract error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import degrade, imageio
from .attention import a_msa, attention_mac_count
from .errors import ConfigError, LLFormerError, NumericError
from .metrics import MetricReport
from .model import (
    DESK_CONFIG,
    REFERENCE_MACS_256,
    REFERENCE_PARAM_COUNT,
    ModelConfig,
    _Init,
    analytic_param_count,
    build,
    model_mac_count,
    predict,
)
from .tensor import Tensor, no_grad
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train

PRESETS = {"full": ModelConfig(), "desk": DESK_CONFIG}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _model_config(args) -> ModelConfig:
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        return ModelConfig.from_dict(data)
    return PRESETS[args.preset]


def _pngs(directory: Path) -> list:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() == ".png" and p.is_file())


def cmd_synthesize(args) -> int:
    out = Path(args.out)
    if args.input:
        src = Path(args.input)
        if not src.is_dir():
            raise LLFormerError(f"input directory {src} does not exist")
        files = _pngs(src)
        if args.count is not None:
            files = files[: args.count]
        if not files:
            _err("no input images")
            return 1
        items = [(p.stem, imageio.load_image(p)) for p in files]
    else:
        if not args.count:
            _err("no input images (give --input or --count for procedural scenes)")
            return 1
        items = [(f"scene_{i:04d}", degrade.synthetic_scene(degrade.image_seed(args.seed, 10**6 + i),
                                                            args.size, args.size))
                 for i in range(args.count)]
    (out / "low").mkdir(parents=True, exist_ok=True)
    (out / "normal").mkdir(parents=True, exist_ok=True)
    records = []
    with open(out / "params.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "x", "y", "z", "exposure", "highlights", "shadows", "vibrance", "whites"])
        for i, (name, normal) in enumerate(items):
            # Quantize first so the stored normal image is exactly what was degraded.
            normal = imageio.to_bytes(normal).transpose(2, 0, 1).astype(np.float64) / 255.0
            p = degrade.sample_params(degrade.image_seed(args.seed, i))
            low = degrade.apply_degradation(normal, p)
            low_path, normal_path = out / "low" / f"{name}.png", out / "normal" / f"{name}.png"
            imageio.save_image(low_path, low)
            imageio.save_image(normal_path, normal)
            records.append(imageio.ImageRecord(name, low_path, normal_path))
            w.writerow([name] + [repr(float(v)) for v in (p.x, p.y, p.z, p.exposure, p.highlights,
                                                           p.shadows, p.vibrance, p.whites)])
    imageio.write_manifest(out / "manifest.csv", records)
    print(f"wrote {len(records)} pairs to {out}", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    if not Path(args.manifest).is_file():
        _err(f"manifest {args.manifest} not found")
        return 1
    cfg = TrainConfig(
        patch_size=args.patch_size,
        batch_size=args.batch_size,
        lr_max=args.lr_max,
        lr_min=args.lr_min,
        total_steps=args.steps,
        smooth_l1_beta=args.beta,
        seed=args.seed,
        hflip=not args.no_flip,
        vflip=not args.no_flip,
    )
    model_cfg = _model_config(args)
    pairs = imageio.load_pairs(imageio.load_manifest(args.manifest))
    model = build(model_cfg, seed=args.seed)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["step", "loss", "lr"])

    def log(step, loss, lr):
        writer.writerow([step, repr(loss), repr(lr)])
        sys.stdout.flush()

    try:
        result = train(model, pairs, cfg, on_step=log)
    except NumericError as exc:
        _err(f"{exc} (step {exc.step})")
        return 2
    save_checkpoint(args.out, result.checkpoint)
    print(f"saved checkpoint to {args.out}", file=sys.stderr)
    return 0


def cmd_enhance(args) -> int:
    model = load_checkpoint(args.checkpoint).to_model()
    src = Path(args.input)
    out = Path(args.out)
    if src.is_dir():
        files = _pngs(src)
        if not files:
            _err(f"no PNG files in {src}")
            return 1
        out.mkdir(parents=True, exist_ok=True)
        targets = [(f, out / f.name) for f in files]
    elif src.is_file():
        if out.is_dir():
            out = out / src.name
        targets = [(src, out)]
    else:
        _err(f"input {src} not found")
        return 1
    for f, dst in targets:
        img = imageio.load_image(f)
        enhanced = predict(model, img[None])[0]
        imageio.save_image(dst, np.clip(enhanced, 0.0, 1.0))
        print(f"{f} -> {dst}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    records = imageio.load_manifest(args.manifest)
    enhanced_dir = Path(args.enhanced)
    missing = []
    for r in records:
        if r.normal_path is None:
            missing.append(f"id {r.id!r}: manifest has no normal-light reference")
        elif not (enhanced_dir / f"{r.id}.png").is_file():
            missing.append(f"id {r.id!r}: missing enhanced file {enhanced_dir / (r.id + '.png')}")
    if missing:
        for m in missing:
            _err(m)
        return 1
    report = MetricReport()
    for r in records:
        report.add(r.id, imageio.load_image(enhanced_dir / f"{r.id}.png"), imageio.load_image(r.normal_path))
    text = report.to_csv()
    if args.out:
        Path(args.out).write_text(text)
        sys.stdout.write(text.splitlines()[0] + "\n" + text.splitlines()[-1] + "\n")
    else:
        sys.stdout.write(text)
    means = report.means()
    print(f"mean PSNR {means['psnr_db']:.4f} dB, SSIM {means['ssim']:.4f}, MAE {means['mae']:.4f}",
          file=sys.stderr)
    return 0


def _time_a_msa(c: int, heads: int, size: int, seed: int, repeats: int) -> float:
    init = _Init(seed, np.float32)
    p_h, p_w = init.axis_attention(c, heads, False), init.axis_attention(c, heads, False)
    x = Tensor(np.random.Generator(np.random.PCG64(seed)).standard_normal((1, c, size, size)))
    best = float("inf")
    with no_grad():
        for _ in range(repeats):
            t0 = time.perf_counter()
            a_msa(x, p_h, p_w)
            best = min(best, time.perf_counter() - t0)
    return best


def cmd_bench(args) -> int:
    cfg = _model_config(args)
    try:
        sizes = [int(s) for s in args.resolutions.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --resolutions {args.resolutions!r}") from exc
    if not sizes or min(sizes) < 1:
        raise ConfigError("--resolutions needs positive integers")
    C, heads = cfg.base_channels, cfg.encoder_heads[0]
    params = analytic_param_count(cfg)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["H", "W", "full_msa_macs", "a_msa_macs", "ratio", "a_msa_seconds",
                "param_count", "reference_param_count", "param_rel_dev", "model_macs", "reference_model_macs_256"])
    for s in sizes:
        full = attention_mac_count("full", 1, C, s, s, heads)
        axis = attention_mac_count("axis", 1, C, s, s, heads)
        secs = _time_a_msa(C, heads, s, args.seed, args.repeats)
        w.writerow([s, s, full, axis, repr(axis / full), f"{secs:.6f}", params, REFERENCE_PARAM_COUNT,
                    f"{(params - REFERENCE_PARAM_COUNT) / REFERENCE_PARAM_COUNT:.6f}", model_mac_count(cfg, s, s),
                    REFERENCE_MACS_256])
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="RNG seed (u64)")
    common.add_argument("--config", help="JSON ModelConfig file (overrides --preset)")
    common.add_argument("--preset", choices=sorted(PRESETS), default="desk")

    parser = _Parser(prog="llformer", description="Low-light enhancement with axis-based attention.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", parents=[common], help="degrade normal-light PNGs")
    p.add_argument("--input", help="directory of normal-light PNGs")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, help="max images to use, or number of procedural scenes")
    p.add_argument("--size", type=int, default=64, help="procedural scene size")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("train", parents=[common], help="train on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=12)
    p.add_argument("--patch-size", type=int, default=128)
    p.add_argument("--lr-max", type=float, default=1e-4)
    p.add_argument("--lr-min", type=float, default=1e-6)
    p.add_argument("--beta", type=float, default=1.0, help="smooth L1 knee")
    p.add_argument("--no-flip", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", parents=[common], help="enhance PNG file(s)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="PNG file or directory")
    p.add_argument("--out", required=True, help="output file or directory")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", parents=[common], help="score enhanced images against references")
    p.add_argument("--manifest", required=True)
    p.add_argument("--enhanced", required=True, help="directory with <id>.png files")
    p.add_argument("--out", help="metrics CSV path (default: stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="attention cost table")
    p.add_argument("--resolutions", default="32,64")
    p.add_argument("--repeats", type=int, default=3)
    p.set_defaults(func=cmd_bench, preset="full")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        _err(str(exc))
        return 1
    except NumericError as exc:
        _err(str(exc))
        return 2
    except (LLFormerError, OSError) as exc:
        _err(str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
