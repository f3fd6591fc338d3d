"""PNG decode/encode and dataset manifests."""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ImageFormatError, ManifestError

_PNG_SIG = b"\x89PNG\r\n\x1a\n"
_COLOR_TYPES = {0: "grayscale", 2: "RGB", 3: "palette", 4: "grayscale+alpha", 6: "RGBA"}


@dataclass(frozen=True)
class ImageRecord:
    id: str
    low_path: Path
    normal_path: Path | None = None


def _png_header(path: Path) -> tuple:
    with open(path, "rb") as fh:
        head = fh.read(33)
    if len(head) < 33 or head[:8] != _PNG_SIG or head[12:16] != b"IHDR":
        raise ImageFormatError(f"{path}: not a PNG file")
    width, height, depth, color = struct.unpack(">IIBB", head[16:26])
    return width, height, depth, color


def load_image(path) -> np.ndarray:
    """Decode an 8-bit RGB or grayscale PNG to a float32 ``(3, H, W)`` array in [0, 1]."""
    path = Path(path)
    _, _, depth, color = _png_header(path)
    if depth != 8:
        raise ImageFormatError(f"{path}: unsupported bit depth {depth} (only 8-bit PNG is accepted)")
    if color not in (0, 2):
        raise ImageFormatError(
            f"{path}: unsupported color type {_COLOR_TYPES.get(color, color)} (need RGB or grayscale)"
        )
    try:
        with Image.open(path) as im:
            arr = np.asarray(im)
    except (OSError, SyntaxError, ValueError) as exc:
        raise ImageFormatError(f"{path}: cannot decode PNG data ({exc})") from exc
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    return (arr.transpose(2, 0, 1).astype(np.float32) / 255.0).astype(np.float32)


def to_bytes(img) -> np.ndarray:
    """Quantize ``(3, H, W)`` values to ``(H, W, 3)`` uint8: clamp, then round half up."""
    arr = np.asarray(getattr(img, "data", img), dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ImageFormatError(f"expected a (3, H, W) image, got shape {arr.shape}")
    arr = np.nan_to_num(arr, nan=0.0)
    q = np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5)
    return q.astype(np.uint8).transpose(1, 2, 0)


def save_image(path, img) -> None:
    """Write an 8-bit RGB PNG. Values outside [0, 1] are clamped."""
    Image.fromarray(np.ascontiguousarray(to_bytes(img)), mode="RGB").save(Path(path), format="PNG")


def load_manifest(path) -> list:
    """Read a ``id,low,normal`` CSV; relative paths resolve against its directory.

    The ``normal`` column may be absent or blank for inference-only manifests.
    All problems are collected and raised together as a :class:`ManifestError`.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError([f"cannot read manifest {path}: {exc}"]) from exc
    reader = csv.DictReader(text.splitlines())
    cols = reader.fieldnames or []
    missing = [c for c in ("id", "low") if c not in cols]
    if missing:
        raise ManifestError([f"manifest {path} is missing column(s): {', '.join(missing)}"])
    base = path.parent
    records, problems, seen = [], [], set()
    for lineno, row in enumerate(reader, start=2):
        rid = (row.get("id") or "").strip()
        if not rid:
            problems.append(f"line {lineno}: empty id")
            continue
        if rid in seen:
            problems.append(f"duplicate id {rid!r} (line {lineno})")
            continue
        seen.add(rid)
        low = base / (row.get("low") or "").strip()
        normal_s = (row.get("normal") or "").strip()
        normal = base / normal_s if normal_s else None
        for p in (low, normal):
            if p is not None and not p.is_file():
                problems.append(f"id {rid!r}: missing file {p}")
        records.append(ImageRecord(rid, low, normal))
    if problems:
        raise ManifestError(problems)
    return records


def write_manifest(path, records) -> None:
    path = Path(path)
    base = path.parent.resolve()

    def rel(p):
        return "" if p is None else Path(os.path.relpath(Path(p).resolve(), base)).as_posix()

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "low", "normal"])
        for r in records:
            w.writerow([r.id, rel(r.low_path), rel(r.normal_path)])


def load_pairs(records) -> list:
    """Decode every record into ``(low, normal)`` arrays, checking sizes agree."""
    pairs, problems = [], []
    for r in records:
        if r.normal_path is None:
            problems.append(f"id {r.id!r} has no normal-light image")
            continue
        low, normal = load_image(r.low_path), load_image(r.normal_path)
        if low.shape != normal.shape:
            problems.append(f"id {r.id!r}: low {low.shape[1:]} and normal {normal.shape[1:]} sizes differ")
            continue
        pairs.append((low, normal))
    if problems:
        raise ManifestError(problems)
    return pairs
