"""Dataset model, PGM image I/O, preprocessing, and synthetic phantoms.

Images travel as binary PGM (P5, maxval 255). A dataset is a tab-separated
manifest of frames, each pairing a grayscale image with its lumen and media
ground-truth masks plus an artifact-category label. The phantom generator
writes desk-scale synthetic vessels (nested ellipses with speckle) so the
whole pipeline can be exercised without any licensed data.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DimensionError, FormatError
from .postprocess import EllipseParams, ellipse_to_mask

CATEGORIES = ("none", "bifurcation", "side_vessel", "shadow")
SPLITS = ("train", "test")


@dataclass
class GrayImage:
    width: int
    height: int
    pixels: np.ndarray  # float32 (height, width), values in [0, 1]

    @classmethod
    def from_array(cls, arr):
        a = np.asarray(arr, dtype=np.float32)
        if a.ndim != 2:
            raise DimensionError(f"image array must be 2-D, got {a.shape}")
        return cls(width=a.shape[1], height=a.shape[0], pixels=a)


@dataclass
class BinaryMask:
    width: int
    height: int
    bits: np.ndarray  # bool (height, width)

    @classmethod
    def from_array(cls, arr):
        a = np.asarray(arr).astype(bool)
        if a.ndim != 2:
            raise DimensionError(f"mask array must be 2-D, got {a.shape}")
        return cls(width=a.shape[1], height=a.shape[0], bits=a)


@dataclass
class FrameRecord:
    image_path: Path
    lumen_mask_path: Path
    media_mask_path: Path
    category: str = "none"
    split: str = "train"


class Frame(NamedTuple):
    """One frame loaded into memory: image plus its mask tuple."""

    image: np.ndarray          # float32 (h, w)
    masks: tuple               # (lumen, media) bool arrays, or any mask tuple


def read_pgm(path):
    """Read a binary PGM (P5, maxval 255) into a [0, 1] grayscale image."""
    blob = Path(path).read_bytes()
    if len(blob) == 0:
        raise FormatError(f"{path}: empty file")
    if blob[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {blob[:2]!r}, "
                          "expected P5)")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        tok = bytearray()
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            tok += blob[pos:pos + 1]
            pos += 1
        if not tok:
            raise FormatError(f"{path}: truncated PGM header")
        try:
            fields.append(int(tok))
        except ValueError:
            raise FormatError(f"{path}: bad header token {bytes(tok)!r}")
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval} unsupported (need 255)")
    pos += 1  # single whitespace separating header from payload
    payload = blob[pos:pos + width * height]
    if len(payload) != width * height:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, "
                          f"expected {width * height}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return GrayImage(width=width, height=height,
                     pixels=pixels.astype(np.float32) / 255.0)


def write_pgm(img, path):
    """Write a GrayImage (or [0, 1] array) as binary PGM, 8-bit quantized."""
    if not isinstance(img, GrayImage):
        img = GrayImage.from_array(img)
    data = np.rint(np.clip(img.pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.width} {img.height}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_mask(path):
    """Read a PGM as a binary mask: any nonzero byte becomes foreground."""
    img = read_pgm(path)
    return BinaryMask(width=img.width, height=img.height,
                      bits=img.pixels > 0)


def write_mask(mask, path):
    if not isinstance(mask, BinaryMask):
        mask = BinaryMask.from_array(mask)
    write_pgm(GrayImage(mask.width, mask.height,
                        mask.bits.astype(np.float32)), path)


def load_manifest(path):
    """Parse a manifest TSV into FrameRecords, resolving relative paths.

    Columns: image, lumen_mask, media_mask, category, split. Lines starting
    with '#' are comments. Raises FormatError naming the offending line.
    """
    path = Path(path)
    base = path.parent
    records = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(),
                                 start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 5:
            raise FormatError(f"{path} line {lineno}: expected 5 tab-separated "
                              f"columns, got {len(cols)}")
        img, lum, med, category, split = cols
        if category not in CATEGORIES:
            raise FormatError(f"{path} line {lineno}: unknown category "
                              f"{category!r} (choose from {CATEGORIES})")
        if split not in SPLITS:
            raise FormatError(f"{path} line {lineno}: unknown split "
                              f"{split!r} (choose from {SPLITS})")
        records.append(FrameRecord(
            image_path=(base / img).resolve(),
            lumen_mask_path=(base / lum).resolve(),
            media_mask_path=(base / med).resolve(),
            category=category, split=split))
    return records


def write_manifest(records, path):
    path = Path(path)
    base = path.parent.resolve()

    def rel(p):
        p = Path(p).resolve()
        try:
            return p.relative_to(base).as_posix()
        except ValueError:
            return str(p)

    lines = ["\t".join([rel(r.image_path), rel(r.lumen_mask_path),
                        rel(r.media_mask_path), r.category, r.split])
             for r in records]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_frame(record):
    """Load one record into memory as (image, (lumen, media))."""
    img = read_pgm(record.image_path)
    lum = read_mask(record.lumen_mask_path)
    med = read_mask(record.media_mask_path)
    if lum.bits.shape != img.pixels.shape or med.bits.shape != img.pixels.shape:
        raise DimensionError(
            f"{record.image_path}: mask dimensions do not match the image")
    return Frame(image=img.pixels, masks=(lum.bits, med.bits))


def downsize_half(img):
    """Halve resolution: each output pixel is the mean of a 2x2 block."""
    if img.width % 2 or img.height % 2:
        raise DimensionError(f"downsize_half needs even dims, got "
                             f"{img.width}x{img.height}")
    p = img.pixels
    out = p.reshape(img.height // 2, 2, img.width // 2, 2).mean(axis=(1, 3))
    return GrayImage(width=img.width // 2, height=img.height // 2,
                     pixels=out.astype(np.float32))


def downsize_half_mask(mask):
    """Halve a mask by 2x2 majority vote; 2-2 ties become foreground."""
    if mask.width % 2 or mask.height % 2:
        raise DimensionError(f"downsize_half needs even dims, got "
                             f"{mask.width}x{mask.height}")
    b = mask.bits.astype(np.uint8)
    votes = b.reshape(mask.height // 2, 2, mask.width // 2, 2).sum(axis=(1, 3))
    return BinaryMask(width=mask.width // 2, height=mask.height // 2,
                      bits=votes >= 2)


def _bounding_half_extents(a, b, theta):
    hw = np.hypot(a * np.cos(theta), b * np.sin(theta))
    hh = np.hypot(a * np.sin(theta), b * np.cos(theta))
    return hw, hh


def _draw_vessel(rng, size):
    """Draw nested (media, lumen) ellipses fully inside the image, with the
    lumen boundary strictly inside the media ellipse."""
    for _ in range(500):
        am = size * rng.uniform(0.22, 0.34)
        bm = am * rng.uniform(0.72, 1.0)
        th_m = rng.uniform(0.0, np.pi)
        cx = size / 2.0 + size * rng.uniform(-0.05, 0.05)
        cy = size / 2.0 + size * rng.uniform(-0.05, 0.05)
        hw, hh = _bounding_half_extents(am, bm, th_m)
        if cx - hw < 2.5 or cx + hw > size - 3.5 \
                or cy - hh < 2.5 or cy + hh > size - 3.5:
            continue
        al = am * rng.uniform(0.42, 0.62)
        bl = bm * rng.uniform(0.42, 0.62)
        if bl > al:
            al, bl = bl, al
        th_l = th_m + rng.uniform(-0.35, 0.35)
        lx = cx + bm * rng.uniform(-0.12, 0.12)
        ly = cy + bm * rng.uniform(-0.12, 0.12)
        media = EllipseParams(cx, cy, am, bm, th_m)
        lumen = EllipseParams(lx, ly, al, bl, th_l)
        # lumen boundary strictly inside the media ellipse, with margin
        t = np.linspace(0, 2 * np.pi, 64, endpoint=False)
        ct, st = np.cos(lumen.theta), np.sin(lumen.theta)
        px = lumen.cx + ct * al * np.cos(t) - st * bl * np.sin(t)
        py = lumen.cy + st * al * np.cos(t) + ct * bl * np.sin(t)
        cm, sm = np.cos(th_m), np.sin(th_m)
        xr = cm * (px - cx) + sm * (py - cy)
        yr = -sm * (px - cx) + cm * (py - cy)
        if np.max((xr / am) ** 2 + (yr / bm) ** 2) <= 0.92:
            return media, lumen
    raise RuntimeError("could not place nested ellipses (size too small?)")


def synth_phantoms(seed, count, size, out_dir):
    """Generate synthetic vessel phantoms and write them to ``out_dir``.

    Each phantom is a bright elliptical ring (media) around a darker interior
    (lumen) on a noisy background, degraded by multiplicative Gaussian
    speckle (std 0.15 of local intensity) and additive Gaussian noise. The
    ground-truth masks are exact rasterizations of the generating ellipses.
    Deterministic in ``seed``; returns the written FrameRecords and also
    writes ``manifest.tsv``.
    """
    if size % 8:
        raise ConfigError(f"phantom size {size} must be divisible by 8")
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    for i in range(count):
        media, lumen = _draw_vessel(rng, size)
        media_mask = ellipse_to_mask(media, size, size)
        lumen_mask = ellipse_to_mask(lumen, size, size)
        bg = rng.uniform(0.18, 0.28)
        ring = rng.uniform(0.65, 0.85)
        hole = rng.uniform(0.04, 0.12)
        img = np.full((size, size), bg, dtype=np.float64)
        img[media_mask] = ring
        img[lumen_mask] = hole
        img *= 1.0 + 0.15 * rng.standard_normal((size, size))
        img += rng.normal(0.0, 0.03, (size, size))
        img = np.clip(img, 0.0, 1.0).astype(np.float32)

        img_path = out_dir / f"img_{i:04d}.pgm"
        lum_path = out_dir / f"lum_{i:04d}.pgm"
        med_path = out_dir / f"med_{i:04d}.pgm"
        write_pgm(GrayImage(size, size, img), img_path)
        write_mask(BinaryMask.from_array(lumen_mask), lum_path)
        write_mask(BinaryMask.from_array(media_mask), med_path)
        records.append(FrameRecord(image_path=img_path.resolve(),
                                   lumen_mask_path=lum_path.resolve(),
                                   media_mask_path=med_path.resolve()))
    write_manifest(records, out_dir / "manifest.tsv")
    return records
