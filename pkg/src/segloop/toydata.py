"""Synthetic raster generator for desk-scale experiments.

Images are blob-on-background scenes quantized to the 8-bit grid (so file
round trips are exact). A configurable fraction of blobs is camouflaged:
their color offset from the background is on the order of the pixel noise,
which leaves the pretrained model with genuine, spatially-coherent mistakes
to correct interactively. ``shift`` produces a recolored variant of the same
scenes to emulate a change of acquisition domain.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict, replace
from pathlib import Path

import numpy as np
import yaml

from .rasters import LabelMask, RasterImage

# class 0 is always background; foreground palettes are mid-range so a
# domain-shift offset never clips away
_PALETTES = {
    2: np.array([[0.40, 0.46, 0.38], [0.62, 0.54, 0.50]]),
    6: np.array(
        [
            [0.44, 0.44, 0.46],  # impervious / background
            [0.62, 0.50, 0.46],  # buildings
            [0.48, 0.62, 0.40],  # low vegetation
            [0.30, 0.44, 0.30],  # trees
            [0.38, 0.44, 0.62],  # cars
            [0.60, 0.42, 0.58],  # clutter
        ]
    ),
}


@dataclass(frozen=True)
class ToyConfig:
    """Schema of the toy dataset config file (key/value, YAML or JSON).

    size: side of each square image, pixels
    class_count: 2 or 6
    count: images per call
    density: target foreground fraction; the generator lands within +-10%
    blob_min/blob_max: side range of rectangular/elliptic blobs, pixels
    noise: per-pixel Gaussian noise std
    texture: amplitude of the low-frequency illumination field
    ambiguity: fraction of blobs drawn camouflaged (near-background color)
    camouflage_contrast: max color offset of camouflaged blobs
    decoys: blob-colored background patches per image (labeled background)
    shift: minimum per-channel mean intensity change of the shifted variant
    sparse: skip the >=1% per-class floor
    """

    size: int = 96
    class_count: int = 2
    count: int = 8
    density: float = 0.20
    blob_min: int = 10
    blob_max: int = 26
    noise: float = 0.035
    texture: float = 0.05
    ambiguity: float = 0.3
    camouflage_contrast: float = 0.035
    decoys: int = 1
    shift: float = 0.0
    sparse: bool = False

    def shifted(self, shift: float = 0.12) -> "ToyConfig":
        return replace(self, shift=shift)


def load_toy_config(path: str | Path) -> ToyConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    unknown = set(raw) - set(ToyConfig.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown toy config keys: {sorted(unknown)}")
    return ToyConfig(**raw)


def save_toy_config(config: ToyConfig, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(asdict(config), fh, sort_keys=False)


def _smooth_field(rng: np.random.Generator, size: int, cells: int = 6) -> np.ndarray:
    """Low-frequency field in [-1, 1] from bilinear upsampling of coarse noise."""
    coarse = rng.uniform(-1.0, 1.0, size=(cells, cells))
    xs = np.linspace(0, cells - 1, size)
    ix = np.clip(xs.astype(int), 0, cells - 2)
    fx = xs - ix
    rows = coarse[ix][:, ix]  # top-left corners
    r2 = coarse[ix + 1][:, ix]
    c2 = coarse[ix][:, ix + 1]
    rc = coarse[ix + 1][:, ix + 1]
    fy = fx[None, :]
    fxx = fx[:, None]
    return (
        rows * (1 - fxx) * (1 - fy)
        + r2 * fxx * (1 - fy)
        + c2 * (1 - fxx) * fy
        + rc * fxx * fy
    )


def _blob_mask(rng: np.random.Generator, size: int, blob_min: int, blob_max: int,
               max_area: float) -> tuple[np.ndarray, tuple]:
    h = int(rng.integers(blob_min, blob_max + 1))
    w = int(rng.integers(blob_min, blob_max + 1))
    while h * w > max_area and (h > blob_min or w > blob_min):
        if h >= w and h > blob_min:
            h -= 1
        elif w > blob_min:
            w -= 1
    r = int(rng.integers(0, max(1, size - h)))
    c = int(rng.integers(0, max(1, size - w)))
    mask = np.zeros((size, size), dtype=bool)
    if rng.random() < 0.4:  # ellipse
        yy, xx = np.ogrid[:h, :w]
        ell = ((yy - (h - 1) / 2) / (h / 2)) ** 2 + ((xx - (w - 1) / 2) / (w / 2)) ** 2 <= 1.0
        mask[r : r + h, c : c + w] = ell
    else:
        mask[r : r + h, c : c + w] = True
    return mask, (r, c, h, w)


def _paint(pixels: np.ndarray, mask: np.ndarray, color: np.ndarray) -> None:
    pixels[mask] = color


def _anchor_at(mask: np.ndarray, row: int, col: int, size: int) -> np.ndarray:
    """Shift a blob mask so its bounding-box corner sits at (row, col)."""
    rows, cols = np.nonzero(mask)
    dr, dc = row - rows.min(), col - cols.min()
    out = np.zeros_like(mask)
    rr = np.clip(rows + dr, 0, size - 1)
    cc = np.clip(cols + dc, 0, size - 1)
    out[rr, cc] = True
    return out


def _shift_offsets(palette: np.ndarray, shift: float) -> np.ndarray:
    """Per-channel additive offset with headroom-aware direction and a margin
    so the measured mean shift stays >= ``shift`` despite clipping."""
    mean = palette.mean(axis=0)
    direction = np.where(mean < 0.5, 1.0, -1.0)
    return direction * shift * 1.3


def _generate_one(rng: np.random.Generator, cfg: ToyConfig) -> tuple[RasterImage, LabelMask]:
    size, n = cfg.size, cfg.class_count
    palette = _PALETTES[n]
    bg = palette[0].copy()
    fg_classes = list(range(1, n))

    if cfg.shift > 0:
        offs = _shift_offsets(palette, cfg.shift)
        palette = palette + offs[None, :]
        # recolor foreground toward a rotated palette: a genuine appearance
        # change, not just brightness
        rot = np.roll(palette[1:], 1, axis=1)
        blend = min(1.0, cfg.shift * 3.0)
        palette = np.concatenate([palette[:1], (1 - blend) * palette[1:] + blend * rot])
        bg = palette[0].copy()

    labels = np.zeros((size, size), dtype=np.int64)
    pixels = np.empty((size, size, 3), dtype=np.float64)
    pixels[:, :] = bg

    target = cfg.density * size * size
    camo = np.zeros((size, size), dtype=bool)
    guard = 0
    while labels.astype(bool).sum() < target and guard < 500:
        guard += 1
        remaining = target - labels.astype(bool).sum()
        mask, _ = _blob_mask(rng, size, cfg.blob_min, cfg.blob_max, max_area=remaining * 1.2 + 40)
        cls = fg_classes[int(rng.integers(0, len(fg_classes)))]
        labels[mask] = cls
        if rng.random() < cfg.ambiguity:
            offset = rng.uniform(-cfg.camouflage_contrast, cfg.camouflage_contrast, size=3)
            _paint(pixels, mask, bg + offset)
            camo |= mask
        else:
            _paint(pixels, mask, palette[cls])
            camo &= ~mask

    if not cfg.sparse:
        # top up under-represented classes by relabeling blobs of the most
        # abundant one, keeping total foreground (hence density) unchanged
        floor = 0.01 * size * size
        for cls in fg_classes:
            tries = 0
            while (labels == cls).sum() < floor and tries < 20:
                tries += 1
                counts = [(labels == c).sum() for c in fg_classes]
                rich = fg_classes[int(np.argmax(counts))]
                rows, cols = np.nonzero(labels == rich)
                if rows.size == 0:
                    break
                pick = int(rng.integers(0, rows.size))
                mask, _ = _blob_mask(rng, size, cfg.blob_min, cfg.blob_max, max_area=floor * 1.5)
                mask = _anchor_at(mask, rows[pick], cols[pick], size) & (labels == rich)
                labels[mask] = cls
                _paint(pixels, mask, palette[cls])
                camo &= ~mask

    for _ in range(cfg.decoys):
        mask, _ = _blob_mask(rng, size, cfg.blob_min, cfg.blob_max, max_area=cfg.blob_max**2)
        mask &= labels == 0  # decoys never eat into the foreground
        cls = fg_classes[int(rng.integers(0, len(fg_classes)))]
        _paint(pixels, mask, palette[cls])
        camo &= ~mask

    illum = 1.0 + cfg.texture * _smooth_field(rng, size)
    pixels *= illum[:, :, None]
    pixels += rng.normal(0.0, cfg.noise, size=pixels.shape)
    pixels = np.clip(pixels, 0.0, 1.0)
    pixels = np.round(pixels * 255.0) / 255.0  # 8-bit grid: file round trips are exact

    tag = f"toy:n={n},size={size},shift={cfg.shift}"
    return RasterImage(pixels=pixels.astype(np.float32), resolution_tag=tag), LabelMask(
        labels=labels, class_count=n
    )


def generate_toy(seed: int, config: ToyConfig) -> list[tuple[RasterImage, LabelMask]]:
    """Deterministic toy scenes for a given seed.

    The same seed with ``config.shifted()`` yields the same scene geometry
    under the altered palette, emulating a source->target domain pair.
    """
    if config.class_count not in _PALETTES:
        raise ValueError(f"class_count must be one of {sorted(_PALETTES)}, got {config.class_count}")
    if not 1 <= config.blob_min <= config.blob_max <= config.size:
        raise ValueError("need 1 <= blob_min <= blob_max <= size")
    children = np.random.SeedSequence(seed).spawn(config.count)
    return [_generate_one(np.random.default_rng(child), config) for child in children]
