"""Raster containers, file I/O and the overlapping tile grid.

Images are H x W x C float32 arrays normalized to [0, 1]; label masks are
H x W integer arrays with values in [0, N-1] plus an IGNORE sentinel equal
to N (kept one past the last class so class indices stay dense).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image


class RasterError(ValueError):
    """Unreadable file or a label value outside the declared class range."""


@dataclass(frozen=True)
class RasterImage:
    """Multi-channel image with intensities in [0, 1].

    ``resolution_tag`` is free-form provenance (file name, toy seed, ...)
    and is passed through opaquely.
    """

    pixels: np.ndarray  # H x W x C float32
    resolution_tag: str = ""

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[0] < 1 or px.shape[1] < 1 or px.shape[2] < 1:
            raise RasterError(f"image must be H x W x C with positive dims, got {px.shape}")
        if not np.all(np.isfinite(px)):
            raise RasterError("image contains non-finite values")
        if px.min() < 0.0 or px.max() > 1.0:
            raise RasterError("image intensities must lie in [0, 1]; normalize on load")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]


@dataclass(frozen=True)
class LabelMask:
    """Per-pixel class indices in [0, N-1], or ``class_count`` for IGNORE."""

    labels: np.ndarray  # H x W int64
    class_count: int

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise RasterError(f"label mask must be H x W, got shape {lab.shape}")
        if self.class_count < 1:
            raise RasterError("class_count must be >= 1")
        lab = lab.astype(np.int64, copy=False)
        bad = lab[(lab < 0) | (lab > self.class_count)]
        if bad.size:
            raise RasterError(
                f"label value {int(bad.flat[0])} outside [0, {self.class_count - 1}] "
                f"(IGNORE sentinel is {self.class_count})"
            )
        object.__setattr__(self, "labels", lab)

    @property
    def ignore_value(self) -> int:
        return self.class_count

    @property
    def valid(self) -> np.ndarray:
        """Boolean mask of non-IGNORE pixels."""
        return self.labels != self.class_count

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


@dataclass(frozen=True)
class Window:
    """A rectangular pixel window (row/col of top-left corner, inclusive)."""

    row: int
    col: int
    height: int
    width: int

    @property
    def slices(self) -> tuple[slice, slice]:
        return slice(self.row, self.row + self.height), slice(self.col, self.col + self.width)

    @property
    def area(self) -> int:
        return self.height * self.width

    def contains(self, row: int, col: int) -> bool:
        return self.row <= row < self.row + self.height and self.col <= col < self.col + self.width


@dataclass(frozen=True)
class TileGrid:
    """Overlapping tiling of an image: interior stride is tile_size - overlap,
    last row/col windows are clamped to the image border."""

    tile_size: int
    overlap: int
    image_shape: tuple[int, int]
    windows: tuple[Window, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.windows)


def _axis_offsets(extent: int, tile: int, stride: int) -> list[int]:
    if tile >= extent:
        return [0]
    offsets = list(range(0, extent - tile, stride))
    offsets.append(extent - tile)  # clamp final window to the border
    return offsets


def tile(image_shape: tuple[int, int] | RasterImage, tile_size: int, overlap: int) -> TileGrid:
    """Cover an image with overlapping windows in row-major order.

    Every pixel is covered by at least one window; adjacent interior windows
    overlap by exactly ``overlap``. A tile size exceeding the image yields a
    single full-image window.
    """
    if isinstance(image_shape, RasterImage):
        image_shape = image_shape.shape
    h, w = image_shape
    if overlap < 0 or tile_size <= overlap:
        raise RasterError(f"need tile_size > overlap >= 0, got tile_size={tile_size} overlap={overlap}")
    stride = tile_size - overlap
    th = min(tile_size, h)
    tw = min(tile_size, w)
    windows = tuple(
        Window(r, c, th, tw)
        for r in _axis_offsets(h, th, stride)
        for c in _axis_offsets(w, tw, stride)
    )
    return TileGrid(tile_size=tile_size, overlap=overlap, image_shape=(h, w), windows=windows)


def stitch_mean(image_shape: tuple[int, int], windows, patches) -> np.ndarray:
    """Average per-class probabilities (or any per-pixel values) of
    overlapping windows; seams disappear before any argmax."""
    h, w = image_shape
    first = np.asarray(patches[0])
    acc = np.zeros((h, w) + first.shape[2:], dtype=np.float64)
    cnt = np.zeros((h, w), dtype=np.float64)
    for win, patch in zip(windows, patches):
        rs, cs = win.slices
        acc[rs, cs] += patch
        cnt[rs, cs] += 1.0
    if np.any(cnt == 0):
        raise RasterError("windows do not cover the image")
    if acc.ndim == 3:
        acc /= cnt[:, :, None]
    else:
        acc /= cnt
    return acc.astype(first.dtype, copy=False)


def _normalize_intensities(arr: np.ndarray) -> np.ndarray:
    if arr.dtype == np.uint8:
        return arr.astype(np.float32) / 255.0
    if arr.dtype == np.uint16:
        return arr.astype(np.float32) / 65535.0
    arr = arr.astype(np.float32)
    lo, hi = float(arr.min()), float(arr.max())
    if lo >= 0.0 and hi <= 1.0:
        return arr
    if hi == lo:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)


def load_raster(
    path: str | Path,
    class_count: int | None = None,
    labels_path: str | Path | None = None,
    allow_ignore: bool = False,
) -> tuple[RasterImage, LabelMask | None]:
    """Load an image (PNG/TIFF via Pillow, or an .npz bundle) with optional labels.

    Labels loaded from files are validated strictly against ``class_count``:
    any value >= N is rejected unless ``allow_ignore`` admits the sentinel N.
    .npz bundles store ``pixels`` (float [0,1]) and optionally ``labels`` and
    ``class_count``, as written by :func:`save_raster`.
    """
    path = Path(path)
    if not path.exists():
        raise RasterError(f"no such raster file: {path}")
    if path.suffix == ".npz":
        with np.load(path) as bundle:
            pixels = bundle["pixels"]
            image = RasterImage(pixels=pixels, resolution_tag=str(bundle.get("resolution_tag", path.name)))
            labels = None
            if "labels" in bundle:
                n = int(bundle["class_count"]) if "class_count" in bundle else (class_count or 0)
                labels = _validated_labels(bundle["labels"], n, allow_ignore)
            return image, labels
    try:
        with Image.open(path) as im:
            arr = np.array(im)
    except Exception as exc:  # Pillow raises a zoo of types for bad files
        raise RasterError(f"unreadable raster {path}: {exc}") from exc
    image = RasterImage(pixels=_normalize_intensities(arr), resolution_tag=path.name)
    labels = None
    if labels_path is not None:
        if class_count is None:
            raise RasterError("class_count required to load a label raster")
        try:
            with Image.open(labels_path) as im:
                lab = np.array(im)
        except Exception as exc:
            raise RasterError(f"unreadable label raster {labels_path}: {exc}") from exc
        if lab.ndim == 3:
            lab = lab[:, :, 0]
        labels = _validated_labels(lab, class_count, allow_ignore)
    return image, labels


def _validated_labels(lab: np.ndarray, class_count: int, allow_ignore: bool) -> LabelMask:
    lab = np.asarray(lab).astype(np.int64)
    limit = class_count if allow_ignore else class_count - 1
    bad = lab[(lab < 0) | (lab > limit)]
    if bad.size:
        raise RasterError(f"label value {int(bad.flat[0])} invalid for class_count={class_count}")
    return LabelMask(labels=lab, class_count=class_count)


def save_raster(
    image: RasterImage,
    path: str | Path,
    labels: LabelMask | None = None,
) -> None:
    """Write ``image`` (and labels, if given) to ``path``.

    ``.npz`` keeps float pixels bit-exactly and bundles labels in the same
    file. ``.png``/``.tif`` quantize to 8-bit, so only rasters that came from
    an 8-bit grid round-trip exactly; labels then go to ``<stem>_labels.png``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".npz":
        payload = {"pixels": image.pixels, "resolution_tag": np.asarray(image.resolution_tag)}
        if labels is not None:
            payload["labels"] = labels.labels
            payload["class_count"] = np.asarray(labels.class_count)
        np.savez_compressed(path, **payload)
        return
    arr = np.round(image.pixels * 255.0).astype(np.uint8)
    if arr.shape[2] == 1:
        Image.fromarray(arr[:, :, 0], mode="L").save(path)
    elif arr.shape[2] in (3, 4):
        Image.fromarray(arr).save(path)
    else:
        raise RasterError(f"{path.suffix} supports 1/3/4 channels, got {arr.shape[2]}; use .npz")
    if labels is not None:
        lab_path = path.with_name(path.stem + "_labels.png")
        Image.fromarray(labels.labels.astype(np.uint8), mode="L").save(lab_path)


def resample(image: RasterImage, target_shape: tuple[int, int]) -> RasterImage:
    """Bilinear resampling utility (used to bring a dataset to another
    dataset's resolution). Downsampling applies Pillow's default reduction
    filter, no extra anti-aliasing policy."""
    th, tw = target_shape
    out = np.empty((th, tw, image.channels), dtype=np.float32)
    for c in range(image.channels):
        band = Image.fromarray(image.pixels[:, :, c], mode="F")
        out[:, :, c] = np.array(band.resize((tw, th), resample=Image.BILINEAR))
    out = np.clip(out, 0.0, 1.0)
    return RasterImage(pixels=out, resolution_tag=image.resolution_tag + f"|resampled:{th}x{tw}")
