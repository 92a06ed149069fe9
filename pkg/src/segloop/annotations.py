"""Click annotations and their dense per-class encodings.

A click is a labeled point; ``encode`` turns a click set into an H x W x N
tensor that is concatenated to the image channels. Five encodings are
available, from context-free stamps (binary disks, truncated distance
transform) to context encodings that borrow shape from the image (guided
filter) or from a map (connected component of the prediction / ground truth
around the click).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy import ndimage

from .rasters import LabelMask, RasterImage

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)

KINDS = (
    "binary_disk",
    "distance_transform",
    "guided_filter",
    "connected_prediction",
    "connected_groundtruth",
)

_DEFAULT_RADIUS = {"binary_disk": 1.5, "distance_transform": 10.0, "guided_filter": 10.0}


class EncodingError(ValueError):
    """Click out of bounds, bad class, or missing/extraneous context."""


@dataclass(frozen=True)
class ClickAnnotation:
    row: int
    col: int
    class_id: int
    origin: str = "human"  # human | simulated

    def __post_init__(self):
        if self.origin not in ("human", "simulated"):
            raise EncodingError(f"origin must be human|simulated, got {self.origin!r}")


@dataclass(frozen=True)
class EncodingConfig:
    """kind plus its footprint radius; guided-filter window/epsilon apply to
    the guided_filter kind only."""

    kind: str = "distance_transform"
    radius: float | None = None
    guided_radius: int = 4
    guided_epsilon: float = 1e-3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise EncodingError(f"unknown encoding kind {self.kind!r}")
        r = self.radius if self.radius is not None else _DEFAULT_RADIUS.get(self.kind, 10.0)
        if r <= 0:
            raise EncodingError("radius must be > 0")
        object.__setattr__(self, "radius", float(r))
        if self.guided_radius < 1 or self.guided_epsilon <= 0:
            raise EncodingError("need guided_radius >= 1 and guided_epsilon > 0")


@dataclass(frozen=True)
class AnnotationTensor:
    channels: np.ndarray  # H x W x N float32 in [0, 1]

    @property
    def class_count(self) -> int:
        return self.channels.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.channels.shape[0], self.channels.shape[1]


def _check_clicks(clicks, shape, class_count):
    h, w = shape
    for c in clicks:
        if not (0 <= c.row < h and 0 <= c.col < w):
            raise EncodingError(f"click ({c.row}, {c.col}) outside {h}x{w} image")
        if not 0 <= c.class_id < class_count:
            raise EncodingError(f"click class {c.class_id} >= class_count {class_count}")


def _distance_channels(clicks, shape, class_count, radius) -> np.ndarray:
    """Channel k = max(0, 1 - d/r) to the nearest class-k click (Euclidean)."""
    h, w = shape
    out = np.zeros((h, w, class_count), dtype=np.float32)
    for k in range(class_count):
        seeds = np.ones((h, w), dtype=bool)
        any_click = False
        for c in clicks:
            if c.class_id == k:
                seeds[c.row, c.col] = False
                any_click = True
        if not any_click:
            continue
        d = ndimage.distance_transform_edt(seeds)
        out[:, :, k] = np.clip(1.0 - d / radius, 0.0, 1.0)
    return out


def _disk_channels(clicks, shape, class_count, radius) -> np.ndarray:
    h, w = shape
    out = np.zeros((h, w, class_count), dtype=np.float32)
    r_int = int(np.ceil(radius))
    yy, xx = np.mgrid[-r_int : r_int + 1, -r_int : r_int + 1]
    stamp = (yy**2 + xx**2) <= radius**2
    for c in clicks:
        r0, r1 = max(0, c.row - r_int), min(h, c.row + r_int + 1)
        c0, c1 = max(0, c.col - r_int), min(w, c.col + r_int + 1)
        sub = stamp[
            r0 - (c.row - r_int) : stamp.shape[0] - ((c.row + r_int + 1) - r1),
            c0 - (c.col - r_int) : stamp.shape[1] - ((c.col + r_int + 1) - c1),
        ]
        region = out[r0:r1, c0:c1, c.class_id]
        np.maximum(region, sub.astype(np.float32), out=region)
    return out


def _component_channels(clicks, value_map, class_count) -> np.ndarray:
    """Channel k = 1 on the same-value connected component (8-connectivity)
    of ``value_map`` that contains each class-k click."""
    h, w = value_map.shape
    out = np.zeros((h, w, class_count), dtype=np.float32)
    for c in clicks:
        same = value_map == value_map[c.row, c.col]
        comp_labels, _ = ndimage.label(same, structure=EIGHT_CONNECTED)
        comp = comp_labels == comp_labels[c.row, c.col]
        np.maximum(out[:, :, c.class_id], comp.astype(np.float32), out=out[:, :, c.class_id])
    return out


def encode(
    clicks,
    shape: tuple[int, int],
    class_count: int,
    config: EncodingConfig,
    context=None,
) -> AnnotationTensor:
    """Encode clicks into their per-class channels.

    ``context`` must be a RasterImage for guided_filter, a prediction map
    (object with ``.probabilities``) for connected_prediction, a LabelMask
    for connected_groundtruth, and None otherwise.
    """
    clicks = list(clicks)
    _check_clicks(clicks, shape, class_count)
    kind = config.kind

    if kind in ("binary_disk", "distance_transform") and context is not None:
        raise EncodingError(f"{kind} takes no context")
    if not clicks:
        return AnnotationTensor(np.zeros((shape[0], shape[1], class_count), dtype=np.float32))

    if kind == "binary_disk":
        out = _disk_channels(clicks, shape, class_count, config.radius)
    elif kind == "distance_transform":
        out = _distance_channels(clicks, shape, class_count, config.radius)
    elif kind == "guided_filter":
        if not isinstance(context, RasterImage):
            raise EncodingError("guided_filter needs the image as context")
        if context.shape != tuple(shape):
            raise EncodingError("context shape mismatch")
        base = _distance_channels(clicks, shape, class_count, config.radius)
        out = np.empty_like(base)
        for k in range(class_count):
            if not base[:, :, k].any():
                out[:, :, k] = 0.0
                continue
            filtered = guided_filter(base[:, :, k], context, config.guided_radius, config.guided_epsilon)
            out[:, :, k] = np.clip(filtered, 0.0, 1.0)
    elif kind == "connected_prediction":
        if context is None or not hasattr(context, "probabilities"):
            raise EncodingError("connected_prediction needs a prediction map as context")
        amap = np.argmax(context.probabilities, axis=2)
        if amap.shape != tuple(shape):
            raise EncodingError("context shape mismatch")
        out = _component_channels(clicks, amap, class_count)
    else:  # connected_groundtruth
        if not isinstance(context, LabelMask):
            raise EncodingError("connected_groundtruth needs a label mask as context")
        if context.shape != tuple(shape):
            raise EncodingError("context shape mismatch")
        out = _component_channels(clicks, context.labels, class_count)
    return AnnotationTensor(out)


def _box_mean(arr: np.ndarray, radius: int) -> np.ndarray:
    """Mean over the (2r+1)^2 window clipped at the borders (exact counts)."""
    h, w = arr.shape
    acc = np.zeros((h + 1, w + 1), dtype=np.float64)
    np.cumsum(np.cumsum(arr, axis=0), axis=1, out=acc[1:, 1:])
    r = radius
    r0 = np.clip(np.arange(h) - r, 0, h)
    r1 = np.clip(np.arange(h) + r + 1, 0, h)
    c0 = np.clip(np.arange(w) - r, 0, w)
    c1 = np.clip(np.arange(w) + r + 1, 0, w)
    total = acc[r1][:, c1] - acc[r0][:, c1] - acc[r1][:, c0] + acc[r0][:, c0]
    counts = (r1 - r0)[:, None] * (c1 - c0)[None, :]
    return total / counts


def guided_filter(
    values: np.ndarray,
    guide: RasterImage | np.ndarray,
    window_radius: int,
    epsilon: float,
) -> np.ndarray:
    """Edge-preserving smoothing of ``values`` steered by ``guide``.

    Within each window the output is an affine function of the guide
    (a * I + b fit by least squares, epsilon-regularized), then a and b are
    box-averaged. Multi-channel guides are reduced to their channel mean.
    """
    if window_radius < 1 or epsilon <= 0:
        raise ValueError("need window_radius >= 1 and epsilon > 0")
    if isinstance(guide, RasterImage):
        g = guide.pixels.mean(axis=2) if guide.channels > 1 else guide.pixels[:, :, 0]
    else:
        g = np.asarray(guide)
        if g.ndim == 3:
            g = g.mean(axis=2)
    g = g.astype(np.float64)
    p = np.asarray(values, dtype=np.float64)
    if g.shape != p.shape:
        raise ValueError(f"guide shape {g.shape} != input shape {p.shape}")

    mean_g = _box_mean(g, window_radius)
    mean_p = _box_mean(p, window_radius)
    cov_gp = _box_mean(g * p, window_radius) - mean_g * mean_p
    var_g = _box_mean(g * g, window_radius) - mean_g * mean_g
    a = cov_gp / (var_g + epsilon)
    b = mean_p - a * mean_g
    return _box_mean(a, window_radius) * g + _box_mean(b, window_radius)


def clicks_to_records(clicks) -> list[dict]:
    return [asdict(c) for c in clicks]


def clicks_from_records(records) -> list[ClickAnnotation]:
    return [
        ClickAnnotation(row=int(r["row"]), col=int(r["col"]), class_id=int(r["class_id"]),
                        origin=r.get("origin", "human"))
        for r in records
    ]


def save_clicks(clicks, path: str | Path) -> None:
    Path(path).write_text(json.dumps(clicks_to_records(clicks), indent=2))


def load_clicks(path: str | Path) -> list[ClickAnnotation]:
    return clicks_from_records(json.loads(Path(path).read_text()))
