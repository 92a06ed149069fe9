"""Segmentation quality and error-counting metrics."""

from __future__ import annotations

import numpy as np

from .rasters import LabelMask


def misclassification_count(class_map: np.ndarray, labels: LabelMask) -> int:
    """Number of pixels whose predicted class differs from the label;
    IGNORE pixels do not count."""
    if class_map.shape != labels.shape:
        raise ValueError(f"shape mismatch: {class_map.shape} vs {labels.shape}")
    return int(((class_map != labels.labels) & labels.valid).sum())


def error_mask(class_map: np.ndarray, labels: LabelMask) -> np.ndarray:
    """Boolean H x W map of counted misclassifications."""
    if class_map.shape != labels.shape:
        raise ValueError(f"shape mismatch: {class_map.shape} vs {labels.shape}")
    return (class_map != labels.labels) & labels.valid


def iou(prediction, labels: LabelMask) -> tuple[float, dict[int, float]]:
    """Mean and per-class intersection-over-union.

    ``prediction`` may be a PredictionMap or a bare H x W class map.
    Classes absent from both the prediction and the labels are excluded
    from the mean rather than counted as perfect; IGNORE pixels are
    excluded from every class.
    """
    class_map = prediction.class_map if hasattr(prediction, "class_map") else prediction
    if class_map.shape != labels.shape:
        raise ValueError(f"shape mismatch: {class_map.shape} vs {labels.shape}")
    valid = labels.valid
    per_class: dict[int, float] = {}
    for cls in range(labels.class_count):
        pred = (class_map == cls) & valid
        true = (labels.labels == cls) & valid
        union = (pred | true).sum()
        if union == 0:
            continue
        per_class[cls] = float((pred & true).sum() / union)
    if not per_class:
        raise ValueError("no class present in prediction or labels")
    return float(np.mean(list(per_class.values()))), per_class


def accuracy(class_map: np.ndarray, labels: LabelMask) -> float:
    valid = labels.valid
    total = int(valid.sum())
    if total == 0:
        raise ValueError("no valid pixels")
    return float(((class_map == labels.labels) & valid).sum() / total)
