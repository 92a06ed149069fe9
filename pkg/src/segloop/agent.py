"""Simulated annotator: turns a prediction/ground-truth pair into clicks.

The agent plays the human in campaign simulations.  Error-based strategies
compare the prediction against the labels and click inside mistakes;
uncertainty-based strategies only look at an uncertainty map (optionally
intersected with the mistakes) and label whatever pixel they end up
inspecting.  An empty candidate set yields an explicit no-click (``None``)
rather than an exception, so campaigns can skip a step and move on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .acquisition import UncertaintyMap
from .annotations import ClickAnnotation
from .metrics import error_mask
from .model import PredictionMap
from .rasters import LabelMask, Window

STRATEGIES = (
    "max_error_center",
    "random_in_error",
    "uncertainty_in_error",
    "uncertainty_only",
)

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class AgentConfig:
    strategy: str = "max_error_center"
    quantile: float = 0.9
    seed: int = 0

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown agent strategy {self.strategy!r}")
        if not 0.0 < self.quantile < 1.0:
            raise ValueError(f"quantile must lie in (0, 1), got {self.quantile}")


@dataclass(frozen=True)
class ErrorComponent:
    """One 8-connected blob of misclassified pixels."""

    mask: np.ndarray
    size: int
    interior: tuple[int, int]


def _pole(mask: np.ndarray) -> tuple[int, int]:
    """The component pixel farthest from its boundary (pole of inaccessibility).

    Centroids of non-convex components can land outside the component;
    the distance-transform argmax cannot.
    """
    inside = ndimage.distance_transform_edt(mask)
    row, col = np.unravel_index(int(inside.argmax()), mask.shape)
    return int(row), int(col)


def error_components(prediction: PredictionMap, labels: LabelMask) -> list[ErrorComponent]:
    """8-connected components of the misclassification mask, largest first."""
    errors = error_mask(prediction.class_map, labels)
    labelled, count = ndimage.label(errors, structure=_EIGHT)
    components = []
    for idx in range(1, count + 1):
        mask = labelled == idx
        components.append(ErrorComponent(mask=mask, size=int(mask.sum()), interior=_pole(mask)))
    components.sort(key=lambda c: -c.size)
    return components


class OracleAgent:
    """Draws one click at a time according to ``AgentConfig.strategy``.

    ``last_candidate_count`` records how many pixels were eligible for the
    most recent draw; campaign logs use it as the search-effort figure.
    """

    def __init__(self, config: AgentConfig):
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.last_candidate_count = 0

    def sample_click(
        self,
        region: Window | None,
        prediction: PredictionMap,
        labels: LabelMask,
        uncertainty: UncertaintyMap | None = None,
    ) -> ClickAnnotation | None:
        if prediction.shape != labels.shape:
            raise ValueError(f"shape mismatch: {prediction.shape} vs {labels.shape}")
        if region is None:
            h, w = labels.shape
            region = Window(0, 0, h, w)
        strategy = self.config.strategy

        if strategy in ("uncertainty_in_error", "uncertainty_only"):
            if uncertainty is None:
                raise ValueError(f"{strategy} requires an uncertainty map")
            if uncertainty.scores.shape != labels.shape:
                raise ValueError(
                    f"uncertainty shape {uncertainty.scores.shape} does not match {labels.shape}"
                )

        rows, cols = region.slices
        errors = error_mask(prediction.class_map, labels)
        in_region = np.zeros_like(errors)
        in_region[rows, cols] = True

        if strategy == "max_error_center":
            clipped = errors & in_region
            self.last_candidate_count = int(clipped.sum())
            if self.last_candidate_count == 0:
                return None
            labelled, count = ndimage.label(clipped, structure=_EIGHT)
            sizes = ndimage.sum_labels(clipped, labelled, index=range(1, count + 1))
            target = labelled == (1 + int(np.argmax(sizes)))
            row, col = _pole(target)
            return self._click(row, col, labels)

        if strategy == "random_in_error":
            candidates = errors & in_region
        elif strategy == "uncertainty_in_error":
            candidates = errors & in_region & self._top_set(uncertainty, in_region)
        else:  # uncertainty_only: no error constraint at all
            candidates = in_region & self._top_set(uncertainty, in_region) & labels.valid
        return self._uniform(candidates, labels)

    def _top_set(self, uncertainty: UncertaintyMap, in_region: np.ndarray) -> np.ndarray:
        """Pixels whose score exceeds the region's ``quantile`` threshold."""
        scores = uncertainty.scores
        threshold = float(np.quantile(scores[in_region], self.config.quantile))
        return scores > threshold

    def _uniform(self, candidates: np.ndarray, labels: LabelMask) -> ClickAnnotation | None:
        flat = np.flatnonzero(candidates)
        self.last_candidate_count = flat.size
        if flat.size == 0:
            return None
        pick = int(flat[int(self.rng.integers(flat.size))])
        row, col = np.unravel_index(pick, candidates.shape)
        return self._click(int(row), int(col), labels)

    @staticmethod
    def _click(row: int, col: int, labels: LabelMask) -> ClickAnnotation:
        return ClickAnnotation(
            row=row, col=col, class_id=int(labels.labels[row, col]), origin="simulated"
        )
