"""Patch-grid query strategies for annotation campaigns.

An image is tiled into a grid of windows; each window gets an uncertainty
score (mean over its pixels) and a rank.  A campaign then walks the grid in
an order decided by the strategy: uniformly at random, by descending score,
or by asking an oracle to look at the whole image instead of a window.  The
searched-pixel counter tracks how much area the annotator had to inspect
per click, which is what makes the whole-image oracle expensive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .acquisition import METHODS, UncertaintyMap
from .rasters import TileGrid, Window

STRATEGY_KINDS = ("random", "active", "whole_image_oracle")

#: Synthetic window index used for whole-image queries (not part of the grid).
WHOLE_IMAGE = -1


class CampaignExhausted(RuntimeError):
    """Raised when every patch in the grid has already been annotated."""


@dataclass
class PatchQuery:
    """One grid window with its aggregated uncertainty and campaign status."""

    window: Window
    score: float
    rank: int
    index: int
    status: str = "pending"

    def __post_init__(self) -> None:
        if self.status not in ("pending", "annotated"):
            raise ValueError(f"unknown status {self.status!r}")


@dataclass(frozen=True)
class StrategyConfig:
    kind: str = "active"
    acquisition_method: str | None = None
    seed: int = 0
    # one click per queried patch by default; raise for multi-click experiments
    clicks_per_patch: int = 1
    # refresh the active ordering after every patch even without retraining
    # (the reference protocol recomputes only when the model changed)
    refresh_ac_only: bool = False

    def __post_init__(self) -> None:
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.kind == "active":
            if self.acquisition_method is None:
                raise ValueError("active strategy requires an acquisition_method")
            if self.acquisition_method not in METHODS:
                raise ValueError(f"unknown acquisition method {self.acquisition_method!r}")
        elif self.acquisition_method is not None:
            raise ValueError(f"acquisition_method is only meaningful for kind='active', got kind={self.kind!r}")
        if self.clicks_per_patch < 1:
            raise ValueError("clicks_per_patch must be >= 1")


def score_patches(uncertainty: UncertaintyMap, grid: TileGrid) -> list[PatchQuery]:
    """Score every grid window by its mean pixel uncertainty and rank them.

    Returns the queries in row-major window order; ``rank`` runs from 1
    (highest score) to ``len(grid)``, ties broken by row-major index.
    """
    if uncertainty.scores.shape != grid.image_shape:
        raise ValueError(
            f"uncertainty shape {uncertainty.scores.shape} does not match grid image {grid.image_shape}"
        )
    queries = [
        PatchQuery(window=win, score=float(uncertainty.scores[win.slices].mean()), rank=0, index=i)
        for i, win in enumerate(grid.windows)
    ]
    by_score = sorted(queries, key=lambda q: (-q.score, q.index))
    for rank, query in enumerate(by_score, start=1):
        query.rank = rank
    return queries


@dataclass
class QueryCampaign:
    """Single-writer campaign state: which patches are pending, in what order
    they should be visited, and how many pixels were searched so far."""

    grid: TileGrid
    strategy: StrategyConfig
    rng: np.random.Generator = field(init=False)
    patches: list[PatchQuery] = field(init=False)
    searched_pixels: int = field(init=False, default=0)
    query_count: int = field(init=False, default=0)

    def __post_init__(self) -> None:
        self.rng = np.random.default_rng(self.strategy.seed)
        # unscored placeholder ranking (row-major); random/oracle never need more
        self.patches = [
            PatchQuery(window=win, score=0.0, rank=i + 1, index=i)
            for i, win in enumerate(self.grid.windows)
        ]
        self._scored = False

    @property
    def pending(self) -> list[PatchQuery]:
        return [q for q in self.patches if q.status == "pending"]

    def rescore(self, uncertainty: UncertaintyMap) -> None:
        """Recompute scores and ranks from a fresh uncertainty map, keeping
        each window's annotated/pending status."""
        fresh = score_patches(uncertainty, self.grid)
        for old, new in zip(self.patches, fresh):
            new.status = old.status
        self.patches = fresh
        self._scored = True

    def next_query(self) -> PatchQuery:
        """Pick the next region to annotate; charges the searched-pixel ledger.

        ``whole_image_oracle`` always returns a full-image window (the oracle
        re-inspects the entire image for every click and never exhausts);
        the patch strategies raise :class:`CampaignExhausted` once every
        window has been annotated.
        """
        if self.strategy.kind == "whole_image_oracle":
            h, w = self.grid.image_shape
            query = PatchQuery(
                window=Window(0, 0, h, w), score=0.0, rank=0, index=WHOLE_IMAGE
            )
            self._charge(query)
            return query

        pending = self.pending
        if not pending:
            raise CampaignExhausted(f"all {len(self.patches)} patches are annotated")
        if self.strategy.kind == "random":
            query = pending[int(self.rng.integers(len(pending)))]
        else:  # active
            if not self._scored:
                raise RuntimeError("active strategy needs rescore() before next_query()")
            query = min(pending, key=lambda q: q.rank)
        self._charge(query)
        return query

    def mark_annotated(self, query: PatchQuery) -> None:
        if query.index == WHOLE_IMAGE:
            return  # the oracle has no per-window bookkeeping
        patch = self.patches[query.index]
        if patch.status == "annotated":
            raise ValueError(f"patch {query.index} was already annotated")
        patch.status = "annotated"

    def _charge(self, query: PatchQuery) -> None:
        self.searched_pixels += query.window.area * self.strategy.clicks_per_patch
        self.query_count += 1
