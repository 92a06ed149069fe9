"""Annotation campaigns: the query -> click -> refine -> measure loop.

A campaign covers one image.  The image is tiled into windows; predictions
are maintained per window and stitched (mean over overlaps) into the global
map that drives the agent, the strategies, and the IoU ledger.  Forward-only
refinement re-runs only the queried window with its clicks encoded as extra
input channels; retraining additionally nudges the shared weights on the
queried window, then re-predicts every window because the model changed.

Multi-image evaluations run one campaign per image; the sequential runner in
``studies`` chains campaigns over an image list under a weight policy.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .acquisition import ConfidNetHead, UncertaintyMap, compute_uncertainty, entropy
from .agent import AgentConfig, OracleAgent
from .annotations import AnnotationTensor, ClickAnnotation, EncodingConfig, encode
from .disca import DiscaConfig, refine
from .metrics import iou
from .model import PredictionMap, SegmentationModel
from .queries import WHOLE_IMAGE, CampaignExhausted, QueryCampaign, StrategyConfig
from .rasters import LabelMask, RasterImage, TileGrid, stitch_mean, tile

MODES = ("ac_only", "disca")

DEFAULT_TILE = 64
DEFAULT_OVERLAP = 16


@dataclass
class StepRecord:
    """One annotation step (step 0 is the initial, unannotated state)."""

    step: int
    budget: int  # cumulative annotated patches == step index
    strategy: str
    window: tuple[int, int, int, int] | None
    clicks: list[dict]
    clicks_total: int
    iou_before: float
    iou_after: float
    per_class_iou: dict[int, float]
    patch_iou: float | None = None  # IoU inside the queried window only
    wall: dict[str, float] = field(default_factory=dict)

    def log_record(self) -> dict:
        """The append-only campaign-log shape (one JSON object per line)."""
        return {
            "step": self.step,
            "budget": self.budget,
            "strategy": self.strategy,
            "window": self.window,
            "click": self.clicks[0] if self.clicks else None,
            "clicks": self.clicks,
            "clicks_total": self.clicks_total,
            "iou_before": self.iou_before,
            "iou_after": self.iou_after,
            "per_class_iou": {str(k): v for k, v in self.per_class_iou.items()},
            "patch_iou": self.patch_iou,
            "wall_time": self.wall.get("total", 0.0),
            "wall": self.wall,
        }


@dataclass
class CampaignResult:
    records: list[StepRecord]
    config: dict
    seed: int
    searched_pixels: int = 0

    @property
    def initial_iou(self) -> float:
        return self.records[0].iou_after

    @property
    def final_iou(self) -> float:
        return self.records[-1].iou_after

    @property
    def budgets(self) -> list[int]:
        return [r.budget for r in self.records]

    @property
    def ious(self) -> list[float]:
        return [r.iou_after for r in self.records]

    def auc(self) -> float:
        """Trapezoid area under the IoU-vs-budget curve."""
        total = 0.0
        for a, b in zip(self.records, self.records[1:]):
            total += 0.5 * (a.iou_after + b.iou_after) * (b.budget - a.budget)
        return total

    def fingerprint(self) -> str:
        """Digest of everything that must reproduce bit-for-bit from
        (config, seed, checkpoint); wall-clock fields are excluded."""
        payload = {
            "config": self.config,
            "seed": self.seed,
            "searched_pixels": self.searched_pixels,
            "records": [
                {k: v for k, v in r.log_record().items() if k not in ("wall", "wall_time")}
                for r in self.records
            ],
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def save(self, path: str | Path) -> None:
        """Line-delimited log: a config header, then one record per step."""
        with open(path, "w") as fh:
            header = {"kind": "campaign", "config": self.config, "seed": self.seed,
                      "searched_pixels": self.searched_pixels}
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for record in self.records:
                fh.write(json.dumps(record.log_record(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "CampaignResult":
        with open(path) as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
        header, rows = lines[0], lines[1:]
        if header.get("kind") != "campaign":
            raise ValueError(f"{path} is not a campaign log")
        records = [
            StepRecord(
                step=row["step"], budget=row["budget"], strategy=row["strategy"],
                window=tuple(row["window"]) if row["window"] else None,
                clicks=row["clicks"], clicks_total=row["clicks_total"],
                iou_before=row["iou_before"], iou_after=row["iou_after"],
                per_class_iou={int(k): v for k, v in row["per_class_iou"].items()},
                patch_iou=row.get("patch_iou"),
                wall=row["wall"],
            )
            for row in rows
        ]
        return cls(records=records, config=header["config"], seed=header["seed"],
                   searched_pixels=header["searched_pixels"])


def _click_payload(click: ClickAnnotation) -> dict:
    return {"row": click.row, "col": click.col, "class_id": click.class_id}


class _CampaignState:
    """Per-window clicks and predictions plus their stitched global view."""

    def __init__(self, model: SegmentationModel, image: RasterImage, labels: LabelMask,
                 grid: TileGrid, encoding: EncodingConfig, ac_enabled: bool):
        self.model = model
        self.image = image
        self.labels = labels
        self.grid = grid
        self.encoding = encoding
        self.ac_enabled = ac_enabled
        self.clicks: list[list[ClickAnnotation]] = [[] for _ in grid.windows]
        self.crops = [RasterImage(image.pixels[w.slices]) for w in grid.windows]
        self.label_crops = [LabelMask(labels.labels[w.slices], labels.class_count)
                            for w in grid.windows]
        # session-start anchors: frozen drift targets and encoding context
        self.initial = [model.predict(crop) for crop in self.crops]
        self.predictions = list(self.initial)

    def encoding_context(self, idx: int):
        kind = self.encoding.kind
        if kind == "guided_filter":
            return self.crops[idx]
        if kind == "connected_prediction":
            return self.initial[idx]
        if kind == "connected_groundtruth":
            return self.label_crops[idx]
        return None

    def annotation(self, idx: int) -> AnnotationTensor | None:
        if not self.clicks[idx] or not self.ac_enabled:
            return None
        window = self.grid.windows[idx]
        return encode(self.clicks[idx], (window.height, window.width),
                      self.labels.class_count, self.encoding,
                      context=self.encoding_context(idx))

    def add_click(self, idx: int, click: ClickAnnotation) -> ClickAnnotation:
        """Store a global-coordinate click as window-local; returns the local one."""
        window = self.grid.windows[idx]
        local = ClickAnnotation(row=click.row - window.row, col=click.col - window.col,
                                class_id=click.class_id, origin=click.origin)
        self.clicks[idx].append(local)
        return local

    def repredict(self, idx: int) -> None:
        self.predictions[idx] = self.model.predict(self.crops[idx], self.annotation(idx))

    def repredict_all(self) -> None:
        for idx in range(len(self.grid.windows)):
            self.repredict(idx)

    def global_prediction(self) -> PredictionMap:
        stitched = stitch_mean(self.grid.image_shape, self.grid.windows,
                               [p.probabilities for p in self.predictions])
        return PredictionMap(probabilities=stitched.astype(np.float32))

    def window_index_for(self, row: int, col: int) -> int:
        for idx, window in enumerate(self.grid.windows):
            if window.contains(row, col):
                return idx
        raise ValueError(f"pixel ({row}, {col}) outside every window")


def _score_map(state: _CampaignState, strategy: StrategyConfig,
               head: ConfidNetHead | None, seed: int) -> UncertaintyMap:
    method = strategy.acquisition_method
    if method == "entropy":
        # the stitched map is the current belief; score it directly
        return entropy(state.global_prediction())
    clicks_global = [
        ClickAnnotation(row=c.row + w.row, col=c.col + w.col, class_id=c.class_id,
                        origin=c.origin)
        for w, patch in zip(state.grid.windows, state.clicks) for c in patch
    ]
    annotations = None
    if clicks_global and state.ac_enabled:
        context = None
        if state.encoding.kind == "guided_filter":
            context = state.image
        elif state.encoding.kind == "connected_prediction":
            context = state.global_prediction()
        elif state.encoding.kind == "connected_groundtruth":
            context = state.labels
        annotations = encode(clicks_global, state.image.shape, state.labels.class_count,
                             state.encoding, context=context)
    return compute_uncertainty(method, state.model, state.image, annotations,
                               head=head, seed=seed)


def run_campaign(
    model: SegmentationModel,
    image: RasterImage,
    labels: LabelMask,
    strategy: StrategyConfig,
    mode: str,
    agent_config: AgentConfig,
    budget: int,
    disca_config: DiscaConfig | None = None,
    tile_size: int = DEFAULT_TILE,
    overlap: int = DEFAULT_OVERLAP,
    seed: int = 0,
    confidnet_head: ConfidNetHead | None = None,
    refresh_p0: bool = False,
) -> CampaignResult:
    """Run ``budget`` annotation steps on one image and measure after each.

    In ``disca`` mode the passed model's weights are updated in place (the
    sequential runner depends on that); clone first if the caller needs the
    checkpoint untouched.  Budget counts queried patches, the x-axis of the
    evaluation curves; clicks per patch is a strategy knob.

    ``refresh_p0`` re-anchors each retraining run to the patch's latest
    prediction instead of the frozen session-start one, letting successive
    corrections compound; the default keeps the conservative frozen anchor.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; pick from {MODES}")
    if budget < 0:
        raise ValueError("budget must be >= 0")
    disca_config = disca_config or DiscaConfig()
    grid = tile(image.shape, tile_size, overlap)
    state = _CampaignState(model, image, labels, grid, disca_config.encoding,
                           disca_config.ac_enabled)
    queries = QueryCampaign(grid, strategy)
    agent = OracleAgent(agent_config)
    rng = np.random.default_rng(seed)

    config_snapshot = {
        "mode": mode,
        "strategy": asdict(strategy),
        "agent": asdict(agent_config),
        "disca": asdict(disca_config),
        "tile_size": tile_size,
        "overlap": overlap,
        "budget": budget,
        "refresh_p0": refresh_p0,
        "image_shape": list(image.shape),
        "class_count": labels.class_count,
        "checkpoint_hash": model.param_hash(),
    }

    current = state.global_prediction()
    mean0, per_class0 = iou(current, labels)
    records = [StepRecord(step=0, budget=0, strategy=strategy.kind, window=None,
                          clicks=[], clicks_total=0, iou_before=mean0, iou_after=mean0,
                          per_class_iou=per_class0,
                          wall={"query": 0.0, "agent": 0.0, "refine": 0.0,
                                "predict": 0.0, "total": 0.0})]
    clicks_total = 0

    if strategy.kind == "active":
        queries.rescore(_score_map(state, strategy, confidnet_head, seed))

    for step in range(1, budget + 1):
        t_step = time.perf_counter()
        try:
            t0 = time.perf_counter()
            query = queries.next_query()
            wall_query = time.perf_counter() - t0
        except CampaignExhausted as exc:
            raise CampaignExhausted(f"step {step}: {exc}") from exc

        iou_before = records[-1].iou_after
        step_clicks: list[dict] = []
        touched: set[int] = set()

        t0 = time.perf_counter()
        region = None if query.index == WHOLE_IMAGE else query.window
        for _ in range(strategy.clicks_per_patch):
            click = agent.sample_click(region, current, labels)
            if click is None:
                break
            idx = (state.window_index_for(click.row, click.col)
                   if query.index == WHOLE_IMAGE else query.index)
            state.add_click(idx, click)
            touched.add(idx)
            step_clicks.append(_click_payload(click))
            clicks_total += 1
            if strategy.clicks_per_patch > 1:
                # let the next click see the forward-only effect of this one
                state.repredict(idx)
                current = state.global_prediction()
        wall_agent = time.perf_counter() - t0

        wall_refine = 0.0
        t0 = time.perf_counter()
        if mode == "disca" and touched:
            for idx in sorted(touched):
                t_ref = time.perf_counter()
                anchor = None if refresh_p0 else state.initial[idx]
                refine(model, state.crops[idx], state.clicks[idx], disca_config, rng,
                       initial=anchor,
                       context=state.encoding_context(idx))
                wall_refine += time.perf_counter() - t_ref
            state.repredict_all()
        else:
            for idx in sorted(touched):
                state.repredict(idx)
        current = state.global_prediction()
        wall_predict = time.perf_counter() - t0 - wall_refine

        queries.mark_annotated(query)
        if strategy.kind == "active" and (mode == "disca" or strategy.refresh_ac_only):
            queries.rescore(_score_map(state, strategy, confidnet_head, seed))

        mean_iou, per_class = iou(current, labels)
        patch_labels = LabelMask(labels.labels[query.window.slices], labels.class_count)
        patch_iou, _ = iou(current.class_map[query.window.slices], patch_labels)
        records.append(StepRecord(
            step=step, budget=step, strategy=strategy.kind,
            window=(query.window.row, query.window.col,
                    query.window.height, query.window.width),
            clicks=step_clicks, clicks_total=clicks_total,
            iou_before=iou_before, iou_after=mean_iou, per_class_iou=per_class,
            patch_iou=patch_iou,
            wall={"query": wall_query, "agent": wall_agent, "refine": wall_refine,
                  "predict": wall_predict, "total": time.perf_counter() - t_step},
        ))

    return CampaignResult(records=records, config=config_snapshot, seed=seed,
                          searched_pixels=queries.searched_pixels)
