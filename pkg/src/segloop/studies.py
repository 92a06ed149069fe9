"""Evaluation protocols built on campaigns.

Each entry point wires clones of a pretrained checkpoint into campaigns and
aggregates the results: ordering comparisons (which patch order learns
fastest), the component ablation (which mechanism contributes what), the
error-size study (when does retraining beat forward-only refinement), and
sequential learning across an image series.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .agent import AgentConfig, OracleAgent, error_components
from .annotations import encode
from .campaign import CampaignResult, run_campaign
from .disca import DiscaConfig, SessionWeights, capture_weights, refine, restore_weights
from .metrics import accuracy, iou, misclassification_count
from .model import SegmentationModel
from .queries import StrategyConfig
from .rasters import LabelMask, RasterImage, Window
from .acquisition import ConfidNetHead

#: Component toggles for the ablation: forward-only channels, plain
#: retraining, regularized retraining, and the combined loop at two
#: penalty weights.
ABLATION_ARMS: dict[str, dict] = {
    "ac": {"mode": "ac_only", "ac_enabled": True, "regularization_enabled": True, "lam": 1.0},
    "wtp": {"mode": "disca", "ac_enabled": False, "regularization_enabled": False, "lam": 0.0},
    "wtp_reg": {"mode": "disca", "ac_enabled": False, "regularization_enabled": True, "lam": 1.0},
    "ac_wtp": {"mode": "disca", "ac_enabled": True, "regularization_enabled": False, "lam": 0.0},
    "disca_lam1": {"mode": "disca", "ac_enabled": True, "regularization_enabled": True, "lam": 1.0},
    "disca_lam10": {"mode": "disca", "ac_enabled": True, "regularization_enabled": True, "lam": 10.0},
}


def paired_strategy_runs(
    master: SegmentationModel,
    scenes: list,
    strategies: dict[str, StrategyConfig],
    mode: str,
    seeds: range | list[int],
    budget: int,
    disca_config: DiscaConfig,
    agent_strategy: str = "max_error_center",
    tile_size: int = 64,
    overlap: int = 16,
    confidnet_head: ConfidNetHead | None = None,
) -> dict[str, list[CampaignResult]]:
    """Run every strategy arm under shared (seed, scene) pairs.

    Seed ``s`` uses scene ``s % len(scenes)`` for every arm, so per-seed
    results are paired and a rank test on the differences is valid.
    """
    out: dict[str, list[CampaignResult]] = {name: [] for name in strategies}
    for s in seeds:
        image, labels = scenes[s % len(scenes)]
        for name, template in strategies.items():
            strategy = dataclasses.replace(template, seed=s)
            result = run_campaign(
                master.clone(), image, labels,
                strategy=strategy, mode=mode,
                agent_config=AgentConfig(strategy=agent_strategy, seed=s),
                budget=budget, disca_config=disca_config,
                tile_size=tile_size, overlap=overlap, seed=s,
                confidnet_head=confidnet_head,
            )
            out[name].append(result)
    return out


@dataclass
class AblationTable:
    """Per-arm campaign results under shared seeds, plus summary rows."""

    results: dict[str, list[CampaignResult]]

    def summary(self) -> list[dict]:
        rows = []
        for arm, runs in self.results.items():
            initial = [r.initial_iou for r in runs]
            final = [r.final_iou for r in runs]
            rows.append({
                "arm": arm,
                "runs": len(runs),
                "mean_initial_iou": float(np.mean(initial)),
                "mean_final_iou": float(np.mean(final)),
                "mean_gain": float(np.mean(final) - np.mean(initial)),
                "worst_gain": float(min(f - i for f, i in zip(final, initial))),
            })
        return rows


def run_ablation(
    master: SegmentationModel,
    scenes: list,
    arms: list[str] | None = None,
    seeds: range | list[int] = range(10),
    budget: int = 4,
    base_config: DiscaConfig | None = None,
    agent_strategy: str = "max_error_center",
    tile_size: int = 64,
    overlap: int = 16,
    strategy_kind: str = "random",
    clicks_per_patch: int = 1,
) -> AblationTable:
    """One campaign per (arm, seed) with seeds shared across arms."""
    arms = list(ABLATION_ARMS) if arms is None else arms
    unknown = [a for a in arms if a not in ABLATION_ARMS]
    if unknown:
        raise ValueError(f"unknown ablation arms {unknown}; pick from {list(ABLATION_ARMS)}")
    base = base_config or DiscaConfig()
    results: dict[str, list[CampaignResult]] = {arm: [] for arm in arms}
    for arm in arms:
        spec = ABLATION_ARMS[arm]
        config = dataclasses.replace(
            base,
            ac_enabled=spec["ac_enabled"],
            regularization_enabled=spec["regularization_enabled"],
            lam=spec["lam"],
        )
        for s in seeds:
            image, labels = scenes[s % len(scenes)]
            result = run_campaign(
                master.clone(), image, labels,
                strategy=StrategyConfig(kind=strategy_kind, seed=s,
                                        clicks_per_patch=clicks_per_patch),
                mode=spec["mode"],
                agent_config=AgentConfig(strategy=agent_strategy, seed=s),
                budget=budget, disca_config=config,
                tile_size=tile_size, overlap=overlap, seed=s,
            )
            results[arm].append(result)
    return AblationTable(results=results)


@dataclass
class CropRecord:
    """One crop of the error-size study: how much one click fixes."""

    scene_index: int
    window: tuple[int, int, int, int]
    error_size: int
    error_total: int
    initial_accuracy: float
    initial_iou: float
    ac_gain: float
    disca_gain: float

    @property
    def best_method(self) -> str:
        if self.disca_gain > self.ac_gain:
            return "disca"
        if self.ac_gain > self.disca_gain:
            return "ac"
        return "tie"


def size_vs_method_study(
    master: SegmentationModel,
    scenes: list,
    crop_count: int,
    crop_size: int = 64,
    seed: int = 0,
    disca_config: DiscaConfig | None = None,
) -> list[CropRecord]:
    """Sample random crops, correct each with a single centered click, and
    record the forward-only (AC) gain vs the retraining (DISCA) gain.

    Crops whose initial prediction is already perfect are skipped; sampling
    continues until ``crop_count`` informative crops are collected (or the
    candidate pool is clearly exhausted).  Weights are restored between
    crops, so every record is an independent single-click trial.
    """
    disca_config = disca_config or DiscaConfig()
    rng = np.random.default_rng(seed)
    worker = master.clone()
    checkpoint = capture_weights(worker)
    records: list[CropRecord] = []
    attempts = 0
    max_attempts = crop_count * 20
    while len(records) < crop_count and attempts < max_attempts:
        attempts += 1
        scene_index = int(rng.integers(len(scenes)))
        image, labels = scenes[scene_index]
        h, w = image.shape
        if h < crop_size or w < crop_size:
            raise ValueError(f"scene {scene_index} smaller than crop_size {crop_size}")
        row = int(rng.integers(h - crop_size + 1))
        col = int(rng.integers(w - crop_size + 1))
        window = Window(row, col, crop_size, crop_size)
        crop = RasterImage(image.pixels[window.slices])
        crop_labels = LabelMask(labels.labels[window.slices], labels.class_count)

        initial = worker.predict(crop)
        if misclassification_count(initial.class_map, crop_labels) == 0:
            continue  # nothing to correct
        components = error_components(initial, crop_labels)
        agent = OracleAgent(AgentConfig(strategy="max_error_center",
                                        seed=int(rng.integers(2**31))))
        click = agent.sample_click(None, initial, crop_labels)
        if click is None:
            continue
        iou_before, _ = iou(initial, crop_labels)

        annotation = encode([click], crop.shape, crop_labels.class_count,
                            disca_config.encoding)
        ac_after, _ = iou(worker.predict(crop, annotation), crop_labels)

        result = refine(worker, crop, [click], disca_config,
                        np.random.default_rng(int(rng.integers(2**31))),
                        initial=initial)
        disca_after, _ = iou(result.prediction, crop_labels)
        restore_weights(worker, checkpoint)

        records.append(CropRecord(
            scene_index=scene_index,
            window=(row, col, crop_size, crop_size),
            error_size=components[0].size,
            error_total=sum(c.size for c in components),
            initial_accuracy=accuracy(initial.class_map, crop_labels),
            initial_iou=iou_before,
            ac_gain=ac_after - iou_before,
            disca_gain=disca_after - iou_before,
        ))
    if len(records) < crop_count:
        raise RuntimeError(
            f"only {len(records)} informative crops found in {attempts} attempts"
        )
    return records


def matched_sequence(
    master: SegmentationModel,
    scenes: list,
    length: int = 5,
    tile_size: int = 64,
    overlap: int = 16,
) -> tuple[list, list[float]]:
    """Order a difficulty-matched image series for sequential evaluation.

    Scores every scene by the checkpoint's stitched initial IoU (the same
    tiled metric campaigns report), keeps the ``length`` nearest the median,
    and puts the tightest-scoring pair at the two ends with the harder one
    last — a rising initial across the series then reflects carried weights,
    not easier images.  Returns the ordered scenes and their checkpoint
    initials.
    """
    if not 2 <= length <= len(scenes):
        raise ValueError(f"need 2 <= length <= {len(scenes)}, got {length}")
    probe_strategy = StrategyConfig(kind="random")
    probe_agent = AgentConfig()

    def stitched_initial(image, labels) -> float:
        return run_campaign(
            master.clone(), image, labels, strategy=probe_strategy,
            mode="ac_only", agent_config=probe_agent, budget=0,
            tile_size=tile_size, overlap=overlap,
        ).initial_iou

    scores = np.array([stitched_initial(i, l) for i, l in scenes])
    near_median = np.argsort(np.abs(scores - np.median(scores)))[:length]
    kept = sorted(near_median, key=lambda i: scores[i])
    pairs = [(abs(scores[a] - scores[b]), a, b)
             for pos, a in enumerate(kept) for b in kept[pos + 1:]]
    _, a, b = min(pairs)
    first, last = (a, b) if scores[a] >= scores[b] else (b, a)
    middle = [i for i in kept if i not in (first, last)]
    order = [first] + middle + [last]
    return [scenes[i] for i in order], [float(scores[i]) for i in order]


@dataclass
class ImagePass:
    """One image of a multi-image session."""

    image_index: int
    start_hash: str
    initial_iou: float
    final_iou: float
    result: CampaignResult


@dataclass
class SequentialResult:
    policy: str
    passes: list[ImagePass]

    @property
    def initial_ious(self) -> list[float]:
        return [p.initial_iou for p in self.passes]

    @property
    def final_ious(self) -> list[float]:
        return [p.final_iou for p in self.passes]


def run_sequential(
    model: SegmentationModel,
    scenes: list,
    policy: str,
    strategy: StrategyConfig,
    agent_config: AgentConfig,
    budget: int,
    disca_config: DiscaConfig,
    mode: str = "disca",
    tile_size: int = 64,
    overlap: int = 16,
    seed: int = 0,
    refresh_p0: bool = False,
) -> SequentialResult:
    """Refine over an ordered image series under a weight policy.

    ``reset_per_image`` restores the starting checkpoint before each image;
    ``sequential`` lets each image start from the weights the previous one
    ended with.  ``model`` is mutated in place either way.
    """
    weights = SessionWeights(policy, model)
    passes: list[ImagePass] = []
    for index, (image, labels) in enumerate(scenes):
        weights.start_image(model)
        start_hash = model.param_hash()
        result = run_campaign(
            model, image, labels,
            strategy=dataclasses.replace(strategy, seed=seed + index),
            mode=mode,
            agent_config=dataclasses.replace(agent_config, seed=seed + index),
            budget=budget, disca_config=disca_config,
            tile_size=tile_size, overlap=overlap, seed=seed + index,
            refresh_p0=refresh_p0,
        )
        passes.append(ImagePass(
            image_index=index, start_hash=start_hash,
            initial_iou=result.initial_iou, final_iou=result.final_iou,
            result=result,
        ))
    return SequentialResult(policy=policy, passes=passes)
