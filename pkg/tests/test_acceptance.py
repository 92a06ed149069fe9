"""End-to-end acceptance checks for the interactive refinement loop.

Each test covers one headline claim — numeric oracles for the loss, the
entropy scorer, and the error counter; statistical separation for the
acquisition methods and the active-querying speed-up; directional checks
for the ablation, the search-cost comparison, the click-placement policy,
and multi-image weight carry-over; and bit-level replay determinism.
Every test prints a single ``[PASS]``/``[FAIL]`` line with the measured
numbers so the verdicts survive in captured output.
"""

from __future__ import annotations

import dataclasses
import time

import numpy as np
import torch
from scipy import stats

from segloop.acquisition import METHODS, compute_uncertainty, entropy, entropy_scores
from segloop.agent import AgentConfig, OracleAgent
from segloop.annotations import ClickAnnotation
from segloop.campaign import run_campaign
from segloop.disca import (
    SparseTarget,
    UNANNOTATED,
    capture_weights,
    interactive_loss,
    refine,
    restore_weights,
)
from segloop.fixtures import desk_disca_config
from segloop.metrics import iou, misclassification_count
from segloop.model import PredictionMap
from segloop.queries import StrategyConfig
from segloop.rasters import LabelMask, RasterImage
from segloop.studies import (
    matched_sequence,
    paired_strategy_runs,
    run_ablation,
    run_sequential,
)
from segloop.toydata import generate_toy


def _verdict(ok: bool, name: str, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name} — {detail}", flush=True)
    assert ok, f"{name}: {detail}"


def _shifted_scenes(bundle, seed: int, size: int, count: int = 8):
    """Recolored low-ambiguity scenes: clean errors, no camouflage traps."""
    cfg = dataclasses.replace(
        bundle.profile.toy, size=size, count=count, density=0.12,
        ambiguity=0.0, shift=0.12, blob_min=20, blob_max=48,
    )
    return generate_toy(seed, cfg)


# --------------------------------------------------------------------------
# numeric oracles


def test_interactive_loss_gradient_matches_finite_differences():
    """Autograd of the click-fidelity + drift loss vs central differences."""
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst = 0.0
    checked = 0
    while checked < 20:
        p = rng.dirichlet(np.ones(3), size=(4, 4)).transpose(2, 0, 1)
        p0 = rng.dirichlet(np.ones(3), size=(4, 4)).transpose(2, 0, 1)
        # stay clear of the log floor and of the |p - p0| kink so the
        # difference quotient samples a smooth neighborhood
        p = np.clip(p, 1e-2, None); p /= p.sum(axis=0)
        p0 = np.clip(p0, 1e-2, None); p0 /= p0.sum(axis=0)
        if np.abs(p - p0).min() < 1e-4:
            continue
        checked += 1
        values = np.where(rng.random((4, 4)) < 0.4,
                          rng.integers(0, 3, size=(4, 4)),
                          UNANNOTATED).astype(np.int64)
        target = SparseTarget(values=values, class_count=3)
        init = torch.tensor(p0, dtype=torch.float64)

        probs = torch.tensor(p, dtype=torch.float64, requires_grad=True)
        total, _, _ = interactive_loss(probs, target, init, lam=1.0)
        total.backward()
        grad = probs.grad.numpy()

        def loss_at(arr: np.ndarray) -> float:
            with torch.no_grad():
                value, _, _ = interactive_loss(
                    torch.tensor(arr, dtype=torch.float64), target, init, lam=1.0)
            return float(value)

        eps = 1e-6
        fd = np.zeros_like(p)
        for index in np.ndindex(p.shape):
            bumped = p.copy(); bumped[index] += eps
            dipped = p.copy(); dipped[index] -= eps
            fd[index] = (loss_at(bumped) - loss_at(dipped)) / (2 * eps)
        rel = np.linalg.norm(fd - grad) / np.linalg.norm(fd)
        worst = max(worst, rel)
    elapsed = time.perf_counter() - t0
    _verdict(worst < 1e-4 and elapsed < 10.0,
             "loss gradient",
             f"worst relative error {worst:.2e} over 20 instances in {elapsed:.2f}s")


def test_entropy_matches_the_closed_form():
    """Scorer vs an independent closed form, plus the [0, ln N] bounds."""
    rng = np.random.default_rng(11)
    vectors = rng.dirichlet(np.ones(5), size=1000)
    scores = entropy_scores(vectors)
    oracle = stats.entropy(vectors, axis=1)  # natural log, independent impl
    gap = float(np.abs(scores - oracle).max())

    one_hot = np.eye(5)[rng.integers(0, 5, size=64)]
    uniform = np.full((64, 5), 0.2)
    zero_gap = float(np.abs(entropy_scores(one_hot)).max())
    top_gap = float(np.abs(entropy_scores(uniform) - np.log(5)).max())
    in_bounds = bool((scores >= 0).all() and (scores <= np.log(5) + 1e-12).all())

    # full pipeline reproduces the float64 math bit for bit after the
    # float32 storage cast
    pred = PredictionMap(probabilities=vectors.reshape(25, 40, 5))
    piped = entropy(pred).scores
    pipeline_exact = np.array_equal(piped, scores.reshape(25, 40).astype(np.float32))

    _verdict(gap < 1e-12 and zero_gap == 0.0 and top_gap < 1e-12 and in_bounds
             and pipeline_exact,
             "entropy closed form",
             f"max |score - closed form| {gap:.2e} over 1000 vectors; "
             f"one-hot -> {zero_gap:.1e}, uniform -> ln5 within {top_gap:.1e}")


def test_error_count_matches_brute_force():
    """Vectorized misclassification count vs a double loop, ignores included."""
    rng = np.random.default_rng(13)
    worst_case = None
    for trial in range(100):
        class_count = int(rng.integers(2, 6))
        pred = rng.integers(0, class_count, size=(8, 8))
        # label field may contain the IGNORE sentinel (== class_count)
        lab = rng.integers(0, class_count + 1, size=(8, 8))
        labels = LabelMask(labels=lab, class_count=class_count)
        brute = sum(
            1
            for r in range(8)
            for c in range(8)
            if lab[r, c] != class_count and pred[r, c] != lab[r, c]
        )
        got = misclassification_count(pred, labels)
        if got != brute:
            worst_case = (trial, got, brute)
            break
    _verdict(worst_case is None,
             "error count",
             "exact match with brute force on 100 random 8x8 instances"
             if worst_case is None else
             f"trial {worst_case[0]}: got {worst_case[1]}, brute force {worst_case[2]}")


# --------------------------------------------------------------------------
# acquisition behavior


def test_every_uncertainty_method_separates_errors_at_ranked_cost(
        binary_bundle, confidnet_head):
    """Misclassified pixels score higher than correct ones for all four
    methods, and the per-image cost ranking is stable."""
    model = binary_bundle.fresh_model()
    diffs: dict[str, list[float]] = {m: [] for m in METHODS}
    orderings = []
    for s in range(10):
        cfg = dataclasses.replace(binary_bundle.profile.toy, count=1)
        ((image, labels),) = generate_toy(300 + s, cfg)
        pred = model.predict(image)
        err = (pred.class_map != labels.labels) & labels.valid
        ok = ~err & labels.valid
        walls = {}
        for m in METHODS:
            u = compute_uncertainty(m, model, image, head=confidnet_head, seed=s)
            walls[m] = u.wall_time
            diffs[m].append(float(u.scores[err].mean() - u.scores[ok].mean()))
        orderings.append(
            walls["entropy"] < walls["confidnet"] < walls["odin"] < walls["mc_dropout"])

    pvals = {m: float(stats.wilcoxon(diffs[m], alternative="greater").pvalue)
             for m in METHODS}
    separated = all(p < 0.05 for p in pvals.values())
    ranked = all(orderings)
    _verdict(separated and ranked,
             "uncertainty separation",
             "; ".join(f"{m} p={pvals[m]:.4f}" for m in METHODS)
             + f"; cost order entropy<confidnet<odin<mc_dropout on {sum(orderings)}/10 runs")


# --------------------------------------------------------------------------
# campaign determinism


def test_campaign_replays_bit_for_bit(binary_bundle):
    """Same config, seed, and checkpoint reproduce the identical log."""
    image, labels = binary_bundle.test[2]
    kwargs = dict(
        strategy=StrategyConfig(kind="active", acquisition_method="entropy", seed=5),
        mode="disca", agent_config=AgentConfig(seed=5), budget=3,
        disca_config=desk_disca_config(), tile_size=32, overlap=8, seed=5,
    )
    first = run_campaign(binary_bundle.fresh_model(), image, labels, **kwargs)
    second = run_campaign(binary_bundle.fresh_model(), image, labels, **kwargs)
    same_prints = first.fingerprint() == second.fingerprint()
    same_curve = first.ious == second.ious
    same_start = first.config["checkpoint_hash"] == second.config["checkpoint_hash"]
    _verdict(same_prints and same_curve and same_start,
             "replay determinism",
             f"fingerprint {first.fingerprint()[:12]} reproduced; "
             f"curve {[round(v, 4) for v in first.ious]}")


# --------------------------------------------------------------------------
# click placement policy


def test_uncertainty_guided_clicks_beat_unconstrained_random(binary_bundle):
    """A single click placed on high-entropy pixels buys more IoU than one
    placed uniformly at random, averaged over 30 seeded crops.

    Uses the recolored large-error scenes: the claim is about spotting the
    model's mistakes through its own uncertainty, so the mistakes must be
    the kind the model is unsure about (camouflage errors are not)."""
    scenes = _shifted_scenes(binary_bundle, seed=902, size=96)
    model = binary_bundle.fresh_model()
    snapshot = capture_weights(model)
    config = desk_disca_config()
    gains = {"uncertainty_only": [], "random": []}
    for trial in range(30):
        rng = np.random.default_rng(500 + trial)
        image, labels = scenes[trial % len(scenes)]
        r0, c0 = rng.integers(0, image.height - 64, size=2)
        crop = RasterImage(image.pixels[r0:r0 + 64, c0:c0 + 64],
                           resolution_tag=f"crop-{trial}")
        crop_labels = LabelMask(labels.labels[r0:r0 + 64, c0:c0 + 64],
                                labels.class_count)
        initial = model.predict(crop)
        base_iou, _ = iou(initial.class_map, crop_labels)

        agent = OracleAgent(AgentConfig(strategy="uncertainty_only", seed=500 + trial))
        guided = agent.sample_click(None, initial, crop_labels,
                                    uncertainty=entropy(initial))
        valid = np.argwhere(crop_labels.valid)
        vr, vc = valid[rng.integers(len(valid))]
        blind = ClickAnnotation(int(vr), int(vc),
                                int(crop_labels.labels[vr, vc]), origin="simulated")

        for arm, click in (("uncertainty_only", guided), ("random", blind)):
            restore_weights(model, snapshot)
            if click is None:
                gains[arm].append(0.0)
                continue
            result = refine(model, crop, [click], config,
                            np.random.default_rng(trial))
            after, _ = iou(result.prediction.class_map, crop_labels)
            gains[arm].append(after - base_iou)
    restore_weights(model, snapshot)
    mean_guided = float(np.mean(gains["uncertainty_only"]))
    mean_blind = float(np.mean(gains["random"]))
    _verdict(mean_guided > mean_blind,
             "guided clicks",
             f"mean IoU gain {mean_guided:+.4f} guided vs {mean_blind:+.4f} random "
             f"over 30 crops")


# --------------------------------------------------------------------------
# component ablation


def test_component_ablation_orders_the_variants(binary_bundle):
    """Retraining with the drift penalty beats forward-only channels, a
    heavier penalty never helps, and unregularized retraining can regress."""
    cfg = dataclasses.replace(
        binary_bundle.profile.toy, density=0.12, ambiguity=0.6,
        camouflage_contrast=0.07, blob_min=20, blob_max=48,
    )
    scenes = generate_toy(901, cfg)
    table = run_ablation(
        binary_bundle.model, scenes,
        arms=["ac", "ac_wtp", "disca_lam1", "disca_lam10"],
        seeds=range(10), budget=4, base_config=desk_disca_config(),
    )
    final = {arm: float(np.mean([r.final_iou for r in runs]))
             for arm, runs in table.results.items()}
    regressions = sum(r.final_iou < r.initial_iou
                      for r in table.results["ac_wtp"])
    retrain_wins = final["disca_lam1"] > final["ac"]
    heavier_never_helps = final["disca_lam10"] <= final["disca_lam1"]
    _verdict(retrain_wins and regressions >= 1 and heavier_never_helps,
             "component ablation",
             f"mean final IoU ac={final['ac']:.4f} lam1={final['disca_lam1']:.4f} "
             f"lam10={final['disca_lam10']:.4f}; "
             f"unregularized regressed on {regressions}/10 seeds")


# --------------------------------------------------------------------------
# multi-image weight carry-over


def test_carried_weights_improve_later_images(binary_bundle):
    """Across a difficulty-matched recolored series, carrying weights
    forward raises the last image's starting IoU above the first's, without
    ending below the fixed checkpoint."""
    pool_cfg = dataclasses.replace(
        binary_bundle.profile.toy, size=128, count=12, density=0.12,
        ambiguity=0.0, shift=0.12, blob_min=20, blob_max=48,
    )
    pool = generate_toy(955, pool_cfg)
    ordered, checkpoint = matched_sequence(binary_bundle.model, pool,
                                           length=5, tile_size=32, overlap=8)
    sequential = run_sequential(
        binary_bundle.fresh_model(), ordered, "sequential",
        StrategyConfig(kind="random"), AgentConfig(strategy="max_error_center"),
        budget=20, disca_config=desk_disca_config(),
        mode="disca", tile_size=32, overlap=8, seed=0,
    )
    first, last = sequential.initial_ious[0], sequential.initial_ious[-1]
    floor = checkpoint[-1] - 0.02
    final = sequential.final_ious[-1]
    _verdict(last > first and final >= floor,
             "weight carry-over",
             f"initial IoU image1 {first:.4f} -> image5 {last:.4f} "
             f"({last - first:+.4f}); final {final:.4f} vs checkpoint floor {floor:.4f}")


# --------------------------------------------------------------------------
# annotation-effort comparisons (the slow ones)


def test_active_querying_beats_random_patches(binary_bundle):
    """Entropy-ranked patch queries dominate random ones on area under the
    IoU-vs-budget curve, with and without retraining."""
    t0 = time.perf_counter()
    scenes = _shifted_scenes(binary_bundle, seed=900, size=192)
    strategies = {
        "random": StrategyConfig(kind="random"),
        "entropy": StrategyConfig(kind="active", acquisition_method="entropy"),
    }
    pvals = {}
    details = []
    for mode, budget in (("ac_only", 10), ("disca", 12)):
        runs = paired_strategy_runs(
            binary_bundle.model, scenes, strategies, mode=mode,
            seeds=range(10), budget=budget,
            disca_config=desk_disca_config(), tile_size=32, overlap=8,
        )
        diffs = [a.auc() - b.auc()
                 for a, b in zip(runs["entropy"], runs["random"])]
        pvals[mode] = float(stats.wilcoxon(diffs, alternative="greater").pvalue)
        details.append(f"{mode}: entropy>random on {sum(d > 0 for d in diffs)}/10 "
                       f"seeds, p={pvals[mode]:.4f}")
    elapsed = time.perf_counter() - t0
    _verdict(all(p < 0.05 for p in pvals.values()) and elapsed < 1800,
             "active querying",
             "; ".join(details) + f"; {elapsed:.0f}s")


def test_oracle_review_gains_at_least_active_but_searches_more(binary_bundle):
    """Reviewing whole images matches or beats patch queries on IoU gain at
    equal click budget, at exactly the full-image/patch pixel-cost ratio."""
    scenes = _shifted_scenes(binary_bundle, seed=900, size=192)
    runs = paired_strategy_runs(
        binary_bundle.model, scenes,
        {"oracle": StrategyConfig(kind="whole_image_oracle"),
         "entropy": StrategyConfig(kind="active", acquisition_method="entropy")},
        mode="disca", seeds=range(10), budget=10,
        disca_config=desk_disca_config(), tile_size=32, overlap=8,
    )
    gain = {arm: float(np.mean([r.final_iou - r.initial_iou for r in results]))
            for arm, results in runs.items()}
    ratios = {r_o.searched_pixels // r_a.searched_pixels
              for r_o, r_a in zip(runs["oracle"], runs["entropy"])}
    exact = {r_o.searched_pixels % r_a.searched_pixels
             for r_o, r_a in zip(runs["oracle"], runs["entropy"])}
    expected = (192 // 32) ** 2
    _verdict(gain["oracle"] >= gain["entropy"]
             and ratios == {expected} and exact == {0},
             "oracle review cost",
             f"mean gain oracle {gain['oracle']:+.4f} vs active {gain['entropy']:+.4f}; "
             f"searched-pixel ratio {sorted(ratios)} (expected {expected})")
