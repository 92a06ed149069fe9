import dataclasses

import numpy as np
import pytest

from segloop.agent import AgentConfig
from segloop.fixtures import desk_disca_config
from segloop.queries import StrategyConfig
from segloop.studies import (
    ABLATION_ARMS,
    matched_sequence,
    paired_strategy_runs,
    run_ablation,
    run_sequential,
    size_vs_method_study,
)

AGENT = AgentConfig(strategy="max_error_center", seed=0)


def test_paired_runs_share_scene_and_seed_across_arms(binary_bundle):
    strategies = {
        "random": StrategyConfig(kind="random"),
        "entropy": StrategyConfig(kind="active", acquisition_method="entropy"),
    }
    results = paired_strategy_runs(
        binary_bundle.model, binary_bundle.test[:2], strategies,
        mode="ac_only", seeds=range(2), budget=1,
        disca_config=desk_disca_config(), tile_size=32, overlap=8)
    assert set(results) == {"random", "entropy"}
    for s in range(2):
        pair = [results[name][s] for name in strategies]
        assert pair[0].seed == pair[1].seed == s
        # same scene under both arms: identical unannotated starting point
        assert pair[0].initial_iou == pair[1].initial_iou


def test_ablation_rejects_unknown_arm(binary_bundle):
    with pytest.raises(ValueError, match="unknown ablation arms"):
        run_ablation(binary_bundle.model, binary_bundle.test, arms=["nope"])


def test_ablation_arms_cover_every_mechanism_combination():
    assert set(ABLATION_ARMS) == {
        "ac", "wtp", "wtp_reg", "ac_wtp", "disca_lam1", "disca_lam10"}
    assert ABLATION_ARMS["ac"]["mode"] == "ac_only"
    assert ABLATION_ARMS["wtp"]["lam"] == 0.0
    assert ABLATION_ARMS["disca_lam10"]["lam"] == 10.0


def test_ablation_summary_reports_each_arm(binary_bundle):
    table = run_ablation(
        binary_bundle.model, binary_bundle.test[:2],
        arms=["ac", "disca_lam1"], seeds=range(2), budget=1,
        base_config=desk_disca_config(), tile_size=32, overlap=8)
    rows = {row["arm"]: row for row in table.summary()}
    assert set(rows) == {"ac", "disca_lam1"}
    for row in rows.values():
        assert row["runs"] == 2
        assert row["worst_gain"] <= row["mean_gain"]
        assert 0.0 < row["mean_initial_iou"] < 1.0
    # shared (seed, scene) pairing: both arms start from the same states
    assert rows["ac"]["mean_initial_iou"] == rows["disca_lam1"]["mean_initial_iou"]


def test_size_study_records_are_informative(binary_bundle):
    records = size_vs_method_study(
        binary_bundle.model, binary_bundle.test, crop_count=3,
        crop_size=64, seed=0, disca_config=desk_disca_config())
    assert len(records) == 3
    for rec in records:
        assert rec.error_size > 0
        assert rec.error_total >= rec.error_size
        assert rec.initial_accuracy < 1.0
        assert rec.best_method in ("ac", "disca", "tie")


def test_size_study_rejects_crops_larger_than_the_scene(binary_bundle):
    with pytest.raises(ValueError, match="crop_size"):
        size_vs_method_study(binary_bundle.model, binary_bundle.test,
                             crop_count=1, crop_size=128, seed=0)


def test_matched_sequence_orders_a_tight_pair_first_and_last(binary_bundle):
    scenes, ckpt = matched_sequence(binary_bundle.model, binary_bundle.test,
                                    length=5, tile_size=32, overlap=8)
    assert len(scenes) == 5 and len(ckpt) == 5
    assert ckpt[-1] <= ckpt[0]  # the harder end of the tightest pair goes last
    spread = max(ckpt) - min(ckpt)
    assert abs(ckpt[-1] - ckpt[0]) <= spread


def test_matched_sequence_validates_length(binary_bundle):
    with pytest.raises(ValueError, match="length"):
        matched_sequence(binary_bundle.model, binary_bundle.test[:3], length=4)


def test_reset_policy_restarts_every_image_from_the_checkpoint(binary_bundle):
    a, b = binary_bundle.test[0], binary_bundle.test[1]
    model = binary_bundle.fresh_model()
    result = run_sequential(
        model, [a, b, a], "reset_per_image",
        StrategyConfig(kind="whole_image_oracle"), AGENT, budget=1,
        disca_config=desk_disca_config(), tile_size=32, overlap=8)
    hashes = [p.start_hash for p in result.passes]
    assert hashes[0] == hashes[1] == hashes[2]
    # identical weights + identical scene => identical starting accuracy
    assert result.initial_ious[0] == result.initial_ious[2]


def test_sequential_policy_carries_refined_weights_forward(binary_bundle):
    a, b = binary_bundle.test[0], binary_bundle.test[1]
    model = binary_bundle.fresh_model()
    result = run_sequential(
        model, [a, b, a], "sequential",
        StrategyConfig(kind="whole_image_oracle"), AGENT, budget=1,
        disca_config=desk_disca_config(), tile_size=32, overlap=8)
    hashes = [p.start_hash for p in result.passes]
    assert hashes[0] != hashes[1] != hashes[2]
    assert len(result.passes) == 3
    assert all(np.isfinite(result.final_ious))


def test_sequential_runs_are_reproducible(binary_bundle):
    scenes = binary_bundle.test[:2]
    kw = dict(strategy=StrategyConfig(kind="whole_image_oracle"),
              agent_config=AGENT, budget=1, disca_config=desk_disca_config(),
              tile_size=32, overlap=8, seed=7)
    first = run_sequential(binary_bundle.fresh_model(), scenes, "sequential", **kw)
    second = run_sequential(binary_bundle.fresh_model(), scenes, "sequential", **kw)
    assert first.initial_ious == second.initial_ious
    assert first.final_ious == second.final_ious
    assert [p.result.fingerprint() for p in first.passes] == \
        [p.result.fingerprint() for p in second.passes]
