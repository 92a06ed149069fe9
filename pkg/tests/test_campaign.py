import json

import numpy as np
import pytest

from segloop.agent import AgentConfig
from segloop.campaign import run_campaign
from segloop.campaign import CampaignResult
from segloop.fixtures import desk_disca_config
from segloop.queries import CampaignExhausted, StrategyConfig

RANDOM = StrategyConfig(kind="random", seed=0)
ORACLE = StrategyConfig(kind="whole_image_oracle", seed=0)
AGENT = AgentConfig(strategy="max_error_center", seed=0)


def quick(bundle, mode, strategy=RANDOM, budget=2, **kw):
    kw.setdefault("tile_size", 32)
    kw.setdefault("overlap", 8)
    image, labels = bundle.test[0]
    return run_campaign(bundle.fresh_model(), image, labels, strategy=strategy,
                        mode=mode, agent_config=AGENT, budget=budget,
                        disca_config=desk_disca_config(), **kw)


def test_rejects_unknown_mode_and_negative_budget(binary_bundle):
    image, labels = binary_bundle.test[0]
    with pytest.raises(ValueError, match="mode"):
        run_campaign(binary_bundle.fresh_model(), image, labels, strategy=RANDOM,
                     mode="nope", agent_config=AGENT, budget=1)
    with pytest.raises(ValueError, match="budget"):
        run_campaign(binary_bundle.fresh_model(), image, labels, strategy=RANDOM,
                     mode="ac_only", agent_config=AGENT, budget=-1)


def test_budget_zero_records_only_the_initial_state(binary_bundle):
    result = quick(binary_bundle, "ac_only", budget=0)
    assert len(result.records) == 1
    first = result.records[0]
    assert first.step == 0 and first.clicks == [] and first.window is None
    assert result.initial_iou == result.final_iou == first.iou_after
    assert result.searched_pixels == 0
    assert result.auc() == 0.0


def test_budgets_count_annotated_patches(binary_bundle):
    result = quick(binary_bundle, "ac_only", budget=3)
    assert result.budgets == [0, 1, 2, 3]
    assert result.records[0].patch_iou is None
    for previous, record in zip(result.records, result.records[1:]):
        assert record.iou_before == previous.iou_after
        assert record.clicks_total >= previous.clicks_total
        assert 0.0 <= record.patch_iou <= 1.0
    assert result.records[-1].clicks_total == sum(
        len(r.clicks) for r in result.records)


def test_ac_only_mode_never_touches_the_weights(binary_bundle):
    model = binary_bundle.fresh_model()
    before = model.param_hash()
    image, labels = binary_bundle.test[0]
    run_campaign(model, image, labels, strategy=ORACLE, mode="ac_only",
                 agent_config=AGENT, budget=2, tile_size=32, overlap=8)
    assert model.param_hash() == before


def test_disca_mode_updates_the_weights_in_place(binary_bundle):
    model = binary_bundle.fresh_model()
    before = model.param_hash()
    image, labels = binary_bundle.test[0]
    result = run_campaign(model, image, labels, strategy=ORACLE, mode="disca",
                          agent_config=AGENT, budget=1,
                          disca_config=desk_disca_config(),
                          tile_size=32, overlap=8)
    assert model.param_hash() != before
    assert result.config["checkpoint_hash"] == before


def test_oracle_strategy_searches_the_whole_image_per_click(binary_bundle):
    result = quick(binary_bundle, "ac_only", strategy=ORACLE, budget=2)
    height, width = binary_bundle.test[0][0].shape
    assert result.searched_pixels == 2 * height * width
    for record in result.records[1:]:
        assert record.window == (0, 0, height, width)
        assert len(record.clicks) == 1


def test_random_strategy_charges_only_inspected_windows(binary_bundle):
    result = quick(binary_bundle, "ac_only", budget=3)
    # 96x96 at tile 32 / overlap 8 tiles into 32x32 windows exactly
    assert result.searched_pixels == 3 * 32 * 32


def test_refine_time_is_ledgered_only_in_disca_mode(binary_bundle):
    forward = quick(binary_bundle, "ac_only", strategy=ORACLE, budget=2)
    assert all(r.wall["refine"] == 0.0 for r in forward.records)
    retrain = quick(binary_bundle, "disca", strategy=ORACLE, budget=2)
    clicked = [r for r in retrain.records[1:] if r.clicks]
    assert clicked and all(r.wall["refine"] > 0.0 for r in clicked)
    assert all(r.wall["total"] > 0.0 for r in retrain.records[1:])


def test_over_budget_raises_with_the_failing_step(binary_bundle):
    image, labels = binary_bundle.test[0]
    # tile 48 / overlap 0 -> four windows, so the fifth query must fail
    with pytest.raises(CampaignExhausted, match="step 5"):
        run_campaign(binary_bundle.fresh_model(), image, labels, strategy=RANDOM,
                     mode="ac_only", agent_config=AGENT, budget=5,
                     tile_size=48, overlap=0)


def test_active_campaign_snapshots_its_method(binary_bundle):
    strategy = StrategyConfig(kind="active", acquisition_method="entropy", seed=0)
    result = quick(binary_bundle, "ac_only", strategy=strategy, budget=2)
    assert result.config["strategy"]["acquisition_method"] == "entropy"
    windows = [r.window for r in result.records[1:]]
    assert len(set(windows)) == len(windows)  # no re-queries


def test_reruns_reproduce_the_fingerprint_bit_for_bit(binary_bundle):
    first = quick(binary_bundle, "disca", strategy=ORACLE, budget=2)
    second = quick(binary_bundle, "disca", strategy=ORACLE, budget=2)
    assert first.fingerprint() == second.fingerprint()
    assert first.ious == second.ious


def test_fingerprint_tracks_protocol_flags(binary_bundle):
    frozen = quick(binary_bundle, "ac_only", budget=0)
    refreshed = quick(binary_bundle, "ac_only", budget=0, refresh_p0=True)
    assert frozen.ious == refreshed.ious  # no retraining happened either way
    assert frozen.fingerprint() != refreshed.fingerprint()


def test_refreshed_anchor_still_converges(binary_bundle):
    result = quick(binary_bundle, "disca", strategy=ORACLE, budget=2,
                   refresh_p0=True)
    assert result.config["refresh_p0"] is True
    assert np.isfinite(result.final_iou)


def test_log_round_trip_preserves_the_fingerprint(binary_bundle, tmp_path):
    result = quick(binary_bundle, "disca", strategy=ORACLE, budget=2)
    path = tmp_path / "campaign.jsonl"
    result.save(path)

    with open(path) as fh:
        lines = [json.loads(line) for line in fh]
    assert lines[0]["kind"] == "campaign"
    assert len(lines) == 1 + len(result.records)
    assert all(isinstance(k, str) for k in lines[1]["per_class_iou"])

    loaded = CampaignResult.load(path)
    assert loaded.fingerprint() == result.fingerprint()
    assert loaded.ious == result.ious
    assert loaded.records[1].per_class_iou == result.records[1].per_class_iou


def test_loading_a_non_campaign_file_is_rejected(tmp_path):
    path = tmp_path / "other.jsonl"
    path.write_text(json.dumps({"kind": "something_else"}) + "\n")
    with pytest.raises(ValueError, match="not a campaign log"):
        CampaignResult.load(path)
