"""Command-line workbench.

Verbs:
  pretrain  build or refresh a cached toy checkpoint
  simulate  run annotation campaigns and log IoU after every step
  ablate    run the component-ablation table
  study     single-click error-size study, or the sequential weight study
  serve     start the HTTP session service

Campaign logs are line-delimited JSON, summary tables are CSV, and
``--plots`` renders PNG figures next to them.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .acquisition import METHODS
from .agent import STRATEGIES, AgentConfig
from .fixtures import (PROFILES, confidnet_fixture, default_cache_dir,
                       desk_disca_config, toy_fixture)
from .queries import StrategyConfig
from .studies import (ABLATION_ARMS, matched_sequence, paired_strategy_runs,
                      run_ablation, run_sequential, size_vs_method_study)
from .toydata import generate_toy, load_toy_config

logger = logging.getLogger(__name__)

#: strategy tokens accepted by ``--strategy``: the two baselines plus one
#: active arm per acquisition method
STRATEGY_TOKENS = ("random", "oracle") + METHODS


def _strategy_config(token: str, **common) -> StrategyConfig:
    if token == "random":
        return StrategyConfig(kind="random", **common)
    if token == "oracle":
        return StrategyConfig(kind="whole_image_oracle", **common)
    if token in METHODS:
        return StrategyConfig(kind="active", acquisition_method=token, **common)
    raise ValueError(f"unknown strategy {token!r}; pick from {STRATEGY_TOKENS}")


def _add_fixture_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--profile", default="binary", choices=sorted(PROFILES),
                   help="pretrained fixture profile")
    p.add_argument("--cache-dir", type=Path, default=None,
                   help=f"checkpoint cache (default {default_cache_dir()})")


def _add_scene_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scene-config", type=Path, default=None,
                   help="toy-scene YAML; omitted = the profile's held-out scenes")
    p.add_argument("--scene-seed", type=int, default=0,
                   help="generator seed for --scene-config pools")


def _add_campaign_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", default="disca", choices=("ac_only", "disca"))
    p.add_argument("--budget", type=int, default=8, help="patches to annotate")
    p.add_argument("--clicks-per-patch", type=int, default=1)
    p.add_argument("--tile-size", type=int, default=64)
    p.add_argument("--overlap", type=int, default=16)
    p.add_argument("--agent", default="max_error_center", choices=STRATEGIES)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])


def _add_disca_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lam", type=float, default=1.0,
                   help="drift-penalty weight")
    p.add_argument("--learning-rate", type=float, default=None,
                   help="refinement SGD rate (default: desk-scale preset)")
    p.add_argument("--steps", type=int, default=10, help="SGD passes per refinement")


def _disca_config(args):
    overrides = {"lam": args.lam, "steps": args.steps}
    if args.learning_rate is not None:
        overrides["learning_rate"] = args.learning_rate
    return desk_disca_config(**overrides)


def _scenes(args, bundle):
    if args.scene_config is None:
        return bundle.test
    config = load_toy_config(args.scene_config)
    return generate_toy(args.scene_seed, config)


def _write_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    logger.info("wrote %s (%d rows)", path, len(rows))


def _cmd_pretrain(args) -> int:
    bundle = toy_fixture(args.profile, cache_dir=args.cache_dir)
    if args.out:
        bundle.model.save(args.out)
    info = {
        "profile": args.profile,
        "checkpoint": str(args.out or bundle.checkpoint_path),
        "param_hash": bundle.model.param_hash(),
        "train_scenes": len(bundle.train),
        "test_scenes": len(bundle.test),
    }
    print(json.dumps(info))
    return 0


def _cmd_simulate(args) -> int:
    bundle = toy_fixture(args.profile, cache_dir=args.cache_dir)
    scenes = _scenes(args, bundle)
    head = (confidnet_fixture(bundle, cache_dir=args.cache_dir)
            if "confidnet" in args.strategy else None)
    strategies = {
        token: _strategy_config(token, clicks_per_patch=args.clicks_per_patch)
        for token in args.strategy
    }
    results = paired_strategy_runs(
        bundle.model, scenes, strategies, mode=args.mode, seeds=args.seeds,
        budget=args.budget, disca_config=_disca_config(args),
        agent_strategy=args.agent, tile_size=args.tile_size,
        overlap=args.overlap, confidnet_head=head)

    args.out.mkdir(parents=True, exist_ok=True)
    rows = []
    for arm, runs in results.items():
        for run in runs:
            run.save(args.out / f"campaign-{arm}-s{run.seed}.jsonl")
            rows.append({
                "strategy": arm, "seed": run.seed,
                "initial_iou": run.initial_iou, "final_iou": run.final_iou,
                "gain": run.final_iou - run.initial_iou, "auc": run.auc(),
                "clicks": run.records[-1].clicks_total,
                "searched_pixels": run.searched_pixels,
                "fingerprint": run.fingerprint(),
            })
    _write_csv(args.out / "summary.csv", rows)
    if args.plots:
        from .plots import iou_curves
        iou_curves(results, args.out / "curves.png")
    return 0


def _cmd_ablate(args) -> int:
    bundle = toy_fixture(args.profile, cache_dir=args.cache_dir)
    scenes = _scenes(args, bundle)
    table = run_ablation(
        bundle.model, scenes, arms=args.arms, seeds=args.seeds,
        budget=args.budget, base_config=_disca_config(args),
        agent_strategy=args.agent, tile_size=args.tile_size,
        overlap=args.overlap, clicks_per_patch=args.clicks_per_patch)

    args.out.mkdir(parents=True, exist_ok=True)
    runs = [{"arm": arm, "seed": run.seed, "initial_iou": run.initial_iou,
             "final_iou": run.final_iou, "gain": run.final_iou - run.initial_iou}
            for arm, arm_runs in table.results.items() for run in arm_runs]
    _write_csv(args.out / "runs.csv", runs)
    _write_csv(args.out / "ablation.csv", table.summary())
    if args.plots:
        from .plots import ablation_bars
        ablation_bars(table, args.out / "bars.png")
    return 0


def _cmd_study(args) -> int:
    bundle = toy_fixture(args.profile, cache_dir=args.cache_dir)
    scenes = _scenes(args, bundle)
    args.out.mkdir(parents=True, exist_ok=True)

    if args.kind == "size":
        records = size_vs_method_study(
            bundle.model, scenes, crop_count=args.crops,
            crop_size=args.crop_size, seed=args.seeds[0],
            disca_config=_disca_config(args))
        rows = [{"scene": r.scene_index, "window": json.dumps(r.window),
                 "error_size": r.error_size, "error_total": r.error_total,
                 "initial_iou": r.initial_iou, "ac_gain": r.ac_gain,
                 "disca_gain": r.disca_gain, "best": r.best_method}
                for r in records]
        _write_csv(args.out / "crops.csv", rows)
        if args.plots:
            from .plots import size_scatter
            size_scatter(records, args.out / "scatter.png")
        return 0

    series, checkpoint_ious = matched_sequence(
        bundle.model, scenes, length=args.images,
        tile_size=args.tile_size, overlap=args.overlap)
    strategy = _strategy_config(args.strategy,
                                clicks_per_patch=args.clicks_per_patch)
    agent = AgentConfig(strategy=args.agent)
    results = {}
    rows = []
    for policy in ("reset_per_image", "sequential"):
        outcome = run_sequential(
            bundle.fresh_model(), series, policy, strategy, agent,
            budget=args.budget, disca_config=_disca_config(args),
            mode=args.mode, tile_size=args.tile_size, overlap=args.overlap,
            seed=args.seeds[0])
        results[policy] = outcome
        rows += [{"policy": policy, "image": p.image_index,
                  "checkpoint_iou": checkpoint_ious[p.image_index],
                  "initial_iou": p.initial_iou, "final_iou": p.final_iou}
                 for p in outcome.passes]
    _write_csv(args.out / "sequential.csv", rows)
    if args.plots:
        from .plots import sequential_curves
        sequential_curves(results, args.out / "sequential.png")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    bundle = toy_fixture(args.profile, cache_dir=args.cache_dir)
    head = confidnet_fixture(bundle, cache_dir=args.cache_dir)
    app = create_app(bundle=bundle, confidnet=head)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segloop", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="build or refresh a cached checkpoint")
    _add_fixture_args(p)
    p.add_argument("--out", type=Path, default=None,
                   help="copy the checkpoint here as well")
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("simulate", help="run annotation campaigns")
    _add_fixture_args(p)
    _add_scene_args(p)
    _add_campaign_args(p)
    _add_disca_args(p)
    p.add_argument("--strategy", nargs="+", default=["random"],
                   choices=STRATEGY_TOKENS, help="one campaign arm per token")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--plots", action="store_true",
                   help="render IoU-vs-budget curves as PNG")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("ablate", help="run the component-ablation table")
    _add_fixture_args(p)
    _add_scene_args(p)
    _add_campaign_args(p)
    _add_disca_args(p)
    p.add_argument("--arms", nargs="+", default=None, choices=sorted(ABLATION_ARMS),
                   help="subset of arms (default: all)")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--plots", action="store_true")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("study", help="single-click or sequential studies")
    _add_fixture_args(p)
    _add_scene_args(p)
    _add_campaign_args(p)
    _add_disca_args(p)
    p.add_argument("--kind", default="size", choices=("size", "sequential"))
    p.add_argument("--crops", type=int, default=30, help="crop count (size study)")
    p.add_argument("--crop-size", type=int, default=64)
    p.add_argument("--images", type=int, default=5,
                   help="series length (sequential study)")
    p.add_argument("--strategy", default="random", choices=STRATEGY_TOKENS)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--plots", action="store_true")
    p.set_defaults(func=_cmd_study)

    p = sub.add_parser("serve", help="start the HTTP session service")
    _add_fixture_args(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
