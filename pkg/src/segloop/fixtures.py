"""Canonical desk-scale profiles: datasets, pretrained checkpoints, and the
refinement settings that suit them.

Pretraining a profile takes tens of seconds, so checkpoints are cached on
disk keyed by every input that shapes the weights; a cache hit is
byte-identical to a fresh run.
"""

from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .disca import DiscaConfig
from .model import PretrainConfig, SegmentationModel, pretrain
from .toydata import ToyConfig, generate_toy

logger = logging.getLogger(__name__)

# ten SGD passes at the deployment rate of 2e-6 barely move this small a
# model, so desk-scale refinement runs two orders of magnitude hotter
DESK_REFINE_LEARNING_RATE = 1e-4


def desk_disca_config(**overrides) -> DiscaConfig:
    overrides.setdefault("learning_rate", DESK_REFINE_LEARNING_RATE)
    return DiscaConfig(**overrides)


@dataclass(frozen=True)
class FixtureProfile:
    name: str
    toy: ToyConfig
    pretrain: PretrainConfig
    train_count: int = 40
    test_count: int = 8
    train_seed: int = 100
    test_seed: int = 200
    model_seed: int = 0
    widths: tuple[int, int, int] = (48, 96, 192)


PROFILES = {
    "binary": FixtureProfile(
        name="binary",
        toy=ToyConfig(class_count=2),
        pretrain=PretrainConfig(epochs=20),
    ),
    "six_class": FixtureProfile(
        name="six_class",
        toy=ToyConfig(class_count=6),
        pretrain=PretrainConfig(epochs=20),
    ),
}


@dataclass
class FixtureBundle:
    """A pretrained checkpoint with its train/test scenes.

    ``model`` is the cached master copy; tests and campaigns that mutate
    weights must work on ``fresh_model()`` clones.
    """

    profile: FixtureProfile
    model: SegmentationModel
    train: list
    test: list
    checkpoint_path: Path

    def fresh_model(self) -> SegmentationModel:
        return self.model.clone()

    def shifted_test(self, shift: float = 0.12) -> list:
        """Same held-out geometry under a recolored acquisition domain."""
        cfg = self.profile.toy.shifted(shift)
        return generate_toy(self.profile.test_seed,
                            ToyConfig(**{**cfg.__dict__, "count": self.profile.test_count}))


def _cache_key(profile: FixtureProfile) -> str:
    raw = repr((profile.toy, profile.pretrain, profile.train_count,
                profile.train_seed, profile.model_seed, profile.widths))
    return hashlib.sha256(raw.encode()).hexdigest()[:16]


def default_cache_dir() -> Path:
    return Path(os.environ.get("SEGLOOP_CACHE", Path.home() / ".cache" / "segloop"))


def toy_fixture(profile: str | FixtureProfile = "binary",
                cache_dir: str | Path | None = None) -> FixtureBundle:
    """Scenes plus a pretrained checkpoint for the named profile."""
    if isinstance(profile, str):
        profile = PROFILES[profile]
    cache_dir = Path(cache_dir) if cache_dir else default_cache_dir()
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"{profile.name}-{_cache_key(profile)}.pt"

    train_cfg = ToyConfig(**{**profile.toy.__dict__, "count": profile.train_count})
    test_cfg = ToyConfig(**{**profile.toy.__dict__, "count": profile.test_count})
    train = generate_toy(profile.train_seed, train_cfg)
    test = generate_toy(profile.test_seed, test_cfg)

    if path.exists():
        model = SegmentationModel.load(path)
    else:
        logger.info("pretraining %s fixture (one-time, cached at %s)", profile.name, path)
        model = SegmentationModel(class_count=profile.toy.class_count,
                                  widths=profile.widths, seed=profile.model_seed)
        pretrain(model, train, profile.pretrain, np.random.default_rng(profile.train_seed + 1))
        model.save(path)
    return FixtureBundle(profile=profile, model=model, train=train, test=test,
                         checkpoint_path=path)


def confidnet_fixture(bundle: FixtureBundle, epochs: int = 10,
                      cache_dir: str | Path | None = None):
    """Confidence head trained against the bundle's checkpoint, cached by
    the exact backbone weights it was fitted to."""
    from .acquisition import ConfidNetHead, confidnet_train

    cache_dir = Path(cache_dir) if cache_dir else bundle.checkpoint_path.parent
    key = hashlib.sha256(f"{bundle.model.param_hash()}-{epochs}".encode()).hexdigest()[:16]
    path = cache_dir / f"confidnet-{key}.pt"
    if path.exists():
        return ConfidNetHead.load(path)
    logger.info("training confidence head (one-time, cached at %s)", path)
    head = ConfidNetHead(in_channels=bundle.profile.widths[0])
    torch.manual_seed(bundle.profile.model_seed + 10_000)
    confidnet_train(bundle.model, head, bundle.train, epochs=epochs,
                    rng=np.random.default_rng(bundle.profile.train_seed + 2))
    head.save(path)
    return head
