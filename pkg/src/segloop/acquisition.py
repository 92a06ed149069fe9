"""Per-pixel uncertainty estimation.

Four interchangeable scorers produce H x W maps where higher means less
trustworthy: softmax entropy, Monte-Carlo dropout variance, an
input-perturbation probe (temperature-scaled, fast-gradient style), and a
small trained confidence head reading the backbone's last decoder features.
``compute_uncertainty`` dispatches by name and times the full
prediction-plus-scoring cost so methods can be compared fairly.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .annotations import AnnotationTensor
from .model import PredictionMap, SegmentationModel
from .rasters import LabelMask, RasterImage

logger = logging.getLogger(__name__)

METHODS = ("entropy", "confidnet", "odin", "mc_dropout")


@dataclass(frozen=True)
class UncertaintyMap:
    """Higher score = more uncertain; scores comparable within one method."""

    scores: np.ndarray  # H x W float32
    method: str
    wall_time: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float32)
        if s.ndim != 2:
            raise ValueError("scores must be H x W")
        if not np.all(np.isfinite(s)):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "scores", s)

    @property
    def shape(self) -> tuple[int, int]:
        return self.scores.shape


@dataclass(frozen=True)
class OdinConfig:
    epsilon: float = 1.0 / 255.0
    temperature: float = 100.0
    # the perturbation formula can be read either way; decreasing the loss
    # of the predicted class reinforces it, which matches the stated intent
    loss_decreasing: bool = True

    def __post_init__(self):
        if self.epsilon < 0 or self.temperature < 1:
            raise ValueError("need epsilon >= 0 and temperature >= 1")


@dataclass(frozen=True)
class McDropoutConfig:
    passes: int = 5
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.passes < 2:
            raise ValueError("variance needs passes >= 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")


def entropy_scores(probabilities: np.ndarray) -> np.ndarray:
    """-sum_c p_c ln p_c along the last axis, with 0 * ln 0 taken as 0.

    Computes in the input's precision: float64 in, float64 out.
    """
    p = np.asarray(probabilities)
    terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=-1)


def entropy(prediction: PredictionMap) -> UncertaintyMap:
    """Per-pixel prediction entropy."""
    t0 = time.perf_counter()
    scores = entropy_scores(prediction.probabilities.astype(np.float64))
    return UncertaintyMap(scores=scores, method="entropy",
                          wall_time=time.perf_counter() - t0)


def mc_dropout(model: SegmentationModel, image: RasterImage,
               annotations: AnnotationTensor | None,
               config: McDropoutConfig = McDropoutConfig(),
               seed: int | None = None) -> UncertaintyMap:
    """Variance of the class-probability vector over stochastic forward
    passes, summed across classes."""
    t0 = time.perf_counter()
    if seed is not None:
        torch.manual_seed(seed)
    rate_before = model.net.dropout_rate
    model.net.dropout_rate = config.dropout_rate
    try:
        stack = np.stack([
            model.predict(image, annotations, stochastic=True).probabilities
            for _ in range(config.passes)
        ])
    finally:
        model.net.dropout_rate = rate_before
    # float64 keeps the variance of identical passes at exactly zero
    scores = stack.astype(np.float64).var(axis=0, ddof=0).sum(axis=2)
    return UncertaintyMap(scores=scores, method="mc_dropout",
                          wall_time=time.perf_counter() - t0)


def odin(model: SegmentationModel, image: RasterImage,
         annotations: AnnotationTensor | None,
         config: OdinConfig = OdinConfig()) -> UncertaintyMap:
    """1 - max tempered probability after nudging the image along the
    input gradient of the predicted-class cross-entropy.

    Only the image channels are perturbed; annotation channels are inputs
    the agent controls, not evidence to second-guess.
    """
    t0 = time.perf_counter()
    x = model.input_tensor(image, annotations)
    x.requires_grad_(True)
    logits, _ = model.logits(x)
    predicted = logits.detach().argmax(dim=1)
    loss = F.cross_entropy(logits, predicted)
    (grad,) = torch.autograd.grad(loss, x)
    step = config.epsilon * grad.sign()
    step[:, model.image_channels :] = 0.0
    with torch.no_grad():
        perturbed = x - step if config.loss_decreasing else x + step
        tempered, _ = model.logits(perturbed)
        probs = torch.softmax(tempered[0] / config.temperature, dim=0)
        scores = 1.0 - probs.max(dim=0).values.numpy()
    return UncertaintyMap(scores=scores, method="odin",
                          wall_time=time.perf_counter() - t0)


class ConfidNetHead(nn.Module):
    """Auxiliary confidence estimator on the backbone's decoder features:
    a transposed convolution then four 3x3 convolutions (widths 32, 120,
    64, 32, 1) under a final sigmoid. The feature tap is already at full
    resolution, so the transposed convolution keeps stride 1."""

    def __init__(self, in_channels: int = 48):
        super().__init__()
        self.in_channels = in_channels
        self.trained_for: str | None = None  # downstream param hash
        self.layers = nn.Sequential(
            nn.ConvTranspose2d(in_channels, 32, 3, stride=1, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(32, 120, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(120, 64, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(64, 32, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(32, 1, 3, padding=1),
        )

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.layers(features))

    def save(self, path) -> None:
        torch.save({"state": self.state_dict(), "in_channels": self.in_channels,
                    "trained_for": self.trained_for}, path)

    @classmethod
    def load(cls, path) -> "ConfidNetHead":
        payload = torch.load(path, map_location="cpu", weights_only=True)
        head = cls(in_channels=payload["in_channels"])
        head.load_state_dict(payload["state"])
        head.trained_for = payload["trained_for"]
        return head


def confidnet_train(model: SegmentationModel, head: ConfidNetHead, dataset,
                    epochs: int = 10, learning_rate: float = 1e-3,
                    rng: np.random.Generator | None = None) -> ConfidNetHead:
    """Regress the probability the frozen backbone assigns to the true
    class (its true-class probability) with squared error; the backbone
    never receives gradients."""
    dataset = list(dataset)
    if not dataset:
        raise ValueError("no training scenes")
    rng = rng or np.random.default_rng(0)
    opt = torch.optim.Adam(head.parameters(), lr=learning_rate)
    head.train()
    try:
        for epoch in range(epochs):
            order = rng.permutation(len(dataset))
            losses = []
            for i in order:
                image, labels = dataset[i]
                with torch.no_grad():
                    logits, features = model.logits(model.input_tensor(image))
                    probs = torch.softmax(logits[0], dim=0)
                valid = torch.from_numpy(labels.valid)
                idx = torch.from_numpy(labels.labels.clip(min=0, max=labels.class_count - 1))
                tcp = probs.permute(1, 2, 0)[valid, idx[valid]]
                confidence = head(features)[0, 0][valid]
                loss = F.mse_loss(confidence, tcp)
                if not torch.isfinite(loss):
                    raise RuntimeError(f"confidence head diverged at epoch {epoch}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                losses.append(float(loss.detach()))
            if epoch % 5 == 0 or epoch == epochs - 1:
                logger.info("confidnet epoch %d: loss %.5f", epoch, float(np.mean(losses)))
    finally:
        head.eval()
    head.trained_for = model.param_hash()
    return head


def confidnet_score(model: SegmentationModel, image: RasterImage,
                    annotations: AnnotationTensor | None,
                    head: ConfidNetHead) -> UncertaintyMap:
    """1 - predicted confidence."""
    t0 = time.perf_counter()
    if head.trained_for is not None and head.trained_for != model.param_hash():
        raise ValueError("confidence head was trained for different backbone weights")
    with torch.no_grad():
        _, features = model.logits(model.input_tensor(image, annotations))
        confidence = head(features)[0, 0].numpy()
    return UncertaintyMap(scores=1.0 - confidence, method="confidnet",
                          wall_time=time.perf_counter() - t0)


def compute_uncertainty(method: str, model: SegmentationModel, image: RasterImage,
                        annotations: AnnotationTensor | None = None,
                        head: ConfidNetHead | None = None,
                        odin_config: OdinConfig | None = None,
                        mc_config: McDropoutConfig | None = None,
                        seed: int | None = None) -> UncertaintyMap:
    """Name-based dispatch; every branch's wall_time covers the forward
    pass(es) it needs, so timings are comparable across methods."""
    if method == "entropy":
        t0 = time.perf_counter()
        pred = model.predict(image, annotations)
        out = entropy(pred)
        return UncertaintyMap(scores=out.scores, method="entropy",
                              wall_time=time.perf_counter() - t0)
    if method == "confidnet":
        if head is None:
            raise ValueError("confidnet needs a trained head")
        return confidnet_score(model, image, annotations, head)
    if method == "odin":
        return odin(model, image, annotations, odin_config or OdinConfig())
    if method == "mc_dropout":
        return mc_dropout(model, image, annotations, mc_config or McDropoutConfig(),
                          seed=seed)
    raise ValueError(f"unknown uncertainty method {method!r}; pick from {METHODS}")
