"""Sparse-label fine-tuning of the deployed model during a session.

Clicks become a sparse target (one class index per annotated pixel, -1
elsewhere) and the model is nudged for a few SGD steps to honor them while a
drift penalty ties the field back to the frozen session-start prediction.
Annotation channels are randomly blanked during those steps so the weights
themselves absorb the correction instead of leaning on the channels.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .annotations import AnnotationTensor, EncodingConfig, encode
from .model import PredictionMap, SegmentationModel
from .rasters import RasterImage

logger = logging.getLogger(__name__)

UNANNOTATED = -1
_LOG_FLOOR = 1e-7


@dataclass(frozen=True)
class SparseTarget:
    """H x W int64: class index at annotated pixels, -1 elsewhere."""

    values: np.ndarray
    class_count: int

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValueError("sparse target must be H x W")
        if ((v < UNANNOTATED) | (v >= self.class_count)).any():
            raise ValueError("entries must be -1 or a class index")
        object.__setattr__(self, "values", v.astype(np.int64, copy=False))

    @property
    def annotated_count(self) -> int:
        return int((self.values != UNANNOTATED).sum())


def build_sparse_target(clicks, shape: tuple[int, int], class_count: int) -> SparseTarget:
    """One-hot click pixels; a later click on the same pixel overwrites."""
    values = np.full(shape, UNANNOTATED, dtype=np.int64)
    for c in clicks:
        if not (0 <= c.row < shape[0] and 0 <= c.col < shape[1]):
            raise ValueError(f"click ({c.row}, {c.col}) outside {shape}")
        values[c.row, c.col] = c.class_id
    return SparseTarget(values=values, class_count=class_count)


@dataclass(frozen=True)
class DiscaConfig:
    """Refinement schedule and ablation switches.

    The stock learning rate matches full-scale deployments; desk-scale runs
    override it (see the experiment profiles) because ten steps at 2e-6
    barely move a freshly initialized small model.
    """

    lam: float = 1.0
    steps: int = 10
    learning_rate: float = 2e-6
    ac_dropout_probability: float = 0.5
    ac_enabled: bool = True
    regularization_enabled: bool = True
    encoding: EncodingConfig = field(default_factory=EncodingConfig)


def interactive_loss(
    probabilities: torch.Tensor,
    target: SparseTarget,
    initial_probabilities: torch.Tensor,
    lam: float,
    regularization_enabled: bool = True,
):
    """Click fidelity plus drift penalty, on (N, H, W) probability tensors.

    Fidelity averages -log p of the annotated class over annotated pixels
    (zero when nothing is annotated); the penalty is the mean absolute
    deviation from the session-start probabilities over every pixel-class
    entry. Returns (total, fidelity, penalty).
    """
    if probabilities.shape != initial_probabilities.shape:
        raise ValueError("probability tensors must have matching shapes")
    n, h, w = probabilities.shape
    if (h, w) != target.values.shape or n != target.class_count:
        raise ValueError("target does not match probability tensor")
    mask = torch.from_numpy(target.values != UNANNOTATED)
    if mask.any():
        idx = torch.from_numpy(target.values.clip(min=0))
        picked = probabilities.permute(1, 2, 0)[mask, idx[mask]]
        fidelity = -torch.log(picked.clamp(min=_LOG_FLOOR)).mean()
    else:
        fidelity = probabilities.sum() * 0.0
    if regularization_enabled and lam > 0:
        penalty = (probabilities - initial_probabilities).abs().mean()
    else:
        penalty = probabilities.sum() * 0.0
    return fidelity + lam * penalty, fidelity, penalty


@dataclass
class RefineResult:
    losses: list[float]
    fidelity: list[float]
    penalty: list[float]
    aborted: bool
    prediction: PredictionMap


def capture_weights(model: SegmentationModel) -> dict:
    """Bit-exact snapshot of the network parameters."""
    return copy.deepcopy(model.net.state_dict())


def restore_weights(model: SegmentationModel, snapshot: dict) -> None:
    model.net.load_state_dict(snapshot)


WEIGHT_POLICIES = ("reset_per_image", "sequential")


class SessionWeights:
    """Weight management across a multi-image session.

    ``reset_per_image`` restores the checkpoint before each image, so every
    image is refined from the same starting point.  ``sequential`` carries
    the refined parameters forward, letting adaptation from earlier images
    help later ones.
    """

    def __init__(self, policy: str, model: SegmentationModel):
        if policy not in WEIGHT_POLICIES:
            raise ValueError(f"unknown weight policy {policy!r}")
        self.policy = policy
        self.checkpoint = capture_weights(model)

    def start_image(self, model: SegmentationModel) -> None:
        """Prepare ``model`` for the next image in the sequence."""
        if self.policy == "reset_per_image":
            restore_weights(model, self.checkpoint)


def session_weights(policy: str, model: SegmentationModel) -> SessionWeights:
    """Snapshot ``model`` as the session checkpoint under the given policy."""
    return SessionWeights(policy, model)


def refine(
    model: SegmentationModel,
    image: RasterImage,
    clicks,
    config: DiscaConfig,
    rng: np.random.Generator,
    initial: PredictionMap | None = None,
    context=None,
) -> RefineResult:
    """Run the per-click SGD passes in place.

    ``initial`` is the frozen session-start prediction the drift penalty
    anchors to; pass the same map for every refinement of one session.
    A non-finite loss restores the pre-call weights bit for bit and aborts.
    """
    clicks = list(clicks)
    target = build_sparse_target(clicks, image.shape, model.class_count)
    kind = config.encoding.kind
    enc_context = context
    if enc_context is None and kind == "connected_prediction":
        enc_context = initial if initial is not None else model.predict(image)
    annotation = encode(clicks, image.shape, model.class_count, config.encoding,
                        context=enc_context)
    if initial is None:
        initial = model.predict(image, annotation if config.ac_enabled else None)
    p0 = torch.from_numpy(
        np.ascontiguousarray(initial.probabilities.transpose(2, 0, 1), dtype=np.float32)
    )

    snapshot = capture_weights(model)
    opt = torch.optim.SGD(model.net.parameters(), lr=config.learning_rate)
    x_on = model.input_tensor(image, annotation)
    x_off = model.input_tensor(image, None)
    losses, fids, pens = [], [], []
    for _ in range(config.steps):
        if not config.ac_enabled:
            x = x_off
        elif rng.random() < config.ac_dropout_probability:
            x = x_off
        else:
            x = x_on
        logits, _ = model.logits(x)
        probs = torch.softmax(logits[0], dim=0)
        loss, fidelity, penalty = interactive_loss(
            probs, target, p0, config.lam,
            regularization_enabled=config.regularization_enabled,
        )
        if not torch.isfinite(loss):
            logger.warning("refinement aborted on non-finite loss; weights restored")
            restore_weights(model, snapshot)
            return RefineResult(losses, fids, pens, True, initial)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
        fids.append(float(fidelity.detach()))
        pens.append(float(penalty.detach()))
    prediction = model.predict(image, annotation if config.ac_enabled else None)
    return RefineResult(losses, fids, pens, False, prediction)
