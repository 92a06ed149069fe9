"""Fully convolutional segmentation network and its training loop.

The network takes the image concatenated with one annotation channel per
class and returns per-pixel class probabilities. The architecture is a
three-stage encoder-decoder with additive skip connections and deliberately
no normalization layers: prediction at a pixel then depends only on inputs
inside a fixed receptive field, which keeps the effect of a single click
strictly local and makes snapshots byte-for-byte reproducible.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .annotations import AnnotationTensor, ClickAnnotation, EncodingConfig, encode
from .rasters import LabelMask, RasterImage

logger = logging.getLogger(__name__)

_STRIDE_PRODUCT = 4  # two stride-2 stages; inputs are padded up to a multiple


@dataclass(frozen=True)
class PredictionMap:
    """Per-pixel class probabilities (H x W x N, rows sum to one)."""

    probabilities: np.ndarray

    @property
    def class_map(self) -> np.ndarray:
        return np.argmax(self.probabilities, axis=2)

    @property
    def class_count(self) -> int:
        return self.probabilities.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.probabilities.shape[0], self.probabilities.shape[1]


def _block(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1),
        nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, 3, padding=1),
        nn.ReLU(inplace=True),
    )


class SegNet(nn.Module):
    """Encoder-decoder with stride-2 conv downsampling, transposed-conv
    upsampling, additive skips, and spatial dropout at the encoder taps."""

    def __init__(self, in_channels: int, class_count: int,
                 widths: tuple[int, int, int] = (48, 96, 192),
                 dropout_rate: float = 0.1):
        super().__init__()
        w1, w2, w3 = widths
        self.widths = tuple(widths)
        self.dropout_rate = float(dropout_rate)
        self.enc1 = _block(in_channels, w1)
        self.down1 = nn.Sequential(nn.Conv2d(w1, w2, 3, stride=2, padding=1), nn.ReLU(inplace=True))
        self.enc2 = _block(w2, w2)
        self.down2 = nn.Sequential(nn.Conv2d(w2, w3, 3, stride=2, padding=1), nn.ReLU(inplace=True))
        self.enc3 = _block(w3, w3)
        self.up2 = nn.ConvTranspose2d(w3, w2, 2, stride=2)
        self.dec2 = _block(w2, w2)
        self.up1 = nn.ConvTranspose2d(w2, w1, 2, stride=2)
        self.dec1 = _block(w1, w1)
        self.head = nn.Conv2d(w1, class_count, 1)

    def _drop(self, x: torch.Tensor, stochastic: bool) -> torch.Tensor:
        if (self.training or stochastic) and self.dropout_rate > 0:
            return F.dropout2d(x, self.dropout_rate, training=True)
        return x

    def forward(self, x: torch.Tensor, stochastic: bool = False):
        """Returns (logits, features); features are the last full-resolution
        decoder activations the auxiliary confidence head consumes."""
        e1 = self._drop(self.enc1(x), stochastic)
        e2 = self._drop(self.enc2(self.down1(e1)), stochastic)
        e3 = self._drop(self.enc3(self.down2(e2)), stochastic)
        d2 = self.dec2(self.up2(e3) + e2)
        features = self.dec1(self.up1(d2) + e1)
        return self.head(features), features


def receptive_field_size(widths=(48, 96, 192)) -> int:
    """Input-side receptive field of one output pixel, by layer walk.

    Plain convs grow the field by (k - 1) * jump; the stride-2 transposed
    convs used here have kernel == stride, so each output pixel draws on a
    single coarse-grid pixel and only the jump changes.
    """
    size, jump = 1, 1
    for kernel, stride, transposed in _layer_walk():
        if transposed:
            assert kernel == stride
            jump //= stride
        else:
            size += (kernel - 1) * jump
            jump *= stride
    return size


def _layer_walk():
    conv = lambda k, s: (k, s, False)
    up = lambda: (2, 2, True)
    return [
        conv(3, 1), conv(3, 1),          # enc1
        conv(3, 2),                      # down1
        conv(3, 1), conv(3, 1),          # enc2
        conv(3, 2),                      # down2
        conv(3, 1), conv(3, 1),          # enc3
        up(),
        conv(3, 1), conv(3, 1),          # dec2
        up(),
        conv(3, 1), conv(3, 1),          # dec1
        conv(1, 1),                      # head
    ]


class SegmentationModel:
    """Wraps the network with numpy-facing prediction, checkpointing, and
    identity helpers (cloning, parameter hashing)."""

    def __init__(self, class_count: int, image_channels: int = 3,
                 widths: tuple[int, int, int] = (48, 96, 192),
                 dropout_rate: float = 0.1, seed: int | None = None):
        if seed is not None:
            torch.manual_seed(seed)
        self.class_count = class_count
        self.image_channels = image_channels
        self.net = SegNet(image_channels + class_count, class_count,
                          widths=tuple(widths), dropout_rate=dropout_rate)
        self.net.eval()

    # -- tensors ---------------------------------------------------------

    def input_tensor(self, image: RasterImage,
                     annotation: AnnotationTensor | None = None) -> torch.Tensor:
        """1 x (C + N) x H x W float32; missing annotations become zeros."""
        if image.channels != self.image_channels:
            raise ValueError(f"expected {self.image_channels}-channel image, got {image.channels}")
        h, w = image.shape
        if annotation is None:
            ann = np.zeros((h, w, self.class_count), dtype=np.float32)
        else:
            if annotation.shape != image.shape or annotation.class_count != self.class_count:
                raise ValueError("annotation tensor does not match image/classes")
            ann = annotation.channels
        stacked = np.concatenate([image.pixels, ann], axis=2)
        return torch.from_numpy(np.ascontiguousarray(stacked.transpose(2, 0, 1)))[None]

    def logits(self, x: torch.Tensor, stochastic: bool = False):
        """(logits, features) on a padded grid, cropped back to the input size."""
        h, w = x.shape[2], x.shape[3]
        ph = (-h) % _STRIDE_PRODUCT
        pw = (-w) % _STRIDE_PRODUCT
        if ph or pw:
            x = F.pad(x, (0, pw, 0, ph), mode="reflect")
        logits, features = self.net(x, stochastic=stochastic)
        return logits[:, :, :h, :w], features[:, :, :h, :w]

    def predict(self, image: RasterImage,
                annotation: AnnotationTensor | None = None,
                stochastic: bool = False) -> PredictionMap:
        with torch.no_grad():
            logits, _ = self.logits(self.input_tensor(image, annotation), stochastic=stochastic)
            probs = torch.softmax(logits[0], dim=0)
        return PredictionMap(probabilities=np.ascontiguousarray(
            probs.numpy().transpose(1, 2, 0), dtype=np.float32))

    # -- identity --------------------------------------------------------

    def parameters(self):
        return self.net.parameters()

    def param_hash(self) -> str:
        digest = hashlib.sha256()
        for name, p in sorted(self.net.state_dict().items()):
            digest.update(name.encode())
            digest.update(p.detach().numpy().tobytes())
        return digest.hexdigest()

    def clone(self) -> "SegmentationModel":
        other = SegmentationModel(self.class_count, self.image_channels,
                                  widths=self.net.widths,
                                  dropout_rate=self.net.dropout_rate)
        other.net.load_state_dict({k: v.clone() for k, v in self.net.state_dict().items()})
        return other

    @property
    def receptive_field_radius(self) -> int:
        """Worst-case one-sided reach of a single input pixel.

        The symmetric field half-width plus the alignment slack of the
        stride-4 coarse grid: a pixel's field is centered up to
        stride_product - 1 pixels away from the pixel itself.
        """
        return (receptive_field_size(self.net.widths) - 1) // 2 + (_STRIDE_PRODUCT - 1)

    # -- persistence -----------------------------------------------------

    def save(self, path) -> None:
        torch.save(
            {
                "state": self.net.state_dict(),
                "meta": {
                    "class_count": self.class_count,
                    "image_channels": self.image_channels,
                    "widths": list(self.net.widths),
                    "dropout_rate": self.net.dropout_rate,
                },
            },
            path,
        )

    @classmethod
    def load(cls, path) -> "SegmentationModel":
        payload = torch.load(path, map_location="cpu", weights_only=True)
        meta = payload["meta"]
        model = cls(meta["class_count"], meta["image_channels"],
                    widths=tuple(meta["widths"]), dropout_rate=meta["dropout_rate"])
        model.net.load_state_dict(payload["state"])
        model.net.eval()
        return model


@dataclass(frozen=True)
class PretrainConfig:
    """Supervised pretraining on fully labeled scenes.

    Half the samples (``image_only_fraction``) see no annotation channels so
    the model works unprompted; the rest see a random number of simulated
    clicks so it learns to trust them.
    """

    epochs: int = 20
    learning_rate: float = 1e-3
    batch_size: int = 4
    image_only_fraction: float = 0.5
    max_clicks: int = 20
    encoding: EncodingConfig = field(default_factory=EncodingConfig)

    def __post_init__(self):
        # fraction 1 is the degenerate no-annotation regime, kept legal so
        # the channel-blindness it induces can be asserted directly
        if not 0.0 < self.image_only_fraction <= 1.0:
            raise ValueError("image_only_fraction must be in (0, 1]")
        if self.max_clicks < 1 or self.epochs < 1:
            raise ValueError("need max_clicks >= 1 and epochs >= 1")


def sample_training_clicks(rng: np.random.Generator, labels: LabelMask,
                           max_clicks: int) -> list[ClickAnnotation]:
    """k ~ U{1..K} clicks, each on a uniform pixel of a uniformly chosen
    class among those present."""
    present = [c for c in range(labels.class_count)
               if ((labels.labels == c) & labels.valid).any()]
    if not present:
        return []
    clicks = []
    for _ in range(int(rng.integers(1, max_clicks + 1))):
        cls = present[int(rng.integers(0, len(present)))]
        rows, cols = np.nonzero((labels.labels == cls) & labels.valid)
        pick = int(rng.integers(0, rows.size))
        clicks.append(ClickAnnotation(int(rows[pick]), int(cols[pick]), cls,
                                      origin="simulated"))
    return clicks


def pretrain(model: SegmentationModel, scenes, config: PretrainConfig,
             rng: np.random.Generator) -> SegmentationModel:
    """Train in place on (image, labels) pairs and return the model.

    Per-epoch mean losses are kept on ``model.pretrain_history``.
    """
    scenes = list(scenes)
    if not scenes:
        raise ValueError("no training scenes")
    net = model.net
    net.train()
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    ignore = scenes[0][1].ignore_value
    history = []
    try:
        for epoch in range(config.epochs):
            order = rng.permutation(len(scenes))
            losses = []
            for start in range(0, len(order), config.batch_size):
                batch = [scenes[i] for i in order[start : start + config.batch_size]]
                inputs, targets = [], []
                for image, labels in batch:
                    if rng.random() < config.image_only_fraction:
                        ann = None
                    else:
                        clicks = sample_training_clicks(rng, labels, config.max_clicks)
                        ann = encode(clicks, image.shape, labels.class_count, config.encoding)
                    inputs.append(model.input_tensor(image, ann))
                    targets.append(torch.from_numpy(labels.labels))
                x = torch.cat(inputs)
                y = torch.stack(targets)
                logits, _ = model.logits(x)
                loss = F.cross_entropy(logits, y, ignore_index=ignore)
                if not torch.isfinite(loss):
                    raise RuntimeError(f"pretraining diverged at epoch {epoch}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                losses.append(float(loss.detach()))
            history.append(float(np.mean(losses)))
            if epoch % 10 == 0 or epoch == config.epochs - 1:
                logger.info("pretrain epoch %d: loss %.4f", epoch, history[-1])
    finally:
        net.eval()
    model.pretrain_history = history
    return model
