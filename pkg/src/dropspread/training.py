"""Dataset loading, augmentation, grid resizing and the optimization loop.

Annotations live on disk as ``<stem>.png`` next to ``<stem>_mask.png``
(single channel, 0 = dry/background, 255 = wet). Training follows the
measurement protocol: deterministic 80/20 split, six-fold rotation/mirror
augmentation, square power-of-two resize, Adam updates of the balanced
deep-supervision loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from . import model as model_mod
from .loss import LossConfig, TargetPair, total_loss, total_loss_grad
from .model import ModelParameters
from .ops import resize_bilinear, resize_nearest

MASK_SUFFIX = "_mask"
MASK_THRESHOLD = 128  # external editors save near-binary 8-bit masks
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp")

AUGMENTATIONS = ("identity", "rot90", "rot180", "rot270", "mirror_h", "mirror_v")


class DatasetError(ValueError):
    """Broken image/mask pairing on disk."""


@dataclass
class AnnotatedSample:
    image: np.ndarray          # (H, W, 3) float in [0, 1]
    mask: np.ndarray           # (H, W) uint8 in {0, 1}
    source_id: str
    scale: tuple[float, float] = (1.0, 1.0)  # original-pixels per grid-pixel (y, x)

    def __post_init__(self):
        if self.image.shape[:2] != self.mask.shape:
            raise DatasetError(
                f"{self.source_id}: image {self.image.shape[:2]} vs "
                f"mask {self.mask.shape} dimension mismatch")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    epochs: int = 0
    seed: int = 0
    config: dict = field(default_factory=dict)


def load_image(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=float) / 255.0


def load_mask(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        raw = np.asarray(img.convert("L"))
    return (raw >= MASK_THRESHOLD).astype(np.uint8)


def load_annotated(dir_path) -> list[AnnotatedSample]:
    """Load every image/mask pair under ``dir_path``, sorted by stem."""
    root = Path(dir_path)
    if not root.is_dir():
        raise DatasetError(f"annotation directory not found: {root}")
    images: dict[str, Path] = {}
    masks: dict[str, Path] = {}
    for path in sorted(root.iterdir()):
        if path.suffix.lower() not in IMAGE_EXTENSIONS:
            continue
        if path.stem.endswith(MASK_SUFFIX):
            masks[path.stem[: -len(MASK_SUFFIX)]] = path
        else:
            images[path.stem] = path
    orphan_images = sorted(set(images) - set(masks))
    orphan_masks = sorted(set(masks) - set(images))
    if orphan_images:
        raise DatasetError(
            f"images without mask: {', '.join(images[s].name for s in orphan_images)}")
    if orphan_masks:
        raise DatasetError(
            f"masks without image: {', '.join(masks[s].name for s in orphan_masks)}")
    samples = []
    for stem in sorted(images):
        samples.append(AnnotatedSample(
            image=load_image(images[stem]),
            mask=load_mask(masks[stem]),
            source_id=stem,
        ))
    return samples


def split(samples: list, train_fraction: float = 0.8, seed: int = 0):
    """Deterministic disjoint train/validation partition."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    if len(samples) < 2:
        raise ValueError("need at least 2 samples to split")
    order = np.random.default_rng(seed).permutation(len(samples))
    n_train = int(round(train_fraction * len(samples)))
    n_train = min(max(n_train, 1), len(samples) - 1)
    train = [samples[i] for i in order[:n_train]]
    val = [samples[i] for i in order[n_train:]]
    return train, val


def _transform(array: np.ndarray, name: str) -> np.ndarray:
    if name == "identity":
        return array.copy()
    if name == "rot90":
        return np.rot90(array, 1).copy()
    if name == "rot180":
        return np.rot90(array, 2).copy()
    if name == "rot270":
        return np.rot90(array, 3).copy()
    if name == "mirror_h":
        return np.flip(array, axis=1).copy()
    if name == "mirror_v":
        return np.flip(array, axis=0).copy()
    raise ValueError(f"unknown transform {name!r}")


def augment(sample: AnnotatedSample) -> list[AnnotatedSample]:
    """The six rotation/mirror variants, image and mask transformed in lockstep."""
    out = []
    for name in AUGMENTATIONS:
        out.append(AnnotatedSample(
            image=_transform(sample.image, name),
            mask=_transform(sample.mask, name),
            source_id=f"{sample.source_id}#{name}",
            scale=sample.scale,
        ))
    return out


def resize_to_grid(sample: AnnotatedSample, side: int = 1024) -> AnnotatedSample:
    """Resize to a square power-of-two side so repeated halving stays integral.

    The per-axis scale factors (original pixels per grid pixel) are recorded
    on the sample so measured pixel counts can be converted back to
    original-resolution area.
    """
    if side < 1 or side & (side - 1):
        raise ValueError(f"side must be a power of two, got {side}")
    h, w = sample.mask.shape
    scale = (sample.scale[0] * h / side, sample.scale[1] * w / side)
    if (h, w) == (side, side):
        return replace(sample, scale=scale)
    image = np.stack(
        [resize_bilinear(sample.image[:, :, c], side, side) for c in range(3)], axis=2)
    mask = resize_nearest(sample.mask, side, side)
    return AnnotatedSample(image=image, mask=mask,
                           source_id=sample.source_id, scale=scale)


def resize_image_to_grid(image: np.ndarray, side: int = 1024):
    """Grid-resize a bare (H, W, 3) image; returns (resized, (sy, sx))."""
    if side < 1 or side & (side - 1):
        raise ValueError(f"side must be a power of two, got {side}")
    h, w = image.shape[:2]
    scale = (h / side, w / side)
    if (h, w) == (side, side):
        return image, scale
    resized = np.stack(
        [resize_bilinear(image[:, :, c], side, side) for c in range(3)], axis=2)
    return resized, scale


def _sample_objective(params: ModelParameters, sample: AnnotatedSample,
                      loss_cfg: LossConfig, with_grad: bool):
    """Per-pixel-normalized loss for one sample, optionally with param grads."""
    targets = TargetPair.from_mask(sample.mask)
    if not with_grad:
        pyramid = model_mod.forward(params, sample.image)
        grad_maps = total_loss_grad(pyramid, targets, loss_cfg)
        return total_loss(pyramid, targets, loss_cfg) / grad_maps["pixel_norm"], None
    pyramid, cache = model_mod.forward_with_cache(params, sample.image)
    grad_maps = total_loss_grad(pyramid, targets, loss_cfg)
    norm = grad_maps.pop("pixel_norm")
    loss = total_loss(pyramid, targets, loss_cfg) / norm
    scaled = {
        "final_seg": grad_maps["final_seg"][None] / norm,
        "final_edge": None if grad_maps["final_edge"] is None
        else grad_maps["final_edge"][None] / norm,
        "seg_side": [None if g is None else g[None] / norm
                     for g in grad_maps["seg_side"]],
        "edge_side": [None if g is None else g[None] / norm
                      for g in grad_maps["edge_side"]],
    }
    grads = model_mod.backward(params, cache, scaled)
    return loss, grads


def evaluate(params: ModelParameters, samples: list[AnnotatedSample],
             loss_cfg: LossConfig | None = None) -> float:
    """Mean per-pixel-normalized loss over a sample set."""
    loss_cfg = loss_cfg or LossConfig()
    losses = [_sample_objective(params, s, loss_cfg, with_grad=False)[0]
              for s in samples]
    return float(np.mean(losses))


def pixel_accuracy(params: ModelParameters, samples: list[AnnotatedSample]) -> float:
    correct = 0
    total = 0
    for s in samples:
        mask = model_mod.predict_mask(params, s.image)
        correct += int(np.count_nonzero(mask == s.mask))
        total += mask.size
    return correct / total


class _Adam:
    def __init__(self, arrays: dict[str, np.ndarray], lr: float):
        self.lr = lr
        self.beta1 = 0.9
        self.beta2 = 0.999
        self.eps = 1e-8
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in arrays.items()}

    def step(self, arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            arrays[k] -= self.lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + self.eps)


def train(params: ModelParameters, train_set: list[AnnotatedSample],
          val_set: list[AnnotatedSample], epochs: int,
          learning_rate: float = 1e-4, seed: int = 0,
          loss_cfg: LossConfig | None = None):
    """Adam optimization; returns (best-validation parameters, history).

    Recorded losses are normalized per weighted pixel so their scale is
    comparable across image sizes and supervision configurations. With an
    empty validation set the latest parameters are kept.
    """
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    if epochs > 0 and not train_set:
        raise ValueError("training set is empty")
    loss_cfg = loss_cfg or LossConfig()
    params = params.copy()
    history = TrainHistory(seed=seed, config={
        "epochs": epochs, "learning_rate": learning_rate,
        "edge_weight": loss_cfg.edge_weight,
    })
    if epochs == 0:
        return params, history
    rng = np.random.default_rng(seed)
    opt = _Adam(params.arrays, learning_rate)
    best = params.copy()
    best_val = math.inf
    for epoch in range(epochs):
        epoch_losses = []
        for idx in rng.permutation(len(train_set)):
            loss, grads = _sample_objective(params, train_set[idx], loss_cfg,
                                            with_grad=True)
            if not math.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite training loss at epoch {epoch}")
            opt.step(params.arrays, grads)
            epoch_losses.append(loss)
        train_loss = float(np.mean(epoch_losses))
        val_loss = evaluate(params, val_set, loss_cfg) if val_set else train_loss
        if not math.isfinite(val_loss):
            raise FloatingPointError(f"non-finite validation loss at epoch {epoch}")
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        history.epochs = epoch + 1
        if val_loss <= best_val:
            best_val = val_loss
            best = params.copy()
    return (best if val_set else params), history
