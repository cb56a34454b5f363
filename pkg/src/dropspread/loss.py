"""Class-balanced binary cross entropy and the deep-supervision total loss.

With wet pixels typically a small minority of a frame, plain BCE lets the
dry class dominate the gradient. The balanced variant reweights the two
sums by beta, the fraction of dry (label 0) pixels, computed per image.
Score-domain evaluation uses log(1 + exp(.)) identities so no probability
is ever materialized, which keeps the loss finite for arbitrarily large
scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import PredictionPyramid
from .ops import resize_nearest, sigmoid

PROB_CLAMP = 1e-12


@dataclass
class LossConfig:
    """Mixing weights for the deep-supervision total.

    The final segmentation map always has weight 1. ``edge_weight`` scales
    every edge-head term; ``supervision_weights[l]`` scales the side losses
    at pyramid level l (missing levels default to 1).
    """

    edge_weight: float = 1.0
    supervision_weights: list[float] | None = None

    def level_weight(self, level: int) -> float:
        if self.supervision_weights is None:
            return 1.0
        if level < len(self.supervision_weights):
            return self.supervision_weights[level]
        return 1.0

    def validate(self, levels: int) -> None:
        if self.edge_weight < 0:
            raise ValueError("edge_weight must be non-negative")
        weights = [1.0] + [self.level_weight(l) for l in range(levels)]
        if any(w < 0 for w in weights):
            raise ValueError("supervision weights must be non-negative")


@dataclass
class TargetPair:
    """Segmentation target plus its derived boundary target."""

    seg_target: np.ndarray
    edge_target: np.ndarray

    @classmethod
    def from_mask(cls, seg_target: np.ndarray) -> "TargetPair":
        return cls(np.asarray(seg_target), edge_targets_from_mask(seg_target))


def _check_binary(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.size == 0:
        raise ValueError("mask is empty")
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("mask must contain only 0/1 labels")
    return mask


def beta(target: np.ndarray) -> float:
    """Fraction of background (label 0) pixels, in [0, 1]."""
    target = _check_binary(target)
    return float(np.count_nonzero(target == 0)) / target.size


def bce(probabilities: np.ndarray, target: np.ndarray) -> float:
    """Plain binary cross entropy, summed over pixels (non-negative)."""
    target = _check_binary(target)
    p = np.clip(np.asarray(probabilities, dtype=float), PROB_CLAMP, 1.0 - PROB_CLAMP)
    if p.shape != target.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {target.shape}")
    return float(-np.sum(target * np.log(p) + (1 - target) * np.log1p(-p)))


def balanced_bce_from_scores(scores: np.ndarray, target: np.ndarray) -> float:
    """Beta-balanced BCE evaluated directly on unbounded scores.

    -log sigmoid(s) = log(1 + exp(-s)) and -log(1 - sigmoid(s)) =
    log(1 + exp(s)); both are evaluated with logaddexp, so the result is
    finite for any score magnitude.
    """
    target = _check_binary(target)
    scores = np.asarray(scores, dtype=float)
    if scores.shape != target.shape:
        raise ValueError(f"shape mismatch: {scores.shape} vs {target.shape}")
    b = beta(target)
    wet = target == 1
    loss_wet = np.logaddexp(0.0, -scores[wet]).sum()
    loss_dry = np.logaddexp(0.0, scores[~wet]).sum()
    return float(b * loss_wet + (1.0 - b) * loss_dry)


def balanced_bce_grad(scores: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Analytic gradient of balanced_bce_from_scores w.r.t. the scores."""
    target = _check_binary(target)
    scores = np.asarray(scores, dtype=float)
    b = beta(target)
    p = sigmoid(scores)
    grad = np.where(target == 1, -b * (1.0 - p), (1.0 - b) * p)
    return grad


def edge_targets_from_mask(seg_target: np.ndarray) -> np.ndarray:
    """Mark every pixel whose 4-neighbourhood contains the opposite label.

    Outside-image neighbours are treated as same-label (edge replication),
    so the frame border itself is not an edge.
    """
    mask = _check_binary(seg_target)
    if mask.ndim != 2:
        raise ValueError("edge targets are defined for 2-D masks")
    padded = np.pad(mask, 1, mode="edge")
    edge = (
        (padded[:-2, 1:-1] != mask)
        | (padded[2:, 1:-1] != mask)
        | (padded[1:-1, :-2] != mask)
        | (padded[1:-1, 2:] != mask)
    )
    return edge.astype(np.uint8)


def _level_targets(target: np.ndarray, levels: int) -> list[np.ndarray]:
    h, w = target.shape
    return [resize_nearest(target, h >> l, w >> l) for l in range(levels)]


def _iter_terms(pyramid: PredictionPyramid, targets: TargetPair, cfg: LossConfig):
    """Yield (weight, scores_2d, target_2d) for every loss term, batch item 0.

    Side losses use nearest-downsampled targets; the edge target is re-derived
    from the downsampled segmentation target so it stays a one-pixel boundary
    band at each scale.
    """
    levels = len(pyramid.seg_side_scores)
    cfg.validate(levels)
    seg_t = _check_binary(targets.seg_target)
    seg_levels = _level_targets(seg_t, levels)
    edge_levels = [edge_targets_from_mask(t) for t in seg_levels]
    edge_levels[0] = _check_binary(targets.edge_target)

    def scores2d(a):
        a = np.asarray(a, dtype=float)
        return a[0] if a.ndim == 3 else a

    yield 1.0, scores2d(pyramid.final_seg_scores), seg_levels[0]
    yield cfg.edge_weight, scores2d(pyramid.final_edge_scores), edge_levels[0]
    for l in range(levels):
        w = cfg.level_weight(l)
        yield w, scores2d(pyramid.seg_side_scores[l]), seg_levels[l]
        yield w * cfg.edge_weight, scores2d(pyramid.edge_side_scores[l]), edge_levels[l]


def total_loss(pyramid: PredictionPyramid, targets: TargetPair,
               cfg: LossConfig | None = None) -> float:
    """Weighted sum of balanced BCE over both heads, all levels and finals."""
    cfg = cfg or LossConfig()
    total = 0.0
    for w, scores, target in _iter_terms(pyramid, targets, cfg):
        if w == 0.0:
            continue
        if scores.shape != target.shape:
            raise ValueError(
                f"pyramid/target shape mismatch: {scores.shape} vs {target.shape}")
        total += w * balanced_bce_from_scores(scores, target)
    return total


def total_loss_grad(pyramid: PredictionPyramid, targets: TargetPair,
                    cfg: LossConfig | None = None):
    """Gradients of total_loss w.r.t. every score map.

    Returns a dict with ``final_seg``, ``final_edge`` (2-D arrays) and
    ``seg_side`` / ``edge_side`` per-level lists, plus the normalization
    constant ``pixel_norm`` = sum of weight * pixel-count over active terms.
    """
    cfg = cfg or LossConfig()
    terms = list(_iter_terms(pyramid, targets, cfg))
    grads = []
    pixel_norm = 0.0
    for w, scores, target in terms:
        grads.append(None if w == 0.0 else w * balanced_bce_grad(scores, target))
        if w != 0.0:
            pixel_norm += w * scores.size
    levels = len(pyramid.seg_side_scores)
    out = {
        "final_seg": grads[0],
        "final_edge": grads[1],
        "seg_side": [grads[2 + 2 * l] for l in range(levels)],
        "edge_side": [grads[3 + 2 * l] for l in range(levels)],
        "pixel_norm": pixel_norm,
    }
    return out
