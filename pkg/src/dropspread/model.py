"""Dual-head encoder-decoder segmentation network.

One shared pyramid encoder-decoder feeds two prediction heads (wet-area
segmentation and wet/dry boundary detection). Each decoder level carries a
side classifier, and the per-level side scores are merged into the final
full-resolution score map by per-pixel attention weights that are softmax
normalized across levels.

Everything runs on plain numpy arrays with hand-written adjoints (see
:mod:`dropspread.ops`), so training needs no external autodiff framework.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import ops

CHECKPOINT_FORMAT = "dropspread-checkpoint-v1"


class DimensionError(ValueError):
    """Input spatial dimensions incompatible with the pyramid depth."""


class CheckpointError(ValueError):
    """Unreadable or incompatible checkpoint file."""


@dataclass(frozen=True)
class ModelConfig:
    pyramid_depth: int = 6
    base_channels: int = 16
    input_channels: int = 3
    class_count: int = 2  # binary task, encoded as a single score channel

    def __post_init__(self):
        if self.pyramid_depth < 1:
            raise ValueError(f"pyramid_depth must be >= 1, got {self.pyramid_depth}")
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.input_channels < 1:
            raise ValueError(f"input_channels must be >= 1, got {self.input_channels}")
        if self.class_count != 2:
            raise ValueError("only the binary wet/not-wet task is supported")

    @property
    def levels(self) -> int:
        """Number of side-classifier levels (full resolution included)."""
        return self.pyramid_depth + 1

    @property
    def divisor(self) -> int:
        return 2 ** self.pyramid_depth

    def channels(self, level: int) -> int:
        return self.base_channels * (2 ** level)


@dataclass
class ModelParameters:
    """All learnable weights, keyed by layer name. Immutable during inference."""

    config: ModelConfig
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "ModelParameters":
        return ModelParameters(self.config, {k: v.copy() for k, v in self.arrays.items()})


@dataclass
class PredictionPyramid:
    """Per-level side scores plus attention-merged full-resolution scores.

    Score maps are unbounded reals; the logistic transform of a score is the
    predicted wet probability. All arrays carry a leading batch axis.
    """

    seg_side_scores: list[np.ndarray]   # level l: (N, H/2^l, W/2^l)
    edge_side_scores: list[np.ndarray]
    seg_attention: np.ndarray           # (N, levels, H, W), sums to 1 over axis 1
    edge_attention: np.ndarray
    final_seg_scores: np.ndarray        # (N, H, W)
    final_edge_scores: np.ndarray


def _layer_shapes(config: ModelConfig) -> dict[str, tuple]:
    """Name -> shape for every parameter array, in creation order."""
    shapes: dict[str, tuple] = {}

    def conv(name, cin, cout, k):
        shapes[f"{name}.w"] = (cout, cin, k, k)
        shapes[f"{name}.b"] = (cout,)

    d = config.pyramid_depth
    conv("enc0.c1", config.input_channels, config.channels(0), 3)
    conv("enc0.c2", config.channels(0), config.channels(0), 3)
    for l in range(1, d + 1):
        conv(f"enc{l}.c1", config.channels(l - 1), config.channels(l), 3)
        conv(f"enc{l}.c2", config.channels(l), config.channels(l), 3)
    for l in range(d - 1, -1, -1):
        cin = config.channels(l + 1) + config.channels(l)
        conv(f"dec{l}.c1", cin, config.channels(l), 3)
        conv(f"dec{l}.c2", config.channels(l), config.channels(l), 3)
    for l in range(config.levels):
        conv(f"seg_side{l}", config.channels(l), 1, 1)
        conv(f"edge_side{l}", config.channels(l), 1, 1)
    conv("attn", config.channels(0), 2 * config.levels, 1)
    return shapes


def parameter_count(config: ModelConfig) -> int:
    """Total learnable scalars; closed-form in the config."""
    return sum(int(np.prod(s)) for s in _layer_shapes(config).values())


def build_model(config: ModelConfig, seed: int) -> ModelParameters:
    """He-normal weights, zero biases; bit-reproducible for a fixed seed."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in _layer_shapes(config).items():
        if name.endswith(".b"):
            arrays[name] = np.zeros(shape)
        else:
            fan_in = shape[1] * shape[2] * shape[3]
            arrays[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    return ModelParameters(config, arrays)


def _as_batch_nchw(images: np.ndarray, config: ModelConfig) -> np.ndarray:
    images = np.asarray(images, dtype=float)
    if images.ndim == 3:
        images = images[None]
    if images.ndim != 4 or images.shape[3] != config.input_channels:
        raise ValueError(
            f"expected (N, H, W, {config.input_channels}) input, got shape {images.shape}")
    h, w = images.shape[1], images.shape[2]
    div = config.divisor
    if h % div or w % div:
        raise DimensionError(
            f"input size {h}x{w} not divisible by {div} "
            f"(pyramid depth {config.pyramid_depth}); resize to a multiple of {div}")
    return np.transpose(images, (0, 3, 1, 2))


class _ConvBlockCache:
    __slots__ = ("x", "a1", "h1", "a2")


def _conv_block(arrays, name, x):
    cache = _ConvBlockCache()
    cache.x = x
    cache.a1 = ops.conv2d(x, arrays[f"{name}.c1.w"], arrays[f"{name}.c1.b"])
    cache.h1 = ops.relu(cache.a1)
    cache.a2 = ops.conv2d(cache.h1, arrays[f"{name}.c2.w"], arrays[f"{name}.c2.b"])
    return ops.relu(cache.a2), cache


def _conv_block_backward(arrays, grads, name, cache, dy):
    da2 = ops.relu_backward(cache.a2, dy)
    dh1, dw2, db2 = ops.conv2d_backward(cache.h1, arrays[f"{name}.c2.w"], da2)
    grads[f"{name}.c2.w"] += dw2
    grads[f"{name}.c2.b"] += db2
    da1 = ops.relu_backward(cache.a1, dh1)
    dx, dw1, db1 = ops.conv2d_backward(cache.x, arrays[f"{name}.c1.w"], da1)
    grads[f"{name}.c1.w"] += dw1
    grads[f"{name}.c1.b"] += db1
    return dx


def forward_with_cache(params: ModelParameters, images: np.ndarray):
    """Run the network and keep every intermediate needed by :func:`backward`."""
    cfg = params.config
    arr = params.arrays
    x = _as_batch_nchw(images, cfg)
    d = cfg.pyramid_depth
    h, w = x.shape[2], x.shape[3]

    cache: dict = {"input_hw": (h, w)}
    enc = []
    feat, cache["enc0"] = _conv_block(arr, "enc0", x)
    enc.append(feat)
    for l in range(1, d + 1):
        pooled = ops.avgpool2(enc[l - 1])
        cache[f"pool{l}"] = pooled
        feat, cache[f"enc{l}"] = _conv_block(arr, f"enc{l}", pooled)
        enc.append(feat)
    cache["enc_out"] = enc

    dec = [None] * (d + 1)
    dec[d] = enc[d]
    for l in range(d - 1, -1, -1):
        up = ops.upsample2_nearest(dec[l + 1])
        cat = np.concatenate([up, enc[l]], axis=1)
        cache[f"cat{l}"] = cat
        dec[l], cache[f"dec{l}"] = _conv_block(arr, f"dec{l}", cat)
    cache["dec_out"] = dec

    seg_side, edge_side = [], []
    for l in range(cfg.levels):
        seg_side.append(ops.conv2d(dec[l], arr[f"seg_side{l}.w"], arr[f"seg_side{l}.b"]))
        edge_side.append(ops.conv2d(dec[l], arr[f"edge_side{l}.w"], arr[f"edge_side{l}.b"]))

    att_logits = ops.conv2d(dec[0], arr["attn.w"], arr["attn.b"])
    seg_att = ops.softmax(att_logits[:, :cfg.levels], axis=1)
    edge_att = ops.softmax(att_logits[:, cfg.levels:], axis=1)
    cache["seg_att"] = seg_att
    cache["edge_att"] = edge_att

    up_seg = [ops.resize_bilinear(s, h, w) for s in seg_side]
    up_edge = [ops.resize_bilinear(s, h, w) for s in edge_side]
    cache["up_seg"] = up_seg
    cache["up_edge"] = up_edge

    final_seg = sum(seg_att[:, l] * up_seg[l][:, 0] for l in range(cfg.levels))
    final_edge = sum(edge_att[:, l] * up_edge[l][:, 0] for l in range(cfg.levels))

    pyramid = PredictionPyramid(
        seg_side_scores=[s[:, 0] for s in seg_side],
        edge_side_scores=[s[:, 0] for s in edge_side],
        seg_attention=seg_att,
        edge_attention=edge_att,
        final_seg_scores=final_seg,
        final_edge_scores=final_edge,
    )
    return pyramid, cache


def forward(params: ModelParameters, images: np.ndarray) -> PredictionPyramid:
    pyramid, _ = forward_with_cache(params, images)
    return pyramid


def backward(params: ModelParameters, cache: dict, grad_pyramid: dict) -> dict[str, np.ndarray]:
    """Backpropagate score-map gradients to every parameter.

    ``grad_pyramid`` keys (all optional): ``final_seg``, ``final_edge``
    as (N, H, W) arrays, and ``seg_side`` / ``edge_side`` as per-level lists.
    """
    cfg = params.config
    arr = params.arrays
    d = cfg.pyramid_depth
    h, w = cache["input_hw"]
    grads = {k: np.zeros_like(v) for k, v in arr.items()}

    dec = cache["dec_out"]
    enc = cache["enc_out"]
    d_dec = [np.zeros_like(dec[l]) for l in range(d + 1)]
    d_seg_side = [None] * cfg.levels
    d_edge_side = [None] * cfg.levels
    for l in range(cfg.levels):
        g = grad_pyramid.get("seg_side")
        d_seg_side[l] = None if g is None or g[l] is None else np.array(g[l], dtype=float)
        g = grad_pyramid.get("edge_side")
        d_edge_side[l] = None if g is None or g[l] is None else np.array(g[l], dtype=float)

    d_att_logits = None
    for head, att_key, up_key, side_grads in (
            ("final_seg", "seg_att", "up_seg", d_seg_side),
            ("final_edge", "edge_att", "up_edge", d_edge_side)):
        d_final = grad_pyramid.get(head)
        if d_final is None:
            continue
        d_final = np.asarray(d_final, dtype=float)
        att = cache[att_key]
        d_att = np.empty_like(att)
        for l in range(cfg.levels):
            up = cache[up_key][l][:, 0]
            d_att[:, l] = d_final * up
            d_up = (d_final * att[:, l])[:, None]
            side_h = h >> l
            side_w = w >> l
            d_side = ops.resize_bilinear_backward(d_up, side_h, side_w)[:, 0]
            if side_grads[l] is None:
                side_grads[l] = d_side
            else:
                side_grads[l] = side_grads[l] + d_side
        d_logits_head = ops.softmax_backward(att, d_att, axis=1)
        if d_att_logits is None:
            d_att_logits = np.zeros(
                (att.shape[0], 2 * cfg.levels, h, w), dtype=float)
        sl = slice(0, cfg.levels) if head == "final_seg" else slice(cfg.levels, None)
        d_att_logits[:, sl] += d_logits_head

    if d_att_logits is not None:
        dx, dw, db = ops.conv2d_backward(dec[0], arr["attn.w"], d_att_logits)
        grads["attn.w"] += dw
        grads["attn.b"] += db
        d_dec[0] += dx

    for l in range(cfg.levels):
        for side_grads, name in ((d_seg_side, f"seg_side{l}"), (d_edge_side, f"edge_side{l}")):
            if side_grads[l] is None:
                continue
            dy = side_grads[l][:, None]
            dx, dw, db = ops.conv2d_backward(dec[l], arr[f"{name}.w"], dy)
            grads[f"{name}.w"] += dw
            grads[f"{name}.b"] += db
            d_dec[l] += dx

    d_enc = [np.zeros_like(enc[l]) for l in range(d + 1)]
    for l in range(0, d):
        dcat = _conv_block_backward(arr, grads, f"dec{l}", cache[f"dec{l}"], d_dec[l])
        c_up = cfg.channels(l + 1)
        d_dec[l + 1] += ops.upsample2_nearest_backward(dcat[:, :c_up])
        d_enc[l] += dcat[:, c_up:]
    d_enc[d] += d_dec[d]

    for l in range(d, 0, -1):
        dpool = _conv_block_backward(arr, grads, f"enc{l}", cache[f"enc{l}"], d_enc[l])
        d_enc[l - 1] += ops.avgpool2_backward(dpool)
    _conv_block_backward(arr, grads, "enc0", cache["enc0"], d_enc[0])
    return grads


def merge_with_attention(side_scores: list[np.ndarray], attention: np.ndarray,
                         tol: float = 1e-5) -> np.ndarray:
    """Attention-weighted sum of side scores upsampled to full resolution.

    ``side_scores[l]`` has shape (..., H/2^l, W/2^l); ``attention`` stacks the
    per-level weight maps on its first axis and must sum to 1 at every pixel.
    """
    attention = np.asarray(attention, dtype=float)
    if attention.shape[0] != len(side_scores):
        raise ValueError("one attention map per side level is required")
    sums = attention.sum(axis=0)
    if not np.allclose(sums, 1.0, atol=tol):
        raise ValueError("attention weights must sum to 1 at every pixel")
    out_h, out_w = attention.shape[-2:]
    final = np.zeros_like(attention[0])
    for l, scores in enumerate(side_scores):
        final += attention[l] * ops.resize_bilinear(np.asarray(scores, dtype=float),
                                                    out_h, out_w)
    return final


def binarize_scores(scores: np.ndarray) -> np.ndarray:
    """Score > 0 (wet probability > 0.5) -> 1, else 0."""
    return (np.asarray(scores) > 0).astype(np.uint8)


def predict_mask(params: ModelParameters, image: np.ndarray) -> np.ndarray:
    """Segment one (H, W, C) image into a {0,1} wet mask of the same size."""
    pyramid = forward(params, image)
    return binarize_scores(pyramid.final_seg_scores[0])


def save_checkpoint(params: ModelParameters, path) -> None:
    cfg = params.config
    meta = json.dumps({
        "format": CHECKPOINT_FORMAT,
        "pyramid_depth": cfg.pyramid_depth,
        "base_channels": cfg.base_channels,
        "input_channels": cfg.input_channels,
        "class_count": cfg.class_count,
    })
    np.savez(path, __meta__=np.frombuffer(meta.encode(), dtype=np.uint8),
             **params.arrays)


def load_checkpoint(path) -> ModelParameters:
    try:
        with np.load(path) as data:
            if "__meta__" not in data:
                raise CheckpointError(f"{path}: missing checkpoint metadata")
            meta = json.loads(bytes(data["__meta__"]).decode())
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise CheckpointError(
                    f"{path}: unsupported format tag {meta.get('format')!r}")
            config = ModelConfig(
                pyramid_depth=meta["pyramid_depth"],
                base_channels=meta["base_channels"],
                input_channels=meta["input_channels"],
                class_count=meta["class_count"],
            )
            arrays = {k: data[k] for k in data.files if k != "__meta__"}
    except (OSError, ValueError, KeyError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: cannot load checkpoint ({exc})") from exc
    expected = set(_layer_shapes(config))
    if set(arrays) != expected:
        raise CheckpointError(f"{path}: parameter set does not match its config")
    return ModelParameters(config, arrays)
