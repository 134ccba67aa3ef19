"""Exemplar-based segmentation model trained on pseudo masks.

The model reuses the counting extractor's architecture with its own weights.
The predicted mask at each cell is the cosine similarity between that cell's
feature vector and the mean pooled exemplar feature; training regresses the
binary pseudo masks with a summed squared loss and manual backprop. At
inference the cosine map is min-max normalized and thresholded before being
applied to the counting model's similarity map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .counter import (
    CounterModel,
    Exemplar,
    TrainCfg,
    count,
    extractor_layers,
    make_exemplars,
    predict_density,
)
from .errors import NumericError
from .grids import as_grid, as_volume, make_rng
from .modelio import load_model, save_model
from .nn import accumulate_grads, clip_global_norm, init_params, stack_backward, stack_forward
from .scenes import Scene

GRAD_CLIP = 10.0


@dataclass
class SegModel:
    r: int
    d: int
    params: dict[str, np.ndarray]
    loss_history: list[float] = field(default_factory=list)
    epoch: int = 0


def seg_layers(r: int, d: int):
    return extractor_layers(r, d, prefix="p")


def init_seg_model(r: int, d: int, seed: int) -> SegModel:
    rng = make_rng(seed)
    return SegModel(r=r, d=d, params=init_params(seg_layers(r, d), rng))


def _features(model: SegModel, image: np.ndarray):
    image = as_volume(image)
    _, h, w = image.shape
    if h < model.r or w < model.r:
        raise NumericError(f"image {h}x{w} smaller than downsampling ratio {model.r}")
    image = image[:, : (h // model.r) * model.r, : (w // model.r) * model.r]
    return stack_forward(model.params, seg_layers(model.r, model.d), image)


def _pooled_exemplar(model: SegModel, exemplars: list[Exemplar]):
    if not exemplars:
        raise NumericError("at least one exemplar is required")
    layers = seg_layers(model.r, model.d)
    pooled = []
    caches = []
    for ex in exemplars:
        feats, cache = stack_forward(model.params, layers, ex.crop)
        caches.append((cache, feats.shape))
        pooled.append(feats.mean(axis=(1, 2)))
    return np.stack(pooled).mean(axis=0), caches


def _cosine_map(feats: np.ndarray, v: np.ndarray):
    dots = np.einsum("chw,c->hw", feats, v)
    na = np.sqrt((feats**2).sum(axis=0))
    nv = float(np.linalg.norm(v))
    denom = na * nv
    safe = denom > 0.0
    cos = np.where(safe, dots / np.where(safe, denom, 1.0), 0.0)
    return np.clip(cos, -1.0, 1.0), na, nv, safe


def predict_mask(model: SegModel, image: np.ndarray, exemplars: list[Exemplar]) -> np.ndarray:
    """Cosine similarity in [-1, 1] between each cell feature and the exemplar vector."""
    feats, _ = _features(model, image)
    v, _ = _pooled_exemplar(model, exemplars)
    cos, _, _, _ = _cosine_map(feats, v)
    return cos


def loss_seg(pred: np.ndarray, target: np.ndarray) -> float:
    pred = as_grid(pred)
    target = as_grid(target)
    if pred.shape != target.shape:
        raise NumericError(f"mask shape {pred.shape} != target shape {target.shape}")
    return float(((pred - target) ** 2).sum())


def seg_loss_and_grads(
    model: SegModel, image: np.ndarray, exemplars: list[Exemplar], target: np.ndarray
):
    """Forward + manual backprop through the cosine map; returns (loss, pred, grads)."""
    feats, cache_img = _features(model, image)
    v, caches_ex = _pooled_exemplar(model, exemplars)
    cos, na, nv, safe = _cosine_map(feats, v)
    target = as_grid(target)
    if cos.shape != target.shape:
        raise NumericError(f"pseudo mask shape {target.shape} != model output {cos.shape}")
    loss = float(((cos - target) ** 2).sum())

    dcos = 2.0 * (cos - target)
    denom = np.where(safe, na * nv, 1.0)
    w1 = np.where(safe, dcos / denom, 0.0)
    w2 = np.where(safe, dcos * cos / np.where(na > 0.0, na * na, 1.0), 0.0)
    d_feats = v[:, None, None] * w1[None] - feats * w2[None]
    if nv > 0.0:
        dv = np.einsum("chw,hw->c", feats, w1) - (np.where(safe, dcos * cos, 0.0).sum() / (nv * nv)) * v
    else:
        dv = np.zeros_like(v)

    _, grads = stack_backward(cache_img, d_feats)
    n = len(exemplars)
    for cache, shape in caches_ex:
        scale = dv / (n * shape[1] * shape[2])
        d_fb = np.broadcast_to(scale[:, None, None], shape)
        _, g_ex = stack_backward(cache, d_fb)
        accumulate_grads(grads, g_ex)
    return loss, cos, grads


def train_seg(
    model: SegModel,
    data: list[tuple[Scene, np.ndarray]],
    cfg: TrainCfg,
    exemplar_size: int = 32,
) -> SegModel:
    """Gradient descent on the summed squared mask error."""
    if cfg.epochs < 1:
        raise ValueError("epochs must be >= 1")
    prepared = []
    for scene, mask in data:
        mask = as_grid(mask)
        expected = (scene.height // model.r, scene.width // model.r)
        if mask.shape != expected:
            raise NumericError(
                f"pseudo mask shape {mask.shape} != model geometry {expected} "
                f"for scene {scene.meta.get('id', '?')}"
            )
        prepared.append((scene.image, make_exemplars(scene, exemplar_size), mask))
    rng = make_rng(cfg.seed)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(prepared))
        epoch_losses = []
        for start in range(0, len(order), cfg.batch):
            batch = order[start : start + cfg.batch]
            total: dict[str, np.ndarray] = {}
            for idx in batch:
                image, exemplars, mask = prepared[idx]
                loss, _, grads = seg_loss_and_grads(model, image, exemplars, mask)
                if not np.isfinite(loss):
                    scene_id = data[idx][0].meta.get("id", f"index {idx}")
                    raise NumericError(
                        f"non-finite segmentation loss at epoch {epoch}, scene {scene_id}"
                    )
                epoch_losses.append(loss)
                accumulate_grads(total, grads)
            scale = 1.0 / len(batch)
            clipped = clip_global_norm({k: g * scale for k, g in total.items()}, GRAD_CLIP)
            for key, grad in clipped.items():
                model.params[key] = model.params[key] - cfg.lr * grad
        model.loss_history.append(float(np.mean(epoch_losses)))
        model.epoch += 1
    return model


def binarize(mask: np.ndarray, tau: float) -> np.ndarray:
    """Threshold the min-max-normalized mask; a constant mask yields all zeros."""
    if not 0.0 <= tau <= 1.0:
        raise NumericError(f"tau must lie in [0, 1], got {tau}")
    mask = as_grid(mask)
    lo, hi = mask.min(), mask.max()
    if hi == lo:
        return np.zeros_like(mask)
    return (((mask - lo) / (hi - lo)) >= tau).astype(np.float64)


def masked_count(
    counter: CounterModel,
    seg: SegModel,
    scene: Scene,
    tau: float,
    exemplar_size: int = 32,
) -> float:
    """Count on the similarity map masked by the binarized predicted mask."""
    exemplars = make_exemplars(scene, exemplar_size)
    mask = binarize(predict_mask(seg, scene.image, exemplars), tau)
    return count(predict_density(counter, scene.image, exemplars, mask))


def save_segmenter(model: SegModel, path, fingerprint: str | None = None) -> None:
    save_model(path, "segmenter", model.r, model.d, model.params, model.loss_history, fingerprint)


def load_segmenter(path) -> tuple[SegModel, str | None]:
    kind, r, d, params, history, fingerprint = load_model(path)
    if kind != "segmenter":
        raise NumericError(f"expected a segmenter model, got kind {kind!r}")
    return SegModel(r=r, d=d, params=params, loss_history=history), fingerprint
