"""The trainable single-class counting model.

A small conv extractor F turns the image into a (d, h, w) feature volume;
each exemplar crop is passed through F and pooled into a d-vector; the
per-location dot product of features with the pooled exemplar vector forms
the similarity map, which is concatenated to the features and regressed by
the counter head into a non-negative density map whose sum is the count.
Training is plain gradient descent on the summed squared density error,
with gradients computed by manual backprop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .grids import as_grid, as_volume, make_rng
from .modelio import load_model, save_model
from .nn import (
    LayerSpec,
    accumulate_grads,
    bilinear_resize,
    clip_global_norm,
    init_params,
    stack_backward,
    stack_forward,
)
from .scenes import Scene, build_gt_density

GRAD_CLIP = 10.0


@dataclass
class TrainCfg:
    epochs: int = 300
    lr: float = 1e-2
    batch: int = 8
    seed: int = 0


@dataclass
class CounterModel:
    r: int
    d: int
    params: dict[str, np.ndarray]
    loss_history: list[float] = field(default_factory=list)
    epoch: int = 0
    learning_rate: float = 0.0


@dataclass
class Exemplar:
    crop: np.ndarray  # (3, E, E)


def extractor_layers(r: int, d: int, prefix: str = "f") -> list[LayerSpec]:
    n = r.bit_length() - 1
    if r < 2 or 2**n != r:
        raise ValueError(f"downsampling ratio must be a power of two >= 2, got {r}")
    layers = []
    for i in range(n):
        act = "relu" if i < n - 1 else "none"
        layers.append(LayerSpec(f"{prefix}{i + 1}", 3 if i == 0 else d, d, 3, 2, 1, act))
    return layers


def counter_layers(d: int) -> list[LayerSpec]:
    return [
        LayerSpec("c1", d + 1, 16, 3, 1, 1, "relu"),
        LayerSpec("c2", 16, 8, 3, 1, 1, "relu"),
        LayerSpec("c3", 8, 1, 1, 1, 0, "softplus"),
    ]


# softplus(-3) ~ 0.05, the typical per-cell scale of smoothed dot densities;
# starting the output unit there keeps early training off the flat
# "predict a large constant" plateau
OUTPUT_BIAS_INIT = -3.0


def init_counter_model(r: int, d: int, seed: int) -> CounterModel:
    rng = make_rng(seed)
    params = init_params(extractor_layers(r, d) + counter_layers(d), rng)
    params["c3.b"][:] = OUTPUT_BIAS_INIT
    return CounterModel(r=r, d=d, params=params)


def make_exemplars(scene: Scene, size: int) -> list[Exemplar]:
    """Crop each exemplar box and bilinearly resize it to (size, size)."""
    exemplars = []
    for box in scene.exemplars:
        x0 = int(np.floor(box.x0))
        y0 = int(np.floor(box.y0))
        x1 = min(scene.width, max(x0 + 1, int(np.ceil(box.x1))))
        y1 = min(scene.height, max(y0 + 1, int(np.ceil(box.y1))))
        crop = scene.image[:, y0:y1, x0:x1]
        exemplars.append(Exemplar(crop=bilinear_resize(crop, size, size)))
    return exemplars


def _crop_to_multiple(image: np.ndarray, r: int) -> np.ndarray:
    _, h, w = image.shape
    if h < r or w < r:
        raise NumericError(f"image {h}x{w} smaller than downsampling ratio {r}")
    return image[:, : (h // r) * r, : (w // r) * r]


def extract_features(model: CounterModel, image: np.ndarray) -> np.ndarray:
    """F(I): a (d, H//r, W//r) feature volume."""
    image = _crop_to_multiple(as_volume(image), model.r)
    out, _ = stack_forward(model.params, extractor_layers(model.r, model.d), image)
    return out


def exemplar_vector(model: CounterModel, exemplars: list[Exemplar]) -> np.ndarray:
    """Pooled d-vector per exemplar, stacked into an (n, d) array."""
    if not exemplars:
        raise NumericError("at least one exemplar is required")
    layers = extractor_layers(model.r, model.d)
    pooled = []
    for ex in exemplars:
        feats, _ = stack_forward(model.params, layers, ex.crop)
        pooled.append(feats.mean(axis=(1, 2)))
    return np.stack(pooled)


def similarity_map(model: CounterModel, image: np.ndarray, exemplars: list[Exemplar]) -> np.ndarray:
    """Average over exemplars of the per-location feature/exemplar dot product."""
    feats = extract_features(model, image)
    pooled = exemplar_vector(model, exemplars)
    return np.einsum("chw,c->hw", feats, pooled.mean(axis=0))


def apply_mask(s: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Keep masked-in similarity values; fill the rest with the map minimum."""
    s = as_grid(s)
    m = as_grid(m)
    if s.shape != m.shape:
        raise NumericError(f"mask shape {m.shape} != similarity shape {s.shape}")
    if not np.all((m == 0.0) | (m == 1.0)):
        raise NumericError("mask must be binary (0/1)")
    return np.where(m == 1.0, s, s.min())


def predict_density(
    model: CounterModel,
    image: np.ndarray,
    exemplars: list[Exemplar],
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """Non-negative density grid at similarity-map resolution."""
    feats = extract_features(model, image)
    pooled = exemplar_vector(model, exemplars)
    s = np.einsum("chw,c->hw", feats, pooled.mean(axis=0))
    if mask is not None:
        s = apply_mask(s, mask)
    x = np.concatenate([feats, s[None]])
    out, _ = stack_forward(model.params, counter_layers(model.d), x)
    return out[0]


def count(density: np.ndarray) -> float:
    return float(as_grid(density).sum())


def loss_count(pred: np.ndarray, gt: np.ndarray) -> float:
    pred = as_grid(pred)
    gt = as_grid(gt)
    if pred.shape != gt.shape:
        raise NumericError(f"density shape {pred.shape} != target shape {gt.shape}")
    return float(((pred - gt) ** 2).sum())


def counting_loss_and_grads(
    model: CounterModel,
    image: np.ndarray,
    exemplars: list[Exemplar],
    gt: np.ndarray,
):
    """Forward + manual backprop; returns (loss, density, grads)."""
    ext = extractor_layers(model.r, model.d)
    cnt = counter_layers(model.d)
    img = _crop_to_multiple(as_volume(image), model.r)

    feats, cache_img = stack_forward(model.params, ext, img)
    pooled = []
    caches_ex = []
    for ex in exemplars:
        fb, cache = stack_forward(model.params, ext, ex.crop)
        caches_ex.append((cache, fb.shape))
        pooled.append(fb.mean(axis=(1, 2)))
    bbar = np.stack(pooled).mean(axis=0)

    s = np.einsum("chw,c->hw", feats, bbar)
    x = np.concatenate([feats, s[None]])
    out, cache_cnt = stack_forward(model.params, cnt, x)
    density = out[0]
    loss = float(((density - gt) ** 2).sum())

    d_density = 2.0 * (density - gt)
    dx, grads = stack_backward(cache_cnt, d_density[None])
    d_feats = dx[: model.d] + bbar[:, None, None] * dx[model.d][None]
    d_bbar = np.einsum("hw,chw->c", dx[model.d], feats)

    _, g_img = stack_backward(cache_img, d_feats)
    accumulate_grads(grads, g_img)
    n = len(exemplars)
    for cache, shape in caches_ex:
        scale = d_bbar / (n * shape[1] * shape[2])
        d_fb = np.broadcast_to(scale[:, None, None], shape)
        _, g_ex = stack_backward(cache, d_fb)
        accumulate_grads(grads, g_ex)
    return loss, density, grads


def gradients(
    model: CounterModel,
    scene: Scene,
    sigma: float = 2.0,
    exemplar_size: int = 32,
) -> dict[str, np.ndarray]:
    """Gradient of the counting loss w.r.t. every parameter, for one scene."""
    exemplars = make_exemplars(scene, exemplar_size)
    gt = build_gt_density(scene, model.r, sigma)
    _, _, grads = counting_loss_and_grads(model, scene.image, exemplars, gt)
    return grads


def train_base(
    model: CounterModel,
    train: list[Scene],
    cfg: TrainCfg,
    sigma: float = 2.0,
    exemplar_size: int = 32,
) -> CounterModel:
    """Gradient descent on the counting loss; one loss_history entry per epoch."""
    if cfg.epochs < 1:
        raise ValueError("epochs must be >= 1")
    for scene in train:
        if scene.interest_region is not None:
            raise ValueError("base training expects single-class scenes")
    prepared = [
        (scene.image, make_exemplars(scene, exemplar_size), build_gt_density(scene, model.r, sigma))
        for scene in train
    ]
    rng = make_rng(cfg.seed)
    model.learning_rate = cfg.lr
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(prepared))
        epoch_losses = []
        for start in range(0, len(order), cfg.batch):
            batch = order[start : start + cfg.batch]
            total: dict[str, np.ndarray] = {}
            for idx in batch:
                image, exemplars, gt = prepared[idx]
                loss, _, grads = counting_loss_and_grads(model, image, exemplars, gt)
                if not np.isfinite(loss):
                    scene_id = train[idx].meta.get("id", f"index {idx}")
                    raise NumericError(
                        f"non-finite counting loss at epoch {epoch}, scene {scene_id}"
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


def save_counter(model: CounterModel, path, fingerprint: str | None = None) -> None:
    save_model(path, "counter", model.r, model.d, model.params, model.loss_history, fingerprint)


def load_counter(path) -> tuple[CounterModel, str | None]:
    kind, r, d, params, history, fingerprint = load_model(path)
    if kind != "counter":
        raise NumericError(f"expected a counter model, got kind {kind!r}")
    return CounterModel(r=r, d=d, params=params, loss_history=history), fingerprint
