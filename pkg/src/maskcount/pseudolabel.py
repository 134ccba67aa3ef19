"""Pseudo segmentation masks from exemplars and dot annotations.

The main labeler tiles the image into one patch per mask cell, embeds each
patch with a hand-crafted descriptor (color moments + gradient-orientation
histogram), co-clusters the patches with the pooled exemplar embedding via
K-Means, and keeps the cluster containing the exemplar. The cluster count is
chosen per scene by minimizing the counting loss of the pre-trained model on
the masked similarity map. Two alternative labelers (dot-centered boxes and
similarity-map thresholding) are provided for ablations.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .counter import (
    CounterModel,
    loss_count,
    make_exemplars,
    predict_density,
    similarity_map,
)
from .errors import NumericError, ParseError
from .grids import minmax_normalize
from .nn import bilinear_resize
from .scenes import ExemplarBox, Scene, build_gt_density

logger = logging.getLogger(__name__)

EMBED_DIM = 14


@dataclass
class PatchGrid:
    r: int
    patch_w: float
    patch_h: float
    h: int
    w: int
    centers: list[tuple[float, float]]  # (x, y), row-major mask order


@dataclass
class ClusterResult:
    k: int
    centroids: np.ndarray  # (k, dim)
    assignments: np.ndarray  # (n,) ints in [0, k)
    inertia: float
    iterations: int
    inertia_trace: list[float] = field(default_factory=list)


@dataclass
class PseudoLabelResult:
    mask: np.ndarray  # binary (h, w)
    k_star: int
    per_k_loss: dict[int, float]
    strategy: str  # "kmeans" | "dotbox" | "threshold"


def _extract_patch(image: np.ndarray, cx: float, cy: float, pw: int, ph: int) -> np.ndarray:
    _, h, w = image.shape
    x0 = int(round(cx - pw / 2.0))
    y0 = int(round(cy - ph / 2.0))
    x1, y1 = x0 + pw, y0 + ph
    sx0, sx1 = max(0, x0), min(w, x1)
    sy0, sy1 = max(0, y0), min(h, y1)
    patch = image[:, sy0:sy1, sx0:sx1]
    pad = ((0, 0), (sy0 - y0, y1 - sy1), (sx0 - x0, x1 - sx1))
    if any(p != 0 for pair in pad for p in pair):
        patch = np.pad(patch, pad, mode="edge")
    return patch


def tile_patches(
    image: np.ndarray, exemplars: list[ExemplarBox], r: int
) -> tuple[PatchGrid, list[np.ndarray]]:
    """One patch per mask cell, centered on the cell, sized as the mean exemplar."""
    if not exemplars:
        raise NumericError("at least one exemplar box is required")
    _, height, width = image.shape
    h, w = height // r, width // r
    patch_w = float(np.mean([b.width for b in exemplars]))
    patch_h = float(np.mean([b.height for b in exemplars]))
    pw = max(1, int(round(patch_w)))
    ph = max(1, int(round(patch_h)))
    centers = [(j * r + 0.5 * r, i * r + 0.5 * r) for i in range(h) for j in range(w)]
    patches = [_extract_patch(image, cx, cy, pw, ph) for cx, cy in centers]
    grid = PatchGrid(r=r, patch_w=patch_w, patch_h=patch_h, h=h, w=w, centers=centers)
    return grid, patches


# the histogram block is scaled down before normalization: at full weight the
# edge-vs-flat contrast out-varies color and k-means splits on it first
HIST_WEIGHT = 0.25


def embed_patch(patch: np.ndarray) -> np.ndarray:
    """14-dim descriptor: RGB means, RGB stds, 8-bin gradient-orientation histogram."""
    mean = patch.mean(axis=(1, 2))
    std = patch.std(axis=(1, 2))
    lum = 0.299 * patch[0] + 0.587 * patch[1] + 0.114 * patch[2]
    hist = np.full(8, 0.125)
    if lum.shape[0] >= 2 and lum.shape[1] >= 2:
        gy, gx = np.gradient(lum)
        mag = np.hypot(gx, gy)
        total = mag.sum()
        if total >= 1e-12:
            ang = np.arctan2(gy, gx)
            bins = np.minimum(((ang + np.pi) / (np.pi / 4.0)).astype(int), 7)
            hist = np.bincount(bins.ravel(), weights=mag.ravel(), minlength=8) / total
    vec = np.concatenate([mean, std, HIST_WEIGHT * hist])
    return vec / np.linalg.norm(vec)


def exemplar_embedding(image: np.ndarray, boxes: list[ExemplarBox], grid: PatchGrid) -> np.ndarray:
    """Mean descriptor of the exemplar crops resized to the patch size."""
    pw = max(1, int(round(grid.patch_w)))
    ph = max(1, int(round(grid.patch_h)))
    _, h, w = image.shape
    embeds = []
    for box in boxes:
        x0 = max(0, int(np.floor(box.x0)))
        y0 = max(0, int(np.floor(box.y0)))
        x1 = min(w, max(x0 + 1, int(np.ceil(box.x1))))
        y1 = min(h, max(y0 + 1, int(np.ceil(box.y1))))
        crop = bilinear_resize(image[:, y0:y1, x0:x1], ph, pw)
        embeds.append(embed_patch(crop))
    return np.stack(embeds).mean(axis=0)


def _nearest(points: np.ndarray, centroids: np.ndarray):
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    assign = d2.argmin(axis=1)  # ties resolve to the lowest centroid index
    return assign, d2


def _kmeanspp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy k-means++: several D^2-sampled candidates per step, best potential kept."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[int(rng.integers(n))]
    closest = ((points - centroids[0]) ** 2).sum(axis=1)
    n_trials = 3 if k > 1 else 1
    for i in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            centroids[i] = points[int(rng.integers(n))]
            continue
        candidates = rng.choice(n, size=n_trials, p=closest / total, replace=True)
        best_closest = None
        best_idx = None
        for cand in candidates:
            cand_closest = np.minimum(closest, ((points - points[cand]) ** 2).sum(axis=1))
            if best_closest is None or cand_closest.sum() < best_closest.sum():
                best_closest = cand_closest
                best_idx = int(cand)
        centroids[i] = points[best_idx]
        closest = best_closest
    return centroids


def _seize_for_empty_clusters(points: np.ndarray, centroids: np.ndarray, assign: np.ndarray) -> None:
    """Give every empty cluster the point farthest from its own centroid.

    The seized point's centroid is relocated onto it, so its cost drops to
    zero and the within-cluster SSE cannot increase. Donor clusters are only
    robbed while they keep at least one member.
    """
    k = centroids.shape[0]
    for c in range(k):
        if (assign == c).any():
            continue
        counts = np.bincount(assign, minlength=k)
        own = ((points - centroids[assign]) ** 2).sum(axis=1)
        own[counts[assign] < 2] = -1.0
        j = int(own.argmax())
        assign[j] = c
        centroids[c] = points[j]


def kmeans(points, k: int, rng: np.random.Generator) -> ClusterResult:
    """Lloyd iterations from a greedy k-means++ start; deterministic given (points, k, seed).

    Nearest-centroid ties break toward the lowest centroid index; empty
    clusters seize the point farthest from its centroid. The within-cluster
    SSE is checked to be non-increasing on every iteration.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise NumericError(f"points must be (n, dim), got shape {points.shape}")
    n = points.shape[0]
    if k < 1:
        raise NumericError(f"k must be >= 1, got {k}")
    if n < k:
        raise NumericError(f"need at least k={k} points, got {n}")

    centroids = _kmeanspp(points, k, rng)
    assign, _ = _nearest(points, centroids)
    _seize_for_empty_clusters(points, centroids, assign)
    inertia = float(((points - centroids[assign]) ** 2).sum())
    trace = [inertia]

    iterations = 0
    for _ in range(100):
        iterations += 1
        centroids = np.stack([points[assign == c].mean(axis=0) for c in range(k)])
        new_assign, _ = _nearest(points, centroids)
        _seize_for_empty_clusters(points, centroids, new_assign)
        new_inertia = float(((points - centroids[new_assign]) ** 2).sum())
        if new_inertia > inertia + 1e-9 * max(1.0, inertia):
            raise NumericError(
                f"k-means inertia increased: {inertia} -> {new_inertia} at iteration {iterations}"
            )
        converged = bool((new_assign == assign).all())
        assign = new_assign
        inertia = new_inertia
        trace.append(inertia)
        if converged:
            break
    return ClusterResult(
        k=k,
        centroids=centroids,
        assignments=assign,
        inertia=inertia,
        iterations=iterations,
        inertia_trace=trace,
    )


def kmeans_best_of(points, k: int, rng: np.random.Generator, restarts: int = 10) -> ClusterResult:
    best: ClusterResult | None = None
    for _ in range(restarts):
        result = kmeans(points, k, rng)
        if best is None or result.inertia < best.inertia:
            best = result
    return best


def mask_from_clusters(cr: ClusterResult, grid: PatchGrid) -> np.ndarray:
    """1 where a patch shares the exemplar embedding's cluster, else 0."""
    expected = grid.h * grid.w + 1
    if cr.assignments.shape[0] != expected:
        raise NumericError(
            f"cluster result covers {cr.assignments.shape[0]} points, expected {expected}"
        )
    exemplar_cluster = cr.assignments[-1]
    mask = (cr.assignments[:-1] == exemplar_cluster).reshape(grid.h, grid.w).astype(np.float64)
    if mask.sum() == 0.0:
        logger.warning("exemplar embedding fell into a singleton cluster; mask is all zeros")
    return mask


def optimal_k_mask(
    model: CounterModel,
    scene: Scene,
    k_range: tuple[int, int],
    rng: np.random.Generator,
    sigma: float = 2.0,
    exemplar_size: int = 32,
    restarts: int = 3,
) -> PseudoLabelResult:
    """Search the cluster count whose mask minimizes the counting loss.

    Ties break toward the smaller k. The per-k losses are returned so the
    argmin can be re-verified from the persisted artifact. Each k uses a few
    k-means restarts: a single seeding makes the selected mask flip between
    unrelated local optima from run to run.
    """
    k_min, k_max = k_range
    if k_min < 1 or k_min > k_max:
        raise NumericError(f"bad k_range {k_range}")
    grid, patches = tile_patches(scene.image, scene.exemplars, model.r)
    embeds = np.stack([embed_patch(p) for p in patches])
    fb = exemplar_embedding(scene.image, scene.exemplars, grid)
    points = np.vstack([embeds, fb[None]])

    exemplars = make_exemplars(scene, exemplar_size)
    gt = build_gt_density(scene, model.r, sigma)

    per_k_loss: dict[int, float] = {}
    best_k = None
    best_mask = None
    for k in range(k_min, k_max + 1):
        cr = kmeans_best_of(points, k, rng, restarts=restarts)
        mask = mask_from_clusters(cr, grid)
        density = predict_density(model, scene.image, exemplars, mask)
        per_k_loss[k] = loss_count(density, gt)
        if best_k is None or per_k_loss[k] < per_k_loss[best_k]:
            best_k = k
            best_mask = mask
    return PseudoLabelResult(mask=best_mask, k_star=best_k, per_k_loss=per_k_loss, strategy="kmeans")


def kmeans_mask_at(
    model: CounterModel,
    scene: Scene,
    k: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Mask for one fixed cluster count (used by the timing benchmark)."""
    grid, patches = tile_patches(scene.image, scene.exemplars, model.r)
    embeds = np.stack([embed_patch(p) for p in patches])
    fb = exemplar_embedding(scene.image, scene.exemplars, grid)
    points = np.vstack([embeds, fb[None]])
    return mask_from_clusters(kmeans(points, k, rng), grid)


def dotbox_mask(scene: Scene, size_mode: str, r: int = 8) -> np.ndarray:
    """1 where a cell center falls inside a pseudo box centered on a target dot."""
    if size_mode not in ("mean", "min", "max"):
        raise ValueError(f"size_mode must be mean|min|max, got {size_mode!r}")
    agg = {"mean": np.mean, "min": np.min, "max": np.max}[size_mode]
    bw = float(agg([b.width for b in scene.exemplars]))
    bh = float(agg([b.height for b in scene.exemplars]))
    h, w = scene.height // r, scene.width // r
    cx = np.arange(w) * r + 0.5 * r
    cy = np.arange(h) * r + 0.5 * r
    mask = np.zeros((h, w))
    for dot in scene.dots:
        if dot.class_id != scene.target_class:
            continue
        inside_x = np.abs(cx - dot.x) <= bw / 2.0
        inside_y = np.abs(cy - dot.y) <= bh / 2.0
        mask[np.ix_(inside_y, inside_x)] = 1.0
    return mask


def threshold_mask(
    model: CounterModel, scene: Scene, tau: float, exemplar_size: int = 32
) -> np.ndarray:
    """Binarize the min-max-normalized similarity map at tau."""
    if not 0.0 <= tau <= 1.0:
        raise NumericError(f"tau must lie in [0, 1], got {tau}")
    s = similarity_map(model, scene.image, make_exemplars(scene, exemplar_size))
    return (minmax_normalize(s) >= tau).astype(np.float64)


def verify_k_star(result: PseudoLabelResult) -> bool:
    """True iff k_star is the argmin of per_k_loss with smaller-k tie-breaking."""
    best = min(sorted(result.per_k_loss), key=lambda k: (result.per_k_loss[k], k))
    return result.k_star == best


def save_pseudo_result(path, result: PseudoLabelResult, fingerprint: str | None = None) -> None:
    h, w = result.mask.shape
    bits = "".join("1" if v else "0" for v in result.mask.ravel())
    doc = {
        "version": 1,
        "strategy": result.strategy,
        "k_star": int(result.k_star),
        "per_k_loss": {str(k): float(v) for k, v in sorted(result.per_k_loss.items())},
        "mask": {"h": int(h), "w": int(w), "bits": bits},
    }
    if fingerprint is not None:
        doc["fingerprint"] = fingerprint
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True)
        f.write("\n")


def load_pseudo_result(path) -> tuple[PseudoLabelResult, str | None]:
    path = Path(path)
    if not path.exists():
        raise ParseError(path, "pseudo mask", "file not found")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(path, "json", f"{e.msg} at offset {e.pos}") from e
    if doc.get("version") != 1:
        raise ParseError(path, "version", f"unsupported version {doc.get('version')!r}")
    mask_doc = doc.get("mask")
    if not isinstance(mask_doc, dict):
        raise ParseError(path, "mask", "expected an object")
    h, w = mask_doc.get("h"), mask_doc.get("w")
    bits = mask_doc.get("bits")
    if not isinstance(h, int) or not isinstance(w, int) or not isinstance(bits, str):
        raise ParseError(path, "mask", "expected integer h/w and string bits")
    if len(bits) != h * w or set(bits) - {"0", "1"}:
        raise ParseError(path, "mask.bits", f"expected {h * w} chars of 0/1")
    mask = np.array([1.0 if c == "1" else 0.0 for c in bits]).reshape(h, w)
    per_k_raw = doc.get("per_k_loss", {})
    if not isinstance(per_k_raw, dict):
        raise ParseError(path, "per_k_loss", "expected an object")
    try:
        per_k = {int(k): float(v) for k, v in per_k_raw.items()}
    except (TypeError, ValueError) as e:
        raise ParseError(path, "per_k_loss", str(e)) from e
    k_star = doc.get("k_star")
    if not isinstance(k_star, int):
        raise ParseError(path, "k_star", "expected an integer")
    result = PseudoLabelResult(
        mask=mask, k_star=k_star, per_k_loss=per_k, strategy=str(doc.get("strategy", "kmeans"))
    )
    return result, doc.get("fingerprint")
