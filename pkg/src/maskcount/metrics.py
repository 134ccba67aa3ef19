"""Counting metrics, region-split errors, timing tables, and distance statistics.

Multi-class scenes charge the full predicted mass on the non-interest side as
error on top of the interest-side miscount; single-class scenes use the plain
absolute error. SRE follows the printed formula (epsilon^2 / y, not y^2).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .counter import CounterModel, count, make_exemplars, predict_density
from .errors import NumericError
from .grids import as_grid
from .pseudolabel import kmeans_mask_at
from .scenes import Scene
from .segmenter import SegModel, binarize, predict_mask


@dataclass
class CountOutcome:
    scene_id: str
    y: float  # ground-truth count on the interest area
    yhat: float  # predicted count on the interest area
    yhat_bar: float  # predicted count on the non-interest area (0 for single-class)
    wall_time_s: float = 0.0


@dataclass
class MetricsReport:
    mae: float
    rmse: float
    nae: float
    sre: float
    n: int
    mean_time_s: float
    fingerprint: str = ""
    excluded_nae: int = 0


@dataclass
class DistanceStats:
    intra: float
    inter: float


def scene_error(outcome: CountOutcome, multiclass: bool) -> float:
    err = abs(outcome.y - outcome.yhat)
    if multiclass:
        err += outcome.yhat_bar
    return err


def aggregate(outcomes: list[CountOutcome], multiclass: bool, fingerprint: str = "") -> MetricsReport:
    """MAE/RMSE over all scenes; NAE/SRE over scenes with y > 0."""
    if not outcomes:
        raise NumericError("aggregate requires at least one outcome")
    errors = np.array([scene_error(o, multiclass) for o in outcomes])
    ys = np.array([o.y for o in outcomes])
    mae = float(errors.mean())
    rmse = float(np.sqrt((errors**2).mean()))
    positive = ys > 0.0
    excluded = int((~positive).sum())
    if positive.any():
        nae = float((errors[positive] / ys[positive]).mean())
        sre = float(np.sqrt((errors[positive] ** 2 / ys[positive]).mean()))
    else:
        nae = 0.0
        sre = 0.0
    mean_time = float(np.mean([o.wall_time_s for o in outcomes]))
    return MetricsReport(
        mae=mae,
        rmse=rmse,
        nae=nae,
        sre=sre,
        n=len(outcomes),
        mean_time_s=mean_time,
        fingerprint=fingerprint,
        excluded_nae=excluded,
    )


def split_count_by_region(density: np.ndarray, scene: Scene) -> tuple[float, float]:
    """(interest-side mass, non-interest-side mass) split at the recorded seam column."""
    density = as_grid(density)
    if scene.interest_region is None:
        raise NumericError("scene has no interest region; multi-class evaluation needs one")
    seam = scene.meta.get("seam_col")
    if not isinstance(seam, int) or not 0 <= seam <= density.shape[1]:
        raise NumericError(f"bad seam column {seam!r} for density width {density.shape[1]}")
    left = float(density[:, :seam].sum())
    right = float(density[:, seam:].sum())
    if scene.interest_region == "left":
        return left, right
    return right, left


@dataclass
class TimingTable:
    k_values: list[int]
    unmasked_s: float
    kmeans_s: dict[int, float]
    segmenter_s: float
    n_scenes: int
    warmup: int = 2

    def columns(self) -> list[tuple[str, float]]:
        cols = [("none", self.unmasked_s)]
        cols += [(f"kmeans_k{k}", self.kmeans_s[k]) for k in self.k_values]
        cols.append(("segmenter", self.segmenter_s))
        return cols


def bench_timing(
    counter: CounterModel,
    seg: SegModel,
    scenes: list[Scene],
    k_range: tuple[int, int],
    seed: int = 0,
    tau: float = 0.5,
    exemplar_size: int = 32,
    warmup: int = 2,
) -> TimingTable:
    """Mean per-scene wall time of unmasked, fixed-k K-Means, and segmenter counting.

    The first `warmup` scenes are timed but excluded from the means. Runs are
    strictly sequential on one thread.
    """
    if len(scenes) < warmup + 1:
        raise NumericError(f"need more than {warmup} scenes, got {len(scenes)}")
    k_values = list(range(k_range[0], k_range[1] + 1))
    times: dict[str, list[float]] = {"none": [], "segmenter": []}
    for k in k_values:
        times[f"k{k}"] = []
    rng = np.random.default_rng(seed)
    for scene in scenes:
        exemplars = make_exemplars(scene, exemplar_size)

        t0 = time.perf_counter()
        count(predict_density(counter, scene.image, exemplars))
        times["none"].append(time.perf_counter() - t0)

        for k in k_values:
            t0 = time.perf_counter()
            mask = kmeans_mask_at(counter, scene, k, rng)
            count(predict_density(counter, scene.image, exemplars, mask))
            times[f"k{k}"].append(time.perf_counter() - t0)

        t0 = time.perf_counter()
        mask = binarize(predict_mask(seg, scene.image, exemplars), tau)
        count(predict_density(counter, scene.image, exemplars, mask))
        times["segmenter"].append(time.perf_counter() - t0)

    def mean_after_warmup(values: list[float]) -> float:
        return float(np.mean(values[warmup:]))

    return TimingTable(
        k_values=k_values,
        unmasked_s=mean_after_warmup(times["none"]),
        kmeans_s={k: mean_after_warmup(times[f"k{k}"]) for k in k_values},
        segmenter_s=mean_after_warmup(times["segmenter"]),
        n_scenes=len(scenes) - warmup,
        warmup=warmup,
    )


def distance_stats(embeddings: list[tuple[np.ndarray, int]]) -> DistanceStats:
    """Intra: mean distance to own class center. Inter: mean nearest-center distance."""
    by_class: dict[int, list[np.ndarray]] = {}
    for vec, class_id in embeddings:
        by_class.setdefault(class_id, []).append(np.asarray(vec, dtype=np.float64))
    if len(by_class) < 2:
        raise NumericError(f"distance_stats needs >= 2 classes, got {len(by_class)}")
    centers = {c: np.stack(vecs).mean(axis=0) for c, vecs in by_class.items()}
    intra_terms = [
        float(np.linalg.norm(vec - centers[c])) for c, vecs in by_class.items() for vec in vecs
    ]
    class_ids = sorted(centers)
    inter_terms = []
    for c in class_ids:
        others = [float(np.linalg.norm(centers[c] - centers[o])) for o in class_ids if o != c]
        inter_terms.append(min(others))
    return DistanceStats(intra=float(np.mean(intra_terms)), inter=float(np.mean(inter_terms)))
