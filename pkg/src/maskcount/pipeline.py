"""Pipeline commands: dataset generation, training, pseudo-labeling, evaluation.

Each command reads/writes artifacts under the configured paths, embeds the
config fingerprint in everything it writes, and appends a run log. All
randomness derives from the root seed through named substreams, so any stage
can be re-run independently and reproduce identical artifacts.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import Config
from .counter import (
    CounterModel,
    count,
    exemplar_vector,
    init_counter_model,
    load_counter,
    make_exemplars,
    predict_density,
    save_counter,
    train_base,
)
from .errors import ConfigError, MissingArtifactError, NumericError, ParseError
from .grids import named_stream
from .metrics import (
    CountOutcome,
    DistanceStats,
    aggregate,
    bench_timing,
    distance_stats,
    split_count_by_region,
)
from .plots import (
    ensure_dir,
    save_loss_curve,
    save_metrics_figure,
    save_scene_panel,
    save_timing_figure,
)
from .ppmio import write_pgm
from .pseudolabel import (
    dotbox_mask,
    load_pseudo_result,
    optimal_k_mask,
    save_pseudo_result,
    threshold_mask,
    verify_k_star,
)
from .scenes import (
    DESK_CLASSES,
    Scene,
    build_gt_density,
    clutter_class,
    generate_single_class_scene,
    load_scene,
    save_scene,
    synthesize_multiclass,
)
from .segmenter import (
    SegModel,
    binarize,
    init_seg_model,
    load_segmenter,
    masked_count,
    predict_mask,
    save_segmenter,
    train_seg,
)

MULTI_FACTOR = 2  # multi-class scenes synthesized per single scene in a split


def worker_count() -> int:
    raw = os.environ.get("MASKCOUNT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def parallel_map(fn, items):
    """Map preserving input order; uses a thread pool when MASKCOUNT_THREADS > 1."""
    items = list(items)
    n = worker_count()
    if n <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def derive_seed(root: int, name: str) -> int:
    return int(named_stream(root, name).integers(0, 2**63))


def _log(cfg: Config, command: str, lines: list[str]) -> None:
    log_dir = ensure_dir(Path(cfg.paths.reports_dir) / "logs")
    stamp = time.strftime("%Y-%m-%d %H:%M:%S")
    with open(log_dir / f"{command}.log", "a", encoding="utf-8") as f:
        f.write(f"[{stamp}] fingerprint={cfg.fingerprint()} seed={cfg.train.seed}\n")
        for line in lines:
            f.write(f"  {line}\n")


def _check_fingerprint(found: str | None, cfg: Config, what: str, force: bool) -> None:
    if force:
        return
    expected = cfg.fingerprint()
    if found != expected:
        raise ConfigError(
            f"{what} was produced with fingerprint {found!r}, current config is {expected!r} "
            "(pass --force to compare anyway)"
        )


# ---------------------------------------------------------------------------
# dataset

def manifest_path(cfg: Config) -> Path:
    return Path(cfg.paths.data_dir) / "manifest.json"


def load_manifest(cfg: Config) -> dict:
    path = manifest_path(cfg)
    if not path.exists():
        raise MissingArtifactError(str(path), "maskcount gen")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(path, "json", f"{e.msg} at offset {e.pos}") from e
    if doc.get("version") != 1 or not isinstance(doc.get("scenes"), list):
        raise ParseError(path, "version/scenes", "unexpected manifest structure")
    return doc


def manifest_scenes(cfg: Config, manifest: dict, split: str, kind: str) -> list[dict]:
    return [s for s in manifest["scenes"] if s["split"] == split and s["kind"] == kind]


def load_manifest_scene(cfg: Config, entry: dict) -> Scene:
    scene = load_scene(Path(cfg.paths.data_dir) / entry["dir"])
    scene.meta.setdefault("id", entry["id"])
    return scene


def cmd_gen(cfg: Config, n_train: int = 40, n_val: int = 12, n_test: int = 25) -> dict:
    """Generate single-class scenes per split plus multi-class concatenations."""
    for name, n in (("train", n_train), ("val", n_val), ("test", n_test)):
        if n < 2:
            raise ConfigError(f"split '{name}' needs at least 2 scenes, got {n}")
    root = cfg.train.seed
    data_dir = ensure_dir(cfg.paths.data_dir)
    entries: list[dict] = []

    n_classes = len(DESK_CLASSES)
    for split, n in (("train", n_train), ("val", n_val), ("test", n_test)):
        def make_single(i: int) -> Scene:
            class_id = i % n_classes
            seed = derive_seed(root, f"gen-{split}-single-{i}")
            scene = generate_single_class_scene(
                DESK_CLASSES[class_id],
                cfg.canvas,
                seed,
                class_id,
                clutter_spec=DESK_CLASSES[clutter_class(class_id, n_classes)],
            )
            scene.meta["id"] = f"{split}-single-{i:03d}"
            return scene

        singles = parallel_map(make_single, range(n))
        for scene in singles:
            rel = f"{split}/single_{scene.meta['id'].rsplit('-', 1)[1]}"
            save_scene(scene, data_dir / rel)
            entries.append(
                {
                    "id": scene.meta["id"],
                    "split": split,
                    "kind": "single",
                    "dir": rel,
                    "target_class": scene.target_class,
                }
            )

        def make_multi(i: int) -> Scene:
            rng = named_stream(root, f"gen-{split}-multi-{i}")
            ia = int(rng.integers(len(singles)))
            class_a = singles[ia].target_class
            # the partner must differ from both the target class and its
            # clutter class, so neither half carries the other's target look
            banned = {class_a, clutter_class(class_a, n_classes)}
            candidates = [
                j for j in range(len(singles)) if singles[j].target_class not in banned
            ]
            if not candidates:
                raise ConfigError(f"split '{split}' has a single class; cannot synthesize")
            ib = candidates[int(rng.integers(len(candidates)))]
            seed = int(rng.integers(0, 2**63))
            scene = synthesize_multiclass(singles[ia], singles[ib], seed, cfg.r)
            scene.meta["id"] = f"{split}-multi-{i:03d}"
            scene.meta["source_ids"] = [singles[ia].meta["id"], singles[ib].meta["id"]]
            return scene

        multis = parallel_map(make_multi, range(MULTI_FACTOR * n))
        for scene in multis:
            rel = f"{split}/multi_{scene.meta['id'].rsplit('-', 1)[1]}"
            save_scene(scene, data_dir / rel)
            entries.append(
                {
                    "id": scene.meta["id"],
                    "split": split,
                    "kind": "multi",
                    "dir": rel,
                    "target_class": scene.target_class,
                    "source_ids": scene.meta["source_ids"],
                }
            )

    manifest = {
        "version": 1,
        "fingerprint": cfg.fingerprint(),
        "counts": {"train": n_train, "val": n_val, "test": n_test, "multi_factor": MULTI_FACTOR},
        "scenes": entries,
    }
    with open(manifest_path(cfg), "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=1)
        f.write("\n")
    _log(cfg, "gen", [f"wrote {len(entries)} scenes under {data_dir}"])
    return manifest


# ---------------------------------------------------------------------------
# training

def counter_path(cfg: Config) -> Path:
    return Path(cfg.paths.models_dir) / "counter" / "model.json"


def segmenter_path(cfg: Config) -> Path:
    return Path(cfg.paths.models_dir) / "segmenter" / "model.json"


def require_counter(cfg: Config) -> tuple[CounterModel, str | None]:
    path = counter_path(cfg)
    if not path.exists():
        raise MissingArtifactError(str(path), "maskcount train-base")
    return load_counter(path)


def require_segmenter(cfg: Config) -> tuple[SegModel, str | None]:
    path = segmenter_path(cfg)
    if not path.exists():
        raise MissingArtifactError(str(path), "maskcount train-seg")
    return load_segmenter(path)


def cmd_train_base(cfg: Config) -> CounterModel:
    manifest = load_manifest(cfg)
    entries = manifest_scenes(cfg, manifest, "train", "single")
    if not entries:
        raise MissingArtifactError("train single-class scenes", "maskcount gen")
    scenes = parallel_map(lambda e: load_manifest_scene(cfg, e), entries)
    model = init_counter_model(cfg.r, cfg.d, derive_seed(cfg.train.seed, "init-base"))
    train_cfg = replace(cfg.train, seed=derive_seed(cfg.train.seed, "train-base"))
    train_base(model, scenes, train_cfg, sigma=cfg.sigma, exemplar_size=cfg.exemplar_size)
    save_counter(model, counter_path(cfg), cfg.fingerprint())
    reports = ensure_dir(cfg.paths.reports_dir)
    save_loss_curve(model.loss_history, reports / "train_base_loss.png", "base counter training")
    _log(
        cfg,
        "train-base",
        [
            f"{len(scenes)} scenes, {cfg.train.epochs} epochs",
            f"loss {model.loss_history[0]:.4f} -> {model.loss_history[-1]:.4f}",
            f"wrote {counter_path(cfg)}",
        ],
    )
    return model


def pseudo_mask_path(cfg: Config, scene_id: str) -> Path:
    return Path(cfg.paths.data_dir) / "pseudo_masks" / f"{scene_id}.json"


def cmd_pseudo_label(cfg: Config, dump_images: bool = False) -> dict[str, int]:
    """Optimal-K masks for the train and val multi-class scenes."""
    manifest = load_manifest(cfg)
    model, _ = require_counter(cfg)
    root = cfg.train.seed
    written: dict[str, int] = {}
    dump_dir = ensure_dir(Path(cfg.paths.reports_dir) / "dumps") if dump_images else None
    for split in ("train", "val"):
        entries = manifest_scenes(cfg, manifest, split, "multi")

        def label_one(entry: dict):
            scene = load_manifest_scene(cfg, entry)
            rng = named_stream(root, f"kmeans-{entry['id']}")
            result = optimal_k_mask(
                model, scene, cfg.k_range, rng, sigma=cfg.sigma, exemplar_size=cfg.exemplar_size
            )
            return entry["id"], result

        for scene_id, result in parallel_map(label_one, entries):
            path = pseudo_mask_path(cfg, scene_id)
            save_pseudo_result(path, result, cfg.fingerprint())
            reloaded, _ = load_pseudo_result(path)
            if not verify_k_star(reloaded):
                raise NumericError(f"{path}: stored k_star is not the argmin of per_k_loss")
            if dump_dir is not None:
                write_pgm(dump_dir / f"{scene_id}_pseudo.pgm", reloaded.mask)
        written[split] = len(entries)
    _log(cfg, "pseudo-label", [f"labeled {written} multi scenes"])
    return written


def load_pseudo_masks(cfg: Config, entries: list[dict]):
    pairs = []
    for entry in entries:
        path = pseudo_mask_path(cfg, entry["id"])
        if not path.exists():
            raise MissingArtifactError(str(path), "maskcount pseudo-label")
        result, fingerprint = load_pseudo_result(path)
        pairs.append((entry, result, fingerprint))
    return pairs


def cmd_train_seg(cfg: Config) -> SegModel:
    manifest = load_manifest(cfg)
    entries = manifest_scenes(cfg, manifest, "train", "multi")
    if not entries:
        raise MissingArtifactError("train multi-class scenes", "maskcount gen")
    data = []
    for entry, result, _ in load_pseudo_masks(cfg, entries):
        scene = load_manifest_scene(cfg, entry)
        data.append((scene, result.mask))
    model = init_seg_model(cfg.r, cfg.d, derive_seed(cfg.train.seed, "init-seg"))
    train_cfg = replace(cfg.train, seed=derive_seed(cfg.train.seed, "train-seg"))
    train_seg(model, data, train_cfg, exemplar_size=cfg.exemplar_size)
    save_segmenter(model, segmenter_path(cfg), cfg.fingerprint())
    reports = ensure_dir(cfg.paths.reports_dir)
    save_loss_curve(model.loss_history, reports / "train_seg_loss.png", "segmentation training")
    _log(
        cfg,
        "train-seg",
        [
            f"{len(data)} scenes, {cfg.train.epochs} epochs",
            f"loss {model.loss_history[0]:.4f} -> {model.loss_history[-1]:.4f}",
            f"wrote {segmenter_path(cfg)}",
        ],
    )
    return model


# ---------------------------------------------------------------------------
# counting paths

def _count_outcome_multi(scene: Scene, density: np.ndarray, elapsed: float) -> CountOutcome:
    yhat, yhat_bar = split_count_by_region(density, scene)
    return CountOutcome(
        scene_id=scene.meta.get("id", "?"),
        y=float(scene.target_count()),
        yhat=yhat,
        yhat_bar=yhat_bar,
        wall_time_s=elapsed,
    )


def run_method_on_scene(
    cfg: Config,
    method: str,
    scene: Scene,
    counter: CounterModel,
    seg: SegModel | None,
) -> tuple[np.ndarray, np.ndarray | None, float]:
    """Returns (density, mask or None, elapsed seconds) for one counting path."""
    exemplars = make_exemplars(scene, cfg.exemplar_size)
    t0 = time.perf_counter()
    if method == "none":
        mask = None
    elif method == "kmeans":
        rng = named_stream(cfg.train.seed, f"kmeans-{scene.meta.get('id', 'scene')}")
        result = optimal_k_mask(
            counter, scene, cfg.k_range, rng, sigma=cfg.sigma, exemplar_size=cfg.exemplar_size
        )
        mask = result.mask
    elif method == "segmenter":
        if seg is None:
            raise MissingArtifactError("segmenter model", "maskcount train-seg")
        mask = binarize(predict_mask(seg, scene.image, exemplars), cfg.tau)
    elif method.startswith("dotbox:"):
        mask = dotbox_mask(scene, method.split(":", 1)[1], r=cfg.r)
    elif method.startswith("threshold:"):
        mask = threshold_mask(counter, scene, float(method.split(":", 1)[1]), cfg.exemplar_size)
    else:
        raise ConfigError(f"unknown counting method {method!r}")
    density = predict_density(counter, scene.image, exemplars, mask)
    elapsed = time.perf_counter() - t0
    return density, mask, elapsed


def _report_rows(reports: dict[str, object]) -> list[dict]:
    rows = []
    for method, rep in reports.items():
        rows.append(
            {
                "method": method,
                "n": rep.n,
                "mae": rep.mae,
                "rmse": rep.rmse,
                "nae": rep.nae,
                "sre": rep.sre,
                "mean_time_s": rep.mean_time_s,
                "excluded_nae": rep.excluded_nae,
            }
        )
    return rows


def _write_report(rows: list[dict], extra: dict, reports_dir: Path, stem: str, cfg: Config):
    ensure_dir(reports_dir)
    csv_path = reports_dir / f"{stem}.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(
            f,
            fieldnames=["method", "n", "mae", "rmse", "nae", "sre", "mean_time_s", "excluded_nae"],
        )
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    doc = {"version": 1, "fingerprint": cfg.fingerprint(), "rows": rows}
    doc.update(extra)
    with open(reports_dir / f"{stem}.json", "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
        f.write("\n")
    save_metrics_figure(rows, reports_dir / f"{stem}.png")
    return csv_path


def segmentation_iou(cfg: Config, seg: SegModel, force: bool = False) -> float:
    """Mean IoU of binarized predictions vs stored val pseudo masks."""
    manifest = load_manifest(cfg)
    entries = manifest_scenes(cfg, manifest, "val", "multi")
    pairs = load_pseudo_masks(cfg, entries)
    ious = []
    for entry, result, fingerprint in pairs:
        _check_fingerprint(fingerprint, cfg, f"pseudo mask {entry['id']}", force)
        scene = load_manifest_scene(cfg, entry)
        pred = binarize(
            predict_mask(seg, scene.image, make_exemplars(scene, cfg.exemplar_size)), cfg.tau
        )
        inter = float(np.logical_and(pred == 1.0, result.mask == 1.0).sum())
        union = float(np.logical_or(pred == 1.0, result.mask == 1.0).sum())
        ious.append(1.0 if union == 0.0 else inter / union)
    return float(np.mean(ious))


def cmd_eval(cfg: Config, force: bool = False, dump_images: bool = False) -> dict:
    manifest = load_manifest(cfg)
    _check_fingerprint(manifest.get("fingerprint"), cfg, "dataset manifest", force)
    counter, counter_fp = require_counter(cfg)
    _check_fingerprint(counter_fp, cfg, "counter model", force)
    seg, seg_fp = require_segmenter(cfg)
    _check_fingerprint(seg_fp, cfg, "segmenter model", force)

    test_multi = manifest_scenes(cfg, manifest, "test", "multi")
    scenes = [load_manifest_scene(cfg, e) for e in test_multi]
    methods = ["none", "kmeans", "segmenter"]
    reports = {}
    dump_dir = ensure_dir(Path(cfg.paths.reports_dir) / "dumps") if dump_images else None
    for method in methods:
        outcomes = []
        for scene in scenes:
            density, mask, elapsed = run_method_on_scene(cfg, method, scene, counter, seg)
            outcomes.append(_count_outcome_multi(scene, density, elapsed))
            if dump_dir is not None:
                scene_id = scene.meta["id"]
                peak = density.max()
                write_pgm(
                    dump_dir / f"{scene_id}_{method}_density.pgm",
                    density / peak if peak > 0 else density,
                )
                if mask is not None:
                    write_pgm(dump_dir / f"{scene_id}_{method}_mask.pgm", mask)
        reports[method] = aggregate(outcomes, multiclass=True, fingerprint=cfg.fingerprint())

    # reference row: unmasked counting on single-class test scenes
    single_entries = manifest_scenes(cfg, manifest, "test", "single")
    single_scenes = [load_manifest_scene(cfg, e) for e in single_entries]
    single_outcomes = []
    embeddings = []
    for scene in single_scenes:
        exemplars = make_exemplars(scene, cfg.exemplar_size)
        t0 = time.perf_counter()
        density = predict_density(counter, scene.image, exemplars)
        elapsed = time.perf_counter() - t0
        single_outcomes.append(
            CountOutcome(
                scene_id=scene.meta.get("id", "?"),
                y=float(scene.target_count()),
                yhat=count(density),
                yhat_bar=0.0,
                wall_time_s=elapsed,
            )
        )
        for vec in exemplar_vector(counter, exemplars):
            embeddings.append((vec, scene.target_class))
    reports["single-none"] = aggregate(
        single_outcomes, multiclass=False, fingerprint=cfg.fingerprint()
    )

    stats = distance_stats(embeddings)
    iou = segmentation_iou(cfg, seg, force)
    rows = _report_rows(reports)
    extra = {
        "distance_stats": {"intra": stats.intra, "inter": stats.inter},
        "segmentation": {"val_mean_iou": iou, "tau": cfg.tau},
    }
    csv_path = _write_report(rows, extra, Path(cfg.paths.reports_dir), "report", cfg)

    if dump_dir is not None:
        for scene in scenes[:6]:
            density, mask, _ = run_method_on_scene(cfg, "segmenter", scene, counter, seg)
            save_scene_panel(
                scene.image,
                density,
                mask,
                dump_dir / f"{scene.meta['id']}_panel.png",
                title=scene.meta["id"],
            )

    _log(
        cfg,
        "eval",
        [f"{row['method']}: MAE {row['mae']:.3f} RMSE {row['rmse']:.3f}" for row in rows]
        + [f"val mean IoU {iou:.3f}", f"wrote {csv_path}"],
    )
    return {"rows": rows, "distance_stats": stats, "val_mean_iou": iou}


ABLATE_DOTBOX_MODES = ("mean", "min", "max")
ABLATE_THRESHOLDS = (0.2, 0.4, 0.6, 0.8)


def _ablate_seg_path(cfg: Config, mode: str) -> Path:
    return Path(cfg.paths.models_dir) / "ablate" / f"dotbox_{mode}" / "model.json"


def train_dotbox_segmenter(cfg: Config, mode: str) -> SegModel:
    """Segmentation model supervised by dot-box masks instead of K-Means masks."""
    path = _ablate_seg_path(cfg, mode)
    if path.exists():
        model, fingerprint = load_segmenter(path)
        if fingerprint == cfg.fingerprint():
            return model
    manifest = load_manifest(cfg)
    entries = manifest_scenes(cfg, manifest, "train", "multi")
    data = []
    for entry in entries:
        scene = load_manifest_scene(cfg, entry)
        data.append((scene, dotbox_mask(scene, mode, r=cfg.r)))
    model = init_seg_model(cfg.r, cfg.d, derive_seed(cfg.train.seed, "init-seg"))
    train_cfg = replace(cfg.train, seed=derive_seed(cfg.train.seed, "train-seg"))
    train_seg(model, data, train_cfg, exemplar_size=cfg.exemplar_size)
    save_segmenter(model, path, cfg.fingerprint())
    return model


def cmd_ablate(cfg: Config, force: bool = False) -> list[dict]:
    """Compare pseudo-labeling strategies on the multi-class test scenes.

    Dot-box strategies follow the trained-model protocol: a segmentation model
    is trained on the dot-box masks of the training scenes and evaluated like
    the main segmenter. Threshold and K-Means rows apply their masks directly.
    """
    manifest = load_manifest(cfg)
    _check_fingerprint(manifest.get("fingerprint"), cfg, "dataset manifest", force)
    counter, counter_fp = require_counter(cfg)
    _check_fingerprint(counter_fp, cfg, "counter model", force)
    seg, seg_fp = require_segmenter(cfg)
    _check_fingerprint(seg_fp, cfg, "segmenter model", force)

    scenes = [
        load_manifest_scene(cfg, e) for e in manifest_scenes(cfg, manifest, "test", "multi")
    ]
    reports = {}

    def evaluate(method: str, seg_model: SegModel | None, effective: str | None = None):
        outcomes = []
        for scene in scenes:
            density, _, elapsed = run_method_on_scene(
                cfg, effective or method, scene, counter, seg_model
            )
            outcomes.append(_count_outcome_multi(scene, density, elapsed))
        reports[method] = aggregate(outcomes, multiclass=True, fingerprint=cfg.fingerprint())

    evaluate("none", None)
    for mode in ABLATE_DOTBOX_MODES:
        model = train_dotbox_segmenter(cfg, mode)
        evaluate(f"dotbox:{mode}", model, effective="segmenter")
    for tau in ABLATE_THRESHOLDS:
        evaluate(f"threshold:{tau}", None)
    evaluate("kmeans", None)
    evaluate("segmenter", seg)

    rows = _report_rows(reports)
    csv_path = _write_report(rows, {}, Path(cfg.paths.reports_dir), "ablate", cfg)
    _log(cfg, "ablate", [f"{row['method']}: MAE {row['mae']:.3f}" for row in rows])
    return rows


def cmd_bench_time(cfg: Config, force: bool = False, n_scenes: int = 12) -> dict:
    manifest = load_manifest(cfg)
    _check_fingerprint(manifest.get("fingerprint"), cfg, "dataset manifest", force)
    counter, counter_fp = require_counter(cfg)
    _check_fingerprint(counter_fp, cfg, "counter model", force)
    seg, seg_fp = require_segmenter(cfg)
    _check_fingerprint(seg_fp, cfg, "segmenter model", force)

    entries = manifest_scenes(cfg, manifest, "test", "multi")[:n_scenes]
    scenes = [load_manifest_scene(cfg, e) for e in entries]
    table = bench_timing(
        counter,
        seg,
        scenes,
        cfg.k_range,
        seed=derive_seed(cfg.train.seed, "bench-time"),
        tau=cfg.tau,
        exemplar_size=cfg.exemplar_size,
    )
    reports_dir = ensure_dir(cfg.paths.reports_dir)
    columns = table.columns()
    with open(reports_dir / "timing.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["method", "mean_time_s"])
        for name, sec in columns:
            writer.writerow([name, repr(sec)])
    doc = {
        "version": 1,
        "fingerprint": cfg.fingerprint(),
        "n_scenes": table.n_scenes,
        "warmup": table.warmup,
        "columns": {name: sec for name, sec in columns},
    }
    with open(reports_dir / "timing.json", "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
        f.write("\n")
    save_timing_figure(columns, reports_dir / "timing.png")
    _log(cfg, "bench-time", [f"{name}: {sec * 1e3:.2f} ms" for name, sec in columns])
    return doc


def cmd_count(
    cfg: Config,
    scene_dir,
    method: str = "none",
    tau: float | None = None,
    force: bool = False,
) -> dict:
    """Count one scene bundle with the chosen masking method."""
    scene = load_scene(scene_dir)
    counter, counter_fp = require_counter(cfg)
    _check_fingerprint(counter_fp, cfg, "counter model", force)
    seg = None
    if method == "segmenter":
        seg, seg_fp = require_segmenter(cfg)
        _check_fingerprint(seg_fp, cfg, "segmenter model", force)
    if tau is not None:
        cfg = replace(cfg, tau=tau)
    density, mask, elapsed = run_method_on_scene(cfg, method, scene, counter, seg)
    result = {
        "scene": str(scene_dir),
        "scene_id": scene.meta.get("id"),
        "method": method,
        "count": count(density),
        "wall_time_s": elapsed,
        "fingerprint": cfg.fingerprint(),
    }
    if scene.interest_region is not None:
        yhat, yhat_bar = split_count_by_region(density, scene)
        result["interest_count"] = yhat
        result["non_interest_count"] = yhat_bar
        result["gt_count"] = float(scene.target_count())
    out_dir = ensure_dir(Path(cfg.paths.reports_dir) / "counts")
    scene_id = scene.meta.get("id") or Path(scene_dir).name
    out_path = out_dir / f"{scene_id}.{method.replace(':', '_')}.json"
    with open(out_path, "w", encoding="utf-8") as f:
        json.dump(result, f, sort_keys=True, indent=1)
        f.write("\n")
    _log(cfg, "count", [f"{scene_id} via {method}: {result['count']:.3f}"])
    return result
