"""Synthetic desk-scale scenes: colored shapes with dot annotations and exemplars.

Single-class scenes hold instances of one shape/color class on a noisy
background. Multi-class scenes are horizontal concatenations of crops from
two single-class scenes of different classes; the exemplars (and the ground
truth count) come from exactly one side, recorded as the interest region.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NumericError, ParseError, PlacementError
from .grids import as_grid, gaussian_smooth, make_rng
from .ppmio import read_ppm, write_ppm

# per-instance radius multiplier range; size variation is what separates
# adaptive masks from fixed-size dot boxes downstream
SIZE_JITTER = (0.55, 1.45)


@dataclass
class DotAnnotation:
    x: float
    y: float
    class_id: int


@dataclass
class ExemplarBox:
    x0: float
    y0: float
    x1: float
    y1: float
    class_id: int

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0


@dataclass
class ShapeSpec:
    shape: str  # "disc" | "square" | "triangle"
    base_color: tuple[float, float, float]
    radius_px: float
    color_jitter: float
    count_range: tuple[int, int]


@dataclass
class Scene:
    image: np.ndarray  # (3, H, W) float in [0, 1]
    dots: list[DotAnnotation]
    exemplars: list[ExemplarBox]
    target_class: int
    interest_region: str | None  # "left" | "right" | None
    meta: dict = field(default_factory=dict)

    @property
    def height(self) -> int:
        return self.image.shape[1]

    @property
    def width(self) -> int:
        return self.image.shape[2]

    def target_count(self) -> int:
        return sum(1 for d in self.dots if d.class_id == self.target_class)

    def validate(self) -> None:
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise NumericError(f"scene image must be (3, H, W), got {self.image.shape}")
        if not np.all(np.isfinite(self.image)):
            raise NumericError("scene image contains non-finite values")
        if self.image.min() < 0.0 or self.image.max() > 1.0:
            raise NumericError("scene image values must lie in [0, 1]")
        h, w = self.height, self.width
        for i, d in enumerate(self.dots):
            if not (0.0 <= d.x < w and 0.0 <= d.y < h):
                raise NumericError(f"dot {i} at ({d.x}, {d.y}) outside {w}x{h} image")
        if not self.exemplars:
            raise NumericError("scene must carry at least one exemplar")
        for i, b in enumerate(self.exemplars):
            if not (0.0 <= b.x0 < b.x1 <= w and 0.0 <= b.y0 < b.y1 <= h):
                raise NumericError(f"exemplar {i} box ({b.x0},{b.y0},{b.x1},{b.y1}) invalid")
            if b.class_id != self.target_class:
                raise NumericError(f"exemplar {i} class {b.class_id} != target {self.target_class}")
        if self.interest_region not in (None, "left", "right"):
            raise NumericError(f"bad interest_region {self.interest_region!r}")
        if self.interest_region is not None and "seam_col" not in self.meta:
            raise NumericError("multi-class scene is missing meta.seam_col")


def clutter_class(class_id: int, n_classes: int) -> int:
    """Class paired with class_id for background clutter.

    The pairing is an involution, so both (target c, clutter c') and
    (target c', clutter c) occur across a dataset; counting the dots then
    requires exemplar conditioning rather than any fixed appearance rule.
    """
    return (class_id + n_classes // 2) % n_classes


# stand-ins for real object categories: shape x color combos
DESK_CLASSES: tuple[ShapeSpec, ...] = (
    ShapeSpec("disc", (0.85, 0.15, 0.15), 6.0, 0.05, (5, 12)),
    ShapeSpec("square", (0.15, 0.75, 0.20), 6.0, 0.05, (5, 12)),
    ShapeSpec("triangle", (0.20, 0.30, 0.85), 6.0, 0.05, (5, 12)),
    ShapeSpec("disc", (0.90, 0.75, 0.10), 6.0, 0.05, (5, 12)),
    ShapeSpec("square", (0.80, 0.15, 0.80), 6.0, 0.05, (5, 12)),
    ShapeSpec("triangle", (0.10, 0.80, 0.80), 6.0, 0.05, (5, 12)),
)


def _shape_mask_and_bbox(shape: str, cy: float, cx: float, r: float, h: int, w: int):
    yy, xx = np.ogrid[0:h, 0:w]
    dy = yy - cy
    dx = xx - cx
    if shape == "disc":
        mask = dy * dy + dx * dx <= r * r
        bbox = (cx - r, cy - r, cx + r, cy + r)
    elif shape == "square":
        half = 0.85 * r
        mask = (np.abs(dx) <= half) & (np.abs(dy) <= half)
        bbox = (cx - half, cy - half, cx + half, cy + half)
    elif shape == "triangle":
        # apex up at cy - r, base at cy + 0.8r, half-width grows to r
        t = dy + r
        mask = (t >= 0) & (t <= 1.8 * r) & (np.abs(dx) <= t / 1.8)
        bbox = (cx - r, cy - r, cx + r, cy + 0.8 * r)
    else:
        raise ValueError(f"unknown shape {shape!r}")
    return mask, bbox


def _box_iou(a, b) -> float:
    ix0 = max(a[0], b[0])
    iy0 = max(a[1], b[1])
    ix1 = min(a[2], b[2])
    iy1 = min(a[3], b[3])
    iw = max(0.0, ix1 - ix0)
    ih = max(0.0, iy1 - iy0)
    inter = iw * ih
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter) if inter > 0 else 0.0


def generate_single_class_scene(
    spec: ShapeSpec,
    canvas: tuple[int, int],
    seed: int,
    class_id: int = 0,
    clutter_spec: ShapeSpec | None = None,
    clutter_range: tuple[int, int] = (4, 9),
) -> Scene:
    """Place count_range instances of one class; dot each center; pick 1-3 exemplars.

    Pure function of its arguments. Instance bounding boxes keep pairwise
    IoU < 0.3 via rejection sampling. When clutter_spec is given, undotted
    instances of that other class are scattered as background clutter: a
    counter can then only fit the dots by keying on the exemplars, since no
    appearance rule separates targets from clutter across scenes.
    """
    h, w = canvas
    if h < 64 or w < 64:
        raise ValueError(f"canvas must be at least 64x64, got {h}x{w}")
    rng = make_rng(seed)

    base = rng.uniform(0.42, 0.50, size=3)
    image = base[:, None, None] + rng.uniform(-0.04, 0.04, size=(3, h, w))

    lo, hi = spec.count_range
    if lo < 1 or lo > hi:
        raise ValueError(f"bad count_range {spec.count_range}")
    count = int(rng.integers(lo, hi + 1))
    n_clutter = int(rng.integers(*clutter_range) if clutter_spec is not None else 0)

    boxes: list[tuple[float, float, float, float]] = []
    dots: list[DotAnnotation] = []
    tight_boxes: list[tuple[float, float, float, float]] = []
    for idx in range(count + n_clutter):
        inst = spec if idx < count else clutter_spec
        placed = False
        for _ in range(1000):
            radius = inst.radius_px * rng.uniform(*SIZE_JITTER)
            margin = max(radius, inst.radius_px)
            cx = rng.uniform(margin, w - 1 - margin)
            cy = rng.uniform(margin, h - 1 - margin)
            bbox = (cx - radius, cy - radius, cx + radius, cy + radius)
            if all(_box_iou(bbox, other) < 0.3 for other in boxes):
                placed = True
                break
        if not placed:
            raise PlacementError(
                f"placed {idx} of {count + n_clutter} instances of shape {inst.shape!r} "
                f"(radius {inst.radius_px}) on {h}x{w} canvas after 1000 attempts"
            )
        boxes.append(bbox)
        mask, tight = _shape_mask_and_bbox(inst.shape, cy, cx, radius, h, w)
        color = np.clip(
            np.asarray(inst.base_color) + rng.uniform(-inst.color_jitter, inst.color_jitter, 3),
            0.0,
            1.0,
        )
        image[:, mask] = color[:, None]
        if idx < count:
            dots.append(DotAnnotation(x=cx, y=cy, class_id=class_id))
            tight_boxes.append(tight)

    n_ex = int(rng.integers(1, min(3, count) + 1))
    chosen = sorted(rng.choice(count, size=n_ex, replace=False).tolist())
    exemplars = [
        ExemplarBox(*(float(v) for v in tight_boxes[i]), class_id=class_id) for i in chosen
    ]

    # quantize to the 8-bit grid so PPM round-trips are exact
    image = np.rint(np.clip(image, 0.0, 1.0) * 255.0) / 255.0
    scene = Scene(
        image=image,
        dots=dots,
        exemplars=exemplars,
        target_class=class_id,
        interest_region=None,
        meta={
            "seed": int(seed),
            "kind": "single",
            "shape": spec.shape,
            "radius_px": spec.radius_px,
            "count": count,
            "clutter": n_clutter,
        },
    )
    scene.validate()
    return scene


def _crop_annotations(scene: Scene, ox: int, width: int, shift: int):
    dots = [
        DotAnnotation(d.x - ox + shift, d.y, d.class_id)
        for d in scene.dots
        if ox <= d.x < ox + width
    ]
    exemplars = [
        ExemplarBox(b.x0 - ox + shift, b.y0, b.x1 - ox + shift, b.y1, b.class_id)
        for b in scene.exemplars
        if b.x0 >= ox and b.x1 <= ox + width
    ]
    return dots, exemplars


def synthesize_multiclass(a: Scene, b: Scene, seed: int, r: int = 8) -> Scene:
    """Concatenate horizontal crops of two scenes of different classes.

    Scene `a` supplies the left piece and `b` the right piece; a seeded coin
    picks which side carries the target class and its exemplars. Crop widths
    are 50-70% of each source, snapped down to multiples of `r` so the seam
    falls on a mask-cell boundary (recorded as meta.seam_col).
    """
    if a.target_class == b.target_class:
        raise ValueError("multi-class synthesis requires two different classes")
    if a.height != b.height:
        raise ValueError(f"height mismatch: {a.height} vs {b.height}")
    rng = make_rng(seed)
    target_side = "left" if int(rng.integers(2)) == 0 else "right"

    for _ in range(100):
        wa = (int(rng.uniform(0.5, 0.7) * a.width) // r) * r
        wb = (int(rng.uniform(0.5, 0.7) * b.width) // r) * r
        ox_a = int(rng.integers(0, a.width - wa + 1))
        ox_b = int(rng.integers(0, b.width - wb + 1))
        dots_a, ex_a = _crop_annotations(a, ox_a, wa, shift=0)
        dots_b, ex_b = _crop_annotations(b, ox_b, wb, shift=wa)
        target_ex = ex_a if target_side == "left" else ex_b
        if target_ex:
            break
    else:
        raise PlacementError(
            f"no crop kept an exemplar on the {target_side} side after 100 attempts"
        )

    image = np.concatenate([a.image[:, :, ox_a : ox_a + wa], b.image[:, :, ox_b : ox_b + wb]], axis=2)
    target_scene = a if target_side == "left" else b
    scene = Scene(
        image=image,
        dots=dots_a + dots_b,
        exemplars=target_ex,
        target_class=target_scene.target_class,
        interest_region=target_side,
        meta={
            "seed": int(seed),
            "kind": "multi",
            "seam_px": int(wa),
            "seam_col": int(wa // r),
            "r": int(r),
            "source_classes": [a.target_class, b.target_class],
            "source_seeds": [a.meta.get("seed"), b.meta.get("seed")],
        },
    )
    scene.validate()
    return scene


def build_gt_density(scene: Scene, r: int, sigma: float) -> np.ndarray:
    """Ground-truth density at mask resolution: smoothed unit impulses per dot.

    One unit of mass lands at cell (floor(y/r), floor(x/r)) for each
    target-class dot; the total equals the target dot count.
    """
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    h = scene.height // r
    w = scene.width // r
    impulses = np.zeros((h, w))
    for d in scene.dots:
        if d.class_id != scene.target_class:
            continue
        ci = min(int(d.y // r), h - 1)
        cj = min(int(d.x // r), w - 1)
        impulses[ci, cj] += 1.0
    return gaussian_smooth(impulses, sigma)


def save_scene(scene: Scene, directory) -> None:
    """Write image.ppm + annotations.json; loading the pair restores the scene exactly."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_ppm(directory / "image.ppm", scene.image)
    doc = {
        "version": 1,
        "target_class": scene.target_class,
        "interest_region": scene.interest_region,
        "dots": [{"x": d.x, "y": d.y, "class_id": d.class_id} for d in scene.dots],
        "exemplars": [
            {"x0": b.x0, "y0": b.y0, "x1": b.x1, "y1": b.y1, "class_id": b.class_id}
            for b in scene.exemplars
        ],
        "meta": scene.meta,
    }
    with open(directory / "annotations.json", "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
        f.write("\n")


def _req(doc: dict, key: str, kind, path, context: str = ""):
    label = f"{context}{key}"
    if key not in doc:
        raise ParseError(path, label, "missing")
    val = doc[key]
    if kind is float:
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise ParseError(path, label, f"expected number, got {type(val).__name__}")
        return float(val)
    if kind is int:
        if not isinstance(val, int) or isinstance(val, bool):
            raise ParseError(path, label, f"expected integer, got {type(val).__name__}")
        return val
    if not isinstance(val, kind):
        raise ParseError(path, label, f"expected {kind.__name__}, got {type(val).__name__}")
    return val


def load_scene(directory) -> Scene:
    """Load a scene bundle written by save_scene."""
    directory = Path(directory)
    ann_path = directory / "annotations.json"
    if not ann_path.exists():
        raise ParseError(ann_path, "annotations.json", "file not found")
    try:
        doc = json.loads(ann_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(ann_path, "json", f"{e.msg} at offset {e.pos}") from e
    if not isinstance(doc, dict):
        raise ParseError(ann_path, "root", "expected a JSON object")
    version = _req(doc, "version", int, ann_path)
    if version != 1:
        raise ParseError(ann_path, "version", f"unsupported version {version}")
    target = _req(doc, "target_class", int, ann_path)
    region = doc.get("interest_region")
    if region not in (None, "left", "right"):
        raise ParseError(ann_path, "interest_region", f"bad value {region!r}")
    dots = []
    for i, d in enumerate(_req(doc, "dots", list, ann_path)):
        if not isinstance(d, dict):
            raise ParseError(ann_path, f"dots[{i}]", "expected object")
        ctx = f"dots[{i}]."
        dots.append(
            DotAnnotation(
                _req(d, "x", float, ann_path, ctx),
                _req(d, "y", float, ann_path, ctx),
                _req(d, "class_id", int, ann_path, ctx),
            )
        )
    exemplars = []
    for i, b in enumerate(_req(doc, "exemplars", list, ann_path)):
        if not isinstance(b, dict):
            raise ParseError(ann_path, f"exemplars[{i}]", "expected object")
        ctx = f"exemplars[{i}]."
        exemplars.append(
            ExemplarBox(
                _req(b, "x0", float, ann_path, ctx),
                _req(b, "y0", float, ann_path, ctx),
                _req(b, "x1", float, ann_path, ctx),
                _req(b, "y1", float, ann_path, ctx),
                _req(b, "class_id", int, ann_path, ctx),
            )
        )
    meta = _req(doc, "meta", dict, ann_path)
    _req(meta, "seed", int, ann_path, "meta.")
    image = read_ppm(directory / "image.ppm")
    scene = Scene(
        image=image,
        dots=dots,
        exemplars=exemplars,
        target_class=target,
        interest_region=region,
        meta=meta,
    )
    scene.validate()
    return scene
