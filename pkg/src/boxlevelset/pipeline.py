"""Dataset orchestration: annotations, per-instance runs, export, metrics.

The unit of work is one (image, box) pair. For each annotated box the
pipeline enlarges the box (2.0x by default), crops the normalized image to
that window, evolves a level-set field there, and keeps the thresholded
mask plus the soft scores. Instances never interact during evolution;
overlaps are resolved afterwards by :func:`composite_masks`.

Instance ids restart at 0 within each image (they index the box list), so
exports are laid out as `<out>/<image stem>/<instance_id>.png` and results
match ground truth on the (image, instance_id) key.

Masks travel in two formats: per-instance binary PNGs at full image size,
and a single JSON file with uncompressed column-major run-length encoding
per instance. `counts` always starts with a background run, possibly of
length zero.
"""

import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .energy import EnergyParams, sigmoid
from .evolve import EvolveConfig, evolve_instance
from .grid import (
    AnnotationError,
    BoxAnnotation,
    crop_region,
    enlarge_box,
    load_image,
    normalize_image,
    resolve_path,
)

__all__ = [
    "DatasetRecord",
    "InstanceMask",
    "MetricsReport",
    "GenerationError",
    "SynthSpec",
    "load_annotations",
    "load_ground_truth",
    "run_dataset",
    "composite_masks",
    "evaluate_masks",
    "evaluate_rle_files",
    "generate_synthetic",
    "encode_rle",
    "decode_rle",
    "export_masks",
    "load_result_masks",
    "enlargement_sweep",
    "format_sweep_table",
]

log = logging.getLogger("boxlevelset")

DEFAULT_ENLARGE = 2.0


class GenerationError(ValueError):
    """Raised when a synthetic spec cannot produce valid scenes."""


@dataclass
class DatasetRecord:
    """One image with its box annotations.

    gt_masks, when present, is one full-image boolean mask per box (same
    order). image_data, when present, is the decoded (C, H, W) array and
    skips the disk read; the synthetic generator fills it so in-memory runs
    match the written PNGs bit for bit.
    """

    image: str
    boxes: list
    gt_masks: list | None = None
    image_data: np.ndarray | None = None


@dataclass
class InstanceMask:
    image: str
    image_size: tuple
    instance_id: int
    class_id: int
    box: BoxAnnotation
    region: object
    mask: np.ndarray
    probs: np.ndarray
    iterations: int = 0
    converged: bool = False


@dataclass
class MetricsReport:
    ious: list = field(default_factory=list)
    mean_iou: float | None = None
    ap50: float | None = None
    ap75: float | None = None
    runtimes: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    n_instances: int = 0

    def to_dict(self):
        return {
            "n_instances": self.n_instances,
            "mean_iou": self.mean_iou,
            "ap50": self.ap50,
            "ap75": self.ap75,
            "ious": self.ious,
            "runtimes": self.runtimes,
            "failures": self.failures,
        }


def load_annotations(path):
    """Parse an annotation JSON file into DatasetRecords.

    The format is an array of {"image": path, "boxes": [[x_min, y_min,
    x_max, y_max, class_id], ...]}. Degenerate or malformed boxes raise
    AnnotationError naming the offending record.
    """
    try:
        with open(path) as fp:
            data = json.load(fp)
    except json.JSONDecodeError as exc:
        raise AnnotationError("%s: invalid JSON (%s)" % (path, exc)) from exc
    if not isinstance(data, list):
        raise AnnotationError("%s: top level must be an array" % path)
    records = []
    for idx, entry in enumerate(data):
        where = "%s record %d" % (path, idx)
        if not isinstance(entry, dict) or "image" not in entry or "boxes" not in entry:
            raise AnnotationError('%s: expected {"image", "boxes"}' % where)
        boxes = []
        for j, raw in enumerate(entry["boxes"]):
            if len(raw) != 5:
                raise AnnotationError(
                    "%s box %d: expected [x_min, y_min, x_max, y_max, class_id]"
                    % (where, j)
                )
            try:
                box = BoxAnnotation(
                    int(raw[0]), int(raw[1]), int(raw[2]), int(raw[3]), int(raw[4])
                )
            except AnnotationError as exc:
                raise AnnotationError(
                    "%s (image %r) box %d: %s" % (where, entry["image"], j, exc)
                ) from exc
            boxes.append(box)
        records.append(DatasetRecord(image=entry["image"], boxes=boxes))
    return records


def load_ground_truth(path, records, image_root=None):
    """Attach masks from a ground-truth RLE JSON to matching records.

    Ground truth uses the same instance schema as exported results; masks
    are matched on (image, instance_id). Missing instances raise
    AnnotationError.
    """
    keys, masks = load_result_masks(path)
    by_key = dict(zip(keys, masks))
    for record in records:
        gt = []
        for i in range(len(record.boxes)):
            key = (record.image, i)
            if key not in by_key:
                raise AnnotationError(
                    "%s: no ground-truth mask for image %r instance %d"
                    % (path, record.image, i)
                )
            gt.append(by_key[key][1])
        record.gt_masks = gt
    return records


def _evolve_one(args):
    (u, box, region, class_id, params, cfg, constraints, image, size, inst_id) = args
    t0 = time.perf_counter()
    result = evolve_instance(
        u, box, region, class_id, params, cfg, constraints=constraints
    )
    elapsed = time.perf_counter() - t0
    probs = sigmoid(params.sigmoid_slope * result.phi)
    mask = InstanceMask(
        image=image,
        image_size=size,
        instance_id=inst_id,
        class_id=class_id,
        box=box,
        region=region,
        mask=result.mask,
        probs=probs,
        iterations=result.iterations_used,
        converged=result.converged,
    )
    log.debug(
        "%s instance %d: %d iters, converged=%s, %.0f ms",
        image, inst_id, result.iterations_used, result.converged, elapsed * 1e3,
    )
    return mask, elapsed


def run_dataset(
    records,
    params=None,
    cfg=None,
    parallelism=1,
    enlarge_factor=DEFAULT_ENLARGE,
    constraints=True,
    image_root=None,
):
    """Evolve every annotated instance and gather metrics.

    Returns (list of InstanceMask, MetricsReport). Unreadable images are
    recorded in report.failures and skipped; the run continues. When every
    record carries ground-truth masks the report includes IoU and AP
    numbers. Results are gathered in input order, so the output does not
    depend on parallelism.
    """
    params = params or EnergyParams()
    cfg = cfg or EvolveConfig()
    jobs = []
    gt_masks = []
    have_gt = True
    report = MetricsReport()
    for record in records:
        try:
            if record.image_data is not None:
                raw = record.image_data
            else:
                raw = load_image(resolve_path(record.image, image_root))
        except OSError as exc:
            report.failures.append("%s: %s" % (record.image, exc))
            log.info("skipping %s: %s", record.image, exc)
            continue
        u = normalize_image(raw)
        height, width = u.shape[1], u.shape[2]
        for i, box in enumerate(record.boxes):
            region = enlarge_box(box, enlarge_factor, width, height)
            jobs.append((
                crop_region(u, region), box, region, box.class_id,
                params, cfg, constraints, record.image, (height, width), i,
            ))
            if record.gt_masks is not None:
                gt_masks.append(record.gt_masks[i])
            else:
                have_gt = False
        log.info("%s: %d instances queued", record.image, len(record.boxes))

    if parallelism > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(_evolve_one, jobs))
    else:
        outcomes = [_evolve_one(job) for job in jobs]

    masks = [m for m, _ in outcomes]
    report.runtimes = [t for _, t in outcomes]
    report.n_instances = len(masks)
    if have_gt and masks:
        scored = evaluate_masks(masks, gt_masks)
        report.ious = scored.ious
        report.mean_iou = scored.mean_iou
        report.ap50 = scored.ap50
        report.ap75 = scored.ap75
    return masks, report


def _instance_iou(inst, gt_full):
    r = inst.region
    window = gt_full[r.y_min : r.y_max, r.x_min : r.x_max]
    inter = float(np.logical_and(inst.mask, window).sum())
    union = float(inst.mask.sum()) + float(np.asarray(gt_full, bool).sum()) - inter
    return inter / union if union > 0 else 1.0


def evaluate_masks(preds, ground_truth):
    """Score predictions against aligned full-image ground-truth masks.

    One prediction per ground-truth box, so AP at a threshold reduces to
    the fraction of instances with IoU at or above it.
    """
    if len(preds) != len(ground_truth):
        raise ValueError(
            "prediction/ground-truth count mismatch: %d vs %d"
            % (len(preds), len(ground_truth))
        )
    ious = [_instance_iou(p, g) for p, g in zip(preds, ground_truth)]
    report = MetricsReport(ious=ious, n_instances=len(ious))
    if ious:
        report.mean_iou = float(np.mean(ious))
        report.ap50 = float(np.mean([v >= 0.5 for v in ious]))
        report.ap75 = float(np.mean([v >= 0.75 for v in ious]))
    return report


def composite_masks(masks, image_size):
    """Merge instance masks into one integer label map.

    Labels are instance_id + 1 with 0 as background. A pixel claimed by
    several instances goes to the highest foreground probability; exact
    ties go to the lower instance_id.
    """
    height, width = image_size
    labels = np.zeros((height, width), dtype=np.int32)
    best = np.zeros((height, width), dtype=np.float64)
    for inst in sorted(masks, key=lambda m: m.instance_id):
        r = inst.region
        score = np.where(inst.mask, inst.probs, 0.0)
        view_l = labels[r.y_min : r.y_max, r.x_min : r.x_max]
        view_b = best[r.y_min : r.y_max, r.x_min : r.x_max]
        take = inst.mask & (score > view_b)
        view_l[take] = inst.instance_id + 1
        view_b[take] = score[take]
    return labels


def encode_rle(mask):
    """Uncompressed column-major RLE: {"counts": [...], "size": [h, w]}.

    counts alternates background/foreground runs over the Fortran-order
    flattening and always begins with a background run (zero length when
    the first pixel is foreground).
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    flat = mask.flatten(order="F")
    if flat.size == 0:
        return {"counts": [0], "size": [int(h), int(w)]}
    boundaries = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    runs = np.diff(np.concatenate(([0], boundaries, [flat.size])))
    counts = runs.tolist()
    if flat[0]:
        counts = [0] + counts
    return {"counts": [int(c) for c in counts], "size": [int(h), int(w)]}


def decode_rle(rle):
    """Inverse of encode_rle."""
    h, w = rle["size"]
    counts = rle["counts"]
    total = h * w
    flat = np.zeros(total, dtype=bool)
    pos = 0
    value = False
    for run in counts:
        if run:
            flat[pos : pos + run] = value
        pos += run
        value = not value
    if pos != total:
        raise ValueError("RLE counts sum to %d, expected %d" % (pos, total))
    return flat.reshape((h, w), order="F")


def _full_mask(inst):
    height, width = inst.image_size
    full = np.zeros((height, width), dtype=bool)
    r = inst.region
    full[r.y_min : r.y_max, r.x_min : r.x_max] = inst.mask
    return full


def _image_stem(path):
    return os.path.splitext(os.path.basename(path))[0]


def export_masks(masks, format, path, report=None):
    """Write instance masks as PNGs or as one RLE JSON file.

    format "png": one full-image-size binary PNG per instance under
    `path/<image stem>/<instance_id>.png`.
    format "json": a single file (`path` itself, or results.json inside it
    when `path` is a directory) holding every instance's RLE plus the
    metrics report when one is given.
    """
    if format == "png":
        os.makedirs(path, exist_ok=True)
        for inst in masks:
            d = os.path.join(path, _image_stem(inst.image))
            os.makedirs(d, exist_ok=True)
            full = _full_mask(inst).astype(np.uint8) * 255
            Image.fromarray(full, mode="L").save(
                os.path.join(d, "%d.png" % inst.instance_id)
            )
    elif format == "json":
        if os.path.isdir(path) or path.endswith(os.sep):
            os.makedirs(path, exist_ok=True)
            path = os.path.join(path, "results.json")
        payload = {
            "instances": [
                {
                    "image": inst.image,
                    "instance_id": inst.instance_id,
                    "class_id": inst.class_id,
                    "box": [inst.box.x_min, inst.box.y_min, inst.box.x_max, inst.box.y_max],
                    "region": [
                        inst.region.x_min, inst.region.y_min,
                        inst.region.x_max, inst.region.y_max,
                    ],
                    "iterations": inst.iterations,
                    "converged": inst.converged,
                    "rle": encode_rle(_full_mask(inst)),
                }
                for inst in masks
            ]
        }
        if report is not None:
            payload["metrics"] = report.to_dict()
        with open(path, "w") as fp:
            json.dump(payload, fp)
    else:
        raise ValueError("unknown export format %r (use png or json)" % (format,))


def load_result_masks(path):
    """Read an exported RLE JSON back into (keys, [(class_id, mask)]).

    Keys are (image, instance_id) tuples in file order.
    """
    with open(path) as fp:
        data = json.load(fp)
    keys = []
    masks = []
    for inst in data["instances"]:
        keys.append((inst["image"], inst["instance_id"]))
        masks.append((inst.get("class_id", 0), decode_rle(inst["rle"])))
    return keys, masks


def evaluate_rle_files(pred_path, gt_path):
    """Score two exported RLE JSON files against each other."""
    pred_keys, preds = load_result_masks(pred_path)
    gt_keys, gts = load_result_masks(gt_path)
    gt_by_key = dict(zip(gt_keys, gts))
    missing = [k for k in pred_keys if k not in gt_by_key]
    if missing or len(pred_keys) != len(gt_keys):
        raise ValueError(
            "prediction/ground-truth instances do not match (%d vs %d, "
            "%d unmatched)" % (len(pred_keys), len(gt_keys), len(missing))
        )
    ious = []
    for key, (_, pred) in zip(pred_keys, preds):
        gt = gt_by_key[key][1]
        inter = float(np.logical_and(pred, gt).sum())
        union = float(np.logical_or(pred, gt).sum())
        ious.append(inter / union if union > 0 else 1.0)
    report = MetricsReport(ious=ious, n_instances=len(ious))
    if ious:
        report.mean_iou = float(np.mean(ious))
        report.ap50 = float(np.mean([v >= 0.5 for v in ious]))
        report.ap75 = float(np.mean([v >= 0.75 for v in ious]))
    return report


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SynthSpec:
    """Generator settings for the synthetic benchmark.

    Shapes are disks, axis-aligned rectangles and rotated rectangles
    (class ids 0, 1, 2). `size_range` bounds the nominal shape side in
    pixels, `contrast_range` the per-channel intensity offset from the
    background, `looseness_range` the box enlargement around the tight
    shape bounds. `max_region_overlap` caps the fraction of one
    instance's enlarged (2x) evaluation region that another instance's
    pixels may cover: neighbors inside the region skew its outside-box
    statistics, and past roughly 5% coverage the evolution can settle
    at the box instead of the shape, so placement keeps intrusions
    small but nonzero (zero would make the constraint terms pointless
    on this data).
    """

    image_size: tuple = (96, 96)
    channels: int = 3
    shapes_per_image: int = 2
    size_range: tuple = (24.0, 44.0)
    contrast_range: tuple = (0.3, 1.0)
    noise: float = 0.01
    looseness_range: tuple = (1.05, 1.2)
    max_region_overlap: float = 0.04

    def __post_init__(self):
        height, width = self.image_size
        if self.channels not in (1, 3):
            raise GenerationError("channels must be 1 or 3")
        if self.shapes_per_image < 1:
            raise GenerationError("shapes_per_image must be >= 1")
        if not 0 < self.size_range[0] <= self.size_range[1]:
            raise GenerationError("bad size_range %r" % (self.size_range,))
        if 1.5 * self.size_range[0] > min(height, width):
            raise GenerationError(
                "smallest shape (side %r) cannot fit in a %dx%d image"
                % (self.size_range[0], width, height)
            )
        if not 0 < self.contrast_range[0] <= self.contrast_range[1] <= 1:
            raise GenerationError("contrast_range must lie in (0, 1]")
        if self.noise < 0:
            raise GenerationError("noise must be >= 0")
        if not 1.0 <= self.looseness_range[0] <= self.looseness_range[1]:
            raise GenerationError("looseness_range must be >= 1")
        if not 0.0 <= self.max_region_overlap < 1.0:
            raise GenerationError("max_region_overlap must lie in [0, 1)")


_SHAPE_CLASSES = ("disk", "rect", "rot_rect")


def _rasterize(kind, cx, cy, half_w, half_h, theta, height, width):
    yy, xx = np.mgrid[0:height, 0:width]
    if kind == "disk":
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= half_w**2
    dx = xx - cx
    dy = yy - cy
    if kind == "rot_rect":
        c, s = math.cos(theta), math.sin(theta)
        dx, dy = dx * c + dy * s, -dx * s + dy * c
    return (np.abs(dx) <= half_w) & (np.abs(dy) <= half_h)


def _tight_box(mask):
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1


def _loosen(box, factor):
    x0, y0, x1, y1 = box
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    hw, hh = 0.5 * factor * (x1 - x0), 0.5 * factor * (y1 - y0)
    return (
        math.floor(cx - hw), math.floor(cy - hh),
        math.ceil(cx + hw), math.ceil(cy + hh),
    )


def _intrusion(mask, box, height, width):
    """Fraction of the box's enlarged region, outside the box itself,
    that `mask` covers."""
    region = enlarge_box(BoxAnnotation(*box), 2.0, width, height)
    win = mask[region.y_min : region.y_max, region.x_min : region.x_max]
    area = (region.x_max - region.x_min) * (region.y_max - region.y_min)
    box_area = (box[2] - box[0]) * (box[3] - box[1])
    return float(win.sum()) / max(area - box_area, 1)


def _pick_foreground(rng, bg, contrast):
    """Foreground level at the requested offset from the background.

    Prefers a side that keeps bg +- contrast inside [0, 1]; when neither
    side fits the larger room wins (the rooms sum to 1, so the realized
    offset stays at least 0.5).
    """
    up_ok = bg + contrast <= 1.0
    dn_ok = bg - contrast >= 0.0
    if up_ok and dn_ok:
        return bg + contrast if rng.random() < 0.5 else bg - contrast
    if up_ok:
        return bg + contrast
    if dn_ok:
        return bg - contrast
    return 1.0 if 1.0 - bg >= bg else 0.0


def generate_synthetic(seed, count, spec=None, out_dir=None):
    """Create `count` images with loose boxes and exact instance masks.

    Deterministic for a given seed. Shapes are placed by rejection
    sampling so their loose boxes stay inside the image and do not overlap
    each other; an image may end up with fewer than shapes_per_image
    instances when space runs out, never with zero.

    When out_dir is given, writes images/img_%05d.png, annotations.json
    and ground_truth.json (RLE, same schema as exported results) there.
    Returns the DatasetRecords with ground-truth masks and pixel data
    attached either way.
    """
    spec = spec or SynthSpec()
    rng = np.random.default_rng(seed)
    height, width = spec.image_size
    records = []
    gt_instances = []
    for idx in range(count):
        img = np.empty((spec.channels, height, width), dtype=np.float64)
        bg = rng.uniform(0.0, 1.0, size=spec.channels)
        for c in range(spec.channels):
            img[c] = bg[c]
        boxes = []
        gt_masks = []
        placed = []
        for _ in range(spec.shapes_per_image):
            for _attempt in range(100):
                class_id = int(rng.integers(len(_SHAPE_CLASSES)))
                kind = _SHAPE_CLASSES[class_id]
                side = rng.uniform(*spec.size_range)
                aspect = rng.uniform(0.6, 1.0)
                theta = rng.uniform(0.0, math.pi)
                margin = 0.75 * side
                cx = rng.uniform(margin, width - margin)
                cy = rng.uniform(margin, height - margin)
                if kind == "disk":
                    shape = _rasterize(kind, cx, cy, side / 2, side / 2, 0.0, height, width)
                else:
                    shape = _rasterize(
                        kind, cx, cy, side / 2, side * aspect / 2, theta, height, width
                    )
                if not shape.any():
                    continue
                tight = _tight_box(shape)
                if tight[2] - tight[0] < 6 or tight[3] - tight[1] < 6:
                    continue
                loose = _loosen(tight, rng.uniform(*spec.looseness_range))
                if loose[0] < 0 or loose[1] < 0 or loose[2] > width or loose[3] > height:
                    continue
                disjoint = all(
                    loose[2] <= p[0] or p[2] <= loose[0]
                    or loose[3] <= p[1] or p[3] <= loose[1]
                    for p in placed
                )
                if not disjoint:
                    continue
                # mutual region-intrusion cap, see the SynthSpec docstring
                crowded = any(
                    _intrusion(shape, p, height, width) > spec.max_region_overlap
                    or _intrusion(m, loose, height, width) > spec.max_region_overlap
                    for p, m in zip(placed, gt_masks)
                )
                if crowded:
                    continue
                contrast = rng.uniform(*spec.contrast_range, size=spec.channels)
                for c in range(spec.channels):
                    fg = _pick_foreground(rng, bg[c], contrast[c])
                    img[c] = np.where(shape, fg, img[c])
                boxes.append(BoxAnnotation(*loose, class_id=class_id))
                gt_masks.append(shape)
                placed.append(loose)
                break
        if not boxes:
            raise GenerationError(
                "could not place any shape in image %d (spec too tight)" % idx
            )
        img += rng.normal(scale=spec.noise, size=img.shape)
        img = np.clip(img, 0.0, 1.0)
        img = np.round(img * 255.0)  # 8-bit quantization, matches the PNG

        rel = os.path.join("images", "img_%05d.png" % idx)
        records.append(
            DatasetRecord(image=rel, boxes=boxes, gt_masks=gt_masks, image_data=img)
        )
        for i, (box, mask) in enumerate(zip(boxes, gt_masks)):
            gt_instances.append(
                {
                    "image": rel,
                    "instance_id": i,
                    "class_id": box.class_id,
                    "box": [box.x_min, box.y_min, box.x_max, box.y_max],
                    "rle": encode_rle(mask),
                }
            )

    if out_dir is not None:
        os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
        for record in records:
            arr = record.image_data.astype(np.uint8)
            if spec.channels == 1:
                pil = Image.fromarray(arr[0], mode="L")
            else:
                pil = Image.fromarray(np.moveaxis(arr, 0, -1), mode="RGB")
            pil.save(os.path.join(out_dir, record.image))
        annotations = [
            {
                "image": r.image,
                "boxes": [
                    [b.x_min, b.y_min, b.x_max, b.y_max, b.class_id] for b in r.boxes
                ],
            }
            for r in records
        ]
        with open(os.path.join(out_dir, "annotations.json"), "w") as fp:
            json.dump(annotations, fp, indent=1)
        with open(os.path.join(out_dir, "ground_truth.json"), "w") as fp:
            json.dump({"instances": gt_instances}, fp)
    return records


def enlargement_sweep(records, factors, params=None, cfg=None, parallelism=1):
    """Run the dataset once per enlargement factor; returns factor -> report."""
    out = {}
    for factor in factors:
        _, report = run_dataset(
            records, params=params, cfg=cfg,
            parallelism=parallelism, enlarge_factor=factor,
        )
        out[factor] = report
    return out


def format_sweep_table(results):
    """Plain-text comparison table for an enlargement sweep."""
    lines = ["factor   mean IoU   AP@0.5   AP@0.75   instances"]
    for factor in sorted(results):
        r = results[factor]
        lines.append(
            "%-8.2f %-10.4f %-8.3f %-9.3f %d"
            % (factor, r.mean_iou or 0.0, r.ap50 or 0.0, r.ap75 or 0.0, r.n_instances)
        )
    return "\n".join(lines)
