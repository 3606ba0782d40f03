"""Grid detection stage: locate complete instances and crop them out.

A fully convolutional net maps the scene to a G x G grid, one cell per 32
px of input, with 5 channels per cell: objectness logit plus box offsets
(dx, dy within the cell, log-scale dw, dh in cell units). Only instances
flagged complete produce positive targets; everything else is background,
which is what lets the detector ignore overlapped and border-cut objects.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import engine as E
from .synth.augment import bilinear_sample, equalize_histogram

CELL = 32                      # grid stride in pixels
PATCH_SIZE = 48                # classifier/segmenter input side


@dataclass
class BoundingBox:
    x: float
    y: float
    w: float
    h: float
    score: float = 1.0

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError("box width and height must be positive")

    def corners(self):
        return self.x, self.y, self.x + self.w, self.y + self.h


@dataclass
class CropRecord:
    patch: np.ndarray           # uint8 (P, P), equalized
    box: BoundingBox            # the detector box that produced the crop
    offset: tuple               # (x0, y0) of the padded box, scene coords
    scale: tuple                # (sx, sy): patch px -> scene px
    scene_id: int = -1

    def to_scene(self, u, v):
        """Map continuous patch coords to scene coords."""
        return (self.offset[0] + u * self.scale[0],
                self.offset[1] + v * self.scale[1])


def _detector_specs(widths):
    specs = []
    for w in widths:
        specs.extend([E.conv2d(w, 3), E.relu(), E.maxpool2d(2)])
    specs.append(E.conv2d(5, 1))
    return specs

DETECT_PRESETS = {
    "grid-shallow": _detector_specs((6, 8, 12, 12, 16)),
    "grid-deep": _detector_specs((8, 12, 16, 20, 20)),
}


def build_detector(preset, image_size=256, seed=0):
    if preset not in DETECT_PRESETS:
        raise ValueError(f"unknown detector preset {preset!r}; "
                         f"available: {sorted(DETECT_PRESETS)}")
    if image_size % CELL:
        raise ValueError(f"image size must be a multiple of {CELL}")
    model = E.build_model(DETECT_PRESETS[preset], (1, image_size, image_size),
                          seed=seed, metadata={"stage": "detect",
                                               "preset": preset})
    return model


def normalize_image(image):
    return (np.asarray(image, dtype=np.float32) / 255.0)[None, :, :]


def grid_targets(box_area_pairs, image_shape):
    """Target tensor (6, G, G): objectness, dx, dy, dw, dh, positive flag.

    box_area_pairs: iterable of ((x, y, w, h), area). One positive cell per
    box center; when two centers land in the same cell the larger area wins.
    """
    H, W = image_shape
    gh, gw = H // CELL, W // CELL
    t = np.zeros((6, gh, gw), dtype=np.float32)
    best_area = np.zeros((gh, gw), dtype=np.float64)
    for (x, y, w, h), area in box_area_pairs:
        cx, cy = x + w / 2.0, y + h / 2.0
        gx, gy = int(cx // CELL), int(cy // CELL)
        if not (0 <= gx < gw and 0 <= gy < gh):
            continue
        if area <= best_area[gy, gx]:
            continue
        best_area[gy, gx] = area
        t[0, gy, gx] = 1.0
        t[1, gy, gx] = cx / CELL - gx
        t[2, gy, gx] = cy / CELL - gy
        t[3, gy, gx] = math.log(w / CELL)
        t[4, gy, gx] = math.log(h / CELL)
        t[5, gy, gx] = 1.0
    return t


def detection_targets(scene):
    """grid_targets for the complete instances of one scene."""
    pairs = [(inst.bbox, float(inst.area_px)) for inst in scene.instances
             if inst.complete]
    return grid_targets(pairs, scene.size)


def detect_loss(output, target, box_weight=5.0):
    """BCE on objectness over all cells + weighted SSE on positive boxes.

    output: (N, 5, G, G) raw network maps. target: (N, 6, G, G) from
    detection_targets. Returns (loss, d loss/d output).
    """
    out = np.asarray(output, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    z = out[:, 0]
    tobj = tgt[:, 0]
    pos = tgt[:, 5] > 0.5
    n_cells = z.size
    n_pos = max(int(pos.sum()), 1)

    # stable BCE with logits: max(z,0) - z*t + log(1+exp(-|z|))
    bce = np.maximum(z, 0.0) - z * tobj + np.log1p(np.exp(-np.abs(z)))
    p = 1.0 / (1.0 + np.exp(-z))
    diff = out[:, 1:5] - tgt[:, 1:5]
    diff[~np.broadcast_to(pos[:, None], diff.shape)] = 0.0

    loss = bce.sum() / n_cells + box_weight * 0.5 * (diff ** 2).sum() / n_pos
    grad = np.zeros_like(out)
    grad[:, 0] = (p - tobj) / n_cells
    grad[:, 1:5] = box_weight * diff / n_pos
    return float(loss), grad.astype(output.dtype, copy=False)


def _dihedral_scene(image, pairs, k, mirror):
    """One normalized image (1, S, S) and its box/area pairs, transformed."""
    S = image.shape[-1]
    img = image
    if mirror:
        img = img[:, :, ::-1]
        pairs = [((S - x - w, y, w, h), a) for (x, y, w, h), a in pairs]
    img = np.rot90(img, k, axes=(-2, -1))
    for _ in range(k):
        pairs = [((y, S - x - w, h, w), a) for (x, y, w, h), a in pairs]
    return np.ascontiguousarray(img), pairs


def train_detector(model, scenes, hyper=None, seed=0, val_scenes=None,
                   augment=False):
    """Fit on whole scenes; targets are built once up front.

    augment=True expands the training set with the 8 dihedral variants of
    every scene (exact box transforms, square scenes only); validation
    scenes are never augmented.
    """
    if not scenes:
        raise ValueError("no training scenes")
    hyper = hyper or E.Hyper(epochs=30, batch_size=8, lr=0.01, momentum=0.9)
    variants = [(0, False)]
    if augment:
        if scenes[0].size[0] != scenes[0].size[1]:
            raise ValueError("dihedral augmentation needs square scenes")
        variants = [(k, m) for m in (False, True) for k in range(4)]
    xs, ts = [], []
    for s in scenes:
        img = normalize_image(s.image)
        pairs = [(inst.bbox, float(inst.area_px)) for inst in s.instances
                 if inst.complete]
        for k, m in variants:
            img2, pairs2 = _dihedral_scene(img, pairs, k, m)
            xs.append(img2)
            ts.append(grid_targets(pairs2, img2.shape[-2:]))
    x = np.stack(xs)
    t = np.stack(ts)
    val = None
    if val_scenes:
        val = (np.stack([normalize_image(s.image) for s in val_scenes]),
               np.stack([detection_targets(s) for s in val_scenes]))
    return E.fit(model, x, t, detect_loss, hyper, seed=seed, val=val)


def iou(a, b):
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.w * a.h + b.w * b.h - inter)


def nms(boxes, iou_threshold=0.45):
    """Greedy suppression, descending score; ties break on (x, then y)."""
    if not 0 < iou_threshold < 1:
        raise ValueError("iou_threshold must lie in (0, 1)")
    pending = sorted(boxes, key=lambda b: (-b.score, b.x, b.y))
    kept = []
    for box in pending:
        if all(iou(box, k) <= iou_threshold for k in kept):
            kept.append(box)
    return kept


def decode_grid(output, conf_threshold, image_size):
    """Raw (5, G, G) map -> boxes above the objectness threshold."""
    obj = 1.0 / (1.0 + np.exp(-output[0].astype(np.float64)))
    boxes = []
    gh, gw = obj.shape
    for gy in range(gh):
        for gx in range(gw):
            score = float(obj[gy, gx])
            if score < conf_threshold:
                continue
            cx = (gx + float(output[1, gy, gx])) * CELL
            cy = (gy + float(output[2, gy, gx])) * CELL
            w = math.exp(float(np.clip(output[3, gy, gx], -4, 4))) * CELL
            h = math.exp(float(np.clip(output[4, gy, gx], -4, 4))) * CELL
            box = BoundingBox(cx - w / 2, cy - h / 2, max(w, 1e-3),
                              max(h, 1e-3), score)
            x0, y0, x1, y1 = box.corners()
            if x1 <= 0 or y1 <= 0 or x0 >= image_size or y0 >= image_size:
                continue
            boxes.append(box)
    return boxes


def detect(model, image, conf_threshold=0.5, nms_iou=0.45):
    if not 0 < conf_threshold <= 1:
        raise ValueError("conf_threshold must lie in (0, 1]")
    x = normalize_image(image)[None]
    out = E.forward(model, x)[-1][0]
    boxes = decode_grid(out, conf_threshold, image.shape[-1])
    return nms(boxes, nms_iou)


def evaluate_detection(predictions, truths, iou_match=0.5):
    """Scene-wise greedy matching -> PR curve and average precision.

    predictions: list (per scene) of BoundingBox lists; truths likewise
    (complete instances only). Returns {"ap", "precision", "recall",
    "thresholds", "degenerate"}.
    """
    flat = []
    for si, boxes in enumerate(predictions):
        for b in sorted(boxes, key=lambda b: -b.score):
            flat.append((b.score, si, b))
    flat.sort(key=lambda r: -r[0])
    n_truth = sum(len(t) for t in truths)
    matched = [set() for _ in truths]

    hits = []
    for score, si, box in flat:
        best_iou, best_j = 0.0, -1
        for j, tb in enumerate(truths[si]):
            if j in matched[si]:
                continue
            v = iou(box, tb)
            if v > best_iou:
                best_iou, best_j = v, j
        if best_iou >= iou_match and best_j >= 0:
            matched[si].add(best_j)
            hits.append((score, 1))
        else:
            hits.append((score, 0))

    if n_truth == 0:
        return {"ap": 0.0, "precision": [], "recall": [], "thresholds": [],
                "degenerate": True}
    if not hits:
        return {"ap": 0.0, "precision": [], "recall": [], "thresholds": [],
                "degenerate": False}

    thresholds, precision, recall = [], [], []
    tp = fp = 0
    scores = [s for s, _ in hits]
    for i, (score, hit) in enumerate(hits):
        tp += hit
        fp += 1 - hit
        if i + 1 < len(hits) and scores[i + 1] == score:
            continue                      # group tied scores
        thresholds.append(score)
        precision.append(tp / (tp + fp))
        recall.append(tp / n_truth)

    ap = 0.0
    prev_r, prev_p = 0.0, precision[0]
    for r, p in zip(recall, precision):
        ap += (r - prev_r) * 0.5 * (p + prev_p)
        prev_r, prev_p = r, p
    return {"ap": float(ap), "precision": precision, "recall": recall,
            "thresholds": thresholds, "degenerate": False}


def truth_boxes(scene, complete_only=True):
    return [BoundingBox(float(x), float(y), float(w), float(h), 1.0)
            for x, y, w, h in
            (i.bbox for i in scene.instances
             if i.complete or not complete_only)]


def crop_geometry(box, margin_fraction):
    """Padded box (x0, y0, bw, bh) used for sampling."""
    mx = box.w * margin_fraction
    my = box.h * margin_fraction
    return box.x - mx, box.y - my, box.w + 2 * mx, box.h + 2 * my


def crop_instances(image, boxes, margin_fraction=0.1, patch_size=PATCH_SIZE,
                   equalize=True, scene_id=-1):
    """Resample each padded box to a square patch; mirror fill off-frame.

    Returns (records, skipped). Boxes whose padded form has no pixel
    overlap with the image are skipped.
    """
    if margin_fraction < 0:
        raise ValueError("margin_fraction must be >= 0")
    H, W = image.shape
    records = []
    skipped = 0
    for box in boxes:
        x0, y0, bw, bh = crop_geometry(box, margin_fraction)
        if x0 + bw <= 0 or y0 + bh <= 0 or x0 >= W or y0 >= H:
            skipped += 1
            continue
        sx, sy = bw / patch_size, bh / patch_size
        us = x0 + (np.arange(patch_size) + 0.5) * sx
        vs = y0 + (np.arange(patch_size) + 0.5) * sy
        uu, vv = np.meshgrid(us, vs)
        patch = bilinear_sample(image, uu, vv)
        patch = np.clip(np.round(patch), 0, 255).astype(np.uint8)
        if equalize:
            patch = equalize_histogram(patch)
        records.append(CropRecord(patch, box, (x0, y0), (sx, sy), scene_id))
    return records, skipped


def crop_mask(mask, record):
    """Nearest-neighbor resample of a scene mask into a record's patch grid."""
    p = record.patch.shape[0]
    x0, y0 = record.offset
    sx, sy = record.scale
    us = np.floor(x0 + (np.arange(p) + 0.5) * sx).astype(np.int64)
    vs = np.floor(y0 + (np.arange(p) + 0.5) * sy).astype(np.int64)
    us = np.clip(us, 0, mask.shape[1] - 1)
    vs = np.clip(vs, 0, mask.shape[0] - 1)
    return mask[np.ix_(vs, us)]
