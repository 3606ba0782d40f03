"""Composed three-stage inference: detect, crop, classify, segment, rebuild.

The composed network never sees the scene twice: the detector proposes
boxes, each padded crop is classified and segmented independently, and the
per-crop masks are warped back into scene coordinates. Pixel conflicts
between overlapping instances go to the higher classifier probability,
ties to the lower instance id, so reconstruction is order-independent.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import classify as C
from . import detect as D
from . import segment as S
from . import engine as E
from .engine.io import load_model, save_model
from .imageio import read_pgm, write_pgm, write_ppm

# one fixed color per class index, cycled if the roster outgrows it
PALETTE = ((220, 60, 60), (60, 140, 220), (70, 190, 90), (230, 180, 40),
           (170, 80, 200), (240, 120, 40), (90, 200, 200), (200, 100, 140))


@dataclass
class InstanceRecord:
    instance_id: int
    box: D.BoundingBox
    class_index: int
    class_name: str
    probability: float            # classifier confidence of the chosen class
    mask: np.ndarray              # bool, crop coordinates
    offset: tuple                 # padded-box origin in scene coordinates
    scale: tuple                  # patch px -> scene px

    def to_json(self):
        return {"instance_id": self.instance_id,
                "box": [self.box.x, self.box.y, self.box.w, self.box.h],
                "score": self.box.score,
                "class_index": self.class_index,
                "class_name": self.class_name,
                "probability": self.probability,
                "offset": list(self.offset),
                "scale": list(self.scale)}


@dataclass
class PipelineConfig:
    detector: object
    classifier: object
    segmenter: object
    class_names: list
    conf_threshold: float = 0.5
    nms_iou: float = 0.45
    margin_fraction: float = 0.1

    def __post_init__(self):
        k = self.classifier.output_shape[0]
        if k != len(self.class_names):
            raise ValueError(f"classifier has {k} outputs for "
                             f"{len(self.class_names)} class names")
        if self.classifier.input_shape != self.segmenter.input_shape:
            raise ValueError("classifier and segmenter disagree on patch "
                             f"size: {self.classifier.input_shape} vs "
                             f"{self.segmenter.input_shape}")
        for stage, model in (("detect", self.detector),
                             ("classify", self.classifier),
                             ("segment", self.segmenter)):
            got = model.metadata.get("stage")
            if got != stage:
                raise ValueError(f"{stage} slot holds a {got!r} model")

    @property
    def patch_size(self):
        return self.classifier.input_shape[1]


def assemble_dnn(winners, class_names, **overrides):
    """Compose stage winners {stage: model} into a frozen PipelineConfig."""
    missing = {"detect", "classify", "segment"} - set(winners)
    if missing:
        raise ValueError(f"missing stage winners: {sorted(missing)}")
    return PipelineConfig(detector=winners["detect"],
                          classifier=winners["classify"],
                          segmenter=winners["segment"],
                          class_names=list(class_names), **overrides)


def save_pipeline(config, outdir):
    """Write the three model files plus pipeline.json referencing them.

    Returns every written path, pipeline.json last.
    """
    os.makedirs(outdir, exist_ok=True)
    names, written = {}, []
    for stage, model in (("detect", config.detector),
                         ("classify", config.classifier),
                         ("segment", config.segmenter)):
        fname = f"{stage}.dnn"
        save_model(model, os.path.join(outdir, fname))
        names[stage] = fname
        written.append(os.path.join(outdir, fname))
    doc = {"class_names": config.class_names,
           "conf_threshold": config.conf_threshold,
           "nms_iou": config.nms_iou,
           "margin_fraction": config.margin_fraction,
           "models": names}
    path = os.path.join(outdir, "pipeline.json")
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
    written.append(path)
    return written


def load_pipeline(path):
    with open(path) as fh:
        doc = json.load(fh)
    base = os.path.dirname(path)
    models = {stage: load_model(os.path.join(base, fname))
              for stage, fname in doc["models"].items()}
    return assemble_dnn(models, doc["class_names"],
                        conf_threshold=doc["conf_threshold"],
                        nms_iou=doc["nms_iou"],
                        margin_fraction=doc["margin_fraction"])


def run_pipeline(config, image):
    """Full pass over one scene image; returns InstanceRecords in id order."""
    image = np.asarray(image)
    if image.shape != config.detector.input_shape[1:]:
        raise ValueError(f"image shape {image.shape} does not match detector "
                         f"input {config.detector.input_shape[1:]}")
    boxes = D.detect(config.detector, image, config.conf_threshold,
                     config.nms_iou)
    crops, _ = D.crop_instances(image, boxes, config.margin_fraction,
                                patch_size=config.patch_size)
    records = []
    for i, crop in enumerate(crops, start=1):
        probs = C.classify(config.classifier, crop.patch)
        ci = int(np.argmax(probs))
        mask = S.segment(config.segmenter, crop.patch)
        records.append(InstanceRecord(
            instance_id=i, box=crop.box, class_index=ci,
            class_name=config.class_names[ci], probability=float(probs[ci]),
            mask=mask, offset=crop.offset, scale=crop.scale))
    return records


# reconstruction ----------------------------------------------------------------

@dataclass
class InstanceMap:
    labels: np.ndarray            # uint16 instance ids, 0 = background
    records: list = field(default_factory=list)

    def class_map(self):
        """Per-pixel class index + 1; 0 stays background."""
        out = np.zeros(self.labels.shape, dtype=np.int64)
        for rec in self.records:
            out[self.labels == rec.instance_id] = rec.class_index + 1
        return out


def _warp_mask(record, shape):
    """Nearest-neighbor inverse warp of a crop mask into scene coordinates."""
    H, W = shape
    x0, y0 = record.offset
    sx, sy = record.scale
    p = record.mask.shape[0]
    ix0 = max(0, int(np.floor(x0)))
    iy0 = max(0, int(np.floor(y0)))
    ix1 = min(W, int(np.ceil(x0 + p * sx)))
    iy1 = min(H, int(np.ceil(y0 + p * sy)))
    out = np.zeros(shape, dtype=bool)
    if ix0 >= ix1 or iy0 >= iy1:
        return out
    us = np.floor((np.arange(ix0, ix1) + 0.5 - x0) / sx).astype(np.int64)
    vs = np.floor((np.arange(iy0, iy1) + 0.5 - y0) / sy).astype(np.int64)
    ok_u = (us >= 0) & (us < p)
    ok_v = (vs >= 0) & (vs < p)
    patch = record.mask[np.ix_(vs.clip(0, p - 1), us.clip(0, p - 1))]
    patch = patch & ok_v[:, None] & ok_u[None, :]
    out[iy0:iy1, ix0:ix1] = patch
    return out


def reconstruct(image, records):
    """Superimpose warped masks into an InstanceMap for the scene."""
    shape = np.asarray(image).shape
    if len(records) > 65535:
        raise ValueError("more instances than a 16-bit label image can hold")
    labels = np.zeros(shape, dtype=np.uint16)
    for rec in records:
        x0, y0 = rec.offset
        p = rec.mask.shape[0]
        if (x0 + p * rec.scale[0] <= 0 or y0 + p * rec.scale[1] <= 0
                or x0 >= shape[1] or y0 >= shape[0]):
            raise ValueError(f"instance {rec.instance_id} lies outside the "
                             "scene")
    # higher probability paints later pixels never: sort strongest first,
    # ties to the lower id, then only fill still-background pixels
    order = sorted(records, key=lambda r: (-r.probability, r.instance_id))
    for rec in order:
        warped = _warp_mask(rec, shape)
        labels[warped & (labels == 0)] = rec.instance_id
    return InstanceMap(labels=labels, records=list(records))


def overlay_image(image, imap, blend=0.55):
    """Color overlay: one fixed palette entry per class index."""
    gray = np.asarray(image, dtype=np.float64)
    rgb = np.stack([gray, gray, gray], axis=-1)
    cmap = imap.class_map()
    for rec in imap.records:
        color = np.array(PALETTE[rec.class_index % len(PALETTE)], dtype=float)
        sel = (imap.labels == rec.instance_id) & (cmap == rec.class_index + 1)
        rgb[sel] = (1 - blend) * rgb[sel] + blend * color
    return np.clip(np.round(rgb), 0, 255).astype(np.uint8)


def save_instance_map(imap, image, outdir, stem):
    """16-bit PGM of instance ids + JSON sidecar + PPM overlay."""
    os.makedirs(outdir, exist_ok=True)
    pgm = os.path.join(outdir, f"{stem}_instances.pgm")
    write_pgm(pgm, imap.labels.astype(np.uint16))
    sidecar = {"instances": [rec.to_json() for rec in imap.records]}
    js = os.path.join(outdir, f"{stem}_instances.json")
    with open(js, "w") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=2)
        fh.write("\n")
    ppm = os.path.join(outdir, f"{stem}_overlay.ppm")
    write_ppm(ppm, overlay_image(image, imap))
    return pgm, js, ppm


def load_instance_map(pgm_path, json_path):
    """Rebuild labels plus record provenance (masks live in the PGM)."""
    labels = read_pgm(pgm_path).astype(np.uint16)
    with open(json_path) as fh:
        sidecar = json.load(fh)
    records = []
    for d in sidecar["instances"]:
        box = D.BoundingBox(*d["box"], score=d["score"])
        mask = labels == d["instance_id"]
        records.append(InstanceRecord(
            instance_id=d["instance_id"], box=box,
            class_index=d["class_index"], class_name=d["class_name"],
            probability=d["probability"], mask=mask,
            offset=tuple(d["offset"]), scale=tuple(d["scale"])))
    return InstanceMap(labels=labels, records=records)


# evaluation ---------------------------------------------------------------------

def truth_class_map(scene, class_names, complete_only=True):
    """Scene truth as per-pixel class index + 1 (0 background)."""
    index = {name: i for i, name in enumerate(class_names)}
    out = np.zeros(scene.size, dtype=np.int64)
    for inst in scene.instances:
        if complete_only and not inst.complete:
            continue
        out[inst.mask] = index[inst.class_name] + 1
    return out


def evaluate_class_maps(predicted, truth, class_names):
    """Pooled + per-class Jaccard and global accuracy over class maps.

    Pooled intersection counts pixels whose foreground class matches;
    the union is any-foreground in either map, so class confusions hurt
    exactly once.
    """
    inter = union = correct = total = 0
    per_inter = np.zeros(len(class_names), dtype=np.int64)
    per_union = np.zeros(len(class_names), dtype=np.int64)
    for p, t in zip(predicted, truth):
        p = np.asarray(p)
        t = np.asarray(t)
        if p.shape != t.shape:
            raise ValueError(f"map shapes differ: {p.shape} vs {t.shape}")
        inter += int(((p == t) & (t > 0)).sum())
        union += int(((p > 0) | (t > 0)).sum())
        correct += int((p == t).sum())
        total += p.size
        for c in range(len(class_names)):
            per_inter[c] += int(((p == c + 1) & (t == c + 1)).sum())
            per_union[c] += int(((p == c + 1) | (t == c + 1)).sum())
    degenerate = union == 0
    per_class = {name: (1.0 if per_union[c] == 0
                        else float(per_inter[c] / per_union[c]))
                 for c, name in enumerate(class_names)}
    return {"jaccard": 1.0 if degenerate else inter / union,
            "global_accuracy": correct / max(total, 1),
            "per_class": per_class,
            "degenerate": degenerate}


def evaluate_pipeline(imaps, scenes, class_names, complete_only=True):
    """Score reconstructed InstanceMaps against their truth scenes."""
    if len(imaps) != len(scenes):
        raise ValueError(f"{len(imaps)} maps for {len(scenes)} scenes")
    pred = [m.class_map() for m in imaps]
    truth = [truth_class_map(s, class_names, complete_only) for s in scenes]
    return evaluate_class_maps(pred, truth, class_names)


# single-stage baseline ------------------------------------------------------------

def build_baseline(n_classes, image_size, preset="unet-small", seed=0):
    """Whole-scene K+1-way segmenter with a stage-preset-sized body."""
    widths = {"unet-small": ((8, 12), 12, (10, 8)),
              "unet-large": ((6, 10, 12), 12, (10, 8, 6))}[preset]
    specs = list(S._unet_specs(*widths))
    specs[-1] = E.conv2d(n_classes + 1, 1)
    return E.build_model(specs, (1, image_size, image_size), seed=seed,
                         metadata={"stage": "baseline", "preset": preset,
                                   "n_classes": n_classes})


def train_baseline(model, scenes, class_names, hyper=None, seed=0,
                   val_scenes=None):
    """Fit the baseline on full scenes labeled with every instance pixel."""
    x = np.stack([D.normalize_image(s.image) for s in scenes])
    t = np.stack([truth_class_map(s, class_names, complete_only=False)
                  for s in scenes])
    hyper = hyper or E.Hyper(epochs=25, batch_size=4, lr=0.1, momentum=0.9)
    val = None
    if val_scenes:
        val = (np.stack([D.normalize_image(s.image) for s in val_scenes]),
               np.stack([truth_class_map(s, class_names, complete_only=False)
                         for s in val_scenes]))
    return E.fit(model, x, t, E.loss_pixel_ce, hyper, seed=seed, val=val)


def baseline_class_maps(model, scenes):
    """Per-pixel argmax class maps for a list of scenes."""
    out = []
    for s in scenes:
        x = D.normalize_image(s.image)[None]
        logits = E.forward(model, x)[-1][0]
        out.append(np.argmax(logits, axis=0).astype(np.int64))
    return out
