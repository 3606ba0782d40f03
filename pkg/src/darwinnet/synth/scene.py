"""Scene assembly: placement, rendering, completeness, manifests.

Scenes are light backgrounds with darker specimens, like negative-stain
micrographs. Placement is rejection sampling on bounding circles: most
instances get clearance from every neighbor, a configured fraction is
deliberately attached to an earlier instance so that overlapped pairs
exist, and an optional fraction straddles the frame border.

The completeness flag is defined purely on masks so it can always be
recomputed: an instance is complete iff its mask intersects no other
instance's mask and owns no pixel on the outermost pixel ring.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .. import imageio
from ..morphometry import MorphometricRecord
from .shapes import StarShape, analytic_record, rasterize_shape


@dataclass
class Instance:
    id: int
    class_name: str
    bbox: tuple                      # (x, y, w, h) of mask pixels
    complete: bool
    mask_local: np.ndarray           # bool, bbox-sized
    record: MorphometricRecord       # continuous-outline ground truth
    shape: StarShape
    scene_size: tuple                # (H, W)

    @property
    def mask(self):
        """Full-frame binary mask; materialized on demand."""
        full = np.zeros(self.scene_size, dtype=bool)
        x, y, w, h = self.bbox
        full[y:y + h, x:x + w] = self.mask_local
        return full

    @property
    def area_px(self):
        return int(self.mask_local.sum())


@dataclass
class Scene:
    image: np.ndarray                # uint8 (H, W)
    instances: list
    seed: int
    warnings: int = 0
    classes: list = field(default_factory=list)    # roster names in label order

    @property
    def size(self):
        return self.image.shape


def _masks_intersect(a, b):
    ax, ay, aw, ah = a.bbox
    bx, by, bw, bh = b.bbox
    x0, y0 = max(ax, bx), max(ay, by)
    x1, y1 = min(ax + aw, bx + bw), min(ay + ah, by + bh)
    if x0 >= x1 or y0 >= y1:
        return False
    am = a.mask_local[y0 - ay:y1 - ay, x0 - ax:x1 - ax]
    bm = b.mask_local[y0 - by:y1 - by, x0 - bx:x1 - bx]
    return bool(np.any(am & bm))


def _touches_border(inst, size):
    H, W = size
    x, y, w, h = inst.bbox
    if x == 0 and inst.mask_local[:, 0].any():
        return True
    if y == 0 and inst.mask_local[0].any():
        return True
    if x + w == W and inst.mask_local[:, -1].any():
        return True
    if y + h == H and inst.mask_local[-1].any():
        return True
    return False


def refresh_completeness(scene):
    """Recompute every complete flag from masks alone."""
    inst = scene.instances
    overlapped = [False] * len(inst)
    for i in range(len(inst)):
        for j in range(i + 1, len(inst)):
            if _masks_intersect(inst[i], inst[j]):
                overlapped[i] = overlapped[j] = True
    for i, ins in enumerate(inst):
        ins.complete = not overlapped[i] and not _touches_border(ins, scene.size)
    return scene


def generate_scene(classes, count_target=20, image_size=256, seed=0,
                   overlap_fraction=0.25, border_fraction=0.0,
                   background=(200.0, 6.0), max_attempts=150):
    """One labeled scene; pure function of its arguments.

    count_target instances are attempted: a deliberate fraction is placed
    against an existing instance to create overlapped pairs, an optional
    fraction straddles the border, the rest get full clearance. Failed
    placements are counted in scene.warnings rather than raised.
    """
    if count_target < 1:
        raise ValueError("count_target must be >= 1")
    H = W = int(image_size)
    if H < 64:
        raise ValueError("image_size must be at least 64")
    rng = np.random.default_rng(seed)

    n_overlap = int(round(overlap_fraction * count_target))
    n_border = int(round(border_fraction * count_target))
    n_free = max(count_target - n_overlap - n_border, 0)
    plan = (["free"] * n_free + ["border"] * n_border
            + ["overlap"] * n_overlap)

    placed = []        # (shape, rmax, intensity, class_name)
    warnings = 0

    def clearance_ok(cx, cy, rm, skip=None):
        for i, (s, prm, _, _) in enumerate(placed):
            if i == skip:
                continue
            if math.hypot(cx - s.cx, cy - s.cy) < rm + prm + 2.0:
                return False
        return True

    for kind in plan:
        ci = int(rng.integers(0, len(classes)))
        cls = classes[ci]
        shape = cls.sample_shape(rng)
        rm = shape.max_radius()
        intensity = cls.sample_intensity(rng)
        done = False
        for _ in range(max_attempts):
            if kind == "free":
                margin = rm + 2.0
                if 2 * margin >= min(H, W):
                    break
                cx = rng.uniform(margin, W - margin)
                cy = rng.uniform(margin, H - margin)
                if not clearance_ok(cx, cy, rm):
                    continue
            elif kind == "border":
                edge = int(rng.integers(0, 4))
                t = rng.uniform(0.2, 0.8) * rm
                u = rng.uniform(rm, max(W - rm, rm))
                v = rng.uniform(rm, max(H - rm, rm))
                cx, cy = [(u, t), (u, H - t), (t, v), (W - t, v)][edge]
                if not clearance_ok(cx, cy, rm):
                    continue
            else:
                if not placed:
                    break
                pi = int(rng.integers(0, len(placed)))
                partner, prm, _, _ = placed[pi]
                ang = rng.uniform(0.0, 2.0 * math.pi)
                dist = rng.uniform(0.45, 0.8) * (rm + prm)
                cx = float(np.clip(partner.cx + dist * math.cos(ang), 2, W - 2))
                cy = float(np.clip(partner.cy + dist * math.sin(ang), 2, H - 2))
                if not clearance_ok(cx, cy, rm, skip=pi):
                    continue
            placed.append((shape.moved(cx, cy), rm, intensity, cls.name))
            done = True
            break
        if not done:
            warnings += 1

    scene = Scene(image=np.zeros((H, W), dtype=np.uint8), instances=[],
                  seed=seed, warnings=warnings,
                  classes=[c.name for c in classes])

    canvas = np.full((H, W), background[0], dtype=np.float64)
    canvas += rng.normal(0.0, background[1], size=(H, W))
    for idx, (shape, _, intensity, cname) in enumerate(placed):
        try:
            local, (x0, y0) = rasterize_shape(shape, (H, W))
        except ValueError:
            scene.warnings += 1
            continue
        h, w = local.shape
        record = analytic_record(shape, cname, idx + 1)
        inst = Instance(idx + 1, cname, (x0, y0, w, h), True, local,
                        record, shape, (H, W))
        scene.instances.append(inst)
        paint = np.full((h, w), intensity)
        paint += rng.normal(0.0, 2.0, size=(h, w))        # fine grain
        if cname:
            cls = classes[[c.name for c in classes].index(cname)]
            paint += rng.normal(0.0, cls.texture_amp, size=(h, w))
        region = canvas[y0:y0 + h, x0:x0 + w]
        region[local] = np.minimum(region[local], paint[local])

    refresh_completeness(scene)
    scene.image = np.clip(np.round(canvas), 0, 255).astype(np.uint8)
    return scene


def generate_dataset(classes, n_scenes, seed=0, **scene_kwargs):
    """n_scenes independent scenes with per-scene seeds derived from seed."""
    seeds = np.random.SeedSequence(seed).generate_state(n_scenes)
    return [generate_scene(classes, seed=int(s), **scene_kwargs)
            for s in seeds]


def save_scene(scene, outdir, stem):
    """Write image, per-instance masks, and the JSON manifest."""
    import os
    os.makedirs(outdir, exist_ok=True)
    image_name = f"{stem}.pgm"
    imageio.write_pgm(os.path.join(outdir, image_name), scene.image)
    entries = []
    for inst in scene.instances:
        mask_name = f"{stem}_mask_{inst.id:03d}.pgm"
        imageio.write_pgm(os.path.join(outdir, mask_name),
                          inst.mask.astype(np.uint8) * 255)
        entries.append({
            "id": inst.id,
            "class": inst.class_name,
            "bbox": list(inst.bbox),
            "complete": inst.complete,
            "mask": mask_name,
            "morphometrics": inst.record.to_json(),
            "shape": inst.shape.to_json(),
        })
    manifest = {
        "image": image_name,
        "size": [int(scene.size[0]), int(scene.size[1])],
        "seed": scene.seed,
        "warnings": scene.warnings,
        "classes": scene.classes,
        "instances": entries,
    }
    path = os.path.join(outdir, f"{stem}.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_scene(manifest_path):
    import os
    base = os.path.dirname(manifest_path)
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    image = imageio.read_pgm(os.path.join(base, manifest["image"]))
    H, W = manifest["size"]
    scene = Scene(image=image, instances=[], seed=manifest["seed"],
                  warnings=manifest["warnings"],
                  classes=list(manifest.get("classes", [])))
    for e in manifest["instances"]:
        full = imageio.read_pgm(os.path.join(base, e["mask"])) > 0
        x, y, w, h = e["bbox"]
        scene.instances.append(Instance(
            e["id"], e["class"], tuple(e["bbox"]), e["complete"],
            full[y:y + h, x:x + w],
            MorphometricRecord.from_json(e["morphometrics"]),
            StarShape.from_json(e["shape"]), (H, W)))
    return scene
