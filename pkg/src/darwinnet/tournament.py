"""Stage tournaments: train every candidate, rank, keep the winner.

Ranking is a total order so reruns and fuzzing cannot disagree: selection
metric descending, then fewer parameters, then fewer optimizer steps, then
lexicographic id. Optimizer steps stand in for training cost because they
are deterministic; wall-clock time is still measured and shown in the
human-readable table, but it never enters selection or the canonical
report, which must be byte-identical across reruns.

Selection only ever reads validation metrics. Test metrics ride along in
the report for honesty, not for choosing.
"""

import itertools
import json
import time
import zlib
from concurrent import futures
from dataclasses import dataclass, field

import numpy as np

from . import classify as C
from . import detect as D
from . import segment as S
from . import engine as E

STAGE_METRICS = {"detect": "ap", "classify": "accuracy", "segment": "jaccard"}
SEGMENT_METRICS = ("jaccard", "global_accuracy")


@dataclass
class CandidateEntry:
    id: str
    stage: str
    preset: str
    seed: int
    parameter_count: int = 0
    val_metrics: dict = field(default_factory=dict)
    test_metrics: dict = field(default_factory=dict)
    steps: int = 0
    train_seconds: float = 0.0
    failed: bool = False

    def to_json(self):
        return {"id": self.id, "stage": self.stage, "preset": self.preset,
                "seed": self.seed, "parameter_count": self.parameter_count,
                "val_metrics": self.val_metrics,
                "test_metrics": self.test_metrics, "steps": self.steps,
                "failed": self.failed}

    @classmethod
    def from_json(cls, d):
        return cls(id=d["id"], stage=d["stage"], preset=d["preset"],
                   seed=d["seed"], parameter_count=d["parameter_count"],
                   val_metrics=dict(d["val_metrics"]),
                   test_metrics=dict(d["test_metrics"]), steps=d["steps"],
                   failed=d["failed"])


def candidate_seed(base_seed, candidate_id):
    """Stable per-candidate seed: adding candidates never reseeds others."""
    return (int(base_seed) * 1_000_003 + zlib.crc32(candidate_id.encode())) \
        % 2 ** 32


def selection_key(entry, metric):
    """Total-order sort key; lower sorts first (rank 1)."""
    score = -1.0 if entry.failed else entry.val_metrics.get(metric, -1.0)
    return (entry.failed, -score, entry.parameter_count, entry.steps, entry.id)


def decided_by(a, b, metric):
    """Which criterion separates two adjacently ranked entries."""
    if a.failed != b.failed:
        return "failure"
    sa = a.val_metrics.get(metric, -1.0)
    sb = b.val_metrics.get(metric, -1.0)
    if sa != sb:
        return "metric"
    if a.parameter_count != b.parameter_count:
        return "parameters"
    if a.steps != b.steps:
        return "steps"
    return "id"


def rank_entries(entries, metric):
    """(ranked list, tie-break trail) under the documented total order."""
    ranked = sorted(entries, key=lambda e: selection_key(e, metric))
    trail = [{"pair": [a.id, b.id], "decided_by": decided_by(a, b, metric)}
             for a, b in zip(ranked, ranked[1:])]
    return ranked, trail


# stage adapters ---------------------------------------------------------------

def _train_detect(preset, seed, data, hyper):
    model = D.build_detector(preset, image_size=data["image_size"], seed=seed)
    res = D.train_detector(model, data["train"], hyper=hyper, seed=seed,
                           val_scenes=data.get("val"),
                           augment=data.get("augment", False))

    def ap_on(scenes):
        preds = [D.detect(model, s.image, conf_threshold=0.3) for s in scenes]
        truths = [D.truth_boxes(s) for s in scenes]
        return {"ap": D.evaluate_detection(preds, truths)["ap"]}

    return model, res, ap_on(data["val"]), ap_on(data["test"])


def _train_classify(preset, seed, data, hyper):
    crops, labels = data["train"]
    model = C.build_classifier(preset, n_classes=data["n_classes"],
                               patch_size=data.get("patch_size", D.PATCH_SIZE),
                               seed=seed)
    res = C.train_classifier(model, crops, labels, hyper=hyper, seed=seed,
                             val=data.get("val"))

    def acc_on(split):
        ev = C.evaluate_classifier(model, split[0], split[1])
        return {"accuracy": ev["accuracy"]}

    return model, res, acc_on(data["val"]), acc_on(data["test"])


def _train_segment(preset, seed, data, hyper):
    crops, masks = data["train"]
    model = S.build_segmenter(preset,
                              patch_size=data.get("patch_size", D.PATCH_SIZE),
                              seed=seed)
    res = S.train_segmenter(model, crops, masks, hyper=hyper, seed=seed,
                            val=data.get("val"))

    def jac_on(split):
        pred = S.segment(model, split[0])
        ev = S.evaluate_segmentation(pred, np.asarray(split[1]).astype(bool))
        return {"jaccard": ev["jaccard"],
                "global_accuracy": ev["global_accuracy"]}

    return model, res, jac_on(data["val"]), jac_on(data["test"])


_TRAINERS = {"detect": _train_detect, "classify": _train_classify,
             "segment": _train_segment}

_BUILDERS = {
    "detect": lambda preset, seed, data: D.build_detector(
        preset, image_size=data["image_size"], seed=seed),
    "classify": lambda preset, seed, data: C.build_classifier(
        preset, n_classes=data["n_classes"],
        patch_size=data.get("patch_size", D.PATCH_SIZE), seed=seed),
    "segment": lambda preset, seed, data: S.build_segmenter(
        preset, patch_size=data.get("patch_size", D.PATCH_SIZE), seed=seed),
}


@dataclass
class StageTournament:
    stage: str
    metric: str
    entries: list                     # ranked, best first
    tie_breaks: list
    models: dict                      # candidate id -> trained model

    @property
    def winner(self):
        return self.entries[0]

    def winner_model(self):
        return self.models[self.winner.id]

    def to_json(self):
        return {"stage": self.stage, "metric": self.metric,
                "winner": self.winner.id,
                "ranking": [e.to_json() for e in self.entries],
                "tie_breaks": self.tie_breaks}


def train_candidate(stage, candidate, data, hyper=None, base_seed=0):
    """Train/evaluate one candidate; divergence is flagged, not raised."""
    if stage not in _TRAINERS:
        raise ValueError(f"unknown stage {stage!r}")
    cid = candidate["id"]
    seed = candidate_seed(base_seed, cid)
    start = time.perf_counter()
    try:
        model, res, val_m, test_m = _TRAINERS[stage](candidate["preset"],
                                                     seed, data, hyper)
        ok = bool(np.isfinite(res.train_loss).all())
        steps = res.steps
    except E.TrainingDivergedError:
        # the architecture still ranks (last) and needs a parameter count
        model = _BUILDERS[stage](candidate["preset"], seed, data)
        ok, steps, val_m, test_m = False, 0, {}, {}
    elapsed = time.perf_counter() - start
    entry = CandidateEntry(id=cid, stage=stage, preset=candidate["preset"],
                           seed=seed, parameter_count=model.parameter_count,
                           val_metrics=val_m if ok else {},
                           test_metrics=test_m if ok else {},
                           steps=steps,
                           train_seconds=elapsed, failed=not ok)
    return entry, model


def run_stage_tournament(stage, candidates, data, hyper=None, base_seed=0,
                         metric=None, jobs=1):
    """Train all candidates, rank them, return the StageTournament.

    Candidates are independent (each trains from its own derived seed), so
    jobs > 1 farms them out to worker processes without changing results.
    """
    if len(candidates) < 2:
        raise ValueError("a tournament needs at least 2 candidates")
    ids = [c["id"] for c in candidates]
    if len(set(ids)) != len(ids):
        raise ValueError("candidate ids must be unique")
    metric = metric or STAGE_METRICS[stage]
    if stage == "segment" and metric not in SEGMENT_METRICS:
        raise ValueError(f"segment metric must be one of {SEGMENT_METRICS}")

    if jobs > 1:
        with futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            trained = list(pool.map(
                train_candidate, itertools.repeat(stage), candidates,
                itertools.repeat(data), itertools.repeat(hyper),
                itertools.repeat(base_seed)))
    else:
        trained = [train_candidate(stage, cand, data, hyper, base_seed)
                   for cand in candidates]
    entries = [entry for entry, _ in trained]
    models = {entry.id: model for entry, model in trained}
    ranked, trail = rank_entries(entries, metric)
    if ranked[0].failed:
        raise RuntimeError(f"every {stage} candidate diverged; lower the "
                           "learning rate or change the candidate set")
    return StageTournament(stage, metric, ranked, trail, models)


def cull_and_replace(tourney, candidate, data, hyper=None, base_seed=0):
    """Add a late candidate under the same seed policy and re-rank.

    Existing entries keep their recorded metrics untouched; the winner can
    only improve because re-ranking takes the max of a superset.
    """
    if any(e.id == candidate["id"] for e in tourney.entries):
        raise ValueError(f"candidate id {candidate['id']!r} already present")
    entry, model = train_candidate(tourney.stage, candidate, data, hyper,
                                   base_seed)
    ranked, trail = rank_entries(tourney.entries + [entry], tourney.metric)
    models = dict(tourney.models)
    models[entry.id] = model
    return StageTournament(tourney.stage, tourney.metric, ranked, trail,
                           models)


# training-data preparation -----------------------------------------------------

def crop_training_set(scenes, class_names, source="truth", detector=None,
                      margin_fraction=0.1, patch_size=None, conf_threshold=0.5,
                      iou_match=0.5):
    """(crops, labels, masks) for the patch stages from a list of scenes.

    Boxes come from the ground truth by default; with source="detector"
    the supplied detector proposes them and each box inherits the labels
    of its best-overlapping complete instance (unmatched boxes are
    dropped, since they have no truth to learn from).
    """
    if source not in ("truth", "detector"):
        raise ValueError(f"unknown crop source {source!r}")
    if source == "detector" and detector is None:
        raise ValueError("source='detector' needs a detector model")
    patch_size = patch_size or D.PATCH_SIZE
    index = {name: i for i, name in enumerate(class_names)}
    crops, labels, masks = [], [], []
    for si, scene in enumerate(scenes):
        complete = [i for i in scene.instances if i.complete]
        if source == "truth":
            pairs = [(D.BoundingBox(*map(float, inst.bbox)), inst)
                     for inst in complete]
        else:
            pairs = []
            for box in D.detect(detector, scene.image, conf_threshold):
                best = max(((D.iou(box, D.BoundingBox(*map(float, i.bbox))), i)
                            for i in complete), default=(0.0, None),
                           key=lambda t: t[0])
                if best[0] >= iou_match:
                    pairs.append((box, best[1]))
        for box, inst in pairs:
            recs, _ = D.crop_instances(scene.image, [box], margin_fraction,
                                       patch_size=patch_size, scene_id=si)
            if not recs:
                continue
            rec = recs[0]
            crops.append(rec.patch)
            labels.append(index[inst.class_name])
            masks.append(D.crop_mask(inst.mask, rec).astype(np.int64))
    if not crops:
        raise ValueError("no usable crops in the given scenes")
    return (np.stack(crops), np.asarray(labels, dtype=np.int64),
            np.stack(masks))


def build_stage_data(split, class_names, source="truth", detector=None,
                     margin_fraction=0.1, patch_size=None, augment=True):
    """Per-stage data dicts for run_stage_tournament from one scene split."""
    patch_size = patch_size or D.PATCH_SIZE
    image_size = split.train[0].size[0]
    crops = {}
    for name, scenes in (("train", split.train), ("val", split.validation),
                         ("test", split.test)):
        crops[name] = crop_training_set(scenes, class_names, source, detector,
                                        margin_fraction, patch_size)
    detect_data = {"image_size": image_size, "train": split.train,
                   "val": split.validation, "test": split.test,
                   "augment": augment}
    classify_data = {"n_classes": len(class_names), "patch_size": patch_size}
    segment_data = {"patch_size": patch_size}
    for name in ("train", "val", "test"):
        c, l, m = crops[name]
        classify_data[name] = (c, l)
        segment_data[name] = (c, m)
    return {"detect": detect_data, "classify": classify_data,
            "segment": segment_data}


# reports ----------------------------------------------------------------------

def report_to_json(stages, base_seed):
    """Canonical TournamentReport text: stable key order, no volatile data."""
    doc = {"base_seed": base_seed,
           "stages": {t.stage: t.to_json() for t in stages}}
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def report_from_json(text):
    doc = json.loads(text)
    stages = {}
    for name, sd in doc["stages"].items():
        entries = [CandidateEntry.from_json(e) for e in sd["ranking"]]
        stages[name] = StageTournament(sd["stage"], sd["metric"], entries,
                                       sd["tie_breaks"], models={})
    return stages, doc["base_seed"]


def report_table(stages):
    """Fixed-width ranking table, one panel per stage."""
    lines = []
    for t in stages:
        lines.append(f"[{t.stage}] selection metric: {t.metric}")
        lines.append(f"{'rank':>4} {'id':<24} {'preset':<18} {'params':>7} "
                     f"{'val':>8} {'test':>8} {'steps':>7} {'time':>8}")
        for rank, e in enumerate(t.entries, start=1):
            val = e.val_metrics.get(t.metric)
            test = e.test_metrics.get(t.metric)
            flag = " FAILED" if e.failed else ""
            lines.append(
                f"{rank:>4} {e.id:<24} {e.preset:<18} "
                f"{e.parameter_count:>7} "
                f"{'-' if val is None else format(val, '.4f'):>8} "
                f"{'-' if test is None else format(test, '.4f'):>8} "
                f"{e.steps:>7} {e.train_seconds:>7.1f}s{flag}")
        lines.append("")
    return "\n".join(lines)
