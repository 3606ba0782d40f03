"""Final report bundle: every headline number in one directory.

build_report collects the outputs of the tournament, infer, and stats
commands into four table families: per-stage candidate metrics, pipeline
versus whole-scene baseline, truth-versus-pipeline morphometric agreement
on IoU-matched instances, and the pairwise significance tables for both
measurement sources. Inputs are never recomputed; a missing upstream file
fails the build with the full list of absentees so reruns are cheap to
diagnose. Rebuilding from unchanged inputs writes byte-identical files.
"""

import csv
import json
import os
import shutil
import statistics

import numpy as np

from . import morphometry as M
from . import pipeline as P
from .synth import load_scene

IOU_MATCH = 0.5
METRICS = ("area", "eccentricity", "circularity", "solidity")

REQUIRED = {
    "tournament report": os.path.join("tournament", "report.json"),
    "pipeline vs baseline metrics": os.path.join("tournament",
                                                 "pipeline_vs_baseline.json"),
    "inference metrics": os.path.join("infer", "metrics.json"),
    "inference manifest": os.path.join("infer", "infer_manifest.json"),
    "truth significance table": os.path.join("stats", "truth.csv"),
    "pipeline significance table": os.path.join("stats", "pipeline.csv"),
}


class MissingInputs(Exception):
    """Upstream outputs absent; message lists every missing file."""


def match_instances(truth_masks, pred_masks, iou_threshold=IOU_MATCH):
    """Greedy one-to-one matching by descending mask IoU.

    Ties break toward the lower truth index then lower prediction index,
    so matching is deterministic. Returns [(truth_i, pred_i, iou)], sorted
    by truth index.
    """
    pairs = []
    for ti, tm in enumerate(truth_masks):
        tm = np.asarray(tm, dtype=bool)
        for pi, pm in enumerate(pred_masks):
            inter = int(np.logical_and(tm, pm).sum())
            if inter == 0:
                continue
            iou = inter / int(np.logical_or(tm, pm).sum())
            if iou >= iou_threshold:
                pairs.append((iou, ti, pi))
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
    taken_t, taken_p, out = set(), set(), []
    for iou, ti, pi in pairs:
        if ti in taken_t or pi in taken_p:
            continue
        taken_t.add(ti)
        taken_p.add(pi)
        out.append((ti, pi, float(iou)))
    return sorted(out)


def _measure(mask):
    regions = M.connected_components(mask)
    return M.morphometrics(regions[0]) if regions else None


def _stage_rows(report):
    rows = []
    order = ("detect", "classify", "segment")
    stages = report["stages"]
    names = [s for s in order if s in stages]
    names += sorted(set(stages) - set(order))
    for name in names:
        stage = stages[name]
        winner = stage["winner"]
        for rank, entry in enumerate(stage["ranking"], start=1):
            metrics = sorted(set(entry["val_metrics"])
                             | set(entry["test_metrics"])) or [stage["metric"]]
            for metric in metrics:
                rows.append([stage["stage"], rank, entry["id"],
                             entry["preset"], entry["parameter_count"],
                             entry["steps"], int(entry["failed"]),
                             int(entry["id"] == winner), metric,
                             _cell(entry["val_metrics"].get(metric)),
                             _cell(entry["test_metrics"].get(metric))])
    return rows


def _cell(value):
    return "" if value is None else repr(value)


def _versus_rows(doc):
    rows = []
    for model in ("pipeline", "baseline"):
        m = doc[model]
        rows.append([model, "jaccard", repr(m["jaccard"])])
        rows.append([model, "global_accuracy", repr(m["global_accuracy"])])
        for cname in sorted(m["per_class"]):
            rows.append([model, f"jaccard[{cname}]",
                         repr(m["per_class"][cname])])
    return rows


def _agreement_rows(run_dir, infer_manifest):
    """IoU-matched truth/pipeline instance pairs, measured identically."""
    dataset = infer_manifest.get("dataset")
    if not dataset:
        raise MissingInputs("inference ran on raw images; agreement tables "
                            "need a dataset with ground truth")
    index_path = os.path.join(dataset, "dataset.json")
    if not os.path.isfile(index_path):
        raise MissingInputs(f"dataset index vanished: {index_path}")
    with open(index_path) as fh:
        index = json.load(fh)
    split = infer_manifest.get("split") or "test"
    members = (range(len(index["scenes"])) if split == "all"
               else index["split"][split])

    rows = []
    matched = truth_total = pred_total = class_agree = 0
    infer_dir = os.path.join(run_dir, "infer")
    missing = []
    for i in members:
        stem = index["scenes"][i]
        pgm = os.path.join(infer_dir, f"{stem}_instances.pgm")
        js = os.path.join(infer_dir, f"{stem}_instances.json")
        missing += [p for p in (pgm, js) if not os.path.isfile(p)]
    if missing:
        raise MissingInputs("instance maps missing for scenes: "
                            + ", ".join(sorted(missing)))

    for i in members:
        stem = index["scenes"][i]
        scene = load_scene(os.path.join(dataset, "scenes", f"{stem}.json"))
        imap = P.load_instance_map(
            os.path.join(infer_dir, f"{stem}_instances.pgm"),
            os.path.join(infer_dir, f"{stem}_instances.json"))
        truth = [inst for inst in scene.instances if inst.complete]
        preds = imap.records
        truth_total += len(truth)
        pred_total += len(preds)
        pairs = match_instances([t.mask for t in truth],
                                [imap.labels == r.instance_id for r in preds])
        for ti, pi, iou in pairs:
            t_rec = _measure(truth[ti].mask)
            p_rec = _measure(imap.labels == preds[pi].instance_id)
            if t_rec is None or p_rec is None:
                continue
            matched += 1
            class_agree += int(truth[ti].class_name == preds[pi].class_name)
            for metric in METRICS:
                tv = getattr(t_rec, metric)
                pv = getattr(p_rec, metric)
                rows.append([stem, truth[ti].id, preds[pi].instance_id,
                             repr(round(iou, 6)), metric, repr(tv), repr(pv),
                             repr(abs(tv - pv))])
    counts = {"matched": matched, "truth_instances": truth_total,
              "predicted_instances": pred_total,
              "class_agreement": (class_agree / matched) if matched else None}
    return rows, counts


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def build_report(run_dir, outdir):
    """Assemble the bundle under outdir; returns the written paths."""
    missing = [rel for rel in REQUIRED.values()
               if not os.path.isfile(os.path.join(run_dir, rel))]
    if missing:
        raise MissingInputs(
            f"report inputs missing from {run_dir}: "
            + ", ".join(sorted(missing)) + " (run the upstream commands "
            "first)")
    os.makedirs(outdir, exist_ok=True)

    def load(rel):
        with open(os.path.join(run_dir, rel)) as fh:
            return json.load(fh)

    outputs = []

    stage_path = os.path.join(outdir, "stage_metrics.csv")
    _write_csv(stage_path,
               ["stage", "rank", "candidate", "preset", "parameters",
                "steps", "failed", "winner", "metric", "validation", "test"],
               _stage_rows(load(REQUIRED["tournament report"])))
    outputs.append(stage_path)

    versus_path = os.path.join(outdir, "pipeline_vs_baseline.csv")
    _write_csv(versus_path, ["model", "metric", "value"],
               _versus_rows(load(REQUIRED["pipeline vs baseline metrics"])))
    outputs.append(versus_path)

    manifest = load(REQUIRED["inference manifest"])
    rows, counts = _agreement_rows(run_dir, manifest)
    agree_path = os.path.join(outdir, "agreement.csv")
    _write_csv(agree_path,
               ["scene", "truth_id", "pred_id", "iou", "metric", "truth",
                "pipeline", "abs_diff"], rows)
    outputs.append(agree_path)

    medians = {}
    for metric in METRICS:
        diffs = [float(r[7]) for r in rows if r[4] == metric]
        medians[metric] = statistics.median(diffs) if diffs else None

    for name, key in (("significance_truth.csv", "truth significance table"),
                      ("significance_pipeline.csv",
                       "pipeline significance table")):
        dst = os.path.join(outdir, name)
        shutil.copyfile(os.path.join(run_dir, REQUIRED[key]), dst)
        outputs.append(dst)

    index_path = os.path.join(outdir, "index.json")
    index = {
        "files": sorted(os.path.basename(p) for p in outputs),
        "sources": sorted(REQUIRED.values()),
        "dataset": manifest.get("dataset"),
        "split": manifest.get("split"),
        "pooled_metrics": load(REQUIRED["inference metrics"])["pooled"],
        "agreement_counts": counts,
        "agreement_medians": medians,
        "iou_threshold": IOU_MATCH,
    }
    with open(index_path, "w") as fh:
        json.dump(index, fh, sort_keys=True, indent=2)
        fh.write("\n")
    outputs.append(index_path)
    return outputs
