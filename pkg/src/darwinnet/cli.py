"""Command line front end covering the full experiment cycle.

Subcommands follow the natural order of a study: gen writes a labeled
dataset, tournament selects the three stage winners and trains the
single-stage baseline, infer applies the assembled pipeline to images,
morph measures instances, stats compares classes, gradcheck audits the
engine gradients, and report collects everything into one bundle.

Exit codes: 0 success; 1 a computed result missed a required threshold
or some inputs had to be skipped; 2 usage errors, bad configuration, or
missing files. Every command writes a manifest recording the config
hash, the effective seeds, and the produced files.
"""

import argparse
import glob
import json
import os
import sys

from . import config as C
from . import engine as E
from . import imageio
from . import morphometry as M
from . import pipeline as P
from . import stats as ST
from . import tournament as T
from . import verify
from .synth import (DatasetSplit, generate_dataset, get_roster, load_scene,
                    save_scene, split_indices)

EXIT_OK = 0
EXIT_THRESHOLD = 1
EXIT_USAGE = 2

STAGE_ORDER = ("detect", "classify", "segment")


class UsageError(Exception):
    """Bad invocation or unusable inputs; maps to exit code 2."""


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _outdir(cfg, args, command):
    out = args.out or os.path.join(cfg["out"], command)
    os.makedirs(out, exist_ok=True)
    return out


def _manifest(outdir, name, cfg, seeds, outputs, **extra):
    # name doubles as the file stem so two morph/stats runs with different
    # --name values can share a directory without clobbering each other
    doc = {"command": name,
           "config_sha256": C.config_hash(cfg),
           "seeds": seeds,
           "outputs": sorted(os.path.relpath(p, outdir) for p in outputs)}
    doc.update(extra)
    path = os.path.join(outdir, f"{name}_manifest.json")
    _write_json(path, doc)
    return path


# dataset handling -----------------------------------------------------------------

def cmd_gen(cfg, args):
    outdir = _outdir(cfg, args, "gen")
    ds = cfg["dataset"]
    seed = args.seed if args.seed is not None else ds["seed"]
    roster = get_roster(ds["roster"])
    scenes = generate_dataset(
        roster, ds["n_scenes"], seed=seed, count_target=ds["count_target"],
        image_size=ds["image_size"], overlap_fraction=ds["overlap_fraction"],
        border_fraction=ds["border_fraction"])
    scene_dir = os.path.join(outdir, "scenes")
    stems = [f"scene_{i:04d}" for i in range(len(scenes))]
    outputs = []
    for stem, scene in zip(stems, scenes):
        outputs.append(save_scene(scene, scene_dir, stem))
    tr, va, te = split_indices(len(scenes), seed=ds["split_seed"])
    index = {"roster": ds["roster"],
             "classes": [c.name for c in roster],
             "image_size": ds["image_size"],
             "seed": seed,
             "scenes": stems,
             "split": {"train": sorted(int(i) for i in tr),
                       "validation": sorted(int(i) for i in va),
                       "test": sorted(int(i) for i in te)}}
    index_path = os.path.join(outdir, "dataset.json")
    _write_json(index_path, index)
    outputs.append(index_path)
    _manifest(outdir, "gen", cfg,
              {"dataset": seed, "split": ds["split_seed"]}, outputs,
              n_scenes=len(scenes),
              warnings=sum(s.warnings for s in scenes))
    return EXIT_OK


def load_dataset(data_dir):
    """Read a gen output back as (scenes, split, class_names, image_size)."""
    index_path = os.path.join(data_dir, "dataset.json")
    if not os.path.isfile(index_path):
        raise UsageError(f"no dataset index at {index_path}; run gen first")
    with open(index_path) as fh:
        index = json.load(fh)
    scene_dir = os.path.join(data_dir, "scenes")
    scenes = [load_scene(os.path.join(scene_dir, f"{stem}.json"))
              for stem in index["scenes"]]
    split = DatasetSplit(
        [scenes[i] for i in index["split"]["train"]],
        [scenes[i] for i in index["split"]["validation"]],
        [scenes[i] for i in index["split"]["test"]])
    return scenes, split, index["classes"], index["image_size"]


def _split_members(index, split_name):
    if split_name == "all":
        return list(range(len(index["scenes"])))
    return index["split"][split_name]


# tournament -----------------------------------------------------------------------

def cmd_tournament(cfg, args):
    outdir = _outdir(cfg, args, "tournament")
    _, split, class_names, image_size = load_dataset(args.data)
    base_seed = args.seed if args.seed is not None else cfg["dataset"]["seed"]
    stages = [args.stage] if args.stage else list(STAGE_ORDER)
    pcfg = cfg["pipeline"]
    if pcfg["crop_source"] == "detector" and "detect" not in stages:
        raise UsageError("crop_source 'detector' requires the detect stage")

    augment = cfg["stages"]["detect"]["augment"]
    data = T.build_stage_data(split, class_names,
                              margin_fraction=pcfg["margin_fraction"],
                              augment=augment)
    results, models = [], {}
    for stage in stages:
        if stage != "detect" and pcfg["crop_source"] == "detector":
            data = T.build_stage_data(split, class_names, source="detector",
                                      detector=models["detect"],
                                      margin_fraction=pcfg["margin_fraction"],
                                      augment=augment)
        metric = cfg["stages"]["segment"]["metric"] if stage == "segment" \
            else None
        tourney = T.run_stage_tournament(
            stage, cfg["stages"][stage]["candidates"], data[stage],
            hyper=C.stage_hyper(cfg, stage), base_seed=base_seed,
            metric=metric, jobs=args.jobs)
        results.append(tourney)
        models[stage] = tourney.winner_model()
        print(T.report_table([tourney]))

    outputs = []
    report_path = os.path.join(outdir, "report.json")
    with open(report_path, "w") as fh:
        fh.write(T.report_to_json(results, base_seed))
    table_path = os.path.join(outdir, "report.txt")
    with open(table_path, "w") as fh:
        fh.write(T.report_table(results) + "\n")
    outputs += [report_path, table_path]

    if set(stages) == set(STAGE_ORDER):
        pipe = P.assemble_dnn(models, class_names,
                              conf_threshold=pcfg["conf_threshold"],
                              nms_iou=pcfg["nms_iou"],
                              margin_fraction=pcfg["margin_fraction"])
        outputs += P.save_pipeline(pipe, outdir)
        if not args.skip_baseline:
            outputs += _pipeline_vs_baseline(cfg, outdir, pipe, split,
                                             class_names, image_size,
                                             base_seed)
    _manifest(outdir, "tournament", cfg, {"base": base_seed}, outputs,
              stages=stages, dataset=os.path.abspath(args.data))
    return EXIT_OK


def _pipeline_vs_baseline(cfg, outdir, pipe, split, class_names, image_size,
                          base_seed):
    """Train the whole-scene baseline and score both on the test split."""
    model = P.build_baseline(len(class_names), image_size,
                             preset=cfg["pipeline"]["baseline_preset"],
                             seed=base_seed)
    P.train_baseline(model, split.train, class_names,
                     hyper=C.stage_hyper(cfg, "segment"), seed=base_seed,
                     val_scenes=split.validation)
    model_path = os.path.join(outdir, "baseline.dnn")
    E.save_model(model, model_path)

    imaps = [P.reconstruct(s.image, P.run_pipeline(pipe, s.image))
             for s in split.test]
    pipe_metrics = P.evaluate_pipeline(imaps, split.test, class_names)
    truth = [P.truth_class_map(s, class_names) for s in split.test]
    base_metrics = P.evaluate_class_maps(
        P.baseline_class_maps(model, split.test), truth, class_names)
    path = os.path.join(outdir, "pipeline_vs_baseline.json")
    _write_json(path, {"split": "test", "n_scenes": len(split.test),
                       "pipeline": pipe_metrics, "baseline": base_metrics})
    return [model_path, path]


# inference ------------------------------------------------------------------------

def cmd_infer(cfg, args):
    outdir = _outdir(cfg, args, "infer")
    try:
        pipe = P.load_pipeline(args.pipeline)
    except (OSError, KeyError, ValueError) as e:
        raise UsageError(f"cannot load pipeline {args.pipeline}: {e}")

    targets, dataset_dir = [], None
    for item in args.inputs:
        if os.path.isdir(item):
            index_path = os.path.join(item, "dataset.json")
            if not os.path.isfile(index_path):
                raise UsageError(f"{item} is not a dataset directory")
            dataset_dir = os.path.abspath(item)
            with open(index_path) as fh:
                index = json.load(fh)
            for i in _split_members(index, args.split):
                stem = index["scenes"][i]
                targets.append((stem, os.path.join(item, "scenes",
                                                   f"{stem}.json"), True))
        else:
            stem = os.path.splitext(os.path.basename(item))[0]
            targets.append((stem, item, False))
    if not targets:
        raise UsageError("nothing to infer on")

    outputs, skipped = [], []
    imaps, truth_scenes, per_scene = [], [], {}
    for stem, path, is_scene in targets:
        try:
            if is_scene:
                scene = load_scene(path)
                image = scene.image
            else:
                scene = None
                image = imageio.read_pgm(path)
            records = P.run_pipeline(pipe, image)
        except (OSError, ValueError) as e:
            skipped.append({"input": path, "reason": str(e)})
            continue
        imap = P.reconstruct(image, records)
        outputs += list(P.save_instance_map(imap, image, outdir, stem))
        per_scene[stem] = {"instances": len(records)}
        if scene is not None:
            imaps.append(imap)
            truth_scenes.append((stem, scene))

    if truth_scenes:
        pooled = P.evaluate_pipeline(imaps, [s for _, s in truth_scenes],
                                     pipe.class_names)
        for imap, (stem, scene) in zip(imaps, truth_scenes):
            one = P.evaluate_pipeline([imap], [scene], pipe.class_names)
            per_scene[stem].update(jaccard=one["jaccard"],
                                   global_accuracy=one["global_accuracy"])
        metrics_path = os.path.join(outdir, "metrics.json")
        _write_json(metrics_path, {"pooled": pooled, "scenes": per_scene})
        outputs.append(metrics_path)

    _manifest(outdir, "infer", cfg, {}, outputs,
              pipeline=os.path.abspath(args.pipeline), dataset=dataset_dir,
              split=args.split if dataset_dir else None, skipped=skipped)
    if skipped:
        for s in skipped:
            print(f"skipped {s['input']}: {s['reason']}", file=sys.stderr)
        return EXIT_THRESHOLD
    return EXIT_OK


# measurement ----------------------------------------------------------------------

def _map_instances(maps_dir):
    sidecars = sorted(glob.glob(os.path.join(maps_dir, "*_instances.json")))
    if not sidecars:
        raise UsageError(f"no instance maps under {maps_dir}")
    for js in sidecars:
        imap = P.load_instance_map(js[:-len(".json")] + ".pgm", js)
        for rec in imap.records:
            yield rec.class_name, imap.labels == rec.instance_id


def _truth_instances(scenes_dir, split_name):
    index_path = os.path.join(scenes_dir, "dataset.json")
    if not os.path.isfile(index_path):
        raise UsageError(f"no dataset index at {index_path}")
    with open(index_path) as fh:
        index = json.load(fh)
    for i in _split_members(index, split_name):
        stem = index["scenes"][i]
        scene = load_scene(os.path.join(scenes_dir, "scenes", f"{stem}.json"))
        for inst in scene.instances:
            if inst.complete:
                yield inst.class_name, inst.mask


def cmd_morph(cfg, args):
    if not args.maps and not args.scenes:
        raise UsageError("morph needs --maps and/or --scenes")
    outdir = _outdir(cfg, args, "morph")
    instances = []
    if args.maps:
        instances += list(_map_instances(args.maps))
    if args.scenes:
        instances += list(_truth_instances(args.scenes, args.split))
    numbered = [(i + 1, cname, mask)
                for i, (cname, mask) in enumerate(instances)]
    records, skipped = M.morphometrics_table(numbered)
    if not records:
        raise UsageError("no measurable instances found")
    csv_path = os.path.join(outdir, f"{args.name}.csv")
    M.write_morphometrics_csv(records, csv_path, area_scale=args.scale)
    _manifest(outdir, args.name, cfg, {}, [csv_path],
              command="morph", n_records=len(records), skipped=skipped,
              area_scale=args.scale)
    return EXIT_OK


# statistics -----------------------------------------------------------------------

def cmd_stats(cfg, args):
    outdir = _outdir(cfg, args, "stats")
    records = []
    for path in args.csv:
        try:
            records += M.read_morphometrics_csv(path)
        except OSError as e:
            raise UsageError(f"cannot read {path}: {e}")
    by_class = {}
    for r in records:
        by_class.setdefault(r.class_name, []).append(r)
    if len(by_class) < 2:
        raise UsageError("pairwise comparison needs records from >= 2 "
                         f"classes, found {sorted(by_class)}")
    small = {k: len(v) for k, v in by_class.items() if len(v) < 2}
    if small:
        raise UsageError(f"classes with fewer than 2 records: {small}")

    tables = ST.significance_report(by_class, alpha=args.alpha)
    csv_path = os.path.join(outdir, f"{args.name}.csv")
    ST.write_significance_csv(tables, csv_path)
    summary = {"alpha": args.alpha, "n_records": len(records),
               "groups": {metric: ST.summarize(
                   {cname: [getattr(r, metric) for r in recs]
                    for cname, recs in sorted(by_class.items())})
                   for metric in ("area", "eccentricity", "circularity",
                                  "solidity")}}
    summary_path = os.path.join(outdir, f"{args.name}_summary.json")
    _write_json(summary_path, summary)
    _manifest(outdir, args.name, cfg, {}, [csv_path, summary_path],
              command="stats", sources=[os.path.abspath(p) for p in args.csv],
              alpha=args.alpha)
    return EXIT_OK


# gradient audit -------------------------------------------------------------------

def cmd_gradcheck(cfg, args):
    outdir = _outdir(cfg, args, "gradcheck")
    registry = dict(verify.STAGE_PRESETS)
    if args.preset:
        stage = args.stage
        if stage is None:
            owners = [s for s, presets in registry.items()
                      if args.preset in presets]
            if not owners:
                raise UsageError(f"unknown preset {args.preset!r}")
            stage = owners[0]
        if args.preset not in registry.get(stage, ()):
            raise UsageError(f"stage {stage!r} has no preset {args.preset!r}")
        results = [verify.check_preset(stage, args.preset,
                                       epsilon=args.epsilon)]
    else:
        results = verify.check_all_presets(epsilon=args.epsilon)

    worst = max(r["max_rel_error"] for r in results)
    for r in results:
        flag = "ok" if r["max_rel_error"] < args.threshold else "FAIL"
        print(f"{r['stage']:>9} {r['preset']:<14} params {r['parameter_count']:>6} "
              f"max rel err {r['max_rel_error']:.3e}  {flag}")
    path = os.path.join(outdir, "gradcheck.json")
    _write_json(path, {"epsilon": args.epsilon, "threshold": args.threshold,
                       "results": results,
                       "passed": bool(worst < args.threshold)})
    _manifest(outdir, "gradcheck", cfg, {"model": 0}, [path])
    return EXIT_OK if worst < args.threshold else EXIT_THRESHOLD


# report ---------------------------------------------------------------------------

def cmd_report(cfg, args):
    from . import report as R
    outdir = _outdir(cfg, args, "report")
    try:
        outputs = R.build_report(args.run, outdir)
    except R.MissingInputs as e:
        raise UsageError(str(e))
    _manifest(outdir, "report", cfg, {}, outputs,
              run=os.path.abspath(args.run))
    return EXIT_OK


# entry point ----------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="JSON",
                        help="experiment config; defaults apply when omitted")
    common.add_argument("--seed", type=int,
                        help="override the configured base seed")
    common.add_argument("--out", metavar="DIR",
                        help="output directory (default <config out>/<command>)")
    common.add_argument("--jobs", type=int, default=1,
                        help="worker processes for candidate training")

    parser = argparse.ArgumentParser(
        prog="darwinnet",
        description="tournament-selected three-stage instance segmentation")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="command")

    sub.add_parser("gen", parents=[common],
                   help="generate a labeled synthetic dataset")

    p = sub.add_parser("tournament", parents=[common],
                       help="run stage tournaments and train the baseline")
    p.add_argument("--data", required=True, metavar="DIR",
                   help="dataset directory produced by gen")
    p.add_argument("--stage", choices=STAGE_ORDER,
                   help="restrict to a single stage")
    p.add_argument("--skip-baseline", action="store_true",
                   help="do not train the single-stage baseline")

    p = sub.add_parser("infer", parents=[common],
                       help="apply a trained pipeline to images")
    p.add_argument("--pipeline", required=True, metavar="JSON",
                   help="pipeline description written by tournament")
    p.add_argument("inputs", nargs="+",
                   help="PGM images and/or a dataset directory")
    p.add_argument("--split", default="test",
                   choices=("train", "validation", "test", "all"),
                   help="which split to use for dataset inputs")

    p = sub.add_parser("morph", parents=[common],
                       help="measure instances into a morphometrics CSV")
    p.add_argument("--maps", metavar="DIR",
                   help="instance maps written by infer")
    p.add_argument("--scenes", metavar="DIR",
                   help="dataset directory; measures ground-truth masks")
    p.add_argument("--split", default="test",
                   choices=("train", "validation", "test", "all"))
    p.add_argument("--scale", type=float, default=1.0,
                   help="area units per pixel")
    p.add_argument("--name", default="morphometrics",
                   help="output CSV stem")

    p = sub.add_parser("stats", parents=[common],
                       help="pairwise class comparisons from morph CSVs")
    p.add_argument("csv", nargs="+", help="morphometrics CSV files")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--name", default="significance", help="output stem")

    p = sub.add_parser("gradcheck", parents=[common],
                       help="finite-difference audit of every preset")
    p.add_argument("--stage", choices=STAGE_ORDER)
    p.add_argument("--preset", help="check one preset instead of all")
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--threshold", type=float, default=1e-3,
                   help="max relative error allowed before exit code 1")

    p = sub.add_parser("report", parents=[common],
                       help="bundle tournament/infer/morph/stats outputs")
    p.add_argument("--run", required=True, metavar="DIR",
                   help="run directory holding the upstream command outputs")
    return parser


_COMMANDS = {"gen": cmd_gen, "tournament": cmd_tournament,
             "infer": cmd_infer, "morph": cmd_morph, "stats": cmd_stats,
             "gradcheck": cmd_gradcheck, "report": cmd_report}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = C.load_config(args.config) if args.config \
            else C.default_config()
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        return _COMMANDS[args.command](cfg, args)
    except (C.ConfigError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
