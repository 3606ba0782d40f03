"""Experiment configuration: strict JSON, validated before any compute.

Every key is checked against the schema below; unknown keys are rejected
rather than ignored so a typo cannot silently fall back to a default.
"""

import hashlib
import json

from . import classify, detect, segment
from . import engine as E


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the failing key."""


def _typed(kinds, extra=None, choices=None):
    def check(value, path):
        if isinstance(value, bool) and bool not in (
                kinds if isinstance(kinds, tuple) else (kinds,)):
            raise ConfigError(f"{path}: booleans are not valid here")
        if not isinstance(value, kinds):
            raise ConfigError(f"{path}: expected {kinds}, got "
                              f"{type(value).__name__}")
        if choices is not None and value not in choices:
            raise ConfigError(f"{path}: must be one of {sorted(choices)}")
        if extra is not None:
            extra(value, path)
        return value
    return check


def _positive(value, path):
    if value <= 0:
        raise ConfigError(f"{path}: must be positive")


def _fraction(value, path):
    if not 0 <= value <= 1:
        raise ConfigError(f"{path}: must lie in [0, 1]")


def _image_size(value, path):
    if value < 64 or value % detect.CELL:
        raise ConfigError(f"{path}: must be >= 64 and a multiple of "
                          f"{detect.CELL}")


def _candidates(presets):
    def check(value, path):
        if not isinstance(value, list) or len(value) < 2:
            raise ConfigError(f"{path}: needs a list of >= 2 candidates")
        seen = set()
        for i, cand in enumerate(value):
            if not isinstance(cand, dict):
                raise ConfigError(f"{path}[{i}]: expected an object")
            unknown = set(cand) - {"id", "preset"}
            if unknown:
                raise ConfigError(f"{path}[{i}]: unknown key "
                                  f"{sorted(unknown)[0]!r}")
            cid = cand.get("id")
            preset = cand.get("preset")
            if not isinstance(cid, str) or not cid:
                raise ConfigError(f"{path}[{i}].id: expected a name")
            if preset not in presets:
                raise ConfigError(f"{path}[{i}].preset: unknown preset "
                                  f"{preset!r}; available: {sorted(presets)}")
            if cid in seen:
                raise ConfigError(f"{path}[{i}].id: duplicate {cid!r}")
            seen.add(cid)
        return value
    return check


def _default_candidates(presets):
    return [{"id": name, "preset": name} for name in presets]


def _stage_schema(presets, extra_keys=None, epochs=20, batch_size=16,
                  lr=0.1):
    schema = {
        "candidates": (_default_candidates(presets), _candidates(presets)),
        "epochs": (epochs, _typed(int, _positive)),
        "batch_size": (batch_size, _typed(int, _positive)),
        "lr": (lr, _typed((int, float), _positive)),
        "momentum": (0.9, _typed((int, float), _fraction)),
    }
    schema.update(extra_keys or {})
    return schema


SCHEMA = {
    "dataset": {
        "roster": ("virus", _typed(str, choices={"virus", "cell"})),
        "n_scenes": (40, _typed(int, lambda v, p: v >= 10 or
                                (_ for _ in ()).throw(
                                    ConfigError(f"{p}: need >= 10 scenes")))),
        "count_target": (8, _typed(int, _positive)),
        "image_size": (128, _typed(int, _image_size)),
        "overlap_fraction": (0.25, _typed((int, float), _fraction)),
        "border_fraction": (0.0, _typed((int, float), _fraction)),
        "seed": (0, _typed(int)),
        "split_seed": (0, _typed(int)),
    },
    "stages": {
        # detectors train on whole scenes: small lr (larger ones collapse
        # the relu tower), small batches, dihedral augmentation
        "detect": _stage_schema(tuple(detect.DETECT_PRESETS),
                                {"conf_threshold":
                                 (0.3, _typed((int, float), _fraction)),
                                 "augment": (True, _typed(bool))},
                                epochs=25, batch_size=4, lr=0.01),
        "classify": _stage_schema(tuple(classify.CLASSIFY_PRESETS)),
        "segment": _stage_schema(
            tuple(segment.SEGMENT_PRESETS),
            {"metric": ("jaccard", _typed(str, choices={"jaccard",
                                                        "global_accuracy"}))},
            batch_size=12),
    },
    "pipeline": {
        "conf_threshold": (0.5, _typed((int, float), _fraction)),
        "nms_iou": (0.45, _typed((int, float), _fraction)),
        "margin_fraction": (0.1, _typed((int, float), _fraction)),
        "crop_source": ("truth", _typed(str, choices={"truth", "detector"})),
        "baseline_preset": ("unet-small",
                            _typed(str, choices=set(segment.SEGMENT_PRESETS))),
    },
    "out": ("runs/experiment", _typed(str)),
}


def _apply(doc, schema, path=""):
    if not isinstance(doc, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    unknown = set(doc) - set(schema)
    if unknown:
        raise ConfigError(f"unknown key {path + sorted(unknown)[0]!r}")
    out = {}
    for key, spec in schema.items():
        full = f"{path}{key}"
        if isinstance(spec, dict):
            out[key] = _apply(doc.get(key, {}), spec, full + ".")
        else:
            default, check = spec
            out[key] = check(doc[key], full) if key in doc else default
    return out


def validate_config(doc):
    """Merge onto defaults and validate; raises ConfigError on any problem."""
    return _apply(doc, SCHEMA)


def default_config():
    return validate_config({})


def load_config(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    return validate_config(doc)


def config_hash(cfg):
    """Stable content hash recorded in output manifests."""
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def stage_hyper(cfg, stage):
    s = cfg["stages"][stage]
    return E.Hyper(epochs=s["epochs"], batch_size=s["batch_size"],
                   lr=float(s["lr"]), momentum=float(s["momentum"]))
