"""Shared fixtures: one small end-to-end run reused by the CLI/report tests.

The run is the smallest configuration where every stage actually works:
fewer scenes or a lower instance count leave the detector without enough
positive cells to lift its confidence channel, and then the downstream
commands have no instances to measure. Builds in about a minute.
"""

import json

import pytest

from darwinnet import cli


@pytest.fixture(scope="session")
def mini_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("mini")
    out = root / "run"
    cfg = {
        "dataset": {"n_scenes": 24, "count_target": 8, "image_size": 128,
                    "seed": 3},
        "stages": {
            "detect": {"epochs": 18, "augment": True},
            "classify": {"epochs": 6,
                         "candidates": [
                             {"id": "a", "preset": "patch-2conv"},
                             {"id": "b", "preset": "patch-3conv"}]},
            "segment": {"epochs": 12},
        },
        "pipeline": {"conf_threshold": 0.3},
        "out": str(out),
    }
    cfgpath = root / "config.json"
    cfgpath.write_text(json.dumps(cfg))

    assert cli.main(["gen", "--config", str(cfgpath)]) == 0
    gen = out / "gen"
    assert cli.main(["tournament", "--config", str(cfgpath),
                     "--data", str(gen)]) == 0
    tournament = out / "tournament"
    assert cli.main(["infer", "--config", str(cfgpath),
                     "--pipeline", str(tournament / "pipeline.json"),
                     str(gen), "--split", "all"]) == 0
    infer = out / "infer"
    assert cli.main(["morph", "--config", str(cfgpath),
                     "--scenes", str(gen), "--split", "all",
                     "--name", "truth"]) == 0
    assert cli.main(["morph", "--config", str(cfgpath),
                     "--maps", str(infer), "--name", "pipeline"]) == 0
    morph = out / "morph"
    assert cli.main(["stats", "--config", str(cfgpath),
                     str(morph / "truth.csv"), "--name", "truth"]) == 0
    assert cli.main(["stats", "--config", str(cfgpath),
                     str(morph / "pipeline.csv"), "--name", "pipeline"]) == 0
    assert cli.main(["report", "--config", str(cfgpath),
                     "--run", str(out)]) == 0
    return {"root": root, "config": cfgpath, "out": out, "gen": gen,
            "tournament": tournament, "infer": infer, "morph": morph,
            "stats": out / "stats", "report": out / "report"}
