import numpy as np
import pytest

from darwinnet import engine as E
from darwinnet import verify as V
from darwinnet.engine.model import forward


def test_lift_gives_every_relu_its_margin():
    model = E.build_model([E.conv2d(4, 3), E.relu(), E.maxpool2d(2),
                           E.dense(6), E.relu(), E.dense(2)],
                          (1, 8, 8), seed=0)
    x = np.random.default_rng(0).normal(size=(2, 1, 8, 8))
    lifted = V._lift_relu_margins(model, x, margin=0.5)
    acts = forward(lifted, x.astype(np.float64))
    for i, spec in enumerate(lifted.specs):
        if spec.kind == "relu":
            assert acts[i - 1].min() >= 0.5 - 1e-9


def test_lift_leaves_weights_untouched():
    model = E.build_model([E.conv2d(4, 3), E.relu()], (1, 6, 6), seed=1)
    x = np.random.default_rng(1).normal(size=(1, 1, 6, 6))
    lifted = V._lift_relu_margins(model, x)
    assert np.array_equal(lifted.params[0]["W"],
                          model.params[0]["W"].astype(np.float64))


def test_pool_margin_hand_value():
    model = E.build_model([E.maxpool2d(2)], (1, 2, 4), seed=0)
    x = np.array([[[[1.0, 0.3, 9.0, 8.9],
                    [0.2, 0.1, 0.0, 0.0]]]])
    # windows: {1.0, 0.3, 0.2, 0.1} gap 0.7 and {9.0, 8.9, 0, 0} gap 0.1
    assert V._pool_margin(model, x) == pytest.approx(0.1)


def test_pool_margin_without_pools_is_infinite():
    model = E.build_model([E.conv2d(2, 3), E.relu()], (1, 6, 6), seed=0)
    x = np.zeros((1, 1, 6, 6))
    assert V._pool_margin(model, x) == np.inf


def test_check_preset_reports_clean_error():
    r = V.check_preset("classify", "patch-2conv")
    assert r["max_rel_error"] < 1e-3
    assert r["parameter_count"] <= 10_000
    assert r["pool_margin"] > 0
    again = V.check_preset("classify", "patch-2conv")
    assert again["max_rel_error"] == r["max_rel_error"]


def test_every_stage_lists_its_presets():
    stages = dict(V.STAGE_PRESETS)
    assert set(stages) == {"detect", "classify", "segment"}
    assert all(stages.values())
