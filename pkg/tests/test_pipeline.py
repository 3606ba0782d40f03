import numpy as np
import pytest

from darwinnet import detect as D
from darwinnet import classify as C
from darwinnet import segment as S
from darwinnet import pipeline as P
from darwinnet import engine as E
from darwinnet.synth import generate_scene, virus_roster

PATCH = 16
NAMES = ["alpha", "beta"]


def _models(seed=0, n_classes=2, image_size=64):
    return {"detect": D.build_detector("grid-shallow", image_size=image_size,
                                       seed=seed),
            "classify": C.build_classifier("patch-2conv", n_classes=n_classes,
                                           patch_size=PATCH, seed=seed),
            "segment": S.build_segmenter("unet-small", patch_size=PATCH,
                                         seed=seed)}


def _config(**overrides):
    return P.assemble_dnn(_models(), NAMES, **overrides)


def _rec(iid, mask, offset=(0, 0), scale=(1.0, 1.0), prob=0.9, ci=0):
    p = mask.shape[0]
    box = D.BoundingBox(float(offset[0]), float(offset[1]), float(p),
                        float(p), score=prob)
    return P.InstanceRecord(instance_id=iid, box=box, class_index=ci,
                            class_name=NAMES[ci], probability=prob,
                            mask=np.asarray(mask, dtype=bool),
                            offset=(float(offset[0]), float(offset[1])),
                            scale=(float(scale[0]), float(scale[1])))


# assembly ------------------------------------------------------------------

def test_assemble_rejects_missing_stage():
    models = _models()
    del models["segment"]
    with pytest.raises(ValueError, match="missing stage winners"):
        P.assemble_dnn(models, NAMES)


def test_config_rejects_class_count_mismatch():
    with pytest.raises(ValueError, match="outputs for"):
        P.assemble_dnn(_models(), ["alpha", "beta", "gamma"])


def test_config_rejects_patch_size_mismatch():
    models = _models()
    models["segment"] = S.build_segmenter("unet-small", patch_size=32)
    with pytest.raises(ValueError, match="patch size"):
        P.assemble_dnn(models, NAMES)


def test_config_rejects_swapped_stages():
    models = _models()
    models["classify"], models["segment"] = (models["segment"],
                                             models["classify"])
    with pytest.raises(ValueError, match="slot holds"):
        P.assemble_dnn(models, NAMES)


def test_config_exposes_patch_size():
    assert _config().patch_size == PATCH


# persistence ----------------------------------------------------------------

def test_save_load_round_trip(tmp_path):
    config = _config(conf_threshold=0.35, nms_iou=0.6, margin_fraction=0.2)
    written = P.save_pipeline(config, tmp_path)
    assert [p.split("/")[-1] for p in written] == [
        "detect.dnn", "classify.dnn", "segment.dnn", "pipeline.json"]
    loaded = P.load_pipeline(written[-1])
    assert loaded.class_names == NAMES
    assert loaded.conf_threshold == 0.35
    assert loaded.nms_iou == 0.6
    assert loaded.margin_fraction == 0.2
    x = np.linspace(0, 1, PATCH * PATCH).reshape(1, 1, PATCH, PATCH)
    for a, b in ((config.classifier, loaded.classifier),
                 (config.segmenter, loaded.segmenter)):
        assert np.array_equal(E.forward(a, x)[-1], E.forward(b, x)[-1])


def test_saved_pipeline_files_are_deterministic(tmp_path):
    a = P.save_pipeline(_config(), tmp_path / "a")
    b = P.save_pipeline(_config(), tmp_path / "b")
    for pa, pb in zip(a, b):
        assert open(pa, "rb").read() == open(pb, "rb").read()


# running ---------------------------------------------------------------------

def test_run_pipeline_rejects_wrong_image_shape():
    with pytest.raises(ValueError, match="does not match detector"):
        P.run_pipeline(_config(), np.zeros((32, 32)))


def test_run_pipeline_empty_when_nothing_clears_threshold():
    records = P.run_pipeline(_config(conf_threshold=1.0),
                             np.zeros((64, 64)))
    assert records == []


def test_run_pipeline_record_invariants():
    # untrained but seeded models: deterministic boxes, valid records
    config = _config(conf_threshold=0.01)
    image = np.full((64, 64), 180, dtype=np.float64)
    records = P.run_pipeline(config, image)
    assert len(records) >= 1
    assert [r.instance_id for r in records] == list(range(1,
                                                          len(records) + 1))
    for r in records:
        assert r.class_name == NAMES[r.class_index]
        assert 0.0 <= r.probability <= 1.0
        assert r.mask.dtype == bool and r.mask.shape == (PATCH, PATCH)
    again = P.run_pipeline(config, image)
    assert [r.to_json() for r in again] == [r.to_json() for r in records]


# warping and reconstruction ---------------------------------------------------

def test_warp_identity_scale_places_mask_at_offset():
    mask = np.zeros((4, 4), dtype=bool)
    mask[1:3, 0:2] = True
    rec = _rec(1, mask, offset=(3, 2))
    out = P._warp_mask(rec, (10, 10))
    want = np.zeros((10, 10), dtype=bool)
    want[2:6, 3:7][mask] = True
    assert np.array_equal(out, want)


def test_warp_doubles_each_pixel_under_scale_two():
    mask = np.zeros((2, 2), dtype=bool)
    mask[0, 1] = True
    out = P._warp_mask(_rec(1, mask, offset=(0, 0), scale=(2.0, 2.0)),
                       (6, 6))
    want = np.zeros((6, 6), dtype=bool)
    want[0:2, 2:4] = True
    assert np.array_equal(out, want)


def test_warp_clips_at_scene_border():
    mask = np.ones((4, 4), dtype=bool)
    out = P._warp_mask(_rec(1, mask, offset=(-2, 8)), (10, 10))
    want = np.zeros((10, 10), dtype=bool)
    want[8:10, 0:2] = True
    assert np.array_equal(out, want)


def test_reconstruct_conflict_goes_to_higher_probability():
    img = np.zeros((6, 8))
    a = _rec(2, np.ones((4, 4), dtype=bool), offset=(0, 0), prob=0.9)
    b = _rec(1, np.ones((4, 4), dtype=bool), offset=(2, 0), prob=0.8)
    imap = P.reconstruct(img, [a, b])
    assert set(np.unique(imap.labels[0:4, 0:4])) == {2}
    assert set(np.unique(imap.labels[0:4, 4:6])) == {1}
    assert imap.labels[5].sum() == 0


def test_reconstruct_tie_goes_to_lower_instance_id():
    img = np.zeros((4, 8))
    a = _rec(3, np.ones((4, 4), dtype=bool), offset=(0, 0), prob=0.5)
    b = _rec(2, np.ones((4, 4), dtype=bool), offset=(2, 0), prob=0.5)
    imap = P.reconstruct(img, [a, b])
    assert set(np.unique(imap.labels[:, 2:4])) == {2}


def test_reconstruct_is_order_independent():
    rng = np.random.default_rng(4)
    img = np.zeros((12, 12))
    recs = [_rec(i + 1, rng.random((4, 4)) > 0.4,
                 offset=(int(rng.integers(0, 8)), int(rng.integers(0, 8))),
                 prob=float(rng.choice([0.4, 0.6, 0.6, 0.8])))
            for i in range(6)]
    base = P.reconstruct(img, recs).labels
    for seed in range(3):
        perm = np.random.default_rng(seed).permutation(len(recs))
        shuffled = P.reconstruct(img, [recs[i] for i in perm]).labels
        assert np.array_equal(base, shuffled)


def test_reconstruct_rejects_out_of_scene_instances():
    img = np.zeros((8, 8))
    far = _rec(1, np.ones((4, 4), dtype=bool), offset=(30, 0))
    with pytest.raises(ValueError, match="outside the scene"):
        P.reconstruct(img, [far])


def test_reconstruct_rejects_label_overflow():
    img = np.zeros((4, 4))
    one = np.ones((1, 1), dtype=bool)
    recs = [_rec(i + 1, one) for i in range(65536)]
    with pytest.raises(ValueError, match="16-bit"):
        P.reconstruct(img, recs)


def test_class_map_translates_ids_to_class_indices():
    img = np.zeros((6, 6))
    a = _rec(1, np.ones((2, 2), dtype=bool), offset=(0, 0), ci=0)
    b = _rec(2, np.ones((2, 2), dtype=bool), offset=(4, 4), ci=1)
    cmap = P.reconstruct(img, [a, b]).class_map()
    assert cmap[0, 0] == 1 and cmap[5, 5] == 2 and cmap[3, 3] == 0


# instance map files -------------------------------------------------------------

def test_instance_map_save_load_round_trip(tmp_path):
    img = np.full((8, 8), 120.0)
    labels = np.zeros((8, 8), dtype=np.uint16)
    labels[0:2, 0:2] = 1
    labels[5:7, 5:7] = 300            # needs the 16-bit path
    recs = [_rec(1, labels[0:2, 0:2] == 1, offset=(0, 0), ci=0, prob=0.7),
            _rec(300, labels[5:7, 5:7] == 300, offset=(5, 5), ci=1,
                 prob=0.6)]
    imap = P.InstanceMap(labels=labels, records=recs)
    pgm, js, ppm = P.save_instance_map(imap, img, tmp_path, "scene_0001")
    assert pgm.endswith("scene_0001_instances.pgm")
    assert js.endswith("scene_0001_instances.json")
    assert ppm.endswith("scene_0001_overlay.ppm")
    back = P.load_instance_map(pgm, js)
    assert np.array_equal(back.labels, labels)
    assert [r.instance_id for r in back.records] == [1, 300]
    assert back.records[1].class_index == 1
    assert back.records[1].probability == 0.6
    assert np.array_equal(back.records[0].mask, labels == 1)


def test_overlay_is_deterministic_and_colors_instances(tmp_path):
    img = np.full((6, 6), 100.0)
    imap = P.reconstruct(img, [_rec(1, np.ones((3, 3), dtype=bool),
                                    offset=(0, 0), ci=1)])
    rgb = P.overlay_image(img, imap)
    assert rgb.shape == (6, 6, 3) and rgb.dtype == np.uint8
    assert np.array_equal(rgb, P.overlay_image(img, imap))
    # background pixels stay gray, instance pixels take the palette blend
    assert tuple(rgb[5, 5]) == (100, 100, 100)
    assert tuple(rgb[1, 1]) != (100, 100, 100)


# evaluation -----------------------------------------------------------------

def test_evaluate_class_maps_hand_fixture():
    p = np.array([[1, 1, 0], [0, 2, 0]])
    t = np.array([[1, 0, 0], [0, 1, 0]])
    ev = P.evaluate_class_maps([p], [t], NAMES)
    # matches: one pixel class 1; union: three foreground pixels
    assert ev["jaccard"] == pytest.approx(1 / 3)
    assert ev["global_accuracy"] == pytest.approx(4 / 6)
    assert ev["per_class"]["alpha"] == pytest.approx(1 / 3)
    assert ev["per_class"]["beta"] == pytest.approx(0.0)
    assert not ev["degenerate"]


def test_evaluate_class_maps_matches_pixel_loop():
    rng = np.random.default_rng(8)
    preds = [rng.integers(0, 3, (7, 7)) for _ in range(3)]
    truths = [rng.integers(0, 3, (7, 7)) for _ in range(3)]
    ev = P.evaluate_class_maps(preds, truths, NAMES)
    inter = union = correct = total = 0
    for pm, tm in zip(preds, truths):
        for i in range(7):
            for j in range(7):
                pv, tv = int(pm[i, j]), int(tm[i, j])
                if pv == tv:
                    correct += 1
                    if tv > 0:
                        inter += 1
                if pv > 0 or tv > 0:
                    union += 1
                total += 1
    assert ev["jaccard"] == pytest.approx(inter / union)
    assert ev["global_accuracy"] == pytest.approx(correct / total)


def test_evaluate_class_maps_degenerate_and_mismatch():
    z = np.zeros((4, 4), dtype=np.int64)
    ev = P.evaluate_class_maps([z], [z], NAMES)
    assert ev["jaccard"] == 1.0 and ev["degenerate"]
    assert ev["per_class"] == {"alpha": 1.0, "beta": 1.0}
    with pytest.raises(ValueError, match="shapes differ"):
        P.evaluate_class_maps([z], [np.zeros((3, 3))], NAMES)


def test_evaluate_pipeline_checks_lengths():
    with pytest.raises(ValueError, match="maps for"):
        P.evaluate_pipeline([], [object()], NAMES)


def test_truth_class_map_respects_completeness():
    scene = generate_scene(virus_roster(), count_target=6, image_size=96,
                           seed=5)
    names = [c.name for c in virus_roster()]
    complete = P.truth_class_map(scene, names, complete_only=True)
    everything = P.truth_class_map(scene, names, complete_only=False)
    partial = [i for i in scene.instances if not i.complete]
    assert (everything > 0).sum() >= (complete > 0).sum()
    if partial:
        assert not complete[partial[0].mask].any()
        assert everything[partial[0].mask].all()
    # complete instances are unoverlapped, so their pixels are theirs alone
    for inst in scene.instances:
        if inst.complete:
            assert (complete[inst.mask]
                    == names.index(inst.class_name) + 1).all()
    # complete map only ever uses valid class values
    assert set(np.unique(complete)) <= {0, 1, 2}


# baseline ---------------------------------------------------------------------

def test_baseline_shapes_and_training_smoke():
    model = P.build_baseline(n_classes=2, image_size=64, seed=1)
    assert model.metadata["stage"] == "baseline"
    assert model.input_shape == (1, 64, 64)
    assert model.output_shape == (3, 64, 64)
    scenes = [generate_scene(virus_roster(), count_target=2, image_size=64,
                             seed=s) for s in (1, 2)]
    res = P.train_baseline(model, scenes, [c.name for c in virus_roster()],
                           hyper=E.Hyper(epochs=2, batch_size=2, lr=0.05,
                                         momentum=0.9), seed=0)
    assert res.steps == 2
    maps = P.baseline_class_maps(model, scenes)
    assert len(maps) == 2
    assert maps[0].shape == (64, 64)
    assert set(np.unique(maps[0])) <= {0, 1, 2}
