import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from darwinnet import engine as E
from darwinnet import segment as S


def half_plane_set(n, patch=16, seed=0):
    """Crops whose bright side is the foreground; split axis varies."""
    rng = np.random.default_rng(seed)
    crops = np.empty((n, patch, patch), dtype=np.uint8)
    masks = np.zeros((n, patch, patch), dtype=np.int64)
    for i in range(n):
        cut = rng.integers(patch // 4, 3 * patch // 4)
        img = rng.normal(70, 6, size=(patch, patch))
        if i % 2 == 0:
            img[:, cut:] += 110
            masks[i, :, cut:] = 1
        else:
            img[cut:, :] += 110
            masks[i, cut:, :] = 1
        crops[i] = np.clip(img, 0, 255).astype(np.uint8)
    return crops, masks


# presets ------------------------------------------------------------------------

def test_preset_budgets_increase_and_fit():
    counts = [S.build_segmenter(p).parameter_count
              for p in ("unet-small", "unet-large")]
    assert counts[0] < counts[1] <= 10_000


def test_output_is_two_channel_logit_map():
    for p in ("unet-small", "unet-large"):
        m = S.build_segmenter(p, patch_size=48)
        assert m.output_shape == (2, 48, 48)


def test_build_rejects_unknown_preset():
    with pytest.raises(ValueError):
        S.build_segmenter("nope")


def test_skip_connections_are_wired():
    m = S.build_segmenter("unet-small", patch_size=16)
    concats = [s for s in m.specs if s.kind == "concat"]
    assert len(concats) == 2
    for s in concats:
        assert m.specs[s.params["source"]].kind == "relu"


# training / inference --------------------------------------------------------------

@pytest.fixture(scope="module")
def trained_half_plane():
    crops, masks = half_plane_set(48)
    model = S.build_segmenter("unet-small", patch_size=16, seed=0)
    hyper = E.Hyper(epochs=14, batch_size=12, lr=0.1, momentum=0.9)
    res = S.train_segmenter(model, crops, masks, hyper=hyper, seed=1)
    return model, crops, masks, res


def test_training_learns_half_planes(trained_half_plane):
    model, crops, masks, res = trained_half_plane
    assert res.train_loss[-1] < res.train_loss[0]
    pred = S.segment(model, crops)
    ev = S.evaluate_segmentation(pred, masks.astype(bool))
    assert ev["jaccard"] > 0.9


def test_misaligned_masks_are_rejected():
    crops = np.zeros((4, 16, 16), dtype=np.uint8)
    masks = np.zeros((4, 16, 8), dtype=np.int64)
    model = S.build_segmenter("unet-small", patch_size=16)
    with pytest.raises(ValueError, match="misaligned"):
        S.train_segmenter(model, crops, masks)


def test_segment_single_matches_stack(trained_half_plane):
    model, crops, _, _ = trained_half_plane
    stack = S.segment(model, crops[:3])
    single = S.segment(model, crops[0])
    assert stack.shape == (3, 16, 16) and stack.dtype == bool
    assert single.shape == (16, 16)
    assert np.array_equal(stack[0], single)


def test_segment_rejects_wrong_size(trained_half_plane):
    model, _, _, _ = trained_half_plane
    with pytest.raises(ValueError, match="does not match"):
        S.segment(model, np.zeros((48, 48), dtype=np.uint8))


# evaluation -------------------------------------------------------------------------

def test_jaccard_hand_fixtures():
    p = np.zeros((4, 4), dtype=bool)
    t = np.zeros((4, 4), dtype=bool)
    p[0, :2] = True              # (0,0) (0,1)
    t[0, 1:3] = True             # (0,1) (0,2)
    ev = S.evaluate_segmentation(p, t)
    assert ev["jaccard"] == pytest.approx(1 / 3)
    assert ev["global_accuracy"] == pytest.approx(14 / 16)
    assert not ev["degenerate"]


def test_jaccard_pools_pixel_counts_not_averages():
    p = np.zeros((2, 4, 4), dtype=bool)
    t = np.zeros((2, 4, 4), dtype=bool)
    p[0, 0, 0] = t[0, 0, 0] = True            # image 0: J = 1 over 1 px
    t[1] = True                               # image 1: J = 0 over 16 px
    ev = S.evaluate_segmentation(p, t)
    assert ev["per_image"] == [1.0, 0.0]
    assert ev["jaccard"] == pytest.approx(1 / 17)


def test_jaccard_empty_union_is_degenerate():
    z = np.zeros((3, 3), dtype=bool)
    ev = S.evaluate_segmentation(z, z)
    assert ev["jaccard"] == 1.0 and ev["degenerate"]
    assert ev["global_accuracy"] == 1.0


def test_evaluate_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        S.evaluate_segmentation(np.zeros((2, 4, 4), bool),
                                np.zeros((2, 4, 5), bool))


@settings(max_examples=30, deadline=None, derandomize=True)
@given(st.integers(0, 2 ** 31 - 1))
def test_jaccard_is_symmetric(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((3, 6, 6)) < 0.4
    b = rng.random((3, 6, 6)) < 0.4
    assert (S.evaluate_segmentation(a, b)["jaccard"]
            == S.evaluate_segmentation(b, a)["jaccard"])


@settings(max_examples=30, deadline=None, derandomize=True)
@given(st.integers(0, 2 ** 31 - 1))
def test_jaccard_bounds_and_perfection(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((2, 5, 5)) < 0.5
    ev = S.evaluate_segmentation(a, a)
    assert ev["jaccard"] == 1.0
    b = rng.random((2, 5, 5)) < 0.5
    j = S.evaluate_segmentation(a, b)["jaccard"]
    assert 0.0 <= j <= 1.0
