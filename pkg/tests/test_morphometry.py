import math

import numpy as np
import pytest

from darwinnet import morphometry as M

from oracles import label_4conn


def _mask_to_region(mask):
    regions = M.connected_components(mask)
    assert len(regions) == 1
    return regions[0]


def _disk_mask(r, size=None):
    size = size or (2 * r + 4)
    yy, xx = np.mgrid[0:size, 0:size]
    c = size / 2.0
    return ((xx + 0.5 - c) ** 2 + (yy + 0.5 - c) ** 2) <= r * r


def _ellipse_mask(a, b, size=None):
    size = size or (2 * a + 4)
    yy, xx = np.mgrid[0:size, 0:size]
    c = size / 2.0
    return ((xx + 0.5 - c) / a) ** 2 + ((yy + 0.5 - c) / b) ** 2 <= 1.0


# components ---------------------------------------------------------------

def test_single_pixel_is_one_region():
    mask = np.zeros((5, 5), dtype=bool)
    mask[2, 2] = True
    regions = M.connected_components(mask)
    assert len(regions) == 1 and regions[0].pixel_count == 1


def test_diagonal_pixels_join_under_8_connectivity():
    mask = np.zeros((4, 4), dtype=bool)
    mask[1, 1] = mask[2, 2] = True
    assert len(M.connected_components(mask)) == 1
    assert label_4conn(mask) == 2       # 4-connectivity would split them


def test_empty_mask_gives_no_regions():
    assert M.connected_components(np.zeros((3, 3), dtype=bool)) == []


def test_separate_blobs_sorted_by_size():
    mask = np.zeros((10, 10), dtype=bool)
    mask[0:2, 0:3] = True               # 6 px
    mask[6:8, 6:8] = True               # 4 px
    regions = M.connected_components(mask)
    assert [r.pixel_count for r in regions] == [6, 4]
    assert regions[0].bbox == (0, 0, 3, 2)


def test_u_shape_merges_across_rows():
    mask = np.array([[1, 0, 1],
                     [1, 0, 1],
                     [1, 1, 1]], dtype=bool)
    assert len(M.connected_components(mask)) == 1


# hull ---------------------------------------------------------------------

def test_single_pixel_hull_is_unit_square():
    reg = _mask_to_region(np.array([[True]]))
    verts, area, perim = M.convex_hull(reg)
    assert area == pytest.approx(1.0)
    assert perim == pytest.approx(4.0)
    assert len(verts) == 4


def test_row_hull_is_rectangle():
    reg = _mask_to_region(np.ones((1, 3), dtype=bool))
    _, area, perim = M.convex_hull(reg)
    assert area == pytest.approx(3.0)
    assert perim == pytest.approx(8.0)


def test_disk_hull_perimeter_near_circle():
    reg = _mask_to_region(_disk_mask(32))
    _, _, perim = M.convex_hull(reg)
    assert abs(perim - 2 * math.pi * 32) / (2 * math.pi * 32) < 0.01


def test_hull_vertices_counterclockwise():
    reg = _mask_to_region(_disk_mask(8))
    verts, _, _ = M.convex_hull(reg)
    x, y = verts[:, 0], verts[:, 1]
    signed = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    assert signed > 0


# moments ------------------------------------------------------------------

def test_single_pixel_moments_are_correction_only():
    mom = M.region_moments(_mask_to_region(np.array([[True]])))
    assert mom["m20"] == pytest.approx(1 / 12)
    assert mom["m02"] == pytest.approx(1 / 12)
    assert mom["m11"] == 0.0


def test_row_moment_matches_closed_form():
    for n in (2, 5, 8):
        mom = M.region_moments(_mask_to_region(np.ones((1, n), dtype=bool)))
        assert mom["m20"] == pytest.approx(n * n / 12)
        assert mom["m02"] == pytest.approx(1 / 12)


def test_square_region_is_isotropic():
    mom = M.region_moments(_mask_to_region(np.ones((6, 6), dtype=bool)))
    assert mom["m20"] == pytest.approx(mom["m02"])
    assert mom["m11"] == pytest.approx(0.0)


# metric fixtures ----------------------------------------------------------

def test_single_pixel_fixture_exact():
    rec = M.morphometrics(_mask_to_region(np.array([[True]])))
    assert rec.eccentricity == 0.0
    assert rec.solidity == 1.0
    assert rec.circularity == pytest.approx(math.pi / 4, abs=1e-12)


def test_two_pixel_row_eccentricity_exact():
    rec = M.morphometrics(_mask_to_region(np.ones((1, 2), dtype=bool)))
    assert rec.eccentricity == pytest.approx(math.sqrt(3) / 2, abs=1e-12)


def test_disk_r32_fixture():
    rec = M.morphometrics(_mask_to_region(_disk_mask(32)))
    assert rec.eccentricity <= 0.1
    assert 0.95 <= rec.circularity <= 1.05
    assert rec.solidity >= 0.98


def test_ellipse_2_to_1_eccentricity():
    rec = M.morphometrics(_mask_to_region(_ellipse_mask(30, 15, size=70)))
    assert rec.eccentricity == pytest.approx(math.sqrt(3) / 2, abs=0.02)


def test_disk_series_converges():
    # off-center disks so discretization asymmetry is visible
    eccs, circs = [], []
    for r in (8, 16, 32, 64):
        size = 2 * r + 5
        yy, xx = np.mgrid[0:size, 0:size]
        c = size / 2.0 + 0.3
        mask = ((xx + 0.5 - c) ** 2 + (yy + 0.5 - c) ** 2) <= r * r
        rec = M.morphometrics(_mask_to_region(mask))
        eccs.append(rec.eccentricity)
        circs.append(abs(rec.circularity - 1.0))
    assert eccs[-1] < eccs[0] and eccs[-1] < 0.05
    assert circs[-1] < circs[0]


def test_translation_invariance():
    base = np.zeros((40, 40), dtype=bool)
    base[5:15, 5:20] = True
    base[8:12, 20:26] = True
    r1 = M.morphometrics(_mask_to_region(base))
    shifted = np.roll(np.roll(base, 13, axis=0), 9, axis=1)
    r2 = M.morphometrics(_mask_to_region(shifted))
    assert (r1.area, r1.eccentricity, r1.circularity, r1.solidity) == \
           (r2.area, r2.eccentricity, r2.circularity, r2.solidity)


def test_right_angle_rotation_invariance():
    base = np.zeros((30, 30), dtype=bool)
    base[4:12, 6:25] = True
    base[12:20, 6:10] = True
    r1 = M.morphometrics(_mask_to_region(base))
    r2 = M.morphometrics(_mask_to_region(np.rot90(base)))
    assert r1.area == r2.area
    assert r1.solidity == pytest.approx(r2.solidity, abs=1e-12)
    assert r1.eccentricity == pytest.approx(r2.eccentricity, abs=1e-12)
    assert r1.circularity == pytest.approx(r2.circularity, abs=1e-12)


def test_region_circularity_bounded_by_hull():
    # a cross is less circular than its filled hull
    mask = np.zeros((21, 21), dtype=bool)
    mask[8:13, :] = True
    mask[:, 8:13] = True
    reg = _mask_to_region(mask)
    rec = M.morphometrics(reg)

    verts, _, _ = M.convex_hull(reg)
    yy, xx = np.mgrid[0:21, 0:21]
    pts = np.stack([xx.ravel() + 0.5, yy.ravel() + 0.5], axis=1)
    inside = np.ones(len(pts), dtype=bool)
    for i in range(len(verts)):
        a, b = verts[i], verts[(i + 1) % len(verts)]
        crossp = ((b[0] - a[0]) * (pts[:, 1] - a[1])
                  - (b[1] - a[1]) * (pts[:, 0] - a[0]))
        inside &= crossp >= 0
    hull_rec = M.morphometrics(_mask_to_region(inside.reshape(21, 21)))
    assert rec.circularity <= hull_rec.circularity + 1e-9


# table + csv ----------------------------------------------------------------

def test_table_analyzes_largest_component_only():
    mask = np.zeros((12, 12), dtype=bool)
    mask[1:7, 1:7] = True
    mask[9:11, 9:11] = True
    records, skipped = M.morphometrics_table([(7, "blob", mask)])
    assert skipped == 0
    assert len(records) == 1
    assert records[0].area == 36
    assert records[0].instance_id == 7
    assert records[0].class_name == "blob"


def test_table_skips_empty_masks():
    records, skipped = M.morphometrics_table(
        [(0, "a", np.zeros((4, 4), dtype=bool))])
    assert records == [] and skipped == 1


def test_table_duplicate_mask_gives_duplicate_record():
    mask = np.zeros((8, 8), dtype=bool)
    mask[2:6, 2:5] = True
    records, _ = M.morphometrics_table([(0, "a", mask), (1, "a", mask)])
    assert records[0].area == records[1].area
    assert records[0].eccentricity == records[1].eccentricity


def test_csv_round_trip_exact(tmp_path):
    mask = np.zeros((9, 9), dtype=bool)
    mask[1:8, 2:7] = True
    records, _ = M.morphometrics_table([(3, "spiky", mask)])
    p = tmp_path / "t.csv"
    M.write_morphometrics_csv(records, p)
    back = M.read_morphometrics_csv(p)
    assert back == records
