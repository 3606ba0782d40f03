"""Region measurements on binary masks.

Shape descriptors for segmented instances: area, eccentricity from the
moment-equivalent ellipse, circularity against the convex perimeter, and
solidity. Conventions that matter downstream:

- components are 8-connected (argmax masks bridge diagonals often);
- the convex hull is taken over pixel centers, which tracks the continuous
  outline of large regions closely; regions too thin for that polygon to
  have area (single pixels, straight rows) fall back to the hull of pixel
  corners, so a lone pixel is a unit square rather than a point;
- second moments carry the +1/12 unit-square pixel correction, which makes
  a single pixel perfectly round (eccentricity 0).
"""

import csv
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Region:
    """One 8-connected set of pixels. Coordinates are (x, y) = (col, row)."""
    pixels: np.ndarray          # (N, 2) int array of (x, y)
    bbox: tuple                 # (x, y, w, h)
    pixel_count: int


@dataclass
class MorphometricRecord:
    area: float                 # pixel count, or continuous area for analytic records
    eccentricity: float
    circularity: float
    solidity: float
    class_name: str = ""
    instance_id: int = -1

    def to_json(self):
        return {"area": self.area, "eccentricity": self.eccentricity,
                "circularity": self.circularity, "solidity": self.solidity,
                "class": self.class_name, "instance_id": self.instance_id}

    @classmethod
    def from_json(cls, d):
        return cls(d["area"], d["eccentricity"], d["circularity"],
                   d["solidity"], d.get("class", ""), d.get("instance_id", -1))


def connected_components(mask):
    """8-connected regions of a binary mask, largest first.

    Row-run union-find: runs of set pixels are merged with runs on the
    previous row whose x-extent touches theirs within one pixel.
    """
    m = np.asarray(mask).astype(bool)
    if m.ndim != 2:
        raise ValueError(f"expected 2D mask, got shape {m.shape}")
    parent = []

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    runs = []                       # (y, x_start, x_end_exclusive, label)
    prev = []                       # runs of the previous row
    for y in range(m.shape[0]):
        row = m[y]
        if not row.any():
            prev = []
            continue
        d = np.diff(row.astype(np.int8))
        starts = list(np.nonzero(d == 1)[0] + 1)
        ends = list(np.nonzero(d == -1)[0] + 1)
        if row[0]:
            starts.insert(0, 0)
        if row[-1]:
            ends.append(len(row))
        cur = []
        for s, e in zip(starts, ends):
            lab = len(parent)
            parent.append(lab)
            for py, ps, pe, plab in prev:
                if ps <= e and pe >= s:      # touch or diagonal contact
                    union(lab, plab)
            cur.append((y, s, e, lab))
        runs.extend(cur)
        prev = cur

    groups = {}
    for y, s, e, lab in runs:
        groups.setdefault(find(lab), []).append((y, s, e))

    regions = []
    for segs in groups.values():
        xs = np.concatenate([np.arange(s, e) for _, s, e in segs])
        ys = np.concatenate([np.full(e - s, y) for y, s, e in segs])
        pix = np.stack([xs, ys], axis=1)
        x0, y0 = xs.min(), ys.min()
        bbox = (int(x0), int(y0), int(xs.max() - x0 + 1), int(ys.max() - y0 + 1))
        regions.append(Region(pix, bbox, len(pix)))
    regions.sort(key=lambda r: (-r.pixel_count, r.bbox[1], r.bbox[0]))
    return regions


def _hull_of_points(pts):
    """Monotone-chain convex hull, counterclockwise, y axis pointing down."""
    pts = np.unique(pts, axis=0)
    if len(pts) == 1:
        return pts
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=np.float64)


def _polygon_measures(verts):
    x = verts[:, 0]
    y = verts[:, 1]
    area = 0.5 * abs(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))
    perim = float(np.sum(np.hypot(np.diff(np.append(x, x[0])),
                                  np.diff(np.append(y, y[0])))))
    return float(area), perim


def convex_hull(region):
    """Hull polygon of a region; returns (vertices, area, perimeter).

    Vertices are (V, 2) float64, counterclockwise with y treated as an
    ordinary Cartesian axis. The hull is built over pixel centers; when
    those are collinear (a lone pixel or a straight run) it degenerates,
    and the hull of the pixel corner points is used instead so thin
    regions still get positive area and perimeter. Only boundary pixels
    contribute candidates.
    """
    x0, y0, w, h = region.bbox
    local = np.zeros((h + 2, w + 2), dtype=bool)
    local[region.pixels[:, 1] - y0 + 1, region.pixels[:, 0] - x0 + 1] = True
    interior = (local[:-2, 1:-1] & local[2:, 1:-1]
                & local[1:-1, :-2] & local[1:-1, 2:])
    edge = local[1:-1, 1:-1] & ~interior
    ey, ex = np.nonzero(edge)
    px = ex + x0
    py = ey + y0
    centers = np.stack([px + 0.5, py + 0.5], axis=1)
    verts = _hull_of_points(centers)
    if len(verts) < 3:
        corners = np.concatenate([
            np.stack([px, py], 1), np.stack([px + 1, py], 1),
            np.stack([px, py + 1], 1), np.stack([px + 1, py + 1], 1)])
        verts = _hull_of_points(corners).astype(np.float64)
    area, perim = _polygon_measures(verts)
    return verts, area, perim


def region_moments(region):
    """Centroid and pixel-corrected central second moments.

    m20 = sum((x - xbar)^2)/A + 1/12, likewise m02; m11 has no correction.
    The 1/12 term is the variance of the unit-square pixel kernel.
    """
    pix = region.pixels.astype(np.float64)
    cx, cy = pix.mean(axis=0)
    dx = pix[:, 0] - cx
    dy = pix[:, 1] - cy
    a = len(pix)
    return {"centroid": (float(cx), float(cy)),
            "m20": float((dx * dx).sum() / a + 1.0 / 12.0),
            "m02": float((dy * dy).sum() / a + 1.0 / 12.0),
            "m11": float((dx * dy).sum() / a)}


def moment_eccentricity(m20, m02, m11):
    """sqrt(1 - lambda_minor/lambda_major) of the second-moment matrix."""
    mean = 0.5 * (m20 + m02)
    half = math.hypot(0.5 * (m20 - m02), m11)
    lo, hi = mean - half, mean + half
    if hi <= 0:
        return 0.0
    return math.sqrt(max(0.0, 1.0 - max(lo, 0.0) / hi))


def morphometrics(region, class_name="", instance_id=-1):
    """Area, eccentricity, circularity, solidity for one region."""
    mom = region_moments(region)
    ecc = moment_eccentricity(mom["m20"], mom["m02"], mom["m11"])
    _, hull_area, hull_perim = convex_hull(region)
    area = float(region.pixel_count)
    circularity = 4.0 * math.pi * area / (hull_perim * hull_perim)
    solidity = area / hull_area
    return MorphometricRecord(area, ecc, circularity, min(solidity, 1.0),
                              class_name, instance_id)


def morphometrics_table(instances):
    """Records for an iterable of (instance_id, class_name, binary mask).

    The largest 8-connected region of each mask is analyzed; masks with no
    foreground are skipped. Returns (records, skipped_count).
    """
    records = []
    skipped = 0
    for inst_id, cname, mask in instances:
        regions = connected_components(mask)
        if not regions:
            skipped += 1
            continue
        records.append(morphometrics(regions[0], cname, inst_id))
    return records, skipped


def write_morphometrics_csv(records, path, area_scale=1.0):
    """CSV table consumed by the stats stage and external plotters.

    area_scale converts pixel counts to physical units when configured;
    the default keeps raw pixel counts.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance_id", "class", "area",
                    "eccentricity", "circularity", "solidity"])
        for r in records:
            w.writerow([r.instance_id, r.class_name,
                        repr(r.area * area_scale), repr(r.eccentricity),
                        repr(r.circularity), repr(r.solidity)])


def read_morphometrics_csv(path):
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(MorphometricRecord(
                float(row["area"]), float(row["eccentricity"]),
                float(row["circularity"]), float(row["solidity"]),
                row["class"], int(row["instance_id"])))
    return records
