"""Specimen class rosters and per-instance shape sampling.

A SpecimenClass bundles a shape family with the distributions every
instance draws from: equivalent diameter, morphology knobs, and intensity.
Sizes are enforced by rescaling the sampled outline so its continuous area
matches the drawn equivalent diameter exactly.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .shapes import lobed_blob, shape_area, smooth_ellipse, spiky_disk

MIN_DIAMETER = 8.0     # pixels; smaller regions degenerate


@dataclass(frozen=True)
class SpecimenClass:
    name: str
    family: str
    size_mean: float                      # equivalent diameter, pixels
    size_std: float
    intensity_mean: float                 # foreground gray level
    intensity_std: float
    texture_amp: float = 4.0
    morphology: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.size_mean <= 0 or self.size_std < 0:
            raise ValueError("size mean must be > 0 and std >= 0")
        if self.size_mean - 3 * self.size_std < MIN_DIAMETER:
            raise ValueError(
                f"class {self.name!r}: sizes within 3 sigma must stay above "
                f"{MIN_DIAMETER} px equivalent diameter")
        if self.family not in ("smooth-ellipse", "spiky-disk", "lobed-blob"):
            raise ValueError(f"unknown family {self.family!r}")

    def sample_shape(self, rng):
        """Draw one outline at the origin; placement moves it later."""
        d = rng.normal(self.size_mean, self.size_std)
        d = float(np.clip(d, MIN_DIAMETER, self.size_mean + 3 * self.size_std))
        rot = rng.uniform(0.0, 2.0 * math.pi)
        m = self.morphology
        if self.family == "smooth-ellipse":
            aspect = rng.uniform(*m.get("aspect_range", (1.0, 1.3)))
            shape = smooth_ellipse(0.0, 0.0, aspect, 1.0, rotation=rot)
        elif self.family == "spiky-disk":
            lo, hi = m.get("spike_count_range", (6, 8))
            n = int(rng.integers(lo, hi + 1))
            amp = float(np.clip(
                rng.normal(m.get("spike_amp_mean", 0.25),
                           m.get("spike_amp_std", 0.03)), 0.05, 0.6))
            shape = spiky_disk(0.0, 0.0, 1.0, amp, n, rotation=rot)
        else:
            lo, hi = m.get("lobe_count_range", (3, 4))
            n = int(rng.integers(lo, hi + 1))
            amp = float(np.clip(
                rng.normal(m.get("lobe_amp_mean", 0.2),
                           m.get("lobe_amp_std", 0.04)), 0.02, 0.45))
            phase = rng.uniform(0.0, 2.0 * math.pi)
            shape = lobed_blob(0.0, 0.0, 1.0, [(n, amp, phase)], rotation=rot)
        target_area = math.pi * (d / 2.0) ** 2
        factor = math.sqrt(target_area / shape_area(shape))
        return shape.scaled(factor)

    def sample_intensity(self, rng):
        v = rng.normal(self.intensity_mean, self.intensity_std)
        return float(np.clip(v, 10.0, 245.0))

    def to_json(self):
        return {"name": self.name, "family": self.family,
                "size_mean": self.size_mean, "size_std": self.size_std,
                "intensity_mean": self.intensity_mean,
                "intensity_std": self.intensity_std,
                "texture_amp": self.texture_amp,
                "morphology": dict(self.morphology)}

    @classmethod
    def from_json(cls, d):
        return cls(d["name"], d["family"], d["size_mean"], d["size_std"],
                   d["intensity_mean"], d["intensity_std"],
                   d.get("texture_amp", 4.0), d.get("morphology", {}))


def virus_roster():
    """Two spiky-disk classes that differ in spike statistics and size."""
    return [
        SpecimenClass(
            "virion-dense", "spiky-disk",
            size_mean=26.0, size_std=2.5,
            intensity_mean=85.0, intensity_std=8.0,
            morphology={"spike_count_range": (10, 12),
                        "spike_amp_mean": 0.26, "spike_amp_std": 0.03}),
        SpecimenClass(
            "virion-sparse", "spiky-disk",
            size_mean=34.0, size_std=3.0,
            intensity_mean=125.0, intensity_std=8.0,
            morphology={"spike_count_range": (5, 6),
                        "spike_amp_mean": 0.18, "spike_amp_std": 0.03}),
    ]


def cell_roster():
    """Five cell-like classes across all three families."""
    return [
        SpecimenClass(
            "round-cell", "smooth-ellipse",
            size_mean=30.0, size_std=3.0,
            intensity_mean=75.0, intensity_std=8.0,
            morphology={"aspect_range": (1.0, 1.2)}),
        SpecimenClass(
            "elongated-cell", "smooth-ellipse",
            size_mean=32.0, size_std=3.0,
            intensity_mean=105.0, intensity_std=8.0,
            morphology={"aspect_range": (2.4, 3.2)}),
        SpecimenClass(
            "spiky-cell", "spiky-disk",
            size_mean=28.0, size_std=2.5,
            intensity_mean=135.0, intensity_std=8.0,
            morphology={"spike_count_range": (7, 9),
                        "spike_amp_mean": 0.24, "spike_amp_std": 0.03}),
        SpecimenClass(
            "lobed-cell", "lobed-blob",
            size_mean=36.0, size_std=3.5,
            intensity_mean=60.0, intensity_std=8.0,
            morphology={"lobe_count_range": (3, 3),
                        "lobe_amp_mean": 0.30, "lobe_amp_std": 0.03}),
        SpecimenClass(
            "smooth-blob", "lobed-blob",
            size_mean=44.0, size_std=4.0,
            intensity_mean=155.0, intensity_std=8.0,
            morphology={"lobe_count_range": (5, 6),
                        "lobe_amp_mean": 0.10, "lobe_amp_std": 0.02}),
    ]


_ROSTERS = {"virus": virus_roster, "cell": cell_roster}


def get_roster(name):
    if name not in _ROSTERS:
        raise ValueError(
            f"unknown roster {name!r}; available: {sorted(_ROSTERS)}")
    return _ROSTERS[name]()
