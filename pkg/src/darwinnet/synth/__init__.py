"""Procedural specimen scenes with exact ground truth."""

from .augment import augment_rotate_mirror, equalize_histogram
from .classes import SpecimenClass, cell_roster, get_roster, virus_roster
from .scene import (Instance, Scene, generate_dataset, generate_scene,
                    load_scene, save_scene)
from .shapes import (StarShape, analytic_record, lobed_blob, rasterize_shape,
                     smooth_ellipse, spiky_disk)
from .split import DatasetSplit, split_dataset, split_indices

__all__ = [
    "Instance", "Scene", "SpecimenClass", "StarShape", "DatasetSplit",
    "analytic_record", "augment_rotate_mirror", "cell_roster",
    "equalize_histogram", "generate_dataset", "generate_scene", "get_roster",
    "load_scene", "lobed_blob", "rasterize_shape", "save_scene",
    "smooth_ellipse", "spiky_disk", "split_dataset", "split_indices",
    "virus_roster",
]
