"""DRIVE retinal vessel dataset ingestion.

Expects the published layout under ``root``::

    training/images/21_training.tif ... 40_training.tif
    training/1st_manual/21_manual1.gif ... 40_manual1.gif

The 20 annotated training images are split 16/4 by sorted file name.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..core import CURVILINEAR, InputImage, SegmentationMask, load_image, load_mask

DATA_ROOT_ENV = "DTU_DATA_ROOT"
IMAGE_IDS = range(21, 41)
NUM_TRAIN = 16


class MissingFilesError(FileNotFoundError):
    def __init__(self, missing: list[Path]):
        self.missing = missing
        listing = "\n  ".join(str(p) for p in missing)
        super().__init__(f"{len(missing)} expected DRIVE files are missing:\n  {listing}")


@dataclass
class DriveSample:
    name: str
    image: InputImage
    mask: SegmentationMask


def expected_files(root) -> list[tuple[Path, Path]]:
    root = Path(root)
    return [
        (root / "training" / "images" / f"{i}_training.tif",
         root / "training" / "1st_manual" / f"{i}_manual1.gif")
        for i in IMAGE_IDS
    ]


def resolve_root(root=None) -> Path:
    if root is None:
        root = os.environ.get(DATA_ROOT_ENV)
    if root is None:
        raise FileNotFoundError(f"no DRIVE root given and ${DATA_ROOT_ENV} is unset")
    return Path(root)


def load_drive(root=None) -> tuple[list[DriveSample], list[DriveSample]]:
    """Load the annotated DRIVE images as (train, test) with a 16/4 split."""
    root = resolve_root(root)
    pairs = expected_files(root)
    missing = [p for pair in pairs for p in pair if not p.exists()]
    if missing:
        raise MissingFilesError(missing)
    pairs.sort(key=lambda pair: pair[0].name)
    samples = []
    for image_path, mask_path in pairs:
        image = load_image(image_path)
        raw = load_mask(mask_path, num_classes=255)
        mask = SegmentationMask((raw.labels > 0).astype(np.uint8), 1, (CURVILINEAR,))
        samples.append(DriveSample(image_path.stem, image, mask))
    return samples[:NUM_TRAIN], samples[NUM_TRAIN:]
