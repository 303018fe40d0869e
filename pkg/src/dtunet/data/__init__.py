from .drive import DriveSample, load_drive
from .patches import PatchProtocol, random_crop, sliding_windows, stitch
from .synthetic import SyntheticSpec, generate_synthetic

__all__ = [
    "DriveSample",
    "PatchProtocol",
    "SyntheticSpec",
    "generate_synthetic",
    "load_drive",
    "random_crop",
    "sliding_windows",
    "stitch",
]
