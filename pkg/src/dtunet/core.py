"""Shared domain types, mask/probability conversions and file I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml
from PIL import Image

CURVILINEAR = "curvilinear"
VOLUMETRIC = "volumetric"
CLASS_KINDS = (CURVILINEAR, VOLUMETRIC)
MIN_IMAGE_SIDE = 16
PROB_SUM_TOL = 1e-5


class ClassRangeError(ValueError):
    """A mask contains a label larger than its declared class count."""


class SizeMismatchError(ValueError):
    """A probability map payload disagrees with its header."""


@dataclass(frozen=True)
class InputImage:
    """Grayscale (H, W) or color (H, W, 3) image with intensities in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim not in (2, 3) or (px.ndim == 3 and px.shape[2] != 3):
            raise ValueError(f"expected (H, W) or (H, W, 3) pixels, got {px.shape}")
        if min(px.shape[:2]) < MIN_IMAGE_SIDE:
            raise ValueError(f"image sides must be >= {MIN_IMAGE_SIDE}, got {px.shape[:2]}")
        if not np.all(np.isfinite(px)) or px.min() < 0 or px.max() > 1:
            raise ValueError("image intensities must be finite and within [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else self.pixels.shape[2]

    def gray(self) -> np.ndarray:
        """Single-channel view; color images are averaged over channels."""
        if self.pixels.ndim == 2:
            return self.pixels
        return self.pixels.mean(axis=2)

    def to_channels(self, channels: int) -> np.ndarray:
        """Channel-first float32 array with the requested channel count."""
        if channels == 1:
            return self.gray()[None].astype(np.float32)
        if channels == 3:
            px = self.pixels if self.pixels.ndim == 3 else np.repeat(self.pixels[..., None], 3, axis=2)
            return np.ascontiguousarray(px.transpose(2, 0, 1), dtype=np.float32)
        raise ValueError(f"unsupported channel count {channels}")


@dataclass(frozen=True)
class SegmentationMask:
    """Integer class labels in {0..num_classes}; 0 is background."""

    labels: np.ndarray
    num_classes: int
    class_kinds: tuple[str, ...] = field(default=())

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            raise TypeError(f"mask labels must be integers, got {labels.dtype}")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if labels.size and (labels.min() < 0 or labels.max() > self.num_classes):
            raise ClassRangeError(
                f"label {int(labels.max())} outside 0..{self.num_classes}"
            )
        kinds = tuple(self.class_kinds) or (CURVILINEAR,) * self.num_classes
        if len(kinds) != self.num_classes:
            raise ValueError(f"expected {self.num_classes} class kinds, got {len(kinds)}")
        bad = set(kinds) - set(CLASS_KINDS)
        if bad:
            raise ValueError(f"unknown class kinds {sorted(bad)}")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_kinds", kinds)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


@dataclass(frozen=True)
class ProbabilityMap:
    """Channel-first (C, H, W) per-pixel class distribution; channel 0 is background.

    A single-channel map holds a foreground probability (the topology head
    output), which is only range-checked.
    """

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float32)
        if probs.ndim != 3:
            raise ValueError(f"probability map must be (C, H, W), got {probs.shape}")
        if not np.all(np.isfinite(probs)):
            raise ValueError("probability map contains non-finite values")
        if probs.min() < -PROB_SUM_TOL or probs.max() > 1 + PROB_SUM_TOL:
            raise ValueError("probabilities must lie in [0, 1]")
        if probs.shape[0] > 1:
            err = np.abs(probs.sum(axis=0, dtype=np.float64) - 1.0).max()
            if err > PROB_SUM_TOL:
                raise ValueError(f"per-pixel sums deviate from 1 by {err:.3g}")
        object.__setattr__(self, "probs", probs)

    @property
    def channels(self) -> int:
        return self.probs.shape[0]

    @property
    def height(self) -> int:
        return self.probs.shape[1]

    @property
    def width(self) -> int:
        return self.probs.shape[2]

    def argmax(self) -> np.ndarray:
        return self.probs.argmax(axis=0).astype(np.uint8)


def binarize_mask(mask):
    """Collapse every foreground class to label 1.

    Accepts a SegmentationMask (returns one with ``num_classes=1``) or a raw
    label array (returns a uint8 array).
    """
    if isinstance(mask, SegmentationMask):
        return SegmentationMask((mask.labels > 0).astype(np.uint8), 1)
    return (np.asarray(mask) > 0).astype(np.uint8)


def one_hot(mask: SegmentationMask) -> ProbabilityMap:
    labels = mask.labels
    if labels.max(initial=0) > mask.num_classes:
        raise ClassRangeError(f"label {int(labels.max())} outside 0..{mask.num_classes}")
    probs = np.arange(mask.num_classes + 1)[:, None, None] == labels[None]
    return ProbabilityMap(probs.astype(np.float32))


def window_starts(length: int, window: int, stride: int) -> list[int]:
    """Start offsets of a sliding window, the last one clamped to the border.

    A window longer than ``length`` degenerates to the single start 0.
    """
    if window >= length:
        return [0]
    starts = list(range(0, length - window + 1, stride))
    if starts[-1] + window < length:
        starts.append(length - window)
    return starts


# ---------------------------------------------------------------- file I/O


def _mask_meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_mask(mask: SegmentationMask, path) -> None:
    """Write an 8-bit PNG (pixel value = class index) plus a JSON sidecar."""
    path = Path(path)
    if not path.parent.is_dir():
        raise FileNotFoundError(f"parent directory {path.parent} does not exist")
    if mask.num_classes > 255:
        raise ClassRangeError("8-bit masks hold at most 255 classes")
    Image.fromarray(mask.labels.astype(np.uint8), mode="L").save(path)
    meta = {"num_classes": mask.num_classes, "class_kinds": list(mask.class_kinds)}
    _mask_meta_path(path).write_text(json.dumps(meta) + "\n")


def load_mask(path, num_classes: int | None = None, class_kinds: Sequence[str] | None = None) -> SegmentationMask:
    """Read a mask PNG.

    The class count comes from ``num_classes`` if given, else from the JSON
    sidecar written by :func:`save_mask`, else from the largest label.
    """
    path = Path(path)
    with Image.open(path) as im:
        if im.mode not in ("L", "P", "1"):
            im = im.convert("L")
        labels = np.array(im, dtype=np.uint8)
    meta_path = _mask_meta_path(path)
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        if num_classes is None:
            num_classes = meta["num_classes"]
        if class_kinds is None and len(meta.get("class_kinds", [])) == num_classes:
            class_kinds = meta["class_kinds"]
    if num_classes is None:
        num_classes = max(int(labels.max()), 1)
    if labels.max() > num_classes:
        raise ClassRangeError(
            f"{path}: pixel value {int(labels.max())} exceeds declared class count {num_classes}"
        )
    return SegmentationMask(labels, num_classes, tuple(class_kinds or ()))


def _probs_header_path(path: Path) -> Path:
    return path.with_name(path.name + ".hdr")


def save_probmap(pmap: ProbabilityMap, path) -> None:
    """Write raw little-endian float32 planar data and a ``.hdr`` text sidecar."""
    path = Path(path)
    c, h, w = pmap.probs.shape
    path.write_bytes(np.ascontiguousarray(pmap.probs, dtype="<f4").tobytes())
    _probs_header_path(path).write_text(f"{h} {w} {c}\n")


def load_probmap(path) -> ProbabilityMap:
    path = Path(path)
    fields = _probs_header_path(path).read_text().split()
    if len(fields) != 3:
        raise SizeMismatchError(f"{path}: malformed header {fields!r}")
    h, w, c = (int(v) for v in fields)
    payload = path.read_bytes()
    expected = 4 * h * w * c
    if len(payload) != expected:
        raise SizeMismatchError(f"{path}: header implies {expected} bytes, payload has {len(payload)}")
    probs = np.frombuffer(payload, dtype="<f4").reshape(c, h, w)
    return ProbabilityMap(probs.astype(np.float32))


def load_image(path, channels: int | None = None) -> InputImage:
    """Read an image and scale it to [0, 1] by its dtype maximum."""
    with Image.open(path) as im:
        if im.mode in ("P", "CMYK", "RGBA", "LA"):
            im = im.convert("RGB")
        arr = np.array(im)
    if arr.dtype == bool:
        px = arr.astype(np.float32)
    elif np.issubdtype(arr.dtype, np.integer):
        px = arr.astype(np.float32) / np.iinfo(arr.dtype).max
    else:
        px = np.clip(arr.astype(np.float32), 0.0, 1.0)
    img = InputImage(px)
    if channels is not None and channels != img.channels:
        px = img.to_channels(channels)
        img = InputImage(px[0] if channels == 1 else px.transpose(1, 2, 0))
    return img


def save_image(image: InputImage, path) -> None:
    """Write a 16-bit grayscale PNG or an 8-bit RGB PNG."""
    px = image.pixels
    if px.ndim == 2:
        data = np.round(px * 65535).astype(np.uint16)
        Image.fromarray(data).save(path)
    else:
        Image.fromarray(np.round(px * 255).astype(np.uint8), mode="RGB").save(path)


# ------------------------------------------------------------ dataset manifest


@dataclass
class ManifestEntry:
    image: Path
    mask: Path


@dataclass
class DatasetManifest:
    """Image/mask pairs plus class metadata, stored as YAML.

    Paths inside the file are relative to the manifest's directory.
    """

    num_classes: int
    class_kinds: tuple[str, ...]
    entries: list[ManifestEntry]
    root: Path = Path(".")

    def save(self, path) -> None:
        path = Path(path)
        doc = {
            "num_classes": self.num_classes,
            "class_kinds": list(self.class_kinds),
            "samples": [
                {"image": _relative(e.image, path.parent), "mask": _relative(e.mask, path.parent)}
                for e in self.entries
            ],
        }
        path.write_text(yaml.safe_dump(doc, sort_keys=False))

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        doc = yaml.safe_load(path.read_text())
        root = path.parent
        kinds = tuple(doc.get("class_kinds") or (CURVILINEAR,) * doc["num_classes"])
        entries = [ManifestEntry(root / s["image"], root / s["mask"]) for s in doc["samples"]]
        return cls(int(doc["num_classes"]), kinds, entries, root)

    def load_mask(self, entry: ManifestEntry) -> SegmentationMask:
        return load_mask(entry.mask, self.num_classes, self.class_kinds)


def _relative(p: Path, base: Path) -> str:
    try:
        return str(Path(p).resolve().relative_to(base.resolve()))
    except ValueError:
        return str(Path(p).resolve())
