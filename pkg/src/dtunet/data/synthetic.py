"""Synthetic curvilinear-structure images with exact ground truth.

Each foreground class is one parametric curve (sine, arc, polyline or closed
loop) rendered anti-aliased at ``background + contrast``. A curve may get a
faded stretch whose image contrast drops toward the background while the
label keeps the full curve, which yields the low-contrast gaps that pixel-wise
classifiers tend to break.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_dilation
from scipy.spatial import cKDTree

from ..core import CURVILINEAR, VOLUMETRIC, InputImage, SegmentationMask

CURVE_FAMILIES = ("sine", "arc", "polyline", "loop")
_SAMPLE_SPACING = 0.25
_MAX_TRIES = 200
_PLACEMENT_TRIES = 20


@dataclass(frozen=True)
class SyntheticSpec:
    image_size: tuple[int, int] = (64, 64)
    num_images: int = 10
    num_classes: int = 3
    num_volumetric: int = 0
    curve_families: tuple[str, ...] = CURVE_FAMILIES
    thickness: tuple[float, float] = (1.5, 3.0)
    contrast: float = 0.6
    background: float = 0.2
    gap_probability: float = 0.5
    fade_fraction: tuple[float, float] = (0.15, 0.3)
    fade_level: tuple[float, float] = (0.0, 0.3)
    noise_sigma: float = 0.05
    margin: int = 4
    min_separation: float = 2.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.num_classes + self.num_volumetric < 1:
            raise ValueError("a synthetic corpus needs at least one class")
        if self.num_classes < 0 or self.num_volumetric < 0:
            raise ValueError("class counts must be >= 0")
        if not 0 < self.contrast <= 1:
            raise ValueError("contrast must lie in (0, 1]")
        if min(self.image_size) < 16:
            raise ValueError("image sides must be >= 16")
        bad = set(self.curve_families) - set(CURVE_FAMILIES)
        if bad or not self.curve_families:
            raise ValueError(f"unknown curve families {sorted(bad)}")
        if not 0 <= self.gap_probability <= 1:
            raise ValueError("gap_probability must lie in [0, 1]")

    @property
    def total_classes(self) -> int:
        return self.num_classes + self.num_volumetric

    @property
    def class_kinds(self) -> tuple[str, ...]:
        return (CURVILINEAR,) * self.num_classes + (VOLUMETRIC,) * self.num_volumetric

    @property
    def background_level(self) -> float:
        return min(self.background, 1.0 - self.contrast)


def _densify(vertices: np.ndarray, closed: bool = False) -> np.ndarray:
    if closed:
        vertices = np.vstack([vertices, vertices[:1]])
    seg = np.diff(vertices, axis=0)
    lengths = np.hypot(seg[:, 0], seg[:, 1])
    out = [vertices[:1]]
    for start, step, length in zip(vertices[:-1], seg, lengths):
        n = max(int(np.ceil(length / _SAMPLE_SPACING)), 1)
        t = np.arange(1, n + 1)[:, None] / n
        out.append(start + t * step)
    return np.vstack(out)


def _curve_points(family: str, size: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """Densely sampled (row, col) points of one random curve, unclipped."""
    h, w = size
    scale = min(h, w)
    centre = np.array([h, w], dtype=np.float64) * rng.uniform(0.25, 0.75, 2)
    theta = rng.uniform(0, np.pi)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    if family == "sine":
        length = rng.uniform(0.35, 0.6) * scale
        amp = rng.uniform(0.03, 0.1) * scale
        cycles = rng.uniform(0.5, 1.5)
        phase = rng.uniform(0, 2 * np.pi)
        u = np.linspace(-length / 2, length / 2, 200)
        v = amp * np.sin(2 * np.pi * cycles * (u + length / 2) / length + phase)
        pts = np.stack([v, u], axis=1) @ rot.T + centre
        return _densify(pts)
    if family == "arc":
        radius = rng.uniform(0.1, 0.22) * scale
        span = rng.uniform(np.pi / 3, 1.5 * np.pi)
        start = rng.uniform(0, 2 * np.pi)
        t = np.linspace(start, start + span, 200)
        pts = np.stack([radius * np.sin(t), radius * np.cos(t)], axis=1) + centre
        return _densify(pts)
    if family == "polyline":
        n = int(rng.integers(3, 6))
        steps = rng.uniform(0.08, 0.16, n - 1) * scale
        headings = theta + np.cumsum(rng.uniform(-np.pi / 3, np.pi / 3, n - 1))
        moves = np.stack([steps * np.sin(headings), steps * np.cos(headings)], axis=1)
        pts = np.vstack([np.zeros(2), np.cumsum(moves, axis=0)])
        pts = pts - pts.mean(axis=0) + centre
        return _densify(pts)
    if family == "loop":
        a = rng.uniform(0.1, 0.2) * scale
        b = rng.uniform(0.07, 0.15) * scale
        t = np.linspace(0, 2 * np.pi, 200, endpoint=False)
        pts = np.stack([a * np.sin(t), b * np.cos(t)], axis=1) @ rot.T + centre
        return _densify(pts, closed=True)
    raise ValueError(f"unknown curve family {family!r}")


def _inside(points: np.ndarray, size: tuple[int, int], margin: float) -> bool:
    h, w = size
    return bool((points[:, 0] >= margin).all() and (points[:, 0] <= h - 1 - margin).all()
                and (points[:, 1] >= margin).all() and (points[:, 1] <= w - 1 - margin).all())


def _coverage(dist: np.ndarray, half_width: float) -> np.ndarray:
    """Anti-aliased pixel coverage in [0, 1] from the distance to the centerline."""
    return np.clip(half_width + 0.5 - dist, 0.0, 1.0)


def _blob(size, rng, margin) -> np.ndarray:
    h, w = size
    scale = min(h, w)
    ry, rx = rng.uniform(0.06, 0.14, 2) * scale
    cy = rng.uniform(margin + ry, h - 1 - margin - ry)
    cx = rng.uniform(margin + rx, w - 1 - margin - rx)
    yy, xx = np.mgrid[0:h, 0:w]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


class _Crowded(Exception):
    pass


def render_sample(spec: SyntheticSpec, rng: np.random.Generator) -> tuple[InputImage, SegmentationMask]:
    """One image/mask pair; restarts the layout when a class cannot be placed."""
    for _ in range(_MAX_TRIES):
        try:
            return _render_once(spec, rng)
        except _Crowded:
            continue
    raise RuntimeError(f"could not lay out {spec.total_classes} classes in {spec.image_size}")


def _render_once(spec: SyntheticSpec, rng: np.random.Generator) -> tuple[InputImage, SegmentationMask]:
    h, w = spec.image_size
    grid = np.stack(np.mgrid[0:h, 0:w], axis=-1).reshape(-1, 2).astype(np.float64)
    labels = np.zeros((h, w), dtype=np.uint8)
    intensity = np.zeros((h, w), dtype=np.float64)
    occupied = np.zeros((h, w), dtype=bool)
    exclusion = spec.min_separation

    for k in range(1, spec.num_classes + 1):
        for _ in range(_PLACEMENT_TRIES):
            family = spec.curve_families[int(rng.integers(len(spec.curve_families)))]
            pts = _curve_points(family, (h, w), rng)
            if not _inside(pts, (h, w), spec.margin):
                continue
            half = rng.uniform(*spec.thickness) / 2
            dist, idx = cKDTree(pts).query(grid)
            dist, idx = dist.reshape(h, w), idx.reshape(h, w)
            cov = _coverage(dist, half)
            region = cov >= 0.5
            halo = dist < half + 0.5 + exclusion
            if (halo & occupied).any():
                continue
            break
        else:
            raise _Crowded
        level = cov.copy()
        if rng.random() < spec.gap_probability:
            frac = rng.uniform(*spec.fade_fraction)
            n = len(pts)
            span = max(int(frac * n), 1)
            start = int(rng.integers(0, n - span + 1)) if family != "loop" else int(rng.integers(0, n))
            faded = (np.arange(n) - start) % n < span
            keep = rng.uniform(*spec.fade_level)
            level = np.where(faded[idx], cov * keep, cov)
        labels[region] = k
        intensity = np.maximum(intensity, level)
        occupied |= region

    for j in range(spec.num_volumetric):
        k = spec.num_classes + 1 + j
        for _ in range(_PLACEMENT_TRIES):
            region = _blob((h, w), rng, spec.margin)
            if not (binary_dilation(region, iterations=int(np.ceil(exclusion))) & occupied).any():
                break
        else:
            raise _Crowded
        labels[region] = k
        intensity = np.maximum(intensity, region.astype(np.float64))
        occupied |= region

    image = spec.background_level + spec.contrast * intensity
    if spec.noise_sigma > 0:
        image = image + rng.normal(0.0, spec.noise_sigma, image.shape)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return InputImage(image), SegmentationMask(labels, spec.total_classes, spec.class_kinds)


def generate_synthetic(spec: SyntheticSpec, rng: np.random.Generator | None = None):
    """Render ``spec.num_images`` (image, mask) pairs, deterministic per seed."""
    if rng is None:
        rng = np.random.default_rng(spec.rng_seed)
    return [render_sample(spec, rng) for _ in range(spec.num_images)]
