"""Random training crops, sliding-window tiling and stitching."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core import window_starts


@dataclass(frozen=True)
class PatchProtocol:
    train_crop: int = 256
    test_window: int = 128
    test_stride: int = 64

    def __post_init__(self):
        if not 1 <= self.test_stride <= self.test_window:
            raise ValueError("need 1 <= test_stride <= test_window")
        if self.train_crop < 1:
            raise ValueError("train_crop must be >= 1")


def _pad_to(arr: np.ndarray, size: int, axes=(0, 1)) -> np.ndarray:
    pad = [(0, 0)] * arr.ndim
    for ax in axes:
        short = max(size - arr.shape[ax], 0)
        pad[ax] = (0, short)
    if all(p == (0, 0) for p in pad):
        return arr
    mode = "reflect" if all(arr.shape[ax] > p[1] for ax, p in enumerate(pad) if p[1]) else "symmetric"
    return np.pad(arr, pad, mode=mode)


def random_crop(image: np.ndarray, mask: np.ndarray, size: int, rng: np.random.Generator):
    """Uniformly placed ``size`` x ``size`` crop of an (H, W[, C]) image and its mask.

    Images smaller than the crop are reflect-padded first.
    """
    image = _pad_to(image, size)
    mask = _pad_to(mask, size)
    h, w = mask.shape
    r = int(rng.integers(0, h - size + 1))
    c = int(rng.integers(0, w - size + 1))
    return image[r:r + size, c:c + size], mask[r:r + size, c:c + size]


def sliding_windows(image: np.ndarray, window: int, stride: int):
    """Ordered list of ``(patch, (row, col))`` covering an (H, W[, C]) image.

    The last window along each axis is clamped to the border; axes shorter
    than the window get a single reflect-padded window at 0.
    """
    h, w = image.shape[:2]
    padded = _pad_to(image, window)
    out = []
    for r in window_starts(h, window, stride):
        for c in window_starts(w, window, stride):
            out.append((padded[r:r + window, c:c + window], (r, c)))
    return out


def stitch(patches: Sequence[np.ndarray], offsets: Sequence[tuple[int, int]], full_size: tuple[int, int],
           renormalize: bool = True) -> np.ndarray:
    """Average channel-first (C, h, w) patch predictions back into (C, H, W).

    Overlaps are averaged; with ``renormalize`` each pixel's channel vector is
    rescaled to sum to one. Patch parts beyond the image (padding) are dropped.
    """
    if not patches:
        raise ValueError("no patches to stitch")
    h, w = full_size
    c = patches[0].shape[0]
    acc = np.zeros((c, h, w), dtype=np.float64)
    hits = np.zeros((h, w), dtype=np.int64)
    for patch, (r, col) in zip(patches, offsets):
        ph = min(patch.shape[1], h - r)
        pw = min(patch.shape[2], w - col)
        acc[:, r:r + ph, col:col + pw] += patch[:, :ph, :pw]
        hits[r:r + ph, col:col + pw] += 1
    if (hits == 0).any():
        missing = int((hits == 0).sum())
        raise ValueError(f"{missing} pixels are not covered by any patch")
    acc /= hits
    if renormalize and c > 1:
        acc /= acc.sum(axis=0, keepdims=True)
    return acc.astype(np.float32)
