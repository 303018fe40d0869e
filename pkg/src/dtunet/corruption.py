"""Online generation of topology-corrupted masks for the triplet negatives.

False splits blank out random foreground patches; missed splits paint
background pixels whose intensity resembles the foreground with the label
of the most similar foreground pixel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

MISSED_FIRST = "missed_first"
FALSE_FIRST = "false_first"


@dataclass(frozen=True)
class CorruptionConfig:
    lambda_start: float = 0.5
    lambda_end: float = 0.1
    patch_size: int = 16
    rng_seed: int = 0
    order: str = MISSED_FIRST

    def __post_init__(self):
        if not 0 <= self.lambda_end <= self.lambda_start <= 1:
            raise ValueError("need 0 <= lambda_end <= lambda_start <= 1")
        if self.patch_size < 2:
            raise ValueError("patch_size must be >= 2")
        if self.order not in (MISSED_FIRST, FALSE_FIRST):
            raise ValueError(f"unknown corruption order {self.order!r}")


def selection_count(lam: float, n: int) -> int:
    """ceil(lam * n), robust to representation error such as 0.3 * 10."""
    if not 0 <= lam <= 1:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    return min(n, math.ceil(round(lam * n, 9)))


def foreground_patches(labels: np.ndarray, patch_size: int) -> list[tuple[int, int]]:
    """Top-left corners of non-overlapping tiles holding any foreground."""
    h, w = labels.shape
    fg = labels > 0
    corners = []
    for r in range(0, h, patch_size):
        for c in range(0, w, patch_size):
            if fg[r:r + patch_size, c:c + patch_size].any():
                corners.append((r, c))
    return corners


def false_splits(labels: np.ndarray, lam: float, patch_size: int, rng: np.random.Generator) -> np.ndarray:
    out = np.array(labels, copy=True)
    corners = foreground_patches(out, patch_size)
    k = selection_count(lam, len(corners))
    if k == 0:
        return out
    for idx in np.sort(rng.choice(len(corners), size=k, replace=False)):
        r, c = corners[idx]
        out[r:r + patch_size, c:c + patch_size] = 0
    return out


def missed_splits(labels: np.ndarray, image: np.ndarray, lam: float, rng: np.random.Generator) -> np.ndarray:
    """Relabel a random fraction of foreground-like background pixels.

    Candidates are background pixels with intensity in [m - d, m + d], where m
    and d are the mean and standard deviation of the foreground intensities.
    Each chosen pixel takes the label of the foreground pixel with the closest
    intensity; ties go to the spatially nearest one, then to row-major order.
    """
    labels = np.asarray(labels)
    if image.ndim == 3:
        image = image.mean(axis=2)
    if image.shape != labels.shape:
        raise ValueError(f"image {image.shape} and mask {labels.shape} shapes differ")
    fg = labels > 0
    if not fg.any():
        raise ValueError("missed splits need at least one foreground pixel")
    out = np.array(labels, copy=True)
    values = image.astype(np.float64)
    fg_vals = values[fg]
    m, d = fg_vals.mean(), fg_vals.std()
    cand = np.flatnonzero(~fg.ravel() & (np.abs(values.ravel() - m) <= d))
    k = selection_count(lam, cand.size)
    if k == 0:
        return out
    chosen = np.sort(rng.choice(cand, size=k, replace=False))
    src = _most_similar_foreground(values, fg, chosen)
    out.ravel()[chosen] = labels.ravel()[src]
    return out


def _most_similar_foreground(values: np.ndarray, fg: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Flat index of the most similar foreground pixel for each flat target index."""
    w = values.shape[1]
    fg_flat = np.flatnonzero(fg.ravel())
    fg_vals = values.ravel()[fg_flat]
    levels, group = np.unique(fg_vals, return_inverse=True)
    trees: dict[int, tuple[cKDTree, np.ndarray]] = {}

    def group_tree(g):
        if g not in trees:
            members = fg_flat[group == g]
            pts = np.stack([members // w, members % w], axis=1).astype(np.float64)
            trees[g] = (cKDTree(pts), members)
        return trees[g]

    tvals = values.ravel()[targets]
    pos = np.searchsorted(levels, tvals)
    result = np.empty(targets.size, dtype=np.int64)
    for i, (t, v, p) in enumerate(zip(targets, tvals, pos)):
        near = [g for g in (p - 1, p) if 0 <= g < levels.size]
        gaps = [abs(levels[g] - v) for g in near]
        best_groups = [g for g, gap in zip(near, gaps) if gap == min(gaps)]
        point = np.array([t // w, t % w], dtype=np.float64)
        best = None
        for g in best_groups:
            tree, members = group_tree(g)
            dist, _ = tree.query(point)
            # gather exact ties so row-major order decides deterministically
            hits = tree.query_ball_point(point, dist * (1 + 1e-12) + 1e-12)
            cands = members[hits]
            d2 = ((cands // w - point[0]) ** 2 + (cands % w - point[1]) ** 2)
            cands = cands[d2 == d2.min()]
            key = (d2.min(), cands.min())
            if best is None or key < best:
                best = key
        result[i] = best[1]
    return result


def corrupt(labels: np.ndarray, image: np.ndarray, lam: float, cfg: CorruptionConfig,
            rng: np.random.Generator) -> np.ndarray:
    """Sequentially add missed and false splits with a shared lambda.

    Masks without foreground pass through false splits only (the missed-split
    statistics are undefined there).
    """
    def add_missed(x):
        return missed_splits(x, image, lam, rng) if np.any(x > 0) else np.array(x, copy=True)

    if cfg.order == MISSED_FIRST:
        return false_splits(add_missed(labels), lam, cfg.patch_size, rng)
    return add_missed(false_splits(labels, lam, cfg.patch_size, rng))


def lambda_at(epoch: int, total_epochs: int, cfg: CorruptionConfig = CorruptionConfig()) -> float:
    """Corruption degree for an epoch, interpolated linearly from start to end."""
    if total_epochs < 1:
        raise ValueError("total_epochs must be >= 1")
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    if total_epochs == 1:
        return cfg.lambda_start
    t = epoch / (total_epochs - 1)
    # convex form keeps both endpoints exact in floating point
    return (1 - t) * cfg.lambda_start + t * cfg.lambda_end
