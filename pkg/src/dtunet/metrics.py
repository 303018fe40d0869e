"""Evaluation metrics: discrete Frechet distance, local Betti error, IoU family."""

from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np
from scipy import ndimage
from skimage.morphology import skeletonize

from .core import CURVILINEAR, VOLUMETRIC, window_starts

_STRUCTURES = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


@dataclass(frozen=True)
class BettiConfig:
    window: int = 64
    stride: int = 32
    connectivity: int = 8

    def __post_init__(self):
        if not 1 <= self.stride <= self.window:
            raise ValueError("need 1 <= stride <= window")
        if self.connectivity not in _STRUCTURES:
            raise ValueError("connectivity must be 4 or 8")


def connected_components(binary: np.ndarray, connectivity: int = 8) -> tuple[int, np.ndarray]:
    """Count and label the foreground components of a binary image."""
    labels, count = ndimage.label(np.asarray(binary) > 0, structure=_STRUCTURES[connectivity])
    return int(count), labels


def betti_error_windows(pred: np.ndarray, gt: np.ndarray, cfg: BettiConfig = BettiConfig()) -> np.ndarray:
    """|b0(pred) - b0(gt)| for every sliding window, in row-major window order."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    pb, gb = pred > 0, gt > 0
    h, w = pb.shape
    errs = []
    for r in window_starts(h, cfg.window, cfg.stride):
        for c in window_starts(w, cfg.window, cfg.stride):
            win = np.s_[r:r + cfg.window, c:c + cfg.window]
            n_pred, _ = connected_components(pb[win], cfg.connectivity)
            n_gt, _ = connected_components(gb[win], cfg.connectivity)
            errs.append(abs(n_pred - n_gt))
    return np.asarray(errs, dtype=np.float64)


def betti_error(pred: np.ndarray, gt: np.ndarray, cfg: BettiConfig = BettiConfig()) -> float:
    """Mean windowed difference in component counts after binarizing both masks."""
    return float(betti_error_windows(pred, gt, cfg).mean())


# ------------------------------------------------------------------ curves


_NEIGHBOURS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def _bfs(start: tuple[int, int], pixels: set) -> tuple[tuple[int, int], dict]:
    parent = {start: None}
    queue = deque([start])
    last = start
    while queue:
        last = queue.popleft()
        r, c = last
        for dr, dc in _NEIGHBOURS:
            nxt = (r + dr, c + dc)
            if nxt in pixels and nxt not in parent:
                parent[nxt] = last
                queue.append(nxt)
    return last, parent


def longest_path(binary: np.ndarray) -> np.ndarray:
    """Approximate longest simple path through a thin 8-connected pixel set.

    Two breadth-first sweeps: the farthest pixel from the first pixel in
    row-major order, then the farthest pixel from that one. Exact on trees;
    a closed loop yields roughly half of its length.
    """
    coords = np.argwhere(binary)
    if coords.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    pixels = set(map(tuple, coords.tolist()))
    end_a, _ = _bfs(tuple(coords[0]), pixels)
    end_b, parent = _bfs(end_a, pixels)
    path = []
    node = end_b
    while node is not None:
        path.append(node)
        node = parent[node]
    return np.asarray(path[::-1], dtype=np.int64)


@dataclass(frozen=True)
class Curve:
    points: np.ndarray          # (n, 2) row, col
    coverage: float = 1.0       # fraction of the class pixels in the component used


def extract_curve(labels: np.ndarray, class_id: int) -> Curve | None:
    """Skeleton longest path of the largest component of one class.

    Returns None when the class is absent.
    """
    region = np.asarray(labels) == class_id
    total = int(region.sum())
    if total == 0:
        return None
    count, comp = connected_components(region, 8)
    sizes = np.bincount(comp.ravel())[1:]
    largest = comp == (int(np.argmax(sizes)) + 1)
    skel = skeletonize(largest)
    if not skel.any():
        skel = largest
    return Curve(longest_path(skel), float(largest.sum()) / total)


def frechet_distance(a, b) -> float:
    """Discrete Frechet distance with Euclidean point distances.

    dp[i, j] = max(|a_i - b_j|, min(dp[i-1, j], dp[i, j-1], dp[i-1, j-1])),
    evaluated one anti-diagonal at a time.
    """
    a = np.asarray(getattr(a, "points", a), dtype=np.float64)
    b = np.asarray(getattr(b, "points", b), dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("curves must be non-empty")
    dist = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
    n, m = dist.shape
    dp = np.full((n, m), np.inf)
    dp[0, 0] = dist[0, 0]
    for k in range(1, n + m - 1):
        i = np.arange(max(0, k - m + 1), min(n, k + 1))
        j = k - i
        best = np.full(i.shape, np.inf)
        up = i > 0
        best[up] = dp[i[up] - 1, j[up]]
        left = j > 0
        best[left] = np.minimum(best[left], dp[i[left], j[left] - 1])
        diag = up & left
        best[diag] = np.minimum(best[diag], dp[i[diag] - 1, j[diag] - 1])
        dp[i, j] = np.maximum(dist[i, j], best)
    return float(dp[-1, -1])


# ------------------------------------------------------------------ IoU


@dataclass
class IoUCounts:
    """Per-class intersection and union pixel counts (index 0 = class 1)."""

    inter: np.ndarray
    union: np.ndarray

    @classmethod
    def from_masks(cls, pred: np.ndarray, gt: np.ndarray, num_classes: int) -> "IoUCounts":
        pred, gt = np.asarray(pred), np.asarray(gt)
        if pred.shape != gt.shape:
            raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
        inter = np.zeros(num_classes, dtype=np.int64)
        union = np.zeros(num_classes, dtype=np.int64)
        for k in range(1, num_classes + 1):
            p, g = pred == k, gt == k
            inter[k - 1] = np.count_nonzero(p & g)
            union[k - 1] = np.count_nonzero(p | g)
        return cls(inter, union)

    def __add__(self, other: "IoUCounts") -> "IoUCounts":
        return IoUCounts(self.inter + other.inter, self.union + other.union)


def _iou_pair(counts: IoUCounts, select: np.ndarray) -> tuple[float | None, float | None]:
    inter, union = counts.inter[select], counts.union[select]
    valid = union > 0
    if not valid.any():
        return None, None
    pooled = inter[valid].sum() / union[valid].sum()
    mean = float(np.mean(inter[valid] / union[valid]))
    return float(pooled), mean


def iou_from_counts(counts: IoUCounts, class_kinds: Sequence[str]) -> dict[str, float | None]:
    """Pooled and class-mean IoU overall and per class kind.

    Classes whose union is empty are left out; a family with no remaining
    class reports None.
    """
    kinds = np.asarray(class_kinds)
    every = np.ones(len(kinds), dtype=bool)
    out = {}
    families = (("iou", "miou", every), ("c_iou", "cm_iou", kinds == CURVILINEAR),
                ("v_iou", "vm_iou", kinds == VOLUMETRIC))
    for pooled_name, mean_name, select in families:
        out[pooled_name], out[mean_name] = _iou_pair(counts, select)
    return out


def iou_family(pred: np.ndarray, gt: np.ndarray, class_kinds: Sequence[str]) -> dict[str, float | None]:
    return iou_from_counts(IoUCounts.from_masks(pred, gt, len(class_kinds)), class_kinds)


# ------------------------------------------------------------------ report


@dataclass
class MetricReport:
    frechet: float
    betti_error: float
    iou: float | None
    miou: float | None
    c_iou: float | None
    cm_iou: float | None
    v_iou: float | None
    vm_iou: float | None
    curve_coverage: float
    num_images: int
    betti_window: int
    betti_stride: int

    IOU_FIELDS = ("iou", "miou", "c_iou", "cm_iou", "v_iou", "vm_iou")

    def as_row(self) -> dict[str, str]:
        """Flat CSV row; IoU values are scaled to percent, missing ones left blank."""
        row = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                row[f.name] = ""
            elif f.name in self.IOU_FIELDS:
                row[f.name] = f"{100 * v:.4f}"
            elif isinstance(v, float):
                row[f.name] = f"{v:.6f}"
            else:
                row[f.name] = str(v)
        return row

    def to_csv(self) -> str:
        buf = io.StringIO()
        row = self.as_row()
        writer = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
        writer.writeheader()
        writer.writerow(row)
        return buf.getvalue()

    def table(self) -> str:
        row = self.as_row()
        width = max(len(k) for k in row)
        return "\n".join(f"{k:<{width}}  {v if v != '' else '-'}" for k, v in row.items())

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(pred_set: Sequence[np.ndarray], gt_set: Sequence[np.ndarray], class_kinds: Sequence[str],
             betti: BettiConfig = BettiConfig()) -> MetricReport:
    """Aggregate all metrics over aligned prediction/ground-truth label arrays.

    Frechet distances are a flat mean over (image, curvilinear class) pairs.
    When only one side has a class the pair scores the image diagonal; when
    neither has it the pair is skipped. Betti error is the mean of per-image
    window means; IoU uses pixel counts pooled over the whole set.
    """
    if len(pred_set) != len(gt_set):
        raise ValueError(f"{len(pred_set)} predictions for {len(gt_set)} ground truths")
    if not gt_set:
        raise ValueError("empty evaluation set")
    num_classes = len(class_kinds)
    frechets, coverages, bettis = [], [], []
    counts = IoUCounts(np.zeros(num_classes, np.int64), np.zeros(num_classes, np.int64))
    for pred, gt in zip(pred_set, gt_set):
        pred, gt = np.asarray(pred), np.asarray(gt)
        if pred.shape != gt.shape:
            raise ValueError(f"misaligned pair: {pred.shape} vs {gt.shape}")
        bettis.append(betti_error(pred, gt, betti))
        counts = counts + IoUCounts.from_masks(pred, gt, num_classes)
        diagonal = math.hypot(*gt.shape)
        for k, kind in enumerate(class_kinds, start=1):
            if kind != CURVILINEAR:
                continue
            cp, cg = extract_curve(pred, k), extract_curve(gt, k)
            if cp is None and cg is None:
                continue
            if cp is None or cg is None:
                frechets.append(diagonal)
                continue
            frechets.append(frechet_distance(cp, cg))
            coverages.extend([cp.coverage, cg.coverage])
    ious = iou_from_counts(counts, class_kinds)
    return MetricReport(
        frechet=float(np.mean(frechets)) if frechets else 0.0,
        betti_error=float(np.mean(bettis)),
        curve_coverage=float(np.mean(coverages)) if coverages else 1.0,
        num_images=len(gt_set),
        betti_window=betti.window,
        betti_stride=betti.stride,
        **ious,
    )
