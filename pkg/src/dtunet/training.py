"""Joint training loop, inference helpers and validation scoring."""

from __future__ import annotations

import csv
import json
import logging
import math
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from . import __version__
from .config import RunConfig
from .core import DatasetManifest, InputImage, SegmentationMask, load_image
from .corruption import corrupt, lambda_at
from .data.patches import random_crop, sliding_windows, stitch
from .fusion import FusionConfig, fuse
from .losses import unified_loss
from .metrics import BettiConfig, IoUCounts, betti_error, iou_from_counts
from .model import INFER, TRAIN, DTUNet, dtu_forward, predict, save_checkpoint

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("step", "L_tex", "L_BCE", "L_tri", "total")


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class Sample:
    """Channel-first float32 image (C, H, W) with integer labels (H, W)."""

    image: np.ndarray
    labels: np.ndarray
    name: str = ""


def to_sample(image: InputImage, mask: SegmentationMask, channels: int, name: str = "") -> Sample:
    return Sample(image.to_channels(channels), mask.labels.astype(np.int64), name)


def samples_from_manifest(manifest: DatasetManifest, channels: int) -> list[Sample]:
    out = []
    for entry in manifest.entries:
        image = load_image(entry.image)
        out.append(to_sample(image, manifest.load_mask(entry), channels, Path(entry.image).stem))
    return out


def split_samples(samples: Sequence[Sample], val_fraction: float, seed: int) -> tuple[list, list]:
    """Seeded shuffle split; the order inside each part follows the input order."""
    n_val = int(round(val_fraction * len(samples)))
    if len(samples) > 1:
        n_val = min(max(n_val, 1 if val_fraction > 0 else 0), len(samples) - 1)
    perm = np.random.default_rng(seed).permutation(len(samples))
    val_idx = set(perm[:n_val].tolist())
    train = [s for i, s in enumerate(samples) if i not in val_idx]
    val = [s for i, s in enumerate(samples) if i in val_idx]
    return train, val


# ------------------------------------------------------------------ inference


def predict_probs(model: DTUNet, image: np.ndarray, window: int | None = None,
                  stride: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(p_tex, p_top) for one (C, H, W) image as numpy arrays.

    Images larger than ``window`` go through overlapping windows whose
    predictions are averaged back together.
    """
    _, h, w = image.shape
    if window is None or (h <= window and w <= window):
        p_tex, p_top = predict(model, torch.from_numpy(image[None]).to(_dtype(model)))
        return p_tex[0].double().numpy(), p_top[0].double().numpy()
    tiles = sliding_windows(image.transpose(1, 2, 0), window, stride or window)
    batch = np.stack([t.transpose(2, 0, 1) for t, _ in tiles])
    p_tex, p_top = predict(model, torch.from_numpy(np.ascontiguousarray(batch)).to(_dtype(model)))
    offsets = [off for _, off in tiles]
    tex = stitch(list(p_tex.double().numpy()), offsets, (h, w), renormalize=True)
    top = stitch(list(p_top.double().numpy()), offsets, (h, w), renormalize=False)
    return tex.astype(np.float64), top.astype(np.float64)


def predict_labels(model: DTUNet, image: np.ndarray, fusion: FusionConfig, window=None, stride=None) -> np.ndarray:
    p_tex, p_top = predict_probs(model, image, window, stride)
    return fuse(p_tex, p_top, fusion).argmax(axis=0).astype(np.uint8)


def _dtype(model: torch.nn.Module):
    return next(model.parameters()).dtype


def validation_score(model: DTUNet, samples: Sequence[Sample], fusion: FusionConfig, betti: BettiConfig,
                     window=None, stride=None) -> dict[str, float]:
    """betti_error + (1 - mIoU) on held-out samples, plus its parts."""
    kinds = ["curvilinear"] * model.num_classes
    bettis = []
    counts = IoUCounts(np.zeros(model.num_classes, np.int64), np.zeros(model.num_classes, np.int64))
    for s in samples:
        pred = predict_labels(model, s.image, fusion, window, stride)
        bettis.append(betti_error(pred, s.labels, betti))
        counts = counts + IoUCounts.from_masks(pred, s.labels, model.num_classes)
    miou = iou_from_counts(counts, kinds)["miou"]
    miou = 1.0 if miou is None else miou
    b = float(np.mean(bettis))
    return {"betti_error": b, "miou": miou, "score": b + (1 - miou)}


# ------------------------------------------------------------------ training


def code_version() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5)
        if rev.returncode == 0:
            return f"{__version__}+{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def build_model(cfg: RunConfig, num_classes: int) -> DTUNet:
    m = cfg.model
    return DTUNet(num_classes, m.in_channels, m.depth, m.base_channels, m.bilinear_upsampling, m.se_reduction)


def build_optimizer(cfg: RunConfig, params: Iterable) -> torch.optim.Optimizer:
    o = cfg.optimizer
    if o.method == "adam":
        return torch.optim.Adam(params, lr=o.lr, weight_decay=o.weight_decay)
    if o.method == "adamw":
        return torch.optim.AdamW(params, lr=o.lr, weight_decay=o.weight_decay)
    return torch.optim.SGD(params, lr=o.lr, momentum=0.9, weight_decay=o.weight_decay)


class Trainer:
    """Joint optimisation of all three sub-networks on the unified loss.

    Each step draws a batch, sets lambda from the epoch schedule, corrupts
    every ground truth online, runs the training forward pass and takes one
    optimizer step on the summed loss.
    """

    def __init__(self, cfg: RunConfig, num_classes: int, out_dir=None, class_kinds=None):
        self.cfg = cfg
        self.num_classes = num_classes
        self.class_kinds = list(class_kinds or ["curvilinear"] * num_classes)
        self.out_dir = Path(out_dir or cfg.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        torch.manual_seed(cfg.seed)
        self.model = build_model(cfg, num_classes)
        self.optimizer = build_optimizer(cfg, self.model.parameters())
        self.rng = np.random.default_rng(cfg.seed)
        self.step = 0
        self.epoch = 0
        self.best_score = math.inf
        self.history: list[dict] = []
        self.loss_csv = self.out_dir / "losses.csv"

    # -- persistence ---------------------------------------------------

    def _manifest(self, lam: float | None = None) -> dict:
        return {
            "num_classes": self.num_classes,
            "class_kinds": self.class_kinds,
            "epoch": self.epoch,
            "step": self.step,
            "lambda": lam,
            "run_config": self.cfg.to_dict(),
            "code_version": code_version(),
        }

    def save(self, path, lam: float | None = None) -> None:
        extra = {
            "numpy_rng": self.rng.bit_generator.state,
            "torch_rng": torch.get_rng_state(),
            "best_score": self.best_score,
        }
        save_checkpoint(path, self.model, self._manifest(lam), self.optimizer, extra)

    def resume(self, path) -> None:
        payload = torch.load(path, map_location="cpu", weights_only=False)
        self.model.load_state_dict(payload["state_dict"])
        self.optimizer.load_state_dict(payload["optimizer"])
        man = payload["manifest"]
        self.epoch, self.step = man["epoch"], man["step"]
        extra = payload.get("extra", {})
        if "numpy_rng" in extra:
            self.rng.bit_generator.state = extra["numpy_rng"]
        if "torch_rng" in extra:
            torch.set_rng_state(extra["torch_rng"])
        self.best_score = extra.get("best_score", math.inf)

    def write_run_manifest(self) -> None:
        doc = {"run_config": self.cfg.to_dict(), "num_classes": self.num_classes,
               "class_kinds": self.class_kinds, "seed": self.cfg.seed, "code_version": code_version()}
        (self.out_dir / "run_manifest.json").write_text(json.dumps(doc, indent=2, default=str) + "\n")

    # -- batches ---------------------------------------------------------

    def _crop_size(self, sample: Sample) -> int:
        stride = self.model.stride
        side = min(self.cfg.patch.train_crop, *sample.labels.shape)
        return max(side - side % stride, stride)

    def _batch(self, samples: Sequence[Sample], lam: float):
        images, gts, corrupted = [], [], []
        for s in samples:
            size = self._crop_size(s)
            img, lab = random_crop(s.image.transpose(1, 2, 0), s.labels, size, self.rng)
            img = np.ascontiguousarray(img.transpose(2, 0, 1))
            images.append(img)
            gts.append(lab)
            corrupted.append(corrupt(lab, img.mean(axis=0), lam, self.cfg.corruption, self.rng))
        dtype = _dtype(self.model)
        return (torch.from_numpy(np.stack(images)).to(dtype),
                torch.from_numpy(np.stack(gts).astype(np.int64)),
                torch.from_numpy(np.stack(corrupted).astype(np.int64)))

    # -- loop -------------------------------------------------------------

    def train_step(self, samples: Sequence[Sample], lam: float) -> dict[str, float]:
        self.model.train()
        image, G, G_hat = self._batch(samples, lam)
        # without the triplet term the positive/negative embeddings are never used
        mode = TRAIN if self.cfg.use_triplet else INFER
        out = dtu_forward(self.model, image, G, G_hat, mode=mode)
        losses = unified_loss(out.p_tex, out.p_top, out.anchor, out.positive, out.negative, G,
                              self.cfg.loss, use_triplet=self.cfg.use_triplet)
        if not torch.isfinite(losses.total):
            raise TrainingDivergedError(f"non-finite loss at step {self.step}: {losses.as_floats()}")
        self.optimizer.zero_grad(set_to_none=True)
        losses.total.backward()
        self.optimizer.step()
        row = {"step": self.step, **losses.as_floats()}
        self.step += 1
        return row

    def fit(self, train: Sequence[Sample], val: Sequence[Sample] = (), epochs: int | None = None,
            max_steps: int | None = None, window: int | None = None, stride: int | None = None) -> list[dict]:
        """Train until ``epochs`` (default from config) or ``max_steps`` is reached."""
        total_epochs = epochs or self.cfg.optimizer.epochs
        bs = self.cfg.optimizer.batch_size
        self.write_run_manifest()
        new_file = not self.loss_csv.exists() or self.step == 0
        with open(self.loss_csv, "w" if new_file else "a", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=LOSS_COLUMNS, lineterminator="\n")
            if new_file:
                writer.writeheader()
            while self.epoch < total_epochs:
                lam = lambda_at(self.epoch, total_epochs, self.cfg.corruption)
                order = self.rng.permutation(len(train))
                for start in range(0, len(order), bs):
                    if max_steps is not None and self.step >= max_steps:
                        return self.history
                    row = self.train_step([train[i] for i in order[start:start + bs]], lam)
                    writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
                    self.history.append(row)
                self.epoch += 1
                fh.flush()
                self._end_of_epoch(val, lam, window, stride)
        return self.history

    def _end_of_epoch(self, val, lam, window, stride) -> None:
        self.save(self.out_dir / "last.pt", lam)
        if not val:
            return
        scores = validation_score(self.model, val, self.cfg.fusion, self.cfg.betti, window, stride)
        log.info("epoch %d lambda %.3f val %s", self.epoch, lam, scores)
        if scores["score"] < self.best_score:
            self.best_score = scores["score"]
            self.save(self.out_dir / "best.pt", lam)
