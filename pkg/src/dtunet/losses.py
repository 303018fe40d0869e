"""Training objectives.

All pixel losses take probability tensors (B, C, H, W) and integer label
tensors (B, H, W) and reduce to a scalar mean.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn.functional as F

PROB_CLAMP = 1e-7
DICE_EPS = 1e-6


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.1
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    dice_weight: float = 0.5
    focal_weight: float = 0.5
    cldice_alpha: float = 0.2
    cldice_beta: float = 0.0
    skeleton_iters: int = 10
    # per-term multipliers of the unified loss, all 1 for the plain sum
    tex_weight: float = 1.0
    bce_weight: float = 1.0
    tri_weight: float = 1.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        weights = (self.dice_weight, self.focal_weight, self.tex_weight, self.bce_weight, self.tri_weight)
        if min(weights) < 0:
            raise ValueError("loss weights must be >= 0")
        if not (0 <= self.cldice_alpha <= 1 and 0 <= self.cldice_beta <= 1):
            raise ValueError("cldice alpha and beta must lie in [0, 1]")
        if self.skeleton_iters < 0:
            raise ValueError("skeleton_iters must be >= 0")


def _one_hot(target: torch.Tensor, channels: int, dtype) -> torch.Tensor:
    return F.one_hot(target.long(), channels).permute(0, 3, 1, 2).to(dtype)


def mean_embedding_distance(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Per-sample spatial mean of channel-vector Euclidean distances, shape (B,)."""
    diff = a - b
    sq = (diff * diff).sum(dim=1)
    # sqrt has an infinite slope at 0; use a zero subgradient for coincident vectors
    safe = torch.where(sq > 0, sq, torch.ones_like(sq))
    dist = torch.where(sq > 0, torch.sqrt(safe), torch.zeros_like(sq))
    return dist.flatten(1).mean(dim=1)


def triplet_loss(anchor: torch.Tensor, positive: torch.Tensor, negative: torch.Tensor,
                 tau: float = 0.1) -> torch.Tensor:
    """max(d+ - d- + tau, 0) averaged over the batch.

    Embeddings are (B, k, h, w); d+ and d- are spatial means of per-position
    distances between channel vectors.
    """
    if not (anchor.shape == positive.shape == negative.shape):
        raise ValueError(
            f"embedding shapes differ: {tuple(anchor.shape)}, {tuple(positive.shape)}, {tuple(negative.shape)}"
        )
    d_pos = mean_embedding_distance(anchor, positive)
    d_neg = mean_embedding_distance(anchor, negative)
    return F.relu(d_pos - d_neg + tau).mean()


def focal_loss(pred: torch.Tensor, target: torch.Tensor, gamma: float = 2.0, alpha: float = 0.25) -> torch.Tensor:
    if pred.shape[0] != target.shape[0] or pred.shape[2:] != target.shape[1:]:
        raise ValueError(f"prediction {tuple(pred.shape)} and target {tuple(target.shape)} disagree")
    p_t = pred.gather(1, target.long()[:, None]).squeeze(1).clamp(PROB_CLAMP, 1 - PROB_CLAMP)
    return (-alpha * (1 - p_t) ** gamma * torch.log(p_t)).mean()


def soft_dice_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """1 - soft dice, averaged over samples and foreground classes."""
    g = _one_hot(target, pred.shape[1], pred.dtype)[:, 1:]
    p = pred[:, 1:]
    inter = (p * g).sum(dim=(2, 3))
    dice = (2 * inter + DICE_EPS) / (p.sum(dim=(2, 3)) + g.sum(dim=(2, 3)) + DICE_EPS)
    return (1 - dice).mean()


def binary_cross_entropy(p: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """BCE of a (B, 1, H, W) foreground probability against a (B, H, W) binary target."""
    p = p.squeeze(1).clamp(PROB_CLAMP, 1 - PROB_CLAMP)
    t = target.to(p.dtype)
    return -(t * torch.log(p) + (1 - t) * torch.log(1 - p)).mean()


def texture_loss(pred, target, cfg: LossConfig = LossConfig()) -> torch.Tensor:
    return (cfg.dice_weight * soft_dice_loss(pred, target)
            + cfg.focal_weight * focal_loss(pred, target, cfg.focal_gamma, cfg.focal_alpha))


# ------------------------------------------------------------------ clDice


def soft_erode(x: torch.Tensor) -> torch.Tensor:
    p1 = -F.max_pool2d(-x, (3, 1), stride=1, padding=(1, 0))
    p2 = -F.max_pool2d(-x, (1, 3), stride=1, padding=(0, 1))
    return torch.min(p1, p2)


def soft_dilate(x: torch.Tensor) -> torch.Tensor:
    return F.max_pool2d(x, 3, stride=1, padding=1)


def soft_open(x: torch.Tensor) -> torch.Tensor:
    return soft_dilate(soft_erode(x))


def soft_skeleton(x: torch.Tensor, iters: int = 10) -> torch.Tensor:
    """Differentiable skeleton by iterated soft erosion and opening."""
    skel = F.relu(x - soft_open(x))
    for _ in range(iters):
        x = soft_erode(x)
        delta = F.relu(x - soft_open(x))
        skel = skel + F.relu(delta - skel * delta)
    return skel


def cl_dice(pred: torch.Tensor, target: torch.Tensor, iters: int = 10, eps: float = 1.0e-6) -> torch.Tensor:
    """Soft centerline dice averaged over samples and foreground classes."""
    g = _one_hot(target, pred.shape[1], pred.dtype)[:, 1:]
    p = pred[:, 1:]
    skel_p = soft_skeleton(p, iters)
    skel_g = soft_skeleton(g, iters)
    t_prec = ((skel_p * g).sum(dim=(2, 3)) + eps) / (skel_p.sum(dim=(2, 3)) + eps)
    t_sens = ((skel_g * p).sum(dim=(2, 3)) + eps) / (skel_g.sum(dim=(2, 3)) + eps)
    return (2 * t_prec * t_sens / (t_prec + t_sens)).mean()


def cl_dice_focal_loss(pred, target, alpha: float = 0.2, gamma: float = 2.0, skeleton_iters: int = 10,
                       focal_alpha: float = 0.25, mix: str = "focal") -> torch.Tensor:
    """alpha * (1 - clDice) + (1 - alpha) * L_focal.

    ``mix="softdice"`` swaps the focal term for 1 - softDice, the original
    clDice mixture (there ``alpha`` plays the role of beta).
    """
    cl_term = 1 - cl_dice(pred, target, skeleton_iters)
    if mix == "focal":
        other = focal_loss(pred, target, gamma, focal_alpha)
    elif mix == "softdice":
        other = soft_dice_loss(pred, target)
    else:
        raise ValueError(f"unknown mix {mix!r}")
    return alpha * cl_term + (1 - alpha) * other


# ------------------------------------------------------------------ unified


class LossBreakdown(NamedTuple):
    tex: torch.Tensor
    bce: torch.Tensor
    tri: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {"L_tex": self.tex.item(), "L_BCE": self.bce.item(),
                "L_tri": self.tri.item(), "total": self.total.item()}


def unified_loss(p_tex, p_top, anchor, positive, negative, G, cfg: LossConfig = LossConfig(),
                 use_triplet: bool = True) -> LossBreakdown:
    """Texture loss + BCE of the topology head against the binarized truth + triplet loss."""
    l_tex = texture_loss(p_tex, G, cfg)
    l_bce = binary_cross_entropy(p_top, G > 0)
    if use_triplet:
        l_tri = triplet_loss(anchor, positive, negative, cfg.tau)
    else:
        l_tri = torch.zeros((), dtype=p_tex.dtype, device=p_tex.device)
    total = cfg.tex_weight * l_tex + cfg.bce_weight * l_bce + cfg.tri_weight * l_tri
    return LossBreakdown(l_tex, l_bce, l_tri, total)
