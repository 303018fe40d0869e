"""Soft fusion of the texture and topology predictions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class FusionConfig:
    omega: float = 0.5
    renorm_epsilon: float = 1e-8

    def __post_init__(self):
        if not 0 <= self.omega <= 1:
            raise ValueError("omega must lie in [0, 1]")


def fuse(p_tex, p_top, cfg: FusionConfig = FusionConfig()):
    """Blend a (c+1)-class texture map with a foreground probability.

    Works on numpy arrays or torch tensors laid out (..., C, H, W) for
    ``p_tex`` and (..., 1, H, W) for ``p_top``. Background becomes
    ``(1-w)(1-p_top) + w*p_tex[0]``; the foreground classes are rescaled
    jointly so their total is ``(1-w)*p_top + w*S`` with ``S`` the texture
    foreground mass, which leaves class-to-class ratios untouched. Where S
    vanishes the topology mass is split evenly over the foreground classes.
    """
    xp = torch if isinstance(p_tex, torch.Tensor) else np
    if p_tex.ndim != p_top.ndim or p_tex.shape[-2:] != p_top.shape[-2:]:
        raise ValueError(f"shape mismatch: p_tex {tuple(p_tex.shape)}, p_top {tuple(p_top.shape)}")
    if p_top.shape[-3] != 1:
        raise ValueError("p_top must have exactly one channel")
    c = p_tex.shape[-3] - 1
    if c < 1:
        raise ValueError("p_tex needs a background and at least one foreground channel")
    w = cfg.omega
    bg = p_tex[..., :1, :, :]
    fg = p_tex[..., 1:, :, :]
    S = fg.sum(axis=-3, keepdims=True) if xp is np else fg.sum(dim=-3, keepdim=True)
    empty = S < cfg.renorm_epsilon
    safe_S = xp.where(empty, xp.ones_like(S), S)
    scaled = ((1 - w) * p_top + w * safe_S) / safe_S * fg
    guard_fg = (1 - w) * p_top / c + 0 * fg
    out_fg = xp.where(empty, guard_fg, scaled)
    out_bg = xp.where(empty, (1 - w) * (1 - p_top) + w, (1 - w) * (1 - p_top) + w * bg)
    cat = np.concatenate if xp is np else torch.cat
    return cat([out_bg, out_fg], axis=-3) if xp is np else cat([out_bg, out_fg], dim=-3)
