"""DTU-Net: a texture mini U-Net followed by a topology mini U-Net.

The texture net maps an image to a (c+1)-class softmax map. The topology
encoder embeds a class-probability map (the texture output, a one-hot ground
truth or a one-hot corrupted mask) into an SE-gated bottleneck; the topology
decoder turns the anchor embedding into a sigmoid foreground map.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

TRAIN = "train"
INFER = "infer"


@dataclass(frozen=True)
class MiniUNetSpec:
    depth: int = 3
    base_channels: int = 32
    in_channels: int = 1
    out_channels: int = 2
    bilinear_upsampling: bool = True

    def __post_init__(self):
        if self.depth < 1 or self.base_channels < 1:
            raise ValueError("depth and base_channels must be >= 1")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be >= 1")

    @property
    def stride(self) -> int:
        return 2 ** self.depth

    def widths(self) -> list[int]:
        """Channel count per level, bottleneck last."""
        return [self.base_channels * 2 ** i for i in range(self.depth + 1)]


def _norm(channels: int) -> nn.GroupNorm:
    groups = 8 if channels % 8 == 0 else (4 if channels % 4 == 0 else 1)
    return nn.GroupNorm(groups, channels)


class ConvBlock(nn.Sequential):
    """Two 3x3 conv + GroupNorm + ReLU layers."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__(
            nn.Conv2d(in_ch, out_ch, 3, padding=1),
            _norm(out_ch),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_ch, out_ch, 3, padding=1),
            _norm(out_ch),
            nn.ReLU(inplace=True),
        )


class SEBlock(nn.Module):
    """Squeeze-and-excitation channel gating.

    Global average pool, a bottleneck MLP, sigmoid scores, channel-wise
    rescaling of the input.
    """

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def scores(self, x: torch.Tensor) -> torch.Tensor:
        squeezed = x.mean(dim=(2, 3))
        return torch.sigmoid(self.fc2(F.relu(self.fc1(squeezed))))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.scores(x)[:, :, None, None]


class Encoder(nn.Module):
    """Contracting path. Returns the bottleneck and the skip tensors (shallow first)."""

    def __init__(self, spec: MiniUNetSpec):
        super().__init__()
        widths = spec.widths()
        self.blocks = nn.ModuleList()
        prev = spec.in_channels
        for w in widths[:-1]:
            self.blocks.append(ConvBlock(prev, w))
            prev = w
        self.bottleneck = ConvBlock(prev, widths[-1])

    def forward(self, x):
        skips = []
        for block in self.blocks:
            x = block(x)
            skips.append(x)
            x = F.max_pool2d(x, 2)
        return self.bottleneck(x), skips


class Decoder(nn.Module):
    """Expanding path with skip concatenation, ending in a 1x1 logit conv."""

    def __init__(self, spec: MiniUNetSpec):
        super().__init__()
        widths = spec.widths()
        self.bilinear = spec.bilinear_upsampling
        self.ups = nn.ModuleList()
        self.blocks = nn.ModuleList()
        prev = widths[-1]
        for w in reversed(widths[:-1]):
            if self.bilinear:
                self.ups.append(nn.Conv2d(prev, w, 1))
            else:
                self.ups.append(nn.ConvTranspose2d(prev, w, 2, stride=2))
            self.blocks.append(ConvBlock(2 * w, w))
            prev = w
        self.head = nn.Conv2d(prev, spec.out_channels, 1)

    def forward(self, x, skips):
        if len(skips) != len(self.blocks):
            raise ValueError(f"expected {len(self.blocks)} skip tensors, got {len(skips)}")
        for up, block, skip in zip(self.ups, self.blocks, reversed(skips)):
            if self.bilinear:
                x = up(F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False))
            else:
                x = up(x)
            if x.shape[2:] != skip.shape[2:] or x.shape[0] != skip.shape[0]:
                raise ValueError(f"skip shape {tuple(skip.shape)} does not match {tuple(x.shape)}")
            x = block(torch.cat([x, skip], dim=1))
        return self.head(x)


class MiniUNet(nn.Module):
    def __init__(self, spec: MiniUNetSpec):
        super().__init__()
        self.spec = spec
        self.encoder = Encoder(spec)
        self.decoder = Decoder(spec)

    def forward(self, x):
        """Raw logits at input resolution."""
        bottom, skips = self.encoder(x)
        return self.decoder(bottom, skips)


class TopologyEncoder(nn.Module):
    """Contracting path of the topology net with an SE-gated bottleneck."""

    def __init__(self, spec: MiniUNetSpec, se_reduction: int = 4):
        super().__init__()
        self.encoder = Encoder(spec)
        self.se = SEBlock(spec.widths()[-1], se_reduction)

    def forward(self, probs):
        bottom, skips = self.encoder(probs)
        return self.se(bottom), skips


class DTUOutput(NamedTuple):
    p_tex: torch.Tensor          # (B, c+1, H, W) softmax
    p_top: torch.Tensor          # (B, 1, H, W) sigmoid
    anchor: torch.Tensor         # (B, k, H/s, W/s)
    positive: torch.Tensor | None
    negative: torch.Tensor | None


class DTUNet(nn.Module):
    """Texture net, topology encoder and topology decoder."""

    def __init__(self, num_classes: int, in_channels: int = 1, depth: int = 3,
                 base_channels: int = 32, bilinear_upsampling: bool = True, se_reduction: int = 4):
        super().__init__()
        self.num_classes = num_classes
        self.texture_spec = MiniUNetSpec(depth, base_channels, in_channels, num_classes + 1,
                                         bilinear_upsampling)
        self.topology_spec = MiniUNetSpec(depth, base_channels, num_classes + 1, 1,
                                          bilinear_upsampling)
        self.se_reduction = se_reduction
        self.texture_net = MiniUNet(self.texture_spec)
        self.topology_encoder = TopologyEncoder(self.topology_spec, se_reduction)
        self.topology_decoder = Decoder(self.topology_spec)

    @property
    def stride(self) -> int:
        return self.texture_spec.stride

    def config(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "in_channels": self.texture_spec.in_channels,
            "depth": self.texture_spec.depth,
            "base_channels": self.texture_spec.base_channels,
            "bilinear_upsampling": self.texture_spec.bilinear_upsampling,
            "se_reduction": self.se_reduction,
        }

    def texture_forward(self, image):
        if image.shape[1] != self.texture_spec.in_channels:
            raise ValueError(f"model expects {self.texture_spec.in_channels} image channels, got {image.shape[1]}")
        return torch.softmax(self.texture_net(image), dim=1)

    def topology_encode(self, probs):
        if probs.shape[1] != self.num_classes + 1:
            raise ValueError(f"expected {self.num_classes + 1} probability channels, got {probs.shape[1]}")
        return self.topology_encoder(probs)

    def topology_decode(self, emb, skips):
        return torch.sigmoid(self.topology_decoder(emb, skips))

    def one_hot(self, labels):
        return F.one_hot(labels.long(), self.num_classes + 1).permute(0, 3, 1, 2).to(
            dtype=next(self.parameters()).dtype)

    def forward(self, image, G=None, G_hat=None, mode: str = TRAIN) -> DTUOutput:
        return dtu_forward(self, image, G, G_hat, mode)


def dtu_forward(model: DTUNet, image, G=None, G_hat=None, mode: str = TRAIN) -> DTUOutput:
    """One pass of the full pipeline.

    In training mode the ground truth ``G`` and corrupted mask ``G_hat`` (label
    tensors of shape (B, H, W)) are embedded by the same topology encoder as
    the anchor; they share its weights and run in one concatenated batch.
    """
    if mode not in (TRAIN, INFER):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == TRAIN and (G is None or G_hat is None):
        raise ValueError("training mode needs both G and G_hat")
    h, w = image.shape[2:]
    if h % model.stride or w % model.stride:
        raise ValueError(f"input {h}x{w} not divisible by {model.stride}; pad first")
    p_tex = model.texture_forward(image)
    if mode == INFER:
        anchor, skips = model.topology_encode(p_tex)
        return DTUOutput(p_tex, model.topology_decode(anchor, skips), anchor, None, None)
    b = image.shape[0]
    batch = torch.cat([p_tex, model.one_hot(G), model.one_hot(G_hat)], dim=0)
    emb, skips = model.topology_encode(batch)
    anchor_skips = [s[:b] for s in skips]
    anchor = emb[:b]
    p_top = model.topology_decode(anchor, anchor_skips)
    return DTUOutput(p_tex, p_top, anchor, emb[b:2 * b], emb[2 * b:])


def pad_to_multiple(x: torch.Tensor, multiple: int) -> tuple[torch.Tensor, tuple[int, int]]:
    """Reflect-pad the bottom/right edges of a (B, C, H, W) tensor."""
    h, w = x.shape[2:]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph or pw:
        mode = "reflect" if ph < h and pw < w else "replicate"
        x = F.pad(x, (0, pw, 0, ph), mode=mode)
    return x, (h, w)


@torch.no_grad()
def predict(model: DTUNet, image: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Inference on a (B, C, H, W) batch of any size: returns (p_tex, p_top)."""
    was_training = model.training
    model.eval()
    try:
        padded, (h, w) = pad_to_multiple(image, model.stride)
        out = dtu_forward(model, padded, mode=INFER)
    finally:
        model.train(was_training)
    return out.p_tex[:, :, :h, :w], out.p_top[:, :, :h, :w]


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def save_checkpoint(path, model: DTUNet, manifest: dict | None = None, optimizer=None, extra: dict | None = None):
    """Store weights plus a manifest describing the architecture and run state."""
    payload = {
        "state_dict": model.state_dict(),
        "manifest": {
            "model": model.config(),
            "texture_spec": asdict(model.texture_spec),
            "topology_spec": asdict(model.topology_spec),
            **(manifest or {}),
        },
    }
    if optimizer is not None:
        payload["optimizer"] = optimizer.state_dict()
    if extra:
        payload["extra"] = extra
    torch.save(payload, Path(path))


def load_checkpoint(path, map_location="cpu") -> tuple[DTUNet, dict]:
    """Rebuild a model from a checkpoint; returns it with the raw payload."""
    payload = torch.load(Path(path), map_location=map_location, weights_only=False)
    model = DTUNet(**payload["manifest"]["model"])
    model.load_state_dict(payload["state_dict"])
    return model, payload
