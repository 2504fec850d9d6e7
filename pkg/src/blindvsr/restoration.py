"""Feature extraction and latent HR frame restoration.

The restorer fuses the center-frame features with the ``2N`` warped
neighbor features (temporal order, center in the middle), runs a ResBlock
trunk at LR resolution and upsamples with pixel-shuffle stages.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class RestorationConfig:
    n_resblocks: int = 20
    feat_channels: int = 64
    extractor_blocks: int = 5
    scale: int = 4
    global_residual: bool = True

    def validate(self) -> None:
        # scale 1 is a degenerate identity configuration kept for tests
        if self.scale not in (1, 2, 4):
            raise ValueError(f"restoration scale must be 2 or 4 (or 1 for tests), got {self.scale}")
        if self.feat_channels < 1 or self.n_resblocks < 0 or self.extractor_blocks < 0:
            raise ValueError("feat_channels must be positive and block counts non-negative")


class ResBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(x)))


class FeatureExtractor(nn.Module):
    def __init__(self, in_channels: int = 3, feat_channels: int = 64, n_blocks: int = 5):
        super().__init__()
        self.head = nn.Conv2d(in_channels, feat_channels, 3, padding=1)
        self.body = nn.Sequential(*(ResBlock(feat_channels) for _ in range(n_blocks)))

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """``(..., C, H, W)`` frames -> ``(..., F, H, W)`` features."""
        lead = frames.shape[:-3]
        x = frames.reshape(-1, *frames.shape[-3:])
        y = self.body(F.relu(self.head(x)))
        return y.reshape(*lead, *y.shape[-3:])


def upsample_aligned(x: torch.Tensor, scale: int, offset: int = 0) -> torch.Tensor:
    """Bilinear upsampling whose sampling phase matches ``decimate(., scale, offset)``.

    HR pixel ``p`` reads LR coordinate ``(p - offset) / scale``, so
    ``decimate(upsample_aligned(y, s, o), s, o) == y``.
    """
    if scale == 1:
        return x
    b, c, h, w = x.shape
    H, W = h * scale, w * scale
    ys = (torch.arange(H, dtype=x.dtype, device=x.device) - offset) / scale
    xs = (torch.arange(W, dtype=x.dtype, device=x.device) - offset) / scale
    gy = 2.0 * ys / max(h - 1, 1) - 1.0
    gx = 2.0 * xs / max(w - 1, 1) - 1.0
    grid = torch.stack(torch.meshgrid(gy, gx, indexing="ij")[::-1], dim=-1)
    return F.grid_sample(x, grid.expand(b, H, W, 2), mode="bilinear",
                         padding_mode="border", align_corners=True)


class Restorer(nn.Module):
    def __init__(self, cfg: RestorationConfig | None = None, temporal_radius: int = 2,
                 out_channels: int = 3, decimation_offset: int = 0):
        super().__init__()
        cfg = cfg or RestorationConfig()
        cfg.validate()
        self.cfg = cfg
        self.temporal_radius = temporal_radius
        self.decimation_offset = decimation_offset
        f = cfg.feat_channels
        self.fusion = nn.Conv2d((2 * temporal_radius + 1) * f, f, 3, padding=1)
        self.trunk = nn.Sequential(*(ResBlock(f) for _ in range(cfg.n_resblocks)))
        self.trunk_tail = nn.Conv2d(f, f, 3, padding=1)
        stages: list[nn.Module] = []
        for _ in range(int(math.log2(cfg.scale))):
            stages += [nn.Conv2d(f, 4 * f, 3, padding=1), nn.PixelShuffle(2), nn.ReLU(inplace=True)]
        self.upsampler = nn.Sequential(*stages)
        self.tail = nn.Conv2d(f, out_channels, 3, padding=1)

    def forward(self, center: torch.Tensor, warped_neighbors: list[torch.Tensor],
                center_frame: torch.Tensor | None = None) -> torch.Tensor:
        n = self.temporal_radius
        if len(warped_neighbors) != 2 * n:
            raise ValueError(f"expected {2 * n} warped neighbor features, got {len(warped_neighbors)}")
        for nb in warped_neighbors:
            if nb.shape != center.shape:
                raise ValueError(f"neighbor features {tuple(nb.shape)} differ from center {tuple(center.shape)}")
        x = torch.cat([*warped_neighbors[:n], center, *warped_neighbors[n:]], dim=1)
        x = self.fusion(x)
        x = x + self.trunk_tail(self.trunk(x))
        out = self.tail(self.upsampler(x))
        if self.cfg.global_residual:
            if center_frame is None:
                raise ValueError("global residual is enabled but no center frame was given")
            out = out + upsample_aligned(center_frame, self.cfg.scale, self.decimation_offset)
        return out
