"""Blur kernel estimation network.

Maps the channel-concatenation of a ``2N+1`` LR frame window to one
normalized ``k x k`` kernel through conv/pool features, two fully connected
layers and a softmax.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn


@dataclass
class KernelNetConfig:
    kernel_size: int = 13
    conv_channels: list[int] = field(default_factory=lambda: [64, 64, 128, 128])
    pool: str = "max"
    pool_after: list[int] = field(default_factory=lambda: [2, 4])
    fc_hidden: int = 256
    temporal_radius: int = 2

    def validate(self) -> None:
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")
        if self.pool not in ("max", "average"):
            raise ValueError(f"pool must be 'max' or 'average', got {self.pool!r}")
        if not self.conv_channels:
            raise ValueError("conv_channels must not be empty")
        if self.temporal_radius < 0:
            raise ValueError(f"temporal_radius must be >= 0, got {self.temporal_radius}")


class KernelNet(nn.Module):
    def __init__(self, cfg: KernelNetConfig | None = None, in_channels: int = 3):
        super().__init__()
        cfg = cfg or KernelNetConfig()
        cfg.validate()
        self.cfg = cfg
        self.window = 2 * cfg.temporal_radius + 1
        self.in_channels = in_channels

        layers: list[nn.Module] = []
        c_in = self.window * in_channels
        for i, c_out in enumerate(cfg.conv_channels, start=1):
            layers += [nn.Conv2d(c_in, c_out, 3, padding=1), nn.ReLU(inplace=True)]
            if i in cfg.pool_after:
                pool = nn.MaxPool2d if cfg.pool == "max" else nn.AvgPool2d
                layers.append(pool(2, stride=2, ceil_mode=True))
            c_in = c_out
        self.features = nn.Sequential(*layers)
        self.head = nn.Sequential(
            nn.Linear(c_in, cfg.fc_hidden), nn.ReLU(inplace=True),
            nn.Linear(cfg.fc_hidden, cfg.kernel_size ** 2),
        )

    def logits(self, window: torch.Tensor) -> torch.Tensor:
        b, t, c, h, w = window.shape
        if t != self.window or c != self.in_channels:
            raise ValueError(
                f"expected a window of {self.window} frames with {self.in_channels} channels, "
                f"got {t} frames with {c}")
        x = self.features(window.reshape(b, t * c, h, w))
        return self.head(x.mean(dim=(-2, -1)))

    def forward(self, window: torch.Tensor) -> torch.Tensor:
        """``(B, 2N+1, C, H, W)`` window -> ``(B, k, k)`` kernels summing to one."""
        k = self.cfg.kernel_size
        return torch.softmax(self.logits(window), dim=-1).reshape(-1, k, k)


def estimate_kernel(net: KernelNet, window) -> torch.Tensor:
    """Estimate one kernel per window.

    ``window`` is a ``(B, 2N+1, C, H, W)`` tensor, a ``(2N+1, C, H, W)``
    tensor, or a list of same-shaped ``(C, H, W)`` tensors.
    """
    if isinstance(window, (list, tuple)):
        shapes = {tuple(f.shape) for f in window}
        if len(shapes) > 1:
            raise ValueError(f"window frames differ in shape: {sorted(shapes)}")
        window = torch.stack(list(window))
    if window.dim() == 4:
        return net(window[None])[0]
    return net(window)
