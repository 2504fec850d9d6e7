"""The four jointly trained networks bundled into one module.

Submodules are named ``nk`` (kernel), ``ne`` (features), ``nf`` (flow) and
``ni`` (restoration); these names are also the checkpoint parameter groups.
The same ``ne``/``nf``/``ni`` path serves the main and the auxiliary branch.
"""
from __future__ import annotations

import torch
import torch.nn as nn

from .flow import FlowProviderConfig, build_flow, warp
from .kernel_net import KernelNet, KernelNetConfig
from .restoration import FeatureExtractor, RestorationConfig, Restorer

GROUPS = ("nk", "ne", "nf", "ni")


class SelfBlindVSR(nn.Module):
    def __init__(self, kernel_cfg: KernelNetConfig | None = None,
                 flow_cfg: FlowProviderConfig | None = None,
                 restore_cfg: RestorationConfig | None = None,
                 decimation_offset: int = 0, in_channels: int = 3):
        super().__init__()
        kernel_cfg = kernel_cfg or KernelNetConfig()
        restore_cfg = restore_cfg or RestorationConfig()
        flow_cfg = flow_cfg or FlowProviderConfig()
        self.temporal_radius = kernel_cfg.temporal_radius
        self.scale = restore_cfg.scale
        self.nk = KernelNet(kernel_cfg, in_channels)
        self.ne = FeatureExtractor(in_channels, restore_cfg.feat_channels, restore_cfg.extractor_blocks)
        self.nf = build_flow(flow_cfg, in_channels)
        self.ni = Restorer(restore_cfg, self.temporal_radius, in_channels, decimation_offset)

    def estimate_kernel(self, window: torch.Tensor) -> torch.Tensor:
        return self.nk(window)

    def restore_window(self, window: torch.Tensor) -> torch.Tensor:
        """``(B, 2N+1, C, h, w)`` LR window -> ``(B, C, s*h, s*w)`` center HR frame."""
        b, t, c, h, w = window.shape
        n = self.temporal_radius
        if t != 2 * n + 1:
            raise ValueError(f"expected a window of {2 * n + 1} frames, got {t}")
        feats = self.ne(window)  # (B, T, F, h, w)
        center = window[:, n]
        if n == 0:
            return self.ni(feats[:, 0], [], center)
        idx = [j for j in range(t) if j != n]
        sources = window[:, idx].reshape(b * 2 * n, c, h, w)
        targets = center.unsqueeze(1).expand(b, 2 * n, c, h, w).reshape(b * 2 * n, c, h, w)
        flows = self.nf(sources, targets)
        nb = feats[:, idx].reshape(b * 2 * n, *feats.shape[-3:])
        warped = warp(nb, flows).reshape(b, 2 * n, *feats.shape[-3:])
        return self.ni(feats[:, n], list(warped.unbind(1)), center)

    def groups(self) -> dict[str, nn.Module]:
        return {g: getattr(self, g) for g in GROUPS}
