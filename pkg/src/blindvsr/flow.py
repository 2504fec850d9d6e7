"""Optical flow between LR frames and bilinear warping of feature maps.

Flow tensors are ``(B, 2, H, W)`` holding ``(dx, dy)`` in pixels with a
*pull* convention: ``warp(x, flow)(p) = x(p + flow(p))``. If ``target`` is
``source`` translated by ``+s`` then ``warp(source, -s) == target`` and a
flow estimator fed ``(source, target)`` should return ``-s``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

logger = logging.getLogger(__name__)

BACKENDS = ("builtin_coarse2fine", "pretrained_external")


@dataclass
class FlowProviderConfig:
    backend: str = "builtin_coarse2fine"
    checkpoint_path: str | None = None
    trainable: bool = True
    lr_scale: float = 1.0
    levels: int = 3
    channels: int = 32

    def validate(self) -> None:
        if self.backend not in BACKENDS:
            raise ValueError(f"flow backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.backend == "pretrained_external" and not self.checkpoint_path:
            raise ValueError("flow backend 'pretrained_external' requires flow checkpoint_path")
        if self.levels < 1:
            raise ValueError(f"flow levels must be >= 1, got {self.levels}")


def _base_grid(h: int, w: int, dtype, device) -> torch.Tensor:
    ys, xs = torch.meshgrid(torch.arange(h, dtype=dtype, device=device),
                            torch.arange(w, dtype=dtype, device=device), indexing="ij")
    return torch.stack((xs, ys))  # (2, H, W)


def warp(features: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Bilinearly sample ``features`` at ``p + flow(p)`` with border replication.

    ``features`` is ``(B, C, H, W)`` (or ``(C, H, W)``), ``flow`` is
    ``(B, 2, H, W)`` (or ``(2, H, W)``). Differentiable in both arguments.
    """
    squeeze = features.dim() == 3
    if squeeze:
        features, flow = features[None], flow[None]
    if features.shape[-2:] != flow.shape[-2:] or flow.shape[1] != 2:
        raise ValueError(f"features {tuple(features.shape)} and flow {tuple(flow.shape)} do not match")
    _, _, h, w = features.shape
    pos = _base_grid(h, w, flow.dtype, flow.device) + flow
    # normalize to [-1, 1] with align_corners=True so -1/1 are pixel centers
    gx = 2.0 * pos[:, 0] / max(w - 1, 1) - 1.0
    gy = 2.0 * pos[:, 1] / max(h - 1, 1) - 1.0
    grid = torch.stack((gx, gy), dim=-1)
    out = F.grid_sample(features, grid.to(features.dtype), mode="bilinear",
                        padding_mode="border", align_corners=True)
    return out[0] if squeeze else out


class _LevelNet(nn.Sequential):
    def __init__(self, in_channels: int, channels: int):
        super().__init__(
            nn.Conv2d(2 * in_channels + 2, channels, 5, padding=2), nn.LeakyReLU(0.1),
            nn.Conv2d(channels, channels, 3, padding=1), nn.LeakyReLU(0.1),
            nn.Conv2d(channels, channels, 3, padding=1), nn.LeakyReLU(0.1),
            nn.Conv2d(channels, 2, 3, padding=1),
        )
        nn.init.normal_(self[-1].weight, std=1e-3)
        nn.init.zeros_(self[-1].bias)


def lucas_kanade_step(warped: torch.Tensor, target: torch.Tensor, window: int = 5,
                      eps: float = 1e-5) -> torch.Tensor:
    """Windowed least-squares flow update ``du`` with ``warped(p + du) ~ target(p)``.

    Linearizes around the current flow with gradients of the mean of both
    images; channels are pooled into one system per pixel. ``eps`` pulls flat
    regions towards zero.
    """
    pad = F.pad(0.5 * (warped + target), (1, 1, 1, 1), mode="replicate")
    gx = 0.5 * (pad[..., 1:-1, 2:] - pad[..., 1:-1, :-2])
    gy = 0.5 * (pad[..., 2:, 1:-1] - pad[..., :-2, 1:-1])
    err = target - warped

    def box(x):
        x = x.sum(1, keepdim=True)
        r = window // 2
        return F.avg_pool2d(F.pad(x, (r, r, r, r), mode="replicate"), window, stride=1)

    axx, axy, ayy = box(gx * gx) + eps, box(gx * gy), box(gy * gy) + eps
    bx, by = box(gx * err), box(gy * err)
    det = axx * ayy - axy * axy
    return torch.cat(((ayy * bx - axy * by) / det, (axx * by - axy * bx) / det), dim=1)


class CoarseToFineFlow(nn.Module):
    """Small pyramid flow estimator with learned residual refinement.

    At every pyramid level the source is warped by the upsampled coarse flow,
    a few Lucas-Kanade steps refine it and a small CNN predicts a residual
    correction from the target, the warped source and the current flow.
    """

    def __init__(self, in_channels: int = 3, levels: int = 3, channels: int = 32, lk_iters: int = 2):
        super().__init__()
        self.levels = levels
        self.lk_iters = lk_iters
        self.nets = nn.ModuleList(_LevelNet(in_channels, channels) for _ in range(levels))

    def forward(self, source: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        if source.shape != target.shape:
            raise ValueError(f"source {tuple(source.shape)} and target {tuple(target.shape)} differ")
        pyramid = [(source, target)]
        for _ in range(self.levels - 1):
            s, t = pyramid[-1]
            if min(s.shape[-2:]) < 8:
                break
            pyramid.append((F.avg_pool2d(s, 2, ceil_mode=True), F.avg_pool2d(t, 2, ceil_mode=True)))

        flow = None
        # coarsest level uses the deepest net so weights stay tied to scale
        for level in range(len(pyramid) - 1, -1, -1):
            s, t = pyramid[level]
            h, w = s.shape[-2:]
            if flow is None:
                flow = s.new_zeros(s.shape[0], 2, h, w)
            else:
                fh, fw = flow.shape[-2:]
                flow = F.interpolate(flow, size=(h, w), mode="bilinear", align_corners=False)
                flow = flow * flow.new_tensor([w / fw, h / fh]).view(1, 2, 1, 1)
            for _ in range(self.lk_iters):
                flow = flow + lucas_kanade_step(warp(s, flow), t).clamp(-2.0, 2.0)
            warped = warp(s, flow)
            flow = flow + self.nets[level](torch.cat((t, warped, flow), dim=1))
        return flow


class ExternalFlow(nn.Module):
    """Wraps a TorchScript flow model ``(source, target) -> (B, 2, H, W)``."""

    def __init__(self, module: nn.Module):
        super().__init__()
        self.module = module

    def forward(self, source, target):
        return self.module(source, target)


def build_flow(cfg: FlowProviderConfig, in_channels: int = 3) -> nn.Module:
    """Instantiate the configured flow backend.

    ``pretrained_external`` checkpoints are either a TorchScript archive whose
    forward takes ``(source, target)`` and returns pull-convention flow, or a
    ``state_dict`` for :class:`CoarseToFineFlow` with the configured shape.
    """
    cfg.validate()
    if cfg.backend == "builtin_coarse2fine":
        net = CoarseToFineFlow(in_channels, cfg.levels, cfg.channels)
    else:
        try:
            net = ExternalFlow(torch.jit.load(cfg.checkpoint_path, map_location="cpu"))
        except (RuntimeError, ValueError):
            net = CoarseToFineFlow(in_channels, cfg.levels, cfg.channels)
            state = torch.load(cfg.checkpoint_path, map_location="cpu", weights_only=True)
            net.load_state_dict(state.get("nf", state) if isinstance(state, dict) else state)
    if not cfg.trainable:
        for p in net.parameters():
            p.requires_grad_(False)
    return net


def estimate_flow(net: nn.Module, source: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Flow ``u`` such that ``warp(source, u)`` approximates ``target``."""
    squeeze = source.dim() == 3
    if squeeze:
        source, target = source[None], target[None]
    if source.shape != target.shape:
        raise ValueError(f"source {tuple(source.shape)} and target {tuple(target.shape)} differ")
    flow = net(source, target)
    return flow[0] if squeeze else flow


def translation_pairs(images: list[np.ndarray], batch: int, size: int, max_shift: float,
                      rng: np.random.Generator) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Random textured crops and copies translated by a known sub-pixel shift.

    Returns ``(source, target, flow)`` with ``target(p) = source(p - s)`` and
    ``flow = -s`` constant over the crop.
    """
    src, tgt, shifts = [], [], []
    margin = int(np.ceil(max_shift)) + 1
    for _ in range(batch):
        img = torch.from_numpy(np.ascontiguousarray(images[rng.integers(len(images))].transpose(2, 0, 1))).float()
        _, h, w = img.shape
        top = rng.integers(margin, h - size - margin)
        left = rng.integers(margin, w - size - margin)
        s = rng.uniform(-max_shift, max_shift, size=2)
        crop = img[None, :, top - margin:top + size + margin, left - margin:left + size + margin]
        moved = warp(crop, torch.tensor([-s[0], -s[1]], dtype=torch.float32).view(1, 2, 1, 1)
                     .expand(1, 2, *crop.shape[-2:]))
        src.append(crop[..., margin:-margin, margin:-margin])
        tgt.append(moved[..., margin:-margin, margin:-margin])
        shifts.append(-s)
    flow = torch.tensor(np.array(shifts), dtype=torch.float32).view(batch, 2, 1, 1).expand(batch, 2, size, size)
    return torch.cat(src), torch.cat(tgt), flow.contiguous()


def pretrain_flow(net: nn.Module, images: list[np.ndarray], steps: int = 400, batch: int = 8,
                  size: int = 32, max_shift: float = 3.0, lr: float = 1e-3, seed: int = 0) -> list[float]:
    """Supervised warm-up of a flow estimator on synthetic translations.

    A desk-scale stand-in for the pretrained flow initialization; ``images``
    are ``H x W x 3`` arrays in [0, 1]. Returns the per-step endpoint errors.
    """
    rng = np.random.default_rng(seed)
    opt = torch.optim.Adam([p for p in net.parameters() if p.requires_grad], lr=lr)
    history = []
    net.train()
    for _ in range(steps):
        source, target, flow = translation_pairs(images, batch, size, max_shift, rng)
        pred = net(source, target)
        epe = (pred - flow).norm(dim=1)[..., 4:-4, 4:-4].mean()
        opt.zero_grad()
        epe.backward()
        opt.step()
        history.append(epe.item())
    return history
