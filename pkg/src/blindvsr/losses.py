"""Self-supervised objective: auxiliary pairs, kernel priors and the total loss.

Image losses use mean pixel reduction so that the weights are resolution
independent. Kernel losses are summed over the kernel and averaged over the
batch.

Gradient routing:

* the reconstruction loss against the LR input sees a detached HR estimate
  (``detach_in_lself``), so it only trains the kernel network;
* auxiliary pairs are built with a detached kernel (``aux_kernel_grad`` off),
  so the restoration loss only trains the feature/flow/restoration path.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import torch

from .degradation import blur, decimate

RHO = ("l1", "l2")
# The sparsity weight 0.04 is calibrated for a per-element mean of |w|^alpha;
# loss_kernel_sparsity sums over the 13x13 kernel, so the default divides by 13^2.
GAMMA_PER_ELEMENT = 0.04
DEFAULT_GAMMA = GAMMA_PER_ELEMENT / 13 ** 2


@dataclass
class LossConfig:
    lam: float = 1.0
    gamma: float = DEFAULT_GAMMA
    alpha: float = 0.5
    rho: str = "l1"
    boundary_weight: float = 0.5
    center_weight: float = 1.0
    detach_in_lself: bool = True
    enable_li: bool = True
    enable_lk: bool = True
    aux_kernel_grad: bool = False

    def validate(self) -> None:
        for name in ("lam", "gamma", "boundary_weight", "center_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.rho not in RHO:
            raise ValueError(f"rho must be one of {RHO}, got {self.rho!r}")


@dataclass
class LossBundle:
    l_self: float | torch.Tensor = 0.0
    l_k: float | torch.Tensor = 0.0
    l_boundary: float | torch.Tensor = 0.0
    l_center: float | torch.Tensor = 0.0
    l_i: float | torch.Tensor = 0.0
    total: float | torch.Tensor = 0.0

    def as_floats(self) -> dict[str, float]:
        return {f.name: float(torch.as_tensor(getattr(self, f.name)).detach()) for f in fields(self)}


def rho_distance(a: torch.Tensor, b: torch.Tensor, rho: str = "l1") -> torch.Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    d = a - b
    if rho == "l1":
        return d.abs().mean()
    if rho == "l2":
        return (d * d).mean()
    raise ValueError(f"rho must be one of {RHO}, got {rho!r}")


def generate_auxiliary_pairs(lr_window: torch.Tensor, kernel: torch.Tensor, scale: int,
                             offset: int = 0, padding_mode: str = "reflect",
                             detach_kernel: bool = True) -> tuple[torch.Tensor, torch.Tensor]:
    """Degrade every LR frame of the window with the estimated kernel.

    ``lr_window`` is ``(B, T, C, h, w)`` (or ``(T, C, h, w)``) and ``kernel``
    ``(B, k, k)`` (or ``(k, k)``). Returns ``(aux_window, target)`` where the
    target is the untouched center LR frame.
    """
    squeeze = lr_window.dim() == 4
    if squeeze:
        lr_window = lr_window[None]
        kernel = kernel[None] if kernel.dim() == 2 else kernel
    b, t, c, h, w = lr_window.shape
    k = kernel.shape[-1]
    if h < scale * k or w < scale * k:
        raise ValueError(
            f"LR frames of {h}x{w} are too small for a {k}x{k} kernel at scale {scale}; "
            f"use LR patches of at least {scale * k} pixels (increase patch_size)")
    if detach_kernel:
        kernel = kernel.detach()
    if kernel.dim() == 3:
        kernel = kernel.repeat_interleave(t, dim=0)
    frames = lr_window.reshape(b * t, c, h, w)
    aux = decimate(blur(frames, kernel, padding_mode), scale, offset)
    aux = aux.reshape(b, t, c, h // scale, w // scale)
    target = lr_window[:, t // 2]
    if squeeze:
        return aux[0], target[0]
    return aux, target


def loss_self(hr_estimate: torch.Tensor, kernel: torch.Tensor, observed: torch.Tensor,
              scale: int, rho: str = "l1", detach: bool = True, offset: int = 0,
              padding_mode: str = "reflect") -> torch.Tensor:
    """``rho(decimate(blur(x, K)) - y)``; ``detach`` cuts the path into ``x``."""
    if hr_estimate.shape[-2] != scale * observed.shape[-2] or hr_estimate.shape[-1] != scale * observed.shape[-1]:
        raise ValueError(
            f"HR estimate {tuple(hr_estimate.shape)} is not {scale}x the observed frame {tuple(observed.shape)}")
    x = hr_estimate.detach() if detach else hr_estimate
    regenerated = decimate(blur(x, kernel, padding_mode), scale, offset)
    return rho_distance(regenerated, observed, rho)


def loss_kernel_sparsity(kernel: torch.Tensor, alpha: float = 0.5) -> torch.Tensor:
    """Hyper-Laplacian penalty ``sum |w|^alpha`` (subgradient 0 at w = 0)."""
    w = kernel.abs()
    nz = w > 0
    safe = torch.where(nz, w, torch.ones_like(w))
    val = torch.where(nz, safe ** alpha, torch.zeros_like(w))
    return val.sum(dim=(-2, -1)).mean()


def boundary_mask(size: int, dtype=torch.float64, device=None) -> torch.Tensor:
    """0 inside the centered box of half the half-extent, linear ramp to 1 at the edge.

    Distances are Chebyshev distances from the center pixel.
    """
    c = (size - 1) / 2
    if c == 0:
        return torch.zeros(1, 1, dtype=dtype, device=device)
    inner = c / 2
    r = torch.arange(size, dtype=dtype, device=device) - c
    d = torch.maximum(r.abs()[:, None], r.abs()[None, :])
    return ((d - inner) / (c - inner)).clamp(0.0, 1.0)


def loss_kernel_boundary(kernel: torch.Tensor) -> torch.Tensor:
    mask = boundary_mask(kernel.shape[-1], kernel.dtype, kernel.device)
    return (kernel * mask).sum(dim=(-2, -1)).mean()


def loss_kernel_center(kernel: torch.Tensor) -> torch.Tensor:
    """Squared pixel distance between the kernel's center of mass and its center."""
    size = kernel.shape[-1]
    r = torch.arange(size, dtype=kernel.dtype, device=kernel.device) - (size - 1) / 2
    mass = kernel.sum(dim=(-2, -1))
    com_y = (kernel.sum(dim=-1) * r).sum(dim=-1) / mass
    com_x = (kernel.sum(dim=-2) * r).sum(dim=-1) / mass
    return (com_x ** 2 + com_y ** 2).mean()


def loss_restoration(aux_output: torch.Tensor, target: torch.Tensor, rho: str = "l1") -> torch.Tensor:
    return rho_distance(aux_output, target, rho)


def total_loss(parts: LossBundle, cfg: LossConfig) -> LossBundle:
    """Weighted sum of the parts; disabled terms contribute exactly nothing."""
    total = parts.l_self + cfg.boundary_weight * parts.l_boundary + cfg.center_weight * parts.l_center
    if cfg.enable_li:
        total = total + cfg.lam * parts.l_i
    if cfg.enable_lk:
        total = total + cfg.gamma * parts.l_k
    return LossBundle(parts.l_self, parts.l_k, parts.l_boundary, parts.l_center, parts.l_i, total)
