"""Image formation model: kernel synthesis, blurring, decimation and noise.

Frames are handled in two layouts:

* numpy arrays ``H x W x C`` (file-side, float in [0, 1]);
* torch tensors ``(..., C, H, W)`` (network-side, differentiable).

``blur`` and ``decimate`` accept either and return the same kind they were
given. Blurring is a correlation (the kernel is not flipped), so kernels are
stored in exactly the orientation in which they are applied.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

logger = logging.getLogger(__name__)

PADDING_MODES = ("reflect", "replicate")
KERNEL_SUFFIXES = (".txt", ".pt")


class KernelParseError(ValueError):
    """A kernel file could not be parsed."""


@dataclass
class DegradationConfig:
    scale: int = 4
    noise_sigma: float = 0.0
    decimation_offset: int = 0
    padding_mode: str = "reflect"

    def validate(self) -> None:
        if self.scale < 1:
            raise ValueError(f"scale must be >= 1, got {self.scale}")
        if not 0 <= self.decimation_offset < self.scale:
            raise ValueError(
                f"decimation_offset must lie in [0, scale={self.scale}), got {self.decimation_offset}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.padding_mode not in PADDING_MODES:
            raise ValueError(f"padding_mode must be one of {PADDING_MODES}, got {self.padding_mode!r}")


def make_gaussian_kernel(size: int, sigma_x: float, sigma_y: float, theta: float = 0.0) -> np.ndarray:
    """Anisotropic Gaussian sampled at integer offsets from the center pixel.

    The principal axes are rotated by ``theta`` radians; the result is
    normalized to sum to one.
    """
    if size % 2 == 0 or not 3 <= size <= 31:
        raise ValueError(f"kernel size must be odd and in [3, 31], got {size}")
    for name, s in (("sigma_x", sigma_x), ("sigma_y", sigma_y)):
        if not 0 < s <= 10:
            raise ValueError(f"{name} must lie in (0, 10], got {s}")

    c = size // 2
    yy, xx = np.mgrid[-c:c + 1, -c:c + 1].astype(np.float64)
    cos, sin = np.cos(theta), np.sin(theta)
    u = cos * xx + sin * yy
    v = -sin * xx + cos * yy
    # shift by the minimum exponent so tiny sigmas do not underflow to 0/0
    e = u ** 2 / (2 * sigma_x ** 2) + v ** 2 / (2 * sigma_y ** 2)
    g = np.exp(-(e - e.min()))
    return g / g.sum()


def validate_kernel(kernel, atol: float = 1e-5) -> None:
    k = np.asarray(kernel.detach().cpu() if torch.is_tensor(kernel) else kernel)
    if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
        raise ValueError(f"kernel must be a square array with odd size, got shape {k.shape}")
    if not np.all(np.isfinite(k)):
        raise ValueError("kernel contains non-finite values")
    if np.any(k < 0):
        raise ValueError("kernel contains negative weights")
    if abs(k.sum() - 1.0) > atol:
        raise ValueError(f"kernel must sum to 1, sums to {k.sum():.8f}")


def read_kernel(path: str | Path) -> np.ndarray:
    """Read a kernel file (plain text or a torch-saved 2-D tensor/array).

    The text format is a first line holding the odd size ``k``, followed by
    ``k`` rows of ``k`` whitespace-separated reals.
    """
    path = Path(path)
    try:
        if path.suffix == ".pt":
            obj = torch.load(path, map_location="cpu", weights_only=True)
            k = np.asarray(obj.numpy() if torch.is_tensor(obj) else obj, dtype=np.float64)
        else:
            lines = [ln.split() for ln in path.read_text().splitlines() if ln.strip()]
            size = int(lines[0][0])
            if len(lines[0]) != 1:
                raise ValueError("first line must hold only the kernel size")
            rows = lines[1:]
            if len(rows) != size or any(len(r) != size for r in rows):
                raise ValueError(f"expected {size} rows of {size} values")
            k = np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
    except (ValueError, IndexError, RuntimeError, OSError) as exc:
        raise KernelParseError(f"cannot parse kernel file {path}: {exc}") from exc
    if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
        raise KernelParseError(f"cannot parse kernel file {path}: not a square odd-sized array {k.shape}")
    return k


def write_kernel(path: str | Path, kernel) -> None:
    k = np.asarray(kernel.detach().cpu() if torch.is_tensor(kernel) else kernel, dtype=np.float64)
    lines = [str(k.shape[0])] + [" ".join(f"{v:.10e}" for v in row) for row in k]
    Path(path).write_text("\n".join(lines) + "\n")


def load_kernel_bank(path: str | Path) -> list[np.ndarray]:
    """Load every kernel file in a directory, renormalized to sum to one.

    Kernels with negative weights are skipped with a warning.
    """
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"kernel bank directory not found: {path}")
    files = sorted(p for p in path.iterdir() if p.suffix in KERNEL_SUFFIXES)
    if not files:
        raise FileNotFoundError(f"no kernel files ({', '.join(KERNEL_SUFFIXES)}) in {path}")

    bank = []
    for f in files:
        k = read_kernel(f)
        if np.any(k < 0) or not np.all(np.isfinite(k)):
            warnings.warn(f"rejecting kernel {f}: negative or non-finite weights", stacklevel=2)
            continue
        total = k.sum()
        if total <= 0:
            warnings.warn(f"rejecting kernel {f}: weights sum to zero", stacklevel=2)
            continue
        bank.append(k / total)
    if not bank:
        raise FileNotFoundError(f"no valid kernels in {path}")
    return bank


def _blur_tensor(x: torch.Tensor, kernel: torch.Tensor, padding_mode: str) -> torch.Tensor:
    # x: (B, C, H, W); kernel: (k, k) shared or (B, k, k) per sample
    b, c, h, w = x.shape
    k = kernel.shape[-1]
    if k > h or k > w:
        raise ValueError(f"kernel of size {k} is larger than the {h}x{w} frame")
    if padding_mode not in PADDING_MODES:
        raise ValueError(f"padding_mode must be one of {PADDING_MODES}, got {padding_mode!r}")
    kernel = kernel.to(x.dtype)
    if kernel.dim() == 2:
        kernel = kernel.expand(b, k, k)
    elif kernel.shape[0] != b:
        raise ValueError(f"got {kernel.shape[0]} kernels for a batch of {b}")
    p = k // 2
    xp = F.pad(x, (p, p, p, p), mode=padding_mode)
    weight = kernel.repeat_interleave(c, dim=0).unsqueeze(1)
    out = F.conv2d(xp.reshape(1, b * c, h + 2 * p, w + 2 * p), weight, groups=b * c)
    return out.reshape(b, c, h, w)


def blur(frame, kernel, padding_mode: str = "reflect"):
    """Correlate each channel with ``kernel`` keeping the spatial size.

    ``frame`` is either an ``H x W x C`` array (``kernel`` a 2-D array) or a
    tensor ``(..., C, H, W)``; for a 4-D tensor batch, ``kernel`` may be
    ``(B, k, k)`` to blur every sample with its own kernel.
    """
    if torch.is_tensor(frame):
        kernel = torch.as_tensor(kernel, device=frame.device)
        lead = frame.shape[:-3]
        x = frame.reshape(-1, *frame.shape[-3:])
        if kernel.dim() == 3 and x.shape[0] != kernel.shape[0]:
            raise ValueError("per-sample kernels require a (B, C, H, W) batch")
        return _blur_tensor(x, kernel, padding_mode).reshape(*lead, *frame.shape[-3:])

    arr = np.asarray(frame, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[..., None]
    x = torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))[None]
    k = torch.as_tensor(np.asarray(kernel, dtype=np.float64))
    out = _blur_tensor(x, k, padding_mode)[0].numpy().transpose(1, 2, 0)
    return out[..., 0] if squeeze else out


def decimate(frame, scale: int, offset: int = 0):
    """Keep pixels ``(scale*i + offset, scale*j + offset)``."""
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    if not 0 <= offset < scale:
        raise ValueError(f"offset must lie in [0, {scale}), got {offset}")
    if torch.is_tensor(frame):
        h, w = frame.shape[-2:]
        if h % scale or w % scale:
            raise ValueError(f"frame size {h}x{w} is not divisible by scale {scale}")
        return frame[..., offset::scale, offset::scale]
    h, w = frame.shape[:2]
    if h % scale or w % scale:
        raise ValueError(f"frame size {h}x{w} is not divisible by scale {scale}")
    return frame[offset::scale, offset::scale]


def modcrop(frame: np.ndarray, scale: int) -> np.ndarray:
    """Center-crop an ``H x W x C`` frame so both sides are multiples of ``scale``."""
    h, w = frame.shape[:2]
    dh, dw = h % scale, w % scale
    top, left = dh // 2, dw // 2
    return frame[top:h - (dh - top), left:w - (dw - left)]


def degrade_sequence(hr: Sequence[np.ndarray], kernel, cfg: DegradationConfig,
                     rng_seed: int | None = None) -> list[np.ndarray]:
    """Blur, decimate and add Gaussian noise to every frame with one kernel."""
    cfg.validate()
    validate_kernel(kernel)
    shapes = {f.shape for f in hr}
    if len(shapes) > 1:
        raise ValueError(f"frames of a sequence must share one shape, got {sorted(shapes)}")
    rng = np.random.default_rng(rng_seed)
    out = []
    for frame in hr:
        lr = decimate(blur(frame, kernel, cfg.padding_mode), cfg.scale, cfg.decimation_offset)
        if cfg.noise_sigma > 0:
            lr = lr + rng.normal(0.0, cfg.noise_sigma, size=lr.shape)
        out.append(lr)
    return out
