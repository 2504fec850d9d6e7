"""Fidelity metrics and kernel-quality evaluation.

SSIM constants (pinned): luminance ``Y = 0.299 R + 0.587 G + 0.114 B`` in
[0, 1], 11x11 Gaussian window with sigma 1.5, ``C1 = (0.01)^2``,
``C2 = (0.03)^2``, population (biased) local moments, mean over the
``valid`` region where the window fits entirely inside the image.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import correlate2d

from . import io
from .degradation import DegradationConfig, degrade_sequence, validate_kernel

LUMA = np.array([0.299, 0.587, 0.114])
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _pair(a, b, crop_border: int = 0) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if crop_border:
        a = a[crop_border:-crop_border, crop_border:-crop_border]
        b = b[crop_border:-crop_border, crop_border:-crop_border]
    return a, b


def psnr(a, b, crop_border: int = 0) -> float:
    """PSNR in dB for data range 1; ``inf`` for identical frames."""
    a, b = _pair(a, b, crop_border)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def luminance(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    return frame @ LUMA if frame.ndim == 3 else frame


def ssim(a, b, crop_border: int = 0) -> float:
    """Mean local SSIM on luminance (see module docstring for constants)."""
    a, b = _pair(a, b, crop_border)
    x, y = luminance(a), luminance(b)
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {x.shape}")
    w = gaussian_window()

    def filt(img):
        return correlate2d(img, w, mode="valid")

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
    return float(np.mean(num / den))


def kernel_ncc(estimated, reference) -> float:
    """Cosine similarity of two kernels, zero-padded to a common centered size."""
    a = np.asarray(estimated, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    size = max(a.shape[0], b.shape[0])

    def pad(k):
        p = (size - k.shape[0]) // 2
        return np.pad(k, p)

    a, b = pad(a), pad(b)
    return float((a * b).sum() / (np.linalg.norm(a) * np.linalg.norm(b)))


@dataclass
class MetricReport:
    per_frame_psnr: list[float] = field(default_factory=list)
    per_frame_ssim: list[float] = field(default_factory=list)
    per_sequence: dict[str, dict[str, float]] = field(default_factory=dict)
    psnr: float = float("nan")
    ssim: float = float("nan")
    regenerated_psnr: float | None = None
    regenerated_ssim: float | None = None
    kernel_ncc: float | None = None

    def to_json(self) -> str:
        # inf/nan are not JSON; emit them as strings
        def clean(v):
            if isinstance(v, float) and not np.isfinite(v):
                return str(v)
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, list):
                return [clean(x) for x in v]
            return v
        return json.dumps(clean(asdict(self)), indent=2)


def _mean_db(values: Sequence[float]) -> float:
    # any identical pair makes the mean infinite, which is the sentinel we want
    return float(np.mean(values)) if values else float("nan")


def evaluate_frames(pred: Sequence[np.ndarray], gt: Sequence[np.ndarray], crop_border: int = 0) -> MetricReport:
    if len(pred) != len(gt):
        raise ValueError(f"{len(pred)} predicted frames vs {len(gt)} ground-truth frames")
    report = MetricReport()
    for p, g in zip(pred, gt):
        report.per_frame_psnr.append(psnr(p, g, crop_border))
        report.per_frame_ssim.append(ssim(p, g, crop_border))
    report.psnr = _mean_db(report.per_frame_psnr)
    report.ssim = float(np.mean(report.per_frame_ssim))
    return report


def evaluate_regenerated_lr(estimated_kernel, hr_gt: Sequence[np.ndarray], lr_obs: Sequence[np.ndarray],
                            cfg: DegradationConfig | None = None, true_kernel=None) -> MetricReport:
    """Score a kernel by re-degrading the ground-truth HR video and comparing to the observed LR.

    Each HR frame is degraded independently with noise disabled.
    """
    cfg = cfg or DegradationConfig()
    clean = DegradationConfig(cfg.scale, 0.0, cfg.decimation_offset, cfg.padding_mode)
    kernel = np.asarray(estimated_kernel, dtype=np.float64)
    validate_kernel(kernel)
    if len(hr_gt) != len(lr_obs):
        raise ValueError(f"{len(hr_gt)} HR frames vs {len(lr_obs)} observed LR frames")
    for h, l in zip(hr_gt, lr_obs):
        if h.shape[0] != cfg.scale * l.shape[0] or h.shape[1] != cfg.scale * l.shape[1]:
            raise ValueError(f"HR frame {h.shape} is not {cfg.scale}x the LR frame {l.shape}")
    regenerated = degrade_sequence(hr_gt, kernel, clean)
    report = evaluate_frames(regenerated, lr_obs)
    report.regenerated_psnr = report.psnr
    report.regenerated_ssim = report.ssim
    if true_kernel is not None:
        report.kernel_ncc = kernel_ncc(kernel, true_kernel)
    return report


def evaluate_dirs(pred_dir: str | Path, gt_dir: str | Path, crop_border: int = 0) -> MetricReport:
    """PSNR/SSIM between matching sequences of two frame directories."""
    pred_seqs = io.list_sequences(pred_dir)
    gt_root = Path(gt_dir)
    report = MetricReport()
    for seq in pred_seqs:
        gt_seq = gt_root if seq == Path(pred_dir) else gt_root / seq.name
        r = evaluate_frames(io.read_sequence(seq), io.read_sequence(gt_seq), crop_border)
        report.per_frame_psnr += r.per_frame_psnr
        report.per_frame_ssim += r.per_frame_ssim
        report.per_sequence[seq.name] = {"psnr": r.psnr, "ssim": r.ssim}
    report.psnr = _mean_db(report.per_frame_psnr)
    report.ssim = float(np.mean(report.per_frame_ssim))
    return report
