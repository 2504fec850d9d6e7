"""Small synthetic video benchmarks built from bundled natural images.

Each toy HR video is a crop window panning across one of scikit-image's
sample photographs, moving a whole number of HR pixels per frame.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from skimage import data as skdata

from .degradation import DegradationConfig, degrade_sequence, make_gaussian_kernel

IMAGES = ("astronaut", "coffee", "chelsea", "rocket", "immunohistochemistry", "hubble_deep_field")


def sample_image(name: str) -> np.ndarray:
    img = np.asarray(getattr(skdata, name)(), dtype=np.float64) / 255.0
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=-1)
    return img[..., :3]


def panning_sequence(image: np.ndarray, n_frames: int, size: int, step: tuple[int, int],
                     start: tuple[int, int] | None = None) -> list[np.ndarray]:
    """``n_frames`` crops of ``size x size`` moving by ``step = (dy, dx)`` per frame."""
    h, w = image.shape[:2]
    dy, dx = step
    span_y, span_x = abs(dy) * (n_frames - 1), abs(dx) * (n_frames - 1)
    if size + span_y > h or size + span_x > w:
        raise ValueError(f"image {h}x{w} too small for {n_frames} frames of {size} moving by {step}")
    if start is None:
        start = ((h - size - span_y) // 2 + (span_y if dy < 0 else 0),
                 (w - size - span_x) // 2 + (span_x if dx < 0 else 0))
    y0, x0 = start
    return [image[y0 + t * dy:y0 + t * dy + size, x0 + t * dx:x0 + t * dx + size].copy()
            for t in range(n_frames)]


@dataclass
class ToyBenchmark:
    hr: list[list[np.ndarray]]
    lr: list[list[np.ndarray]]
    kernel: np.ndarray
    scale: int


def make_toy_benchmark(n_sequences: int = 2, n_frames: int = 10, lr_size: int = 64, scale: int = 4,
                       sigma: float = 1.2, kernel_size: int = 13, images: tuple[str, ...] = IMAGES,
                       seed: int = 0, kernel: np.ndarray | None = None) -> ToyBenchmark:
    """HR/LR sequence pairs degraded with one isotropic Gaussian kernel (noise free)."""
    rng = np.random.default_rng(seed)
    if kernel is None:
        kernel = make_gaussian_kernel(kernel_size, sigma, sigma)
    cfg = DegradationConfig(scale=scale)
    hr_seqs, lr_seqs = [], []
    for i in range(n_sequences):
        img = sample_image(images[i % len(images)])
        step = tuple(int(v) for v in rng.choice([-3, -2, 2, 3], size=2))
        hr = panning_sequence(img, n_frames, lr_size * scale, step)
        hr_seqs.append(hr)
        lr_seqs.append(degrade_sequence(hr, kernel, cfg))
    return ToyBenchmark(hr_seqs, lr_seqs, kernel, scale)


def translation_images(names: tuple[str, ...] = IMAGES[:4]) -> list[np.ndarray]:
    return [sample_image(n) for n in names]
