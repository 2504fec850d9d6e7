"""Frame-directory ingestion and dataset validation.

A sequence is a directory of 8-bit PNG frames named ``%08d.png``; a dataset
is a directory of sequence directories.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

FRAME_PATTERN = "{:08d}.png"


class DataError(Exception):
    """Input data is missing, unreadable or inconsistent."""


def read_frame(path: str | Path) -> np.ndarray:
    """Decode an image to an ``H x W x 3`` float64 array in [0, 1]."""
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I;16B", "I"):
                raise DataError(f"{path}: only 8-bit images are supported, got mode {im.mode}")
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except DataError:
        raise
    except Exception as exc:
        raise DataError(f"cannot decode frame {path}: {exc}") from exc
    return arr


def write_frame(path: str | Path, frame: np.ndarray) -> None:
    """Write a float frame as 8-bit PNG; clamping to [0, 1] happens here only."""
    arr = np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0)
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=-1)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8)).save(path)


def frame_paths(seq_dir: str | Path) -> list[Path]:
    return sorted(p for p in Path(seq_dir).iterdir() if p.suffix.lower() == ".png")


def read_sequence(seq_dir: str | Path) -> list[np.ndarray]:
    paths = frame_paths(seq_dir)
    if not paths:
        raise DataError(f"no PNG frames in {seq_dir}")
    frames = [read_frame(p) for p in paths]
    shapes = {f.shape for f in frames}
    if len(shapes) > 1:
        raise DataError(f"frames in {seq_dir} differ in shape: {sorted(shapes)}")
    return frames


def write_sequence(seq_dir: str | Path, frames: Sequence[np.ndarray]) -> list[Path]:
    seq_dir = Path(seq_dir)
    seq_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(frames):
        p = seq_dir / FRAME_PATTERN.format(i)
        write_frame(p, frame)
        paths.append(p)
    return paths


def list_sequences(root: str | Path) -> list[Path]:
    """Sequence directories below ``root``; ``root`` itself if it holds frames."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset directory not found: {root}")
    if frame_paths(root):
        return [root]
    seqs = sorted(p for p in root.iterdir() if p.is_dir() and frame_paths(p))
    if not seqs:
        raise DataError(f"no sequence directories with PNG frames in {root}")
    return seqs


@dataclass
class SequenceSummary:
    name: str
    n_frames: int
    resolution: tuple[int, int] | None


@dataclass
class DatasetSummary:
    root: str
    sequences: list[SequenceSummary] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def validate_dataset(root: str | Path, temporal_radius: int = 2) -> DatasetSummary:
    """Decode every frame under ``root`` and check window-length requirements.

    Every problem is collected; a :class:`DataError` listing all of them is
    raised at the end if there was any.
    """
    summary = DatasetSummary(root=str(root))
    for seq in list_sequences(root):
        shapes = set()
        paths = frame_paths(seq)
        for p in paths:
            try:
                shapes.add(read_frame(p).shape[:2])
            except DataError as exc:
                summary.failures.append(str(exc))
        if len(shapes) > 1:
            summary.failures.append(f"{seq}: frames differ in resolution {sorted(shapes)}")
        if len(paths) < 2 * temporal_radius + 1:
            summary.failures.append(
                f"{seq}: {len(paths)} frames, need at least {2 * temporal_radius + 1} for N={temporal_radius}")
        res = next(iter(shapes)) if len(shapes) == 1 else None
        summary.sequences.append(SequenceSummary(seq.name, len(paths), res))
    if summary.failures:
        err = DataError("dataset validation failed:\n  " + "\n  ".join(summary.failures))
        err.summary = summary
        raise err
    return summary
