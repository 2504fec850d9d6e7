"""Joint optimization of the four networks, online fine-tuning and inference."""
from __future__ import annotations

import io as _io
import json
import logging
import math
import os
import tempfile
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import io
from .config import ExperimentConfig, write_resolved_config
from .degradation import write_kernel
from .losses import (LossBundle, generate_auxiliary_pairs, loss_kernel_boundary, loss_kernel_center,
                     loss_kernel_sparsity, loss_restoration, loss_self, rho_distance, total_loss)
from .model import GROUPS, SelfBlindVSR

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "blindvsr-checkpoint"


class TrainingAborted(RuntimeError):
    """Raised when the loss becomes non-finite."""


def lr_at_epoch(base_lr: float, epoch: int, halving_period: int) -> float:
    """Learning rate for a 1-indexed epoch, halved every ``halving_period`` epochs."""
    return base_lr * 0.5 ** ((epoch - 1) // halving_period)


def window_indices(n_frames: int, center: int, radius: int) -> list[int]:
    """Frame indices of the window around ``center`` with edge replication."""
    return [min(max(center + d, 0), n_frames - 1) for d in range(-radius, radius + 1)]


def to_tensor(frames: Sequence[np.ndarray]) -> torch.Tensor:
    return torch.from_numpy(np.stack([f.transpose(2, 0, 1) for f in frames])).float()


def build_model(cfg: ExperimentConfig) -> SelfBlindVSR:
    return SelfBlindVSR(cfg.kernel_net, cfg.flow, cfg.restoration, cfg.degradation.decimation_offset)


class WindowDataset:
    """All ``2N+1`` windows of a set of LR sequences (optionally with HR pairs).

    Sequences are kept in memory as ``(T, C, H, W)`` float tensors.
    """

    def __init__(self, lr: list[torch.Tensor], radius: int, hr: list[torch.Tensor] | None = None,
                 names: list[str] | None = None):
        self.radius = radius
        self.lr, self.hr, self.names = [], [] if hr is not None else None, []
        names = names or [f"seq{i}" for i in range(len(lr))]
        for i, seq in enumerate(lr):
            if seq.shape[0] < 2 * radius + 1:
                warnings.warn(f"skipping sequence {names[i]}: {seq.shape[0]} frames < {2 * radius + 1}",
                              stacklevel=2)
                continue
            self.lr.append(seq)
            self.names.append(names[i])
            if hr is not None:
                self.hr.append(hr[i])
        if not self.lr:
            raise io.DataError(f"no sequence has at least {2 * radius + 1} frames")
        self.windows = [(s, t) for s, seq in enumerate(self.lr) for t in range(seq.shape[0])]

    @classmethod
    def from_arrays(cls, lr_seqs, radius: int, hr_seqs=None, names=None) -> "WindowDataset":
        lr = [to_tensor(s) for s in lr_seqs]
        hr = [to_tensor(s) for s in hr_seqs] if hr_seqs is not None else None
        return cls(lr, radius, hr, names)

    @classmethod
    def from_dir(cls, root: str | Path, radius: int, with_hr: bool = False) -> "WindowDataset":
        """Load ``root`` (or ``root/lr``; HR pairs from ``root/hr`` when ``with_hr``)."""
        root = Path(root)
        lr_root = root / "lr" if (root / "lr").is_dir() else root
        seqs = io.list_sequences(lr_root)
        lr = [to_tensor(io.read_sequence(s)) for s in seqs]
        hr = None
        if with_hr:
            if not (root / "hr").is_dir():
                raise io.DataError(f"supervised training needs HR sequences in {root / 'hr'}")
            hr = [to_tensor(io.read_sequence(root / "hr" / s.name)) for s in seqs]
        return cls(lr, radius, hr, [s.name for s in seqs])

    def __len__(self) -> int:
        return len(self.windows)

    def patch_size(self, requested: int) -> int:
        return min(requested, *(min(s.shape[-2:]) for s in self.lr))

    def window(self, index: int) -> torch.Tensor:
        s, t = self.windows[index]
        seq = self.lr[s]
        return seq[window_indices(seq.shape[0], t, self.radius)]

    def batch(self, indices: Sequence[int], patch: int, scale: int,
              rng: np.random.Generator) -> tuple[torch.Tensor, torch.Tensor | None]:
        """Random crops, identical across each window, of ``patch`` LR pixels."""
        wins, hrs = [], []
        for i in indices:
            s, t = self.windows[i]
            w = self.window(i)
            h, wd = w.shape[-2:]
            top = int(rng.integers(0, h - patch + 1))
            left = int(rng.integers(0, wd - patch + 1))
            wins.append(w[..., top:top + patch, left:left + patch])
            if self.hr is not None:
                hrs.append(self.hr[s][t, :, scale * top:scale * (top + patch), scale * left:scale * (left + patch)])
        return torch.stack(wins), (torch.stack(hrs) if self.hr is not None else None)


def compute_losses(model: SelfBlindVSR, window: torch.Tensor, cfg: ExperimentConfig,
                   hr: torch.Tensor | None = None) -> tuple[LossBundle, torch.Tensor]:
    """Forward both branches for a ``(B, 2N+1, C, h, w)`` window batch.

    Returns the loss bundle (tensors) and the estimated kernels.
    """
    lc, dc = cfg.loss, cfg.degradation
    scale = cfg.scale
    kernel = model.estimate_kernel(window)

    if cfg.train.mode == "supervised":
        if hr is None:
            raise ValueError("supervised mode needs HR targets")
        fidelity = rho_distance(model.restore_window(window), hr, "l1")
        zero = fidelity.new_zeros(())
        return LossBundle(zero, zero, zero, zero, fidelity, fidelity), kernel

    center = window[:, window.shape[1] // 2]
    with torch.set_grad_enabled(torch.is_grad_enabled() and not lc.detach_in_lself):
        hr_estimate = model.restore_window(window)
    l_self = loss_self(hr_estimate, kernel, center, scale, lc.rho, lc.detach_in_lself,
                       dc.decimation_offset, dc.padding_mode)
    l_k = loss_kernel_sparsity(kernel, lc.alpha)
    l_boundary = loss_kernel_boundary(kernel)
    l_center = loss_kernel_center(kernel)
    if lc.enable_li:
        aux, target = generate_auxiliary_pairs(window, kernel, scale, dc.decimation_offset,
                                               dc.padding_mode, detach_kernel=not lc.aux_kernel_grad)
        l_i = loss_restoration(model.restore_window(aux), target, lc.rho)
    else:
        l_i = l_self.new_zeros(())
    return total_loss(LossBundle(l_self, l_k, l_boundary, l_center, l_i), lc), kernel


def _param_groups(model: SelfBlindVSR, cfg: ExperimentConfig) -> list[dict]:
    main = [p for g in ("nk", "ne", "ni") for p in getattr(model, g).parameters() if p.requires_grad]
    flow = [p for p in model.nf.parameters() if p.requires_grad]
    groups = [{"params": main, "lr": cfg.train.lr_main, "name": "main", "base_lr": cfg.train.lr_main}]
    if flow:
        groups.append({"params": flow, "lr": cfg.flow_lr, "name": "flow", "base_lr": cfg.flow_lr})
    return groups


class Trainer:
    """Owns the model, optimizer and data sampling of one training run."""

    def __init__(self, cfg: ExperimentConfig, data: WindowDataset, out_dir: str | Path | None = None,
                 model: SelfBlindVSR | None = None):
        cfg.validate()
        self.cfg = cfg
        self.data = data
        self.out_dir = Path(out_dir) if out_dir is not None else None
        torch.manual_seed(cfg.train.seed)
        self.rng = np.random.default_rng(cfg.train.seed)
        self.model = model if model is not None else build_model(cfg)
        tc = cfg.train
        self.optimizer = torch.optim.Adam(_param_groups(self.model, cfg), betas=(tc.adam_beta1, tc.adam_beta2),
                                          eps=tc.adam_eps)
        self.epoch = 1
        self.step_count = 0
        self.patch = data.patch_size(tc.patch_size) // cfg.scale * cfg.scale
        if self.patch < cfg.scale * cfg.kernel_net.kernel_size and tc.mode != "supervised":
            raise ValueError(f"LR frames of {self.patch} pixels are smaller than scale * kernel_size")
        self.history: list[dict[str, float]] = []
        self._log = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            write_resolved_config(cfg, self.out_dir)

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(len(self.data) / self.cfg.train.batch_size)

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch
        for group in self.optimizer.param_groups:
            group["lr"] = lr_at_epoch(group["base_lr"], epoch, self.cfg.train.lr_halving_period)

    def step(self, window: torch.Tensor, hr: torch.Tensor | None = None) -> LossBundle:
        self.model.train()
        bundle, kernel = compute_losses(self.model, window, self.cfg, hr)
        if not torch.isfinite(bundle.total):
            self._dump_nan(window, kernel, bundle)
        self.optimizer.zero_grad(set_to_none=True)
        bundle.total.backward()
        if self.cfg.train.clip_grad_norm:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.train.clip_grad_norm)
        self.optimizer.step()
        self.step_count += 1
        return bundle

    def _dump_nan(self, window, kernel, bundle) -> None:
        msg = f"non-finite loss at epoch {self.epoch} step {self.step_count}: {bundle.as_floats()}"
        if self.out_dir is not None:
            path = self.out_dir / "nan_dump.pt"
            torch.save({"window": window.detach(), "kernel": kernel.detach(), "losses": bundle.as_floats()}, path)
            msg += f"; offending window and kernel saved to {path}"
        raise TrainingAborted(msg)

    def run(self, max_steps: int | None = None,
            callback: Callable[["Trainer", LossBundle], None] | None = None) -> list[dict[str, float]]:
        """Train for ``cfg.train.epochs`` epochs or until ``max_steps`` steps."""
        tc = self.cfg.train
        max_steps = tc.max_steps if max_steps is None else max_steps
        log = open(self.out_dir / "train_log.jsonl", "a") if self.out_dir is not None else None
        try:
            start = self.epoch
            for epoch in range(start, tc.epochs + 1):
                if max_steps is not None and self.step_count >= max_steps:
                    break
                self.set_epoch(epoch)
                order = self.rng.permutation(len(self.data))
                for b in range(0, len(order), tc.batch_size):
                    if max_steps is not None and self.step_count >= max_steps:
                        break
                    window, hr = self.data.batch(order[b:b + tc.batch_size], self.patch, self.cfg.scale, self.rng)
                    bundle = self.step(window, hr)
                    record = {"epoch": epoch, "step": self.step_count, **bundle.as_floats()}
                    self.history.append(record)
                    if log is not None:
                        log.write(json.dumps(record) + "\n")
                        log.flush()
                    if callback is not None:
                        callback(self, bundle)
                self.epoch = epoch + 1
                if self.out_dir is not None and (epoch % tc.save_every == 0 or epoch == tc.epochs):
                    save_checkpoint(self.out_dir / "latest.pt", self.checkpoint())
        finally:
            if log is not None:
                log.close()
        return self.history

    def checkpoint(self) -> dict:
        return make_checkpoint(self.model, self.cfg, self.optimizer, self.epoch, self.step_count, self.rng)


def make_checkpoint(model: SelfBlindVSR, cfg: ExperimentConfig, optimizer=None, epoch: int = 0, step: int = 0,
                    rng: np.random.Generator | None = None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "params": {g: {k: v.detach().clone() for k, v in m.state_dict().items()} for g, m in model.groups().items()},
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "epoch": epoch,
        "step": step,
        "config": cfg.to_json(),
        "rng": {"torch": torch.get_rng_state(),
                "numpy": json.dumps(rng.bit_generator.state) if rng is not None else None},
    }


def save_checkpoint(path: str | Path, ckpt: dict) -> Path:
    """Atomically write a checkpoint (temporary file in the same directory, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            torch.save(ckpt, f)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_checkpoint(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(ckpt, dict) or ckpt.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    return ckpt


def model_from_checkpoint(ckpt: dict) -> tuple[SelfBlindVSR, ExperimentConfig]:
    cfg = ExperimentConfig.from_dict(json.loads(ckpt["config"]))
    model = build_model(cfg)
    for g in GROUPS:
        getattr(model, g).load_state_dict(ckpt["params"][g])
    return model, cfg


def parameter_bytes(ckpt: dict) -> bytes:
    """Serialized parameter groups; identical for bit-identical parameters."""
    buf = _io.BytesIO()
    for g in GROUPS:
        for name, t in sorted(ckpt["params"][g].items()):
            buf.write(f"{g}/{name}:{tuple(t.shape)}:{t.dtype}\n".encode())
            buf.write(t.contiguous().numpy().tobytes())
    return buf.getvalue()


def train(dataset_dir: str | Path, cfg: ExperimentConfig, out_dir: str | Path | None = None) -> dict:
    """Train from a dataset directory; checkpoints go to ``out_dir/latest.pt`` per epoch."""
    cfg.validate()
    out_dir = Path(out_dir) if out_dir is not None else Path(cfg.output_root) / cfg.name
    data = WindowDataset.from_dir(dataset_dir, cfg.temporal_radius, with_hr=cfg.train.mode == "supervised")
    trainer = Trainer(cfg, data, out_dir)
    trainer.run()
    ckpt = trainer.checkpoint()
    save_checkpoint(out_dir / "final.pt", ckpt)
    return ckpt


@torch.no_grad()
def mean_losses(model: SelfBlindVSR, data: WindowDataset, cfg: ExperimentConfig) -> dict[str, float]:
    """Loss bundle averaged over every window of ``data`` on full frames."""
    model.eval()
    sums: dict[str, float] = {}
    s = cfg.scale
    for i in range(len(data)):
        window = data.window(i)
        # auxiliary re-degradation needs frame sides divisible by the scale
        window = window[..., :window.shape[-2] // s * s, :window.shape[-1] // s * s]
        bundle, _ = compute_losses(model, window[None], cfg)
        for k, v in bundle.as_floats().items():
            sums[k] = sums.get(k, 0.0) + v
    return {k: v / len(data) for k, v in sums.items()}


@torch.no_grad()
def super_resolve(model: SelfBlindVSR, frames: torch.Tensor) -> tuple[list[torch.Tensor], list[torch.Tensor]]:
    """Restore every frame of a ``(T, C, h, w)`` sequence; returns HR frames and kernels."""
    model.eval()
    t = frames.shape[0]
    hr, kernels = [], []
    for i in range(t):
        window = frames[window_indices(t, i, model.temporal_radius)][None]
        kernels.append(model.estimate_kernel(window)[0])
        hr.append(model.restore_window(window)[0])
    return hr, kernels


def infer(checkpoint: str | Path | dict, lr_dir: str | Path, out_dir: str | Path) -> list[Path]:
    """Write one HR PNG per input frame plus per-window kernels under ``kernels/``."""
    ckpt = load_checkpoint(checkpoint) if not isinstance(checkpoint, dict) else checkpoint
    model, _ = model_from_checkpoint(ckpt)
    out_dir = Path(out_dir)
    written = []
    seqs = io.list_sequences(lr_dir)
    for seq in seqs:
        dest = out_dir if len(seqs) == 1 and seq == Path(lr_dir) else out_dir / seq.name
        frames = to_tensor(io.read_sequence(seq))
        hr, kernels = super_resolve(model, frames)
        written += io.write_sequence(dest, [x.permute(1, 2, 0).double().numpy() for x in hr])
        (dest / "kernels").mkdir(parents=True, exist_ok=True)
        for i, k in enumerate(kernels):
            write_kernel(dest / "kernels" / f"{i:08d}.txt", k.double())
    return written


@dataclass
class FinetuneResult:
    checkpoint: dict
    before: dict[str, float]
    after: dict[str, float]


def finetune(checkpoint: str | Path | dict, real_lr_dir: str | Path, out_dir: str | Path | None = None,
             steps: int = 100, lr_main: float = 1e-5, lr_flow: float | None = None,
             batch_size: int | None = None, seed: int | None = None,
             data: WindowDataset | None = None) -> FinetuneResult:
    """Self-supervised adaptation of a trained checkpoint on unlabeled LR videos.

    Writes ``before/`` and ``after/`` inference results to ``out_dir`` for
    side-by-side inspection, and the adapted checkpoint to ``out_dir/finetuned.pt``.
    """
    ckpt = load_checkpoint(checkpoint) if not isinstance(checkpoint, dict) else checkpoint
    model, cfg = model_from_checkpoint(ckpt)
    cfg.train.mode = "self_supervised"
    cfg.train.lr_main = lr_main
    cfg.train.lr_flow = lr_flow if lr_flow is not None else lr_main * 0.01
    cfg.train.max_steps = steps
    cfg.train.epochs = max(cfg.train.epochs, 1)
    if batch_size is not None:
        cfg.train.batch_size = batch_size
    if seed is not None:
        cfg.train.seed = seed
    if data is None:
        data = WindowDataset.from_dir(real_lr_dir, cfg.temporal_radius)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        infer(ckpt, real_lr_dir, out / "before")
    before = mean_losses(model, data, cfg)
    trainer = Trainer(cfg, data, out, model=model)
    # step budget, not epochs, bounds fine-tuning
    cfg.train.epochs = max(cfg.train.epochs, math.ceil(steps / max(trainer.steps_per_epoch, 1)) + 1)
    trainer.run(max_steps=steps)
    after = mean_losses(model, data, cfg)
    new_ckpt = trainer.checkpoint()
    if out is not None:
        save_checkpoint(out / "finetuned.pt", new_ckpt)
        infer(new_ckpt, real_lr_dir, out / "after")
    return FinetuneResult(new_ckpt, before, after)
