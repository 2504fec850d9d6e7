"""Experiment configuration: merged module configs, JSON files and overrides.

A config file is a JSON object with optional sections ``degradation``,
``kernel_net``, ``flow``, ``restoration``, ``loss`` and ``train``, plus the
top-level keys ``name``, ``output_root`` and the shared shortcuts ``scale``
and ``n`` (temporal radius), which are written into every section that
carries the field. Precedence: section values < top-level shortcuts <
command-line overrides.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .degradation import DegradationConfig
from .flow import FlowProviderConfig
from .kernel_net import KernelNetConfig
from .losses import LossConfig
from .restoration import RestorationConfig

MODES = ("self_supervised", "supervised", "finetune")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass
class TrainConfig:
    lr_main: float = 1e-4
    lr_flow: float | None = None  # None: 1e-6 for a pretrained flow, 1e-4 for the builtin one
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 200
    lr_halving_period: int = 100
    batch_size: int = 8
    patch_size: int = 64
    temporal_radius: int = 2
    seed: int = 0
    mode: str = "self_supervised"
    max_steps: int | None = None
    clip_grad_norm: float | None = None
    save_every: int = 1

    def validate(self) -> None:
        if self.lr_main <= 0 or (self.lr_flow is not None and self.lr_flow <= 0):
            raise ConfigError("learning rates must be > 0")
        if self.epochs < 1:
            raise ConfigError(f"train.epochs must be >= 1, got {self.epochs}")
        if self.lr_halving_period < 1:
            raise ConfigError(f"train.lr_halving_period must be >= 1, got {self.lr_halving_period}")
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size must be >= 1, got {self.batch_size}")
        if self.mode not in MODES:
            raise ConfigError(f"train.mode must be one of {MODES}, got {self.mode!r}")
        if self.max_steps is not None and self.max_steps < 0:
            raise ConfigError(f"train.max_steps must be >= 0, got {self.max_steps}")


SECTIONS = {
    "degradation": DegradationConfig,
    "kernel_net": KernelNetConfig,
    "flow": FlowProviderConfig,
    "restoration": RestorationConfig,
    "loss": LossConfig,
    "train": TrainConfig,
}
SHARED = {
    "scale": [("degradation", "scale"), ("restoration", "scale")],
    "n": [("kernel_net", "temporal_radius"), ("train", "temporal_radius")],
}


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    output_root: str = "runs"
    degradation: DegradationConfig = field(default_factory=DegradationConfig)
    kernel_net: KernelNetConfig = field(default_factory=KernelNetConfig)
    flow: FlowProviderConfig = field(default_factory=FlowProviderConfig)
    restoration: RestorationConfig = field(default_factory=RestorationConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    @property
    def scale(self) -> int:
        return self.degradation.scale

    @property
    def temporal_radius(self) -> int:
        return self.kernel_net.temporal_radius

    @property
    def flow_lr(self) -> float:
        base = self.train.lr_flow
        if base is None:
            base = 1e-6 if self.flow.backend == "pretrained_external" else 1e-4
        return base * self.flow.lr_scale

    def validate(self) -> "ExperimentConfig":
        for name in SECTIONS:
            try:
                getattr(self, name).validate()
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"{name}: {exc}") from exc
        for key, targets in SHARED.items():
            values = {f"{s}.{f}": getattr(getattr(self, s), f) for s, f in targets}
            if len(set(values.values())) > 1:
                a, b = values
                raise ConfigError(f"inconsistent {a}={values[a]} and {b}={values[b]}")
        need = self.scale * self.kernel_net.kernel_size
        if self.train.patch_size < need:
            raise ConfigError(
                f"train.patch_size={self.train.patch_size} is smaller than "
                f"degradation.scale * kernel_net.kernel_size = {need}")
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        cfg = cls()
        apply_overrides(cfg, data)
        return cfg


def _set_section(cfg: ExperimentConfig, section: str, values: dict[str, Any], unknown: list[str]) -> None:
    obj = getattr(cfg, section)
    names = {f.name for f in dataclasses.fields(obj)}
    for k, v in values.items():
        if k in names:
            setattr(obj, k, v)
        else:
            unknown.append(f"{section}.{k}")


def apply_overrides(cfg: ExperimentConfig, data: dict[str, Any]) -> ExperimentConfig:
    """Apply nested sections, then top-level keys; keys may also be dotted."""
    unknown: list[str] = []
    top: dict[str, Any] = {}
    for key, value in data.items():
        if key in SECTIONS and isinstance(value, dict):
            _set_section(cfg, key, value, unknown)
        elif "." in key:
            section, _, fname = key.partition(".")
            if section in SECTIONS:
                _set_section(cfg, section, {fname: value}, unknown)
            else:
                unknown.append(key)
        else:
            top[key] = value
    for key, value in top.items():
        if key in SHARED:
            for section, fname in SHARED[key]:
                setattr(getattr(cfg, section), fname, value)
        elif key in ("name", "output_root"):
            setattr(cfg, key, value)
        else:
            unknown.append(key)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
    return cfg


def parse_config(file_path: str | Path | None = None,
                 cli_overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Load a JSON config (empty or missing path means defaults), apply overrides, validate."""
    cfg = ExperimentConfig()
    if file_path is not None:
        text = Path(file_path).read_text().strip()
        if text:
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{file_path}: invalid JSON: {exc}") from exc
            if not isinstance(data, dict):
                raise ConfigError(f"{file_path}: top level must be a JSON object")
            apply_overrides(cfg, data)
    if cli_overrides:
        apply_overrides(cfg, {k: v for k, v in cli_overrides.items() if v is not None})
    return cfg.validate()


def write_resolved_config(cfg: ExperimentConfig, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "resolved_config.json"
    data = cfg.to_dict()
    data["train"]["lr_flow"] = cfg.train.lr_flow if cfg.train.lr_flow is not None else cfg.flow_lr / cfg.flow.lr_scale
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path
