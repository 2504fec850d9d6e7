"""Self-supervised blind video super-resolution.

Jointly learns a blur-kernel estimator, a flow-aligned feature path and an
HR restoration network from low-resolution video alone, using auxiliary
pairs made by degrading the LR input with the current kernel estimate.
"""
from .config import ConfigError, ExperimentConfig, TrainConfig, parse_config
from .degradation import (DegradationConfig, blur, decimate, degrade_sequence, load_kernel_bank,
                          make_gaussian_kernel)
from .evaluation import MetricReport, evaluate_regenerated_lr, kernel_ncc, psnr, ssim
from .flow import FlowProviderConfig, estimate_flow, warp
from .kernel_net import KernelNet, KernelNetConfig, estimate_kernel
from .losses import LossBundle, LossConfig, generate_auxiliary_pairs, total_loss
from .model import SelfBlindVSR
from .restoration import RestorationConfig
from .training import Trainer, WindowDataset, finetune, infer, train

__version__ = "0.1.0"
