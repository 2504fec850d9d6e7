"""
Self-supervised training on a toy benchmark
===========================================

Two short LR clips are synthesized with a known Gaussian kernel. The
networks are trained from the LR frames alone; afterwards the kernel
estimate is scored by re-degrading the (held back) HR frames.

Runs a few minutes on one CPU core with the reduced network widths below.
"""

import numpy as np
import torch

from blindvsr import ExperimentConfig, evaluate_regenerated_lr
from blindvsr.training import Trainer, WindowDataset, super_resolve, to_tensor
from blindvsr.toy import make_toy_benchmark

torch.set_num_threads(1)
bench = make_toy_benchmark(n_sequences=2, n_frames=10, lr_size=64, scale=4, sigma=1.2)

cfg = ExperimentConfig()
cfg.kernel_net.conv_channels, cfg.kernel_net.fc_hidden = [32, 32, 64, 64], 128
cfg.restoration.feat_channels, cfg.restoration.n_resblocks, cfg.restoration.extractor_blocks = 32, 4, 1
cfg.flow.channels = 16
cfg.train.batch_size = 2

data = WindowDataset.from_arrays(bench.lr, cfg.temporal_radius)
trainer = Trainer(cfg, data)


def kernel_score(model):
    ks = []
    for seq in bench.lr:
        _, kernels = super_resolve(model, to_tensor(seq))
        ks += [k.double().numpy() for k in kernels]
    k = np.mean(ks, axis=0)
    k /= k.sum()
    hr = [f for s in bench.hr for f in s]
    lr = [f for s in bench.lr for f in s]
    return evaluate_regenerated_lr(k, hr, lr, true_kernel=bench.kernel), k


before, _ = kernel_score(trainer.model)
print(f"init:  regenerated PSNR {before.regenerated_psnr:.2f} dB, NCC {before.kernel_ncc:.3f}")


def report(tr, bundle):
    if tr.step_count % 50 == 0:
        print(tr.step_count, {k: round(v, 4) for k, v in bundle.as_floats().items()})


trainer.run(max_steps=300, callback=report)
after, k = kernel_score(trainer.model)
print(f"final: regenerated PSNR {after.regenerated_psnr:.2f} dB, NCC {after.kernel_ncc:.3f}")

np.set_printoptions(precision=3, suppress=True)
print("estimated kernel, central 7x7:")
print(k[3:10, 3:10])
