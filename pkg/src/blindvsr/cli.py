"""Command-line entry point: ``blindvsr {synth,train,infer,finetune,eval,validate}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime
failure (including a NaN abort). Logs go to stderr; artifacts go to the
output directories.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, parse_config, write_resolved_config
from .degradation import DegradationConfig, degrade_sequence, load_kernel_bank, make_gaussian_kernel, modcrop, \
    write_kernel
from .evaluation import evaluate_dirs
from .training import TrainingAborted, finetune, infer, train

logger = logging.getLogger("blindvsr")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


def cmd_synth(args) -> int:
    cfg = DegradationConfig(scale=args.scale, noise_sigma=args.noise_sigma)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if args.sigma_min <= 0 or args.sigma_max < args.sigma_min:
        raise ConfigError(f"need 0 < sigma-min <= sigma-max, got {args.sigma_min}, {args.sigma_max}")
    rng = np.random.default_rng(args.seed)
    bank = None
    if args.kernel == "bank":
        if not args.bank_path:
            raise ConfigError("--kernel bank requires --bank-path")
        bank = load_kernel_bank(args.bank_path)
    out = Path(args.out_dir)
    for seq in io.list_sequences(args.hr_dir):
        hr = [modcrop(f, args.scale) for f in io.read_sequence(seq)]
        if bank is not None:
            kernel = bank[rng.integers(len(bank))]
        else:
            sx, sy = rng.uniform(args.sigma_min, args.sigma_max, size=2)
            kernel = make_gaussian_kernel(args.kernel_size, sx, sy, rng.uniform(0, np.pi))
        lr = degrade_sequence(hr, kernel, cfg, rng_seed=int(rng.integers(2 ** 31)))
        io.write_sequence(out / "hr" / seq.name, hr)
        io.write_sequence(out / "lr" / seq.name, lr)
        (out / "kernels").mkdir(parents=True, exist_ok=True)
        write_kernel(out / "kernels" / f"{seq.name}.txt", kernel)
        logger.info("synthesized %s: %d frames", seq.name, len(hr))
    return EXIT_OK


def _train_overrides(args) -> dict:
    mode = {"self": "self_supervised", "supervised": "supervised"}[args.mode] if args.mode else None
    flags = {
        "train.mode": mode,
        "scale": args.scale,
        "n": args.n,
        "train.epochs": args.epochs,
        "train.batch_size": args.batch,
        "train.patch_size": args.patch,
        "train.seed": args.seed,
        "train.max_steps": args.max_steps,
        "loss.rho": args.rho,
    }
    if args.no_li:
        flags["loss.enable_li"] = False
    if args.no_lk:
        flags["loss.enable_lk"] = False
    if args.no_detach:
        flags["loss.detach_in_lself"] = False
    if args.aux_kernel_grad:
        flags["loss.aux_kernel_grad"] = True
    if args.global_residual:
        flags["restoration.global_residual"] = args.global_residual == "on"
    if args.out:
        out = Path(args.out)
        flags["name"], flags["output_root"] = out.name, str(out.parent)
    return flags


def cmd_train(args) -> int:
    cfg = parse_config(args.config, _train_overrides(args))
    out = Path(cfg.output_root) / cfg.name
    write_resolved_config(cfg, out)
    train(args.data, cfg, out)
    logger.info("training finished; checkpoints in %s", out)
    return EXIT_OK


def cmd_infer(args) -> int:
    written = infer(args.checkpoint, args.lr_dir, args.out_dir)
    logger.info("wrote %d frames to %s", len(written), args.out_dir)
    return EXIT_OK


def cmd_finetune(args) -> int:
    result = finetune(args.checkpoint, args.lr_dir, args.out_dir, steps=args.steps, lr_main=args.lr,
                      seed=args.seed, batch_size=args.batch)
    summary = {"before": result.before, "after": result.after}
    (Path(args.out_dir) / "finetune_losses.json").write_text(json.dumps(summary, indent=2) + "\n")
    logger.info("l_I before %.5f after %.5f", result.before["l_i"], result.after["l_i"])
    return EXIT_OK


def cmd_eval(args) -> int:
    report = evaluate_dirs(args.pred_dir, args.gt_dir, args.crop_border)
    text = report.to_json()
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        Path(args.report).write_text(text + "\n")
    else:
        print(text)
    logger.info("PSNR %.3f dB, SSIM %.4f", report.psnr, report.ssim)
    return EXIT_OK


def cmd_validate(args) -> int:
    summary = io.validate_dataset(args.data, args.n)
    for s in summary.sequences:
        print(f"{s.name}\t{s.n_frames} frames\t{s.resolution[0]}x{s.resolution[1]}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blindvsr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize LR sequences from HR frame directories")
    p.add_argument("--hr-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--kernel", choices=["gaussian", "bank"], default="gaussian")
    p.add_argument("--kernel-size", type=int, default=13)
    p.add_argument("--sigma-min", type=float, default=0.4)
    p.add_argument("--sigma-max", type=float, default=2.0)
    p.add_argument("--bank-path")
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a directory of LR (and optionally HR) sequences")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--config")
    p.add_argument("--mode", choices=["self", "supervised"])
    p.add_argument("--scale", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--patch", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--no-li", action="store_true")
    p.add_argument("--no-lk", action="store_true")
    p.add_argument("--no-detach", action="store_true")
    p.add_argument("--rho", choices=["l1", "l2"])
    p.add_argument("--aux-kernel-grad", action="store_true")
    p.add_argument("--global-residual", choices=["on", "off"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="super-resolve LR sequences with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--lr-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("finetune", help="adapt a checkpoint to unlabeled LR videos")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--lr-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="PSNR/SSIM between predicted and ground-truth frames")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--report")
    p.add_argument("--crop-border", type=int, default=4)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("validate", help="check a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--n", type=int, default=2)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (io.DataError, FileNotFoundError, ValueError) as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA
    except TrainingAborted as exc:
        logger.error("training aborted: %s", exc)
        return EXIT_RUNTIME
    except RuntimeError as exc:
        logger.error("runtime error: %s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
