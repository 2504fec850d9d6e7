import json

import numpy as np
import pytest

from blindvsr.cli import main
from blindvsr.degradation import read_kernel
from blindvsr.io import read_sequence, write_sequence

TINY = {
    "kernel_net": {"kernel_size": 3, "conv_channels": [4, 4], "pool_after": [1], "fc_hidden": 8},
    "restoration": {"feat_channels": 8, "n_resblocks": 1, "extractor_blocks": 1},
    "flow": {"levels": 2, "channels": 4},
    "train": {"patch_size": 8},
}


@pytest.fixture
def hr_dir(tmp_path):
    rng = np.random.default_rng(0)
    for s in range(2):
        write_sequence(tmp_path / "hr" / f"s{s}", [rng.random((26, 26, 3)) for _ in range(6)])
    return tmp_path / "hr"


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


def test_synth_layout(tmp_path, hr_dir):
    assert main(["synth", "--hr-dir", str(hr_dir), "--out-dir", str(tmp_path / "syn"), "--scale", "2",
                 "--kernel-size", "5"]) == 0
    lr = read_sequence(tmp_path / "syn" / "lr" / "s0")
    hr = read_sequence(tmp_path / "syn" / "hr" / "s0")
    assert len(lr) == 6 and lr[0].shape == (13, 13, 3) and hr[0].shape == (26, 26, 3)
    k = read_kernel(tmp_path / "syn" / "kernels" / "s1.txt")
    assert k.shape == (5, 5) and abs(k.sum() - 1) < 1e-9


def test_synth_seeded(tmp_path, hr_dir):
    for name in ("a", "b"):
        main(["synth", "--hr-dir", str(hr_dir), "--out-dir", str(tmp_path / name), "--scale", "2", "--seed", "3"])
    assert (tmp_path / "a/lr/s0/00000003.png").read_bytes() == (tmp_path / "b/lr/s0/00000003.png").read_bytes()


def test_synth_bank_requires_path(tmp_path, hr_dir):
    assert main(["synth", "--hr-dir", str(hr_dir), "--out-dir", str(tmp_path / "o"), "--kernel", "bank"]) == 2


def test_train_infer_eval_finetune(tmp_path, hr_dir, tiny_config):
    syn, run = tmp_path / "syn", tmp_path / "run"
    assert main(["synth", "--hr-dir", str(hr_dir), "--out-dir", str(syn), "--scale", "2", "--kernel-size", "3"]) == 0
    assert main(["train", "--data", str(syn), "--out", str(run), "--config", str(tiny_config), "--scale", "2",
                 "--epochs", "1", "--batch", "4", "--no-lk", "--rho", "l2"]) == 0
    resolved = json.loads((run / "resolved_config.json").read_text())
    assert resolved["loss"]["enable_lk"] is False and resolved["loss"]["rho"] == "l2"
    assert resolved["train"]["batch_size"] == 4
    assert len((run / "train_log.jsonl").read_text().splitlines()) == 3

    assert main(["infer", "--checkpoint", str(run / "final.pt"), "--lr-dir", str(syn / "lr"),
                 "--out-dir", str(tmp_path / "pred")]) == 0
    assert read_sequence(tmp_path / "pred" / "s0")[0].shape == (26, 26, 3)

    report = tmp_path / "report.json"
    assert main(["eval", "--pred-dir", str(tmp_path / "pred"), "--gt-dir", str(syn / "hr"),
                 "--report", str(report), "--crop-border", "2"]) == 0
    data = json.loads(report.read_text())
    assert set(data["per_sequence"]) == {"s0", "s1"} and data["psnr"] > 0

    assert main(["finetune", "--checkpoint", str(run / "final.pt"), "--lr-dir", str(syn / "lr" / "s0"),
                 "--out-dir", str(tmp_path / "ft"), "--steps", "1", "--batch", "2"]) == 0
    assert {"before", "after"} <= set(json.loads((tmp_path / "ft" / "finetune_losses.json").read_text()))


def test_train_config_error_exit_code(tmp_path, hr_dir):
    assert main(["train", "--data", str(hr_dir), "--out", str(tmp_path / "r"), "--patch", "16"]) == 2


def test_unknown_config_key_exit_code(tmp_path, hr_dir):
    bad = tmp_path / "bad.json"
    bad.write_text('{"nonsense": 1}')
    assert main(["train", "--data", str(hr_dir), "--config", str(bad)]) == 2


def test_nan_abort_exit_code(tmp_path, tiny_config):
    rng = np.random.default_rng(0)
    frames = [rng.random((12, 12, 3)) for _ in range(5)]
    write_sequence(tmp_path / "d" / "s", frames)
    # a NaN cannot be stored in PNG; poison the learning rate instead
    cfg = json.loads(tiny_config.read_text())
    cfg["train"]["lr_main"] = 1e30
    tiny_config.write_text(json.dumps(cfg))
    code = main(["train", "--data", str(tmp_path / "d"), "--out", str(tmp_path / "r"), "--config", str(tiny_config),
                 "--scale", "2", "--epochs", "3", "--batch", "5"])
    assert code == 4
    assert (tmp_path / "r" / "nan_dump.pt").is_file()


def test_validate_exit_codes(tmp_path, hr_dir, capsys):
    assert main(["validate", "--data", str(hr_dir)]) == 0
    assert "s0\t6 frames\t26x26" in capsys.readouterr().out
    assert main(["validate", "--data", str(hr_dir), "--n", "3"]) == 3
    assert main(["validate", "--data", str(tmp_path / "missing")]) == 3


def test_missing_checkpoint_is_data_error(tmp_path, hr_dir):
    assert main(["infer", "--checkpoint", str(tmp_path / "x.pt"), "--lr-dir", str(hr_dir),
                 "--out-dir", str(tmp_path / "o")]) == 3
