import json

import pytest

from blindvsr.config import ConfigError, ExperimentConfig, parse_config, write_resolved_config


def write(tmp_path, data):
    p = tmp_path / "cfg.json"
    p.write_text(data if isinstance(data, str) else json.dumps(data))
    return p


def test_empty_file_gives_defaults(tmp_path):
    cfg = parse_config(write(tmp_path, ""))
    assert cfg.to_dict() == ExperimentConfig().to_dict()
    assert cfg.loss.gamma == ExperimentConfig().loss.gamma
    assert cfg.train.lr_main == 1e-4 and cfg.scale == 4 and cfg.temporal_radius == 2


def test_flag_overrides_file(tmp_path):
    cfg = parse_config(write(tmp_path, {"n": 3}), {"n": 2})
    assert cfg.kernel_net.temporal_radius == 2 and cfg.train.temporal_radius == 2


def test_file_shortcut_applies_to_all_sections(tmp_path):
    cfg = parse_config(write(tmp_path, {"n": 3, "scale": 2, "train": {"patch_size": 32}}))
    assert cfg.temporal_radius == cfg.train.temporal_radius == 3
    assert cfg.degradation.scale == cfg.restoration.scale == 2


def test_dotted_override(tmp_path):
    cfg = parse_config(None, {"loss.enable_lk": False, "train.batch_size": 2})
    assert cfg.loss.enable_lk is False and cfg.train.batch_size == 2


def test_none_overrides_are_ignored():
    assert parse_config(None, {"train.seed": None}).train.seed == 0


def test_patch_smaller_than_kernel_support():
    with pytest.raises(ConfigError, match="52"):
        parse_config(None, {"train.patch_size": 16})


def test_unknown_keys_listed(tmp_path):
    with pytest.raises(ConfigError) as err:
        parse_config(write(tmp_path, {"bogus": 1, "loss": {"beta": 2}}))
    assert "bogus" in str(err.value) and "loss.beta" in str(err.value)


def test_inconsistent_fields_named(tmp_path):
    with pytest.raises(ConfigError) as err:
        parse_config(write(tmp_path, {"degradation": {"scale": 2}}))
    assert "degradation.scale" in str(err.value) and "restoration.scale" in str(err.value)


def test_invalid_json(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(write(tmp_path, "{not json"))


def test_section_validation_wrapped():
    with pytest.raises(ConfigError):
        parse_config(None, {"loss.alpha": 2.0})


def test_resolved_config_round_trip(tmp_path):
    cfg = parse_config(None, {"train.batch_size": 3, "name": "x"})
    path = write_resolved_config(cfg, tmp_path)
    data = json.loads(path.read_text())
    assert data["train"]["lr_flow"] == 1e-4
    again = parse_config(path)
    assert again.train.batch_size == 3 and again.name == "x"
    assert again.flow_lr == cfg.flow_lr


@pytest.mark.parametrize("backend,lr", [("builtin_coarse2fine", 1e-4), ("pretrained_external", 1e-6)])
def test_flow_lr_defaults(backend, lr):
    cfg = ExperimentConfig()
    cfg.flow.backend = backend
    assert cfg.flow_lr == lr
