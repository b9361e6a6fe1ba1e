import pytest

from dan.config import RunConfig
from dan.fcn import ConfigError


@pytest.mark.parametrize("preset", [RunConfig, RunConfig.toy, RunConfig.full])
def test_text_round_trip(preset):
    cfg = preset()
    back = RunConfig.from_text(cfg.to_text())
    assert back == cfg
    assert back.digest() == cfg.digest()


def test_missing_keys_fall_back_to_base():
    cfg = RunConfig.from_text("[train]\nepochs = 3\n", base=RunConfig.toy())
    assert cfg.epochs == 3
    assert cfg.model == RunConfig.toy().model


def test_overrides():
    cfg = RunConfig.toy().override(["loss.partition=0.5", "optim.lr = 0.01", "train.deterministic=no"])
    assert cfg.weights.partition == 0.5
    assert cfg.optim.lr == 0.01
    assert cfg.deterministic is False
    with pytest.raises(ConfigError, match="section.key=value"):
        RunConfig.toy().override(["epochs=3"])


def test_unknown_keys_and_sections_are_rejected():
    with pytest.raises(ConfigError, match="typo"):
        RunConfig.from_text("[train]\ntypo = 1\n")
    with pytest.raises(ConfigError, match="sections"):
        RunConfig.from_text("[extra]\na = 1\n")


def test_bad_values_name_the_key():
    with pytest.raises(ConfigError, match=r"\[train\] epochs"):
        RunConfig.from_text("[train]\nepochs = many\n")


def test_single_head_needs_zero_partition_weight():
    with pytest.raises(ConfigError, match="single attention head"):
        RunConfig.toy().override(["model.num_heads=1"])
    cfg = RunConfig.toy().override(["model.num_heads=1", "loss.partition=0"])
    assert cfg.model.num_heads == 1


def test_validation():
    with pytest.raises(ConfigError, match="classes"):
        RunConfig.toy().override(["data.classes=3"])
    with pytest.raises(ConfigError, match="divisible"):
        RunConfig.toy().override(["data.image_size=30"])
    with pytest.raises(ConfigError, match="feature_length"):
        RunConfig.from_text("[model]\nfeature_length = 64\n", base=RunConfig.toy())
    with pytest.raises(ConfigError):
        RunConfig.toy().replace(batch_size=1)


def test_save_and_load(tmp_path):
    cfg = RunConfig.toy().with_weights(affinity=0.25)
    cfg.save(tmp_path / "run.ini")
    assert RunConfig.load(tmp_path / "run.ini") == cfg


def test_repeated_override_keeps_last_and_malformed_text_is_config_error():
    assert RunConfig.toy().override(["train.epochs=2", "train.epochs=5"]).epochs == 5
    with pytest.raises(ConfigError, match="malformed"):
        RunConfig.from_text("epochs = 3\n")
