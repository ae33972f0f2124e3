"""Configuration defaults, file parsing, overrides, and validation."""

import numpy as np
import pytest

from lnlatten.config import (ModelConfig, TrainConfig, load_config,
                             parse_config_text)
from lnlatten.errors import ConfigurationError


def test_paper_defaults():
    cfg = ModelConfig()
    assert cfg.profile == "paper"
    assert cfg.image_extent == 144
    assert cfg.m == 16
    assert cfg.alpha == 0.7
    assert np.isclose(cfg.overlap_ratio, 1 / 3)
    assert cfg.variant == "full"
    tc = TrainConfig()
    assert tc.epochs == 24
    assert tc.learning_rate == 0.0003
    assert tc.lr_decay_per_epoch == 0.95


def test_tiny_profile_resolution():
    cfg = ModelConfig(profile="tiny")
    assert cfg.image_extent == 48
    assert cfg.m == 9
    assert cfg.grid_side == 3
    assert cfg.bottleneck_extent == 6
    assert cfg.default_batch_size == 16


def test_empty_config_file_gives_defaults(tmp_path):
    path = tmp_path / "empty.cfg"
    path.write_text("")
    model_cfg, train_cfg = load_config(path)
    assert model_cfg.m == 16 and model_cfg.alpha == 0.7
    assert train_cfg.epochs == 24 and train_cfg.learning_rate == 0.0003


def test_file_values_and_cli_overrides(tmp_path):
    path = tmp_path / "a.cfg"
    path.write_text("# comment\nalpha = 0.3\nepochs = 5\noverlap_ratio = 1/3\n")
    model_cfg, train_cfg = load_config(path)
    assert model_cfg.alpha == 0.3 and train_cfg.epochs == 5
    assert np.isclose(model_cfg.overlap_ratio, 1 / 3)
    model_cfg, train_cfg = load_config(path, overrides={"alpha": 0.9, "epochs": 2})
    assert model_cfg.alpha == 0.9 and train_cfg.epochs == 2


def test_unknown_key_reports_line_number():
    with pytest.raises(ConfigurationError, match="unknown key 'alfa' at line 1"):
        parse_config_text("alfa = 0.3")
    with pytest.raises(ConfigurationError, match="at line 3"):
        parse_config_text("alpha = 0.3\n# fine\nbogus = 1\n")


def test_unparsable_value_reports_line_number():
    with pytest.raises(ConfigurationError, match="line 2"):
        parse_config_text("alpha = 0.5\nm = sixteen\n")
    with pytest.raises(ConfigurationError, match="key = value"):
        parse_config_text("alpha 0.5")


def test_invalid_model_configs_rejected():
    with pytest.raises(ConfigurationError, match=r"\[0, 1\]"):
        ModelConfig(alpha=1.5).validate()
    with pytest.raises(ConfigurationError):
        ModelConfig(m=15)
    with pytest.raises(ConfigurationError):
        ModelConfig(variant="model_x")
    with pytest.raises(ConfigurationError):
        ModelConfig(profile="huge")
    with pytest.raises(ConfigurationError):
        ModelConfig(class_count=1)


def test_invalid_train_configs_rejected():
    with pytest.raises(ConfigurationError):
        TrainConfig(epochs=0).validate()
    with pytest.raises(ConfigurationError):
        TrainConfig(lr_decay_per_epoch=0.0).validate()
    with pytest.raises(ConfigurationError):
        TrainConfig(lr_decay_per_epoch=1.5).validate()
    with pytest.raises(ConfigurationError):
        TrainConfig(learning_rate=-1.0).validate()
    with pytest.raises(ConfigurationError):
        TrainConfig(patch_blank_fraction=1.2).validate()
    TrainConfig(patch_blank_fraction=0.5).validate()


def test_bool_and_fraction_parsing():
    model_kw, train_kw = parse_config_text(
        "horizontal_flip = false\nrandom_crop = yes\noverlap_ratio = 2/6\n")
    assert train_kw == {"horizontal_flip": False, "random_crop": True}
    assert np.isclose(model_kw["overlap_ratio"], 1 / 3)


def test_resolved_batch_size_follows_profile():
    assert TrainConfig().resolved_batch_size(ModelConfig()) == 24
    assert TrainConfig().resolved_batch_size(ModelConfig(profile="tiny")) == 16
    assert TrainConfig(batch_size=8).resolved_batch_size(ModelConfig()) == 8
