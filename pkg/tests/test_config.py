import pytest

from hymir.config import (
    ModelConfig,
    TrainConfig,
    configs_from_dict,
    configs_from_text,
    format_configs,
    parse_config_text,
)


class TestTextFormat:
    def test_defaults_round_trip(self):
        text = format_configs(ModelConfig(), TrainConfig())
        mc, tc = configs_from_text(text)
        assert mc == ModelConfig()
        assert tc == TrainConfig()

    def test_non_defaults_round_trip(self):
        mc0 = ModelConfig(base_channels=16, no_mwsa=True, blocks_per_stage=3, task="super_resolution")
        tc0 = TrainConfig(lr_init=1e-3, total_steps=77, clip_norm=-1.0)
        mc, tc = configs_from_text(format_configs(mc0, tc0))
        assert mc == mc0
        assert tc == tc0

    def test_comments_and_blanks(self):
        raw = parse_config_text("# full line comment\n\nbatch = 4  # trailing\n  crop=32\n")
        assert raw == {"batch": "4", "crop": "32"}

    def test_missing_equals_rejected(self):
        with pytest.raises(ValueError, match="line 2"):
            parse_config_text("batch = 4\nnonsense\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            parse_config_text("batch = 4\nbatch = 8\n")

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config key 'learning_rate'"):
            configs_from_dict({"learning_rate": "0.1"})

    def test_bool_parsing_is_strict(self):
        mc, _ = configs_from_dict({"no_mwsa": "true", "blocks_per_stage": "3"})
        assert mc.no_mwsa is True
        with pytest.raises(ValueError, match="true or false"):
            configs_from_dict({"no_mwsa": "1"})

    def test_numeric_coercion(self):
        _, tc = configs_from_dict({"lr_init": "2e-3", "total_steps": "500"})
        assert tc.lr_init == 2e-3
        assert tc.total_steps == 500
        with pytest.raises(ValueError, match="cannot parse"):
            configs_from_dict({"total_steps": "many"})


class TestValidation:
    def test_stage_count_is_fixed(self):
        with pytest.raises(ValueError, match="3-stage"):
            ModelConfig(stages=4).validate()

    def test_odd_blocks_need_no_mwsa(self):
        with pytest.raises(ValueError, match="even when attention"):
            ModelConfig(blocks_per_stage=3).validate()
        ModelConfig(blocks_per_stage=3, no_mwsa=True).validate()

    def test_task_names(self):
        with pytest.raises(ValueError, match="restoration or super_resolution"):
            ModelConfig(task="deblur").validate()

    def test_lr_ordering(self):
        with pytest.raises(ValueError, match="lr_min"):
            TrainConfig(lr_init=1e-6, lr_min=1e-4).validate()

    def test_clip_norm_off_switch_allowed(self):
        TrainConfig(clip_norm=0.0).validate()
        TrainConfig(clip_norm=-1.0).validate()

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError, match="loss_lambda"):
            TrainConfig(loss_lambda=-0.5).validate()
