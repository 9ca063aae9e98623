"""Flat config files, key-path overrides, output-root resolution."""

import pytest

from speechret.config import (ExperimentConfig, apply_overrides,
                              load_experiment_config, parse_flat_file,
                              resolve_output_path, SweepConfig)
from speechret.errors import ConfigError


class TestOverrides:
    def test_scalar_fields(self):
        cfg = apply_overrides(ExperimentConfig(), {
            "corpus.num_items": "500",
            "train.learning_rate": "0.01",
            "out_dir": "elsewhere",
        })
        assert cfg.corpus.num_items == 500
        assert cfg.train.learning_rate == 0.01
        assert cfg.out_dir == "elsewhere"

    def test_nested_dataclass_fields(self):
        cfg = apply_overrides(ExperimentConfig(), {
            "train.weights.vis": "0.5",
            "train.weights.bow": "0.25",
            "train.contrastive.margin": "0.7",
        })
        assert cfg.train.weights.vis == 0.5
        assert cfg.train.weights.bow == 0.25
        assert abs(cfg.train.weights.rep - 0.25) < 1e-12
        assert cfg.train.contrastive.margin == 0.7

    def test_tuple_fields(self):
        cfg = apply_overrides(ExperimentConfig(), {
            "sweep.fractions": "0.1,0.5,1.0",
            "sweep.seeds": "3,4",
            "model.conv_channels": "16,32",
        })
        assert cfg.sweep.fractions == (0.1, 0.5, 1.0)
        assert cfg.sweep.seeds == (3, 4)
        assert cfg.model.conv_channels == (16, 32)

    def test_bool_fields(self):
        cfg = apply_overrides(ExperimentConfig(), {
            "train.text_batches_use_visual_losses": "true",
            "model.masked_pooling": "1",
        })
        assert cfg.train.text_batches_use_visual_losses is True
        assert cfg.model.masked_pooling is True

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            apply_overrides(ExperimentConfig(), {"corpus.nope": "1"})

    def test_section_without_leaf_rejected(self):
        with pytest.raises(ConfigError, match="section"):
            apply_overrides(ExperimentConfig(), {"corpus": "1"})

    def test_bad_value_type(self):
        with pytest.raises(ConfigError, match="integer"):
            apply_overrides(ExperimentConfig(), {"corpus.num_items": "many"})

    def test_original_untouched(self):
        base = ExperimentConfig()
        apply_overrides(base, {"corpus.num_items": "5"})
        assert base.corpus.num_items == 2000


class TestFlatFile:
    def test_parse_and_apply(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text(
            "# a comment\n"
            "corpus.num_items = 123\n"
            "\n"
            "train.weights.vis = 0.4\n"
            "sweep.fractions = 0.5,1.0\n")
        cfg = load_experiment_config(path)
        assert cfg.corpus.num_items == 123
        assert cfg.train.weights.vis == 0.4
        assert cfg.sweep.fractions == (0.5, 1.0)

    def test_sets_beat_file(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("corpus.num_items = 123\n")
        cfg = load_experiment_config(path, sets=["corpus.num_items=77"])
        assert cfg.corpus.num_items == 77

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("corpus.num_items\n")
        with pytest.raises(ConfigError, match="expected key = value"):
            parse_flat_file(path)

    def test_malformed_set(self):
        with pytest.raises(ConfigError, match="--set"):
            load_experiment_config(None, sets=["oops"])


class TestValidation:
    def test_sweep_fraction_range(self):
        with pytest.raises(ConfigError):
            SweepConfig(fractions=(0.0,)).validate()
        with pytest.raises(ConfigError):
            SweepConfig(fractions=(1.5,)).validate()

    def test_sweep_unknown_system(self):
        with pytest.raises(ConfigError):
            SweepConfig(systems=("nope",)).validate()

    def test_experiment_validate_recurses(self):
        cfg = apply_overrides(ExperimentConfig(), {"train.batch_size": "1"})
        with pytest.raises(ConfigError):
            cfg.validate()


class TestPaperScalePreset:
    def test_preset_dimensions(self):
        from speechret.config import paper_scale_experiment
        cfg = paper_scale_experiment()
        assert cfg.corpus.t_max == 800
        assert cfg.n_vis == 1000
        assert cfg.train.n_bow == 1000
        assert cfg.model.embed_dim == 1024
        assert cfg.tagger.hidden == (2048, 2048, 2048, 2048)


class TestOutputRoot:
    def test_relative_path_under_env(self, monkeypatch):
        monkeypatch.setenv("SPEECHRET_OUT", "/data/exp")
        assert resolve_output_path("runs/a") == "/data/exp/runs/a"

    def test_absolute_path_untouched(self, monkeypatch):
        monkeypatch.setenv("SPEECHRET_OUT", "/data/exp")
        assert resolve_output_path("/abs/runs") == "/abs/runs"

    def test_no_env(self, monkeypatch):
        monkeypatch.delenv("SPEECHRET_OUT", raising=False)
        assert resolve_output_path("runs/a") == "runs/a"
