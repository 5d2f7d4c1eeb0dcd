"""Tests for settings and experiment configuration."""

from pathlib import Path
from unittest.mock import patch

import pytest

from graml.config import (
    ExperimentConfig,
    SweepConfig,
    _get_int_env,
    load_experiment_config,
)
from graml.dataset import EncodingMode
from graml.env import State
from graml.errors import ConfigError, ContractViolation
from graml.recognizers import AdaptationStrategy, Algorithm
from graml.rl import QScale

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


class TestSettings:
    """Tests for environment-variable settings."""

    def test_int_env_default(self):
        """Should fall back to the default when unset."""
        with patch.dict("os.environ", {}, clear=True):
            assert _get_int_env("GRAML_WORKERS", "3") == 3

    def test_int_env_value(self):
        """Should parse the variable when set."""
        with patch.dict("os.environ", {"GRAML_WORKERS": "8"}):
            assert _get_int_env("GRAML_WORKERS", "1") == 8

    def test_int_env_invalid(self):
        """Should raise ConfigError naming the variable."""
        with patch.dict("os.environ", {"GRAML_WORKERS": "many"}):
            with pytest.raises(ConfigError, match="GRAML_WORKERS"):
                _get_int_env("GRAML_WORKERS", "1")


class TestExperimentConfig:
    """Tests for experiment config validation and conversion."""

    def test_defaults(self):
        """Should default to a five-problem run of all three algorithms."""
        cfg = ExperimentConfig()
        assert cfg.envs == ("simple_crossing",)
        assert cfg.algorithms == (Algorithm.BG_GRAML, Algorithm.GC_GRAML, Algorithm.GRAQL)
        assert cfg.bg_adaptation is AdaptationStrategy.EXPERT_TRACES
        assert cfg.goal_sets is None
        assert cfg.encoding is EncodingMode.HYBRID
        assert cfg.library_size == 3

    def test_round_trip(self):
        """Should rebuild the same config from its plain mapping."""
        cfg = ExperimentConfig(
            envs=("lava_crossing", "simple_crossing"),
            goal_sets=((State(7, 7), State(7, 1)),),
            algorithms=(Algorithm.GRAQL,),
            bg_adaptation=AdaptationStrategy.MCTS,
            encoding=EncodingMode.COORDINATES,
            rollout_scale=QScale.RAW,
            sweep=SweepConfig(seeds=(0, 1)),
        )
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg

    def test_default_round_trip(self):
        """Should round-trip the defaults."""
        assert ExperimentConfig.from_dict(ExperimentConfig().to_dict()) == ExperimentConfig()

    def test_nested_blocks(self):
        """Should map nested sections onto their hyperparameter dataclasses."""
        cfg = ExperimentConfig.from_dict({"q": {"episodes": 100}, "train": {"epochs": 2}})
        assert cfg.q.episodes == 100
        assert cfg.train.epochs == 2
        assert cfg.mcts.iterations == 2000

    @pytest.mark.parametrize(
        "data",
        [
            {"episodes": 10},
            {"q": {"episodes": 10, "gamma_typo": 0.9}},
            {"train": [1, 2]},
        ],
    )
    def test_unknown_keys(self, data):
        """Should reject keys it does not know, at any level."""
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(data)

    @pytest.mark.parametrize(
        "data",
        [
            {"envs": ["nowhere"]},
            {"envs": []},
            {"seed": -1},
            {"env_seed": -2},
            {"train": {"seed": -1}},
            {"balance": 1.0},
            {"observation_temperature": 0},
            {"n_base_goals": 1},
            {"bg_adaptation": "goal_conditioned"},
            {"algorithms": ["bayes"]},
            {"rollout_scale": "log"},
            {"goal_sets": [[[1]]]},
            {"sweep": {"library_sizes": [0]}},
        ],
    )
    def test_invalid_values(self, data):
        """Should report invalid values as ConfigError."""
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(data)

    def test_not_a_mapping(self):
        """Should refuse a config that is not a mapping."""
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict([1, 2])  # type: ignore[arg-type]


class TestSweepConfig:
    """Tests for the sweep grid."""

    def test_coerces_lists(self):
        """Should store every grid axis as a tuple of ints."""
        sweep = SweepConfig(base_goal_counts=[3, 5], seeds=[1])  # type: ignore[arg-type]
        assert sweep.base_goal_counts == (3, 5)
        assert sweep.seeds == (1,)

    def test_rejects_empty_axis(self):
        """Should refuse an empty axis."""
        with pytest.raises(ContractViolation):
            SweepConfig(active_goal_counts=())


class TestLoadExperimentConfig:
    """Tests for reading YAML configs."""

    @pytest.mark.parametrize("name", ["simple_crossing.yaml", "smoke.yaml"])
    def test_shipped_configs(self, name):
        """Should load every config shipped with the project."""
        cfg = load_experiment_config(CONFIG_DIR / name)
        assert cfg.n_problems >= 1

    def test_shipped_defaults_match(self):
        """Should keep the desk-scale config in step with the defaults."""
        cfg = load_experiment_config(CONFIG_DIR / "simple_crossing.yaml")
        assert cfg.n_pairs == ExperimentConfig().n_pairs
        assert cfg.sweep == SweepConfig()

    def test_empty_file(self, tmp_path):
        """Should treat an empty file as all defaults."""
        path = tmp_path / "empty.yaml"
        path.write_text("")
        assert load_experiment_config(path) == ExperimentConfig()

    def test_missing_file(self, tmp_path):
        """Should raise ConfigError for a missing file."""
        with pytest.raises(ConfigError):
            load_experiment_config(tmp_path / "missing.yaml")

    def test_invalid_yaml(self, tmp_path):
        """Should raise ConfigError for unparsable YAML."""
        path = tmp_path / "bad.yaml"
        path.write_text("envs: [simple_crossing\n")
        with pytest.raises(ConfigError):
            load_experiment_config(path)
