"""Configuration for GRAML: process settings and experiment files."""

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from graml.dataset import EncodingMode
from graml.env import ENVIRONMENTS, State
from graml.errors import ConfigError, ContractViolation
from graml.metric import TrainConfig
from graml.planner import MctsConfig
from graml.recognizers.base import Algorithm
from graml.recognizers.embedding import AdaptationStrategy
from graml.rl import QHyperParams, QScale


def _get_int_env(key: str, default: str) -> int:
    """Get integer from environment variable with error handling."""
    try:
        return int(os.environ.get(key, default))
    except ValueError as e:
        raise ConfigError(f"Invalid integer value for {key}: {os.environ.get(key)}") from e


@dataclass
class Settings:
    """Process settings from environment variables."""

    log_level: str = os.environ.get("GRAML_LOG_LEVEL", "INFO")
    output_dir: str = os.environ.get("GRAML_OUTPUT_DIR", "./runs")
    workers: int = _get_int_env("GRAML_WORKERS", "1")


settings = Settings()


def _build(cls: type, data: Any, section: str) -> Any:
    """Instantiate a flat hyperparameter dataclass, rejecting unknown keys."""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"Section '{section}' must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"Unknown keys in '{section}'", unknown=unknown)
    try:
        return cls(**data)
    except (ContractViolation, TypeError) as e:
        raise ConfigError(f"Invalid '{section}' settings: {e}") from e


@dataclass(frozen=True)
class SweepConfig:
    """Goal-count grid for the sweep experiment."""

    base_goal_counts: tuple[int, ...] = (3, 5, 10, 20)
    active_goal_counts: tuple[int, ...] = (3, 5, 7, 9)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    library_sizes: tuple[int, ...] = (1, 2, 4, 8)

    def __post_init__(self) -> None:
        for name in ("base_goal_counts", "active_goal_counts", "seeds", "library_sizes"):
            values = tuple(int(v) for v in getattr(self, name))
            if not values:
                raise ContractViolation(f"{name} must not be empty")
            object.__setattr__(self, name, values)
        if min(self.base_goal_counts) < 2 or min(self.active_goal_counts) < 1:
            raise ContractViolation("need at least 2 base goals and 1 active goal")
        if min(self.library_sizes) < 1:
            raise ContractViolation("library sizes must be at least 1")
        if min(self.seeds) < 0:
            raise ContractViolation("sweep seeds must be non-negative")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one ODGR experiment run needs; loaded from YAML."""

    envs: tuple[str, ...] = ("simple_crossing",)
    env_seed: int = 0
    seed: int = 0
    n_problems: int = 5
    goals_per_set: int = 5
    goal_sets: tuple[tuple[State, ...], ...] | None = None
    n_base_goals: int = 5
    n_gc_base_goals: int = 20
    algorithms: tuple[Algorithm, ...] = (Algorithm.BG_GRAML, Algorithm.GC_GRAML, Algorithm.GRAQL)
    bg_adaptation: AdaptationStrategy = AdaptationStrategy.EXPERT_TRACES
    library_size: int = 3
    traces_per_goal: int = 40
    n_pairs: int = 10_000
    balance: float = 0.5
    dataset_temperature: float = 0.5
    observation_temperature: float = 1.0
    rollout_scale: QScale = QScale.GAP
    dataset_jitter: int = 3
    observation_jitter: int = 3
    min_goal_distance: int = 3
    graql_timeout: float = 1800.0
    graql_temperature: float = 1.0
    encoding: EncodingMode = EncodingMode.HYBRID
    q: QHyperParams = field(default_factory=QHyperParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    mcts: MctsConfig = field(default_factory=MctsConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def __post_init__(self) -> None:
        unknown_envs = [name for name in self.envs if name not in ENVIRONMENTS]
        if not self.envs or unknown_envs:
            raise ConfigError("Unknown or missing environments", unknown=unknown_envs)
        if self.seed < 0 or self.env_seed < 0 or self.train.seed < 0:
            raise ConfigError("seeds must be non-negative")
        if self.bg_adaptation is AdaptationStrategy.GOAL_CONDITIONED:
            raise ConfigError("bg_adaptation must be expert_traces or mcts")
        if self.n_problems < 0 or self.goals_per_set < 1 or self.library_size < 1:
            raise ConfigError("n_problems, goals_per_set and library_size must be sensible")
        if self.n_base_goals < 2 or self.n_gc_base_goals < 2:
            raise ConfigError("domain learning needs at least two base goals")
        if not 0.0 < self.balance < 1.0:
            raise ConfigError("balance must lie in (0, 1)", balance=self.balance)
        temperatures = (
            self.dataset_temperature,
            self.observation_temperature,
            self.graql_temperature,
        )
        if min(temperatures) <= 0:
            raise ConfigError("temperatures must be positive")
        if self.dataset_jitter < 0 or self.observation_jitter < 0 or self.min_goal_distance < 0:
            raise ConfigError("jitter and goal distance must be non-negative")
        if self.traces_per_goal < 1 or self.n_pairs < 1:
            raise ConfigError("traces_per_goal and n_pairs must be positive")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        """Build from a parsed YAML mapping; nested blocks map onto their dataclasses."""
        if not isinstance(data, dict):
            raise ConfigError("Experiment config must be a mapping")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError("Unknown experiment config keys", unknown=unknown)

        values = dict(data)
        try:
            if "envs" in values:
                values["envs"] = tuple(values["envs"])
            if "algorithms" in values:
                values["algorithms"] = tuple(Algorithm(a) for a in values["algorithms"])
            if "bg_adaptation" in values:
                values["bg_adaptation"] = AdaptationStrategy(values["bg_adaptation"])
            if "encoding" in values:
                values["encoding"] = EncodingMode(values["encoding"])
            if "rollout_scale" in values:
                values["rollout_scale"] = QScale(values["rollout_scale"])
            if values.get("goal_sets") is not None:
                values["goal_sets"] = tuple(
                    tuple(State(int(x), int(y)) for x, y in goal_set)
                    for goal_set in values["goal_sets"]
                )
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid experiment config value: {e}") from e

        values["q"] = _build(QHyperParams, values.get("q"), "q")
        values["train"] = _build(TrainConfig, values.get("train"), "train")
        values["mcts"] = _build(MctsConfig, values.get("mcts"), "mcts")
        values["sweep"] = _build(SweepConfig, values.get("sweep"), "sweep")
        try:
            return cls(**values)
        except TypeError as e:
            raise ConfigError(f"Invalid experiment config: {e}") from e

    def to_dict(self) -> dict[str, Any]:
        """Plain YAML/JSON-ready mapping; ``from_dict(to_dict())`` is the identity."""
        return {
            "envs": list(self.envs),
            "env_seed": self.env_seed,
            "seed": self.seed,
            "n_problems": self.n_problems,
            "goals_per_set": self.goals_per_set,
            "goal_sets": (
                [[list(goal) for goal in goal_set] for goal_set in self.goal_sets]
                if self.goal_sets is not None
                else None
            ),
            "n_base_goals": self.n_base_goals,
            "n_gc_base_goals": self.n_gc_base_goals,
            "algorithms": [str(a) for a in self.algorithms],
            "bg_adaptation": str(self.bg_adaptation),
            "library_size": self.library_size,
            "traces_per_goal": self.traces_per_goal,
            "n_pairs": self.n_pairs,
            "balance": self.balance,
            "dataset_temperature": self.dataset_temperature,
            "observation_temperature": self.observation_temperature,
            "rollout_scale": str(self.rollout_scale),
            "dataset_jitter": self.dataset_jitter,
            "observation_jitter": self.observation_jitter,
            "min_goal_distance": self.min_goal_distance,
            "graql_timeout": self.graql_timeout,
            "graql_temperature": self.graql_temperature,
            "encoding": str(self.encoding),
            "q": asdict(self.q),
            "train": asdict(self.train),
            "mcts": asdict(self.mcts),
            "sweep": {key: list(value) for key, value in asdict(self.sweep).items()},
        }


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    """Read an experiment config from a YAML file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"Cannot read config file: {path}", reason=str(e)) from e
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML in {path}: {e}") from e
    return ExperimentConfig.from_dict(data or {})
