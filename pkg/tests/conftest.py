"""Pytest configuration and fixtures."""

import os

# Keep test runs quiet and single-threaded before importing graml modules
os.environ.setdefault("GRAML_LOG_LEVEL", "WARNING")
os.environ.setdefault("GRAML_WORKERS", "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from graml.dataset import EncodingMode, input_dim  # noqa: E402
from graml.env import (  # noqa: E402
    GridEnv,
    State,
    make_empty_room,
    make_lava_crossing,
    make_simple_crossing,
)
from graml.log import configure_logging  # noqa: E402
from graml.metric import LstmParams, MetricModel  # noqa: E402
from graml.rl import QHyperParams, QTable, train_q_agent  # noqa: E402

configure_logging("graml-tests", os.environ["GRAML_LOG_LEVEL"])

# Small, quick Q-learning budget for 5x5 and 7x7 rooms
FAST_Q = QHyperParams(episodes=2000, eval_episodes=10)


@pytest.fixture
def room() -> GridEnv:
    """A 5x5 bordered room with a 3x3 free interior, start (1, 1)."""
    return make_empty_room(5, 5)


@pytest.fixture
def big_room() -> GridEnv:
    return make_empty_room(7, 7)


@pytest.fixture
def crossing() -> GridEnv:
    return make_simple_crossing(0)


@pytest.fixture
def lava() -> GridEnv:
    return make_lava_crossing(0)


@pytest.fixture
def fast_q() -> QHyperParams:
    return FAST_Q


@pytest.fixture
def room_tables(big_room: GridEnv) -> dict[State, QTable]:
    """Trained Q-tables for three goals in the 7x7 room."""
    goals = [State(5, 1), State(1, 5), State(5, 5)]
    return {goal: train_q_agent(big_room, goal, FAST_Q, seed=n) for n, goal in enumerate(goals)}


@pytest.fixture
def random_model(big_room: GridEnv) -> MetricModel:
    """An untrained but generic metric model for the 7x7 room."""
    rng = np.random.default_rng(7)
    params = LstmParams.initialize(input_dim(big_room, EncodingMode.ONE_HOT), 8, rng)
    # spread the weights so distinct traces get clearly distinct embeddings
    params.scale_(3.0)
    return MetricModel(params=params, encoding=EncodingMode.ONE_HOT, env_id=big_room.env_id)
