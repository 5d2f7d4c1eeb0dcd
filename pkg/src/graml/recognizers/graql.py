"""GRAQL baseline: one Q-policy per active goal, scored by observation likelihood.

The score of a goal is the mean log-probability of the observed actions under a
softmax policy over that goal's Q-values. This is one of several distance
measures used for GR-as-RL and is the one implemented here.
"""

import math
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax

from graml.env import N_ACTIONS, GridEnv, State
from graml.errors import AdaptationError, AdaptationTimeout, ContractViolation, TrainingFailure
from graml.log import get_logger
from graml.recognizers.base import RecognitionResult, argmax_goal
from graml.rl import QHyperParams, QTable, Trace, train_q_agent

logger = get_logger(__name__)

_UNIFORM_LOG_LIKELIHOOD = -math.log(N_ACTIONS)


@dataclass(frozen=True)
class GraqlState:
    qtables: dict[State, QTable]
    adaptation_time: float = 0.0

    def __post_init__(self) -> None:
        if any(table.goal != goal for goal, table in self.qtables.items()):
            raise ContractViolation("each Q-table must be keyed by its own goal")


def graql_adapt(
    env: GridEnv,
    goal_set: Sequence[State],
    hp: QHyperParams | None = None,
    seed: int = 0,
    *,
    timeout: float | None = None,
    workers: int = 1,
) -> GraqlState:
    """Train a Q-table for every active goal; the wall clock is the adaptation cost."""
    if not goal_set:
        raise ContractViolation("goal_set must not be empty")
    goals = [State(*goal) for goal in goal_set]
    started = time.perf_counter()

    def train_one(goal_number: int, goal: State) -> QTable:
        if timeout is not None and time.perf_counter() - started > timeout:
            raise AdaptationTimeout("GRAQL adaptation exceeded its budget", timeout=timeout)
        try:
            return train_q_agent(env, goal, hp, seed=seed + 7919 * goal_number)
        except TrainingFailure as e:
            raise AdaptationError(
                "GRAQL could not learn a goal", cause=e.kind, **e.details
            ) from e

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            tables = list(pool.map(train_one, range(len(goals)), goals))
    else:
        tables = [train_one(n, goal) for n, goal in enumerate(goals)]

    elapsed = time.perf_counter() - started
    if timeout is not None and elapsed > timeout:
        raise AdaptationTimeout("GRAQL adaptation exceeded its budget", timeout=timeout)
    logger.info("graql_adapted", goals=len(goals), seconds=round(elapsed, 4))
    return GraqlState(qtables=dict(zip(goals, tables, strict=True)), adaptation_time=elapsed)


def observation_log_likelihood(table: QTable, obs: Trace, temperature: float) -> float:
    """Mean log-probability of the observed actions under softmax(Q / temperature)."""
    total = 0.0
    for state, action in obs.observations:
        if not table.covers(state):
            total += _UNIFORM_LOG_LIKELIHOOD
            continue
        log_probs = log_softmax(table.q_values(state) / temperature)
        total += float(log_probs[int(action)])
    return total / len(obs.observations)


def graql_infer(state: GraqlState, obs: Trace, temperature: float = 1.0) -> RecognitionResult:
    """Return the goal whose policy best explains ``obs``."""
    if not obs.observations:
        raise ContractViolation("observation trace is empty")
    if temperature <= 0:
        raise ContractViolation("temperature must be positive", temperature=temperature)
    if not state.qtables:
        raise ContractViolation("GRAQL state has no goals")
    started = time.perf_counter()
    scores = {
        goal: observation_log_likelihood(table, obs, temperature)
        for goal, table in state.qtables.items()
    }
    if not all(np.isfinite(list(scores.values()))):
        raise ContractViolation("non-finite GRAQL score")
    return RecognitionResult(
        goal=argmax_goal(scores),
        per_goal_scores=scores,
        inference_time=time.perf_counter() - started,
    )
