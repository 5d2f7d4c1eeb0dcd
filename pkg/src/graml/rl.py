"""Tabular goal-directed and goal-conditioned Q-learning, and trace rollouts."""

from collections.abc import Sequence
from dataclasses import dataclass
from enum import StrEnum
from typing import Protocol

import numpy as np
from numpy.typing import NDArray
from scipy.special import softmax

from graml.env import (
    N_ACTIONS,
    Action,
    DoneReason,
    GridEnv,
    State,
    initial_state,
    transition_table,
)
from graml.errors import ContractViolation, GenerationFailure, TrainingFailure
from graml.log import get_logger

logger = get_logger(__name__)


class MaskKind(StrEnum):
    FULL = "full"
    CONSECUTIVE = "consecutive"
    NON_CONSECUTIVE = "non_consecutive"


class QScale(StrEnum):
    """Units the Boltzmann temperature is measured in."""

    # softmax(Q / temperature)
    RAW = "raw"
    # softmax((Q - max Q) / (temperature * (max Q - median Q)))
    GAP = "gap"



Observation = tuple[State, Action]


@dataclass(frozen=True)
class Trace:
    """An ordered sequence of (state, action) observations.

    ``indices`` are the positions of the kept observations in the full trace the
    mask was applied to.
    """

    observations: tuple[Observation, ...]
    goal: State | None = None
    mask_kind: MaskKind = MaskKind.FULL
    observed_ratio: float = 1.0
    indices: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not 0.0 < self.observed_ratio <= 1.0:
            raise ContractViolation("observed_ratio must lie in (0, 1]", ratio=self.observed_ratio)
        if (self.observed_ratio == 1.0) != (self.mask_kind is MaskKind.FULL):
            raise ContractViolation(
                "observed_ratio is 1 exactly when the trace is unmasked",
                ratio=self.observed_ratio,
                mask_kind=str(self.mask_kind),
            )
        if not self.indices:
            object.__setattr__(self, "indices", tuple(range(len(self.observations))))
        elif len(self.indices) != len(self.observations):
            raise ContractViolation("indices must match observations one to one")

    def __len__(self) -> int:
        return len(self.observations)

    @property
    def states(self) -> list[State]:
        return [state for state, _ in self.observations]

    @property
    def actions(self) -> list[Action]:
        return [action for _, action in self.observations]

    def prefix(self, length: int) -> "Trace":
        """The first ``length`` observations; the trace itself if already that short."""
        if length < 1:
            raise ContractViolation("prefix length must be at least 1", length=length)
        if length >= len(self.observations):
            return self
        return Trace(
            observations=self.observations[:length],
            goal=self.goal,
            mask_kind=MaskKind.CONSECUTIVE,
            observed_ratio=length / len(self.observations) * self.observed_ratio,
            indices=self.indices[:length],
        )

    def replays_on(self, env: GridEnv) -> bool:
        """Whether consecutive observations agree with the environment dynamics."""
        goal = self.goal if self.goal is not None else State(-1, -1)
        pairs = zip(self.observations, self.observations[1:], strict=False)
        for t, ((state, action), (next_state, _)) in enumerate(pairs):
            if t >= env.max_steps:
                return False
            if env.step(state, action, goal, t).next_state != next_state:
                return False
        return True

    def reaches(self, env: GridEnv, goal: State) -> bool:
        """Whether the last observation steps into ``goal``."""
        if not self.observations:
            return False
        state, action = self.observations[-1]
        return env.step(state, action, goal, 0).done_reason is DoneReason.GOAL_REACHED


@dataclass(frozen=True)
class QHyperParams:
    """Tabular Q-learning settings.

    Exploration is epsilon-greedy, annealed linearly from ``epsilon_start`` to
    ``epsilon_end`` over the first ``anneal_fraction`` of the episodes. Episodes
    start from a uniformly drawn lava-free cell other than the goal.
    """

    episodes: int = 50_000
    alpha: float = 0.1
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    anneal_fraction: float = 0.8
    eval_episodes: int = 20
    eval_jitter: int = 3
    success_threshold: float = 0.95

    def __post_init__(self) -> None:
        if self.episodes < 0:
            raise ContractViolation("episodes must be non-negative", episodes=self.episodes)
        if not 0.0 < self.alpha <= 1.0:
            raise ContractViolation("alpha must lie in (0, 1]", alpha=self.alpha)
        if not 0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0:
            raise ContractViolation(
                "need 0 <= epsilon_end <= epsilon_start <= 1",
                epsilon_start=self.epsilon_start,
                epsilon_end=self.epsilon_end,
            )
        if not 0.0 < self.anneal_fraction <= 1.0:
            raise ContractViolation("anneal_fraction must lie in (0, 1]")

    def epsilon_at(self, episode: int) -> float:
        horizon = max(1, int(self.episodes * self.anneal_fraction))
        progress = min(1.0, episode / horizon)
        return self.epsilon_start + (self.epsilon_end - self.epsilon_start) * progress


class Policy(Protocol):
    """Anything that yields per-action values for a state and goal."""

    def q_values(self, state: State, goal: State | None = None) -> NDArray[np.float64]: ...


@dataclass(frozen=True)
class QTable:
    """Action values for one goal; rows indexed by ``GridEnv.state_index``."""

    values: NDArray[np.float64]
    goal: State
    width: int
    height: int
    trained_steps: int = 0

    def __post_init__(self) -> None:
        if self.values.shape != (self.width * self.height, N_ACTIONS):
            raise ContractViolation(
                "Q-table shape does not match its grid", shape=self.values.shape
            )
        if not np.all(np.isfinite(self.values)):
            raise ContractViolation("Q-table holds non-finite values")

    def covers(self, state: State) -> bool:
        return 0 <= state.x < self.width and 0 <= state.y < self.height

    def q_values(self, state: State, goal: State | None = None) -> NDArray[np.float64]:
        if goal is not None and goal != self.goal:
            raise ContractViolation(
                "Q-table was trained for another goal", goal=goal, table_goal=self.goal
            )
        return self.values[state.y * self.width + state.x]

    def greedy_action(self, state: State, goal: State | None = None) -> Action:
        return Action(int(np.argmax(self.q_values(state, goal))))


@dataclass(frozen=True)
class GCQTable:
    """Goal-conditioned action values, ``values[goal_position, state_index, action]``."""

    values: NDArray[np.float64]
    goal_set: tuple[State, ...]
    width: int
    height: int
    trained_steps: int = 0

    def __post_init__(self) -> None:
        expected = (len(self.goal_set), self.width * self.height, N_ACTIONS)
        if self.values.shape != expected:
            raise ContractViolation("GC Q-table shape does not match", shape=self.values.shape)
        if len(set(self.goal_set)) != len(self.goal_set):
            raise ContractViolation("goal_set has duplicates")

    def goal_position(self, goal: State) -> int:
        try:
            return self.goal_set.index(goal)
        except ValueError as e:
            raise ContractViolation("goal is outside the trained goal set", goal=goal) from e

    def covers(self, state: State) -> bool:
        return 0 <= state.x < self.width and 0 <= state.y < self.height

    def q_values(self, state: State, goal: State | None = None) -> NDArray[np.float64]:
        if goal is None:
            raise ContractViolation("a goal-conditioned policy needs a goal")
        return self.values[self.goal_position(goal), state.y * self.width + state.x]

    def greedy_action(self, state: State, goal: State | None = None) -> Action:
        return Action(int(np.argmax(self.q_values(state, goal))))

    def for_goal(self, goal: State) -> QTable:
        """The slice of the table conditioned on ``goal``."""
        return QTable(
            values=self.values[self.goal_position(goal)].copy(),
            goal=goal,
            width=self.width,
            height=self.height,
            trained_steps=self.trained_steps,
        )


def softmax_policy(
    q_values: NDArray[np.float64], temperature: float, scale: QScale = QScale.GAP
) -> NDArray[np.float64]:
    """Boltzmann action distribution over Q-values at ``temperature``.

    With ``QScale.RAW`` this is plain ``softmax(Q / temperature)``. With
    ``QScale.GAP`` the temperature is measured in units of the state's typical
    gap, the best value minus the median one (the full spread when the best
    actions hold the median), so one temperature behaves alike near the goal
    and far from it and a single catastrophic action does not flatten the rest.
    A state whose actions all tie gets the uniform distribution under either scale.
    """
    if temperature <= 0:
        raise ContractViolation("temperature must be positive", temperature=temperature)
    q = np.asarray(q_values, dtype=np.float64)
    best = float(q.max())
    if QScale(scale) is QScale.RAW:
        return softmax((q - best) / temperature)
    spread = best - float(np.median(q))
    if spread <= 0.0:
        spread = best - float(q.min())
    if spread <= 0.0:
        return np.full(q.shape, 1.0 / q.size)
    return softmax((q - best) / (temperature * spread))


def _check_goal(env: GridEnv, goal: State) -> State:
    goal = State(*goal)
    if not env.is_safe(goal):
        raise ContractViolation("goal must be a free, lava-free cell", goal=goal)
    return goal


def _start_indices(env: GridEnv, exclude: State | None = None) -> list[int]:
    return [env.state_index(cell) for cell in env.safe_cells if cell != exclude]


def greedy_success_rate(
    policy: Policy, env: GridEnv, goal: State, episodes: int, jitter: int, seed: int
) -> float:
    """Fraction of jittered-start episodes in which the greedy policy reaches ``goal``."""
    if episodes <= 0:
        return 1.0
    rng = np.random.default_rng(seed)
    successes = 0
    for _ in range(episodes):
        state = initial_state(env, rng, jitter, avoid=(goal,))
        for t in range(env.max_steps):
            action = Action(int(np.argmax(policy.q_values(state, goal))))
            result = env.step(state, action, goal, t)
            if result.done:
                successes += result.done_reason is DoneReason.GOAL_REACHED
                break
            state = result.next_state
    return successes / episodes


def train_q_agent(
    env: GridEnv, goal: State, hp: QHyperParams | None = None, seed: int = 0
) -> QTable:
    """Train a goal-directed Q-table with epsilon-greedy exploration.

    Raises TrainingFailure when the greedy policy misses the success threshold.
    """
    hp = hp or QHyperParams()
    goal = _check_goal(env, goal)
    model = transition_table(env, goal)
    next_index = model.next_index.tolist()
    reward = model.reward.tolist()
    terminal = model.terminal.tolist()
    starts = _start_indices(env, exclude=goal)

    values = np.zeros((env.n_states, N_ACTIONS))
    q = values.tolist()
    rng = np.random.default_rng(seed)
    gamma = env.gamma
    alpha = hp.alpha
    steps = 0

    for episode in range(hp.episodes):
        epsilon = hp.epsilon_at(episode)
        s = starts[int(rng.integers(len(starts)))]
        for _ in range(env.max_steps):
            row = q[s]
            if rng.random() < epsilon:
                a = int(rng.integers(N_ACTIONS))
            else:
                a = row.index(max(row))
            s_next = next_index[s][a]
            target = reward[s][a]
            if not terminal[s][a]:
                target += gamma * max(q[s_next])
            row[a] += alpha * (target - row[a])
            steps += 1
            if terminal[s][a]:
                break
            s = s_next

    table = QTable(
        values=np.array(q, dtype=np.float64),
        goal=goal,
        width=env.width,
        height=env.height,
        trained_steps=steps,
    )
    if hp.episodes > 0:
        rate = greedy_success_rate(table, env, goal, hp.eval_episodes, hp.eval_jitter, seed + 1)
        if rate < hp.success_threshold:
            raise TrainingFailure(
                "Q-agent missed its greedy success criterion",
                goal=list(goal),
                success_rate=rate,
                threshold=hp.success_threshold,
                episodes=hp.episodes,
            )
        logger.debug("q_agent_trained", goal=goal, episodes=hp.episodes, success_rate=rate)
    return table


def train_gc_q_agent(
    env: GridEnv,
    goal_set: Sequence[State],
    hp: QHyperParams | None = None,
    seed: int = 0,
) -> GCQTable:
    """Train one goal-conditioned Q-table over ``goal_set``.

    Each episode pursues a goal drawn uniformly from the set; every experienced
    transition updates the values of all goals at once, each with its own
    reward and termination.
    """
    hp = hp or QHyperParams()
    if not goal_set:
        raise ContractViolation("goal_set must not be empty")
    goals = tuple(_check_goal(env, goal) for goal in goal_set)
    if len(set(goals)) != len(goals):
        raise ContractViolation("goal_set has duplicates")

    base = transition_table(env, State(-1, -1))
    goal_index = np.array([env.state_index(goal) for goal in goals])
    lava_mask = np.zeros(env.n_states, dtype=bool)
    for cell in env.lava:
        lava_mask[env.state_index(cell)] = True
    starts = _start_indices(env)
    n_goals = len(goals)

    values = np.zeros((n_goals, env.n_states, N_ACTIONS))
    rng = np.random.default_rng(seed)
    gamma = env.gamma
    alpha = hp.alpha
    steps = 0
    all_goals = np.arange(n_goals)

    for episode in range(hp.episodes):
        epsilon = hp.epsilon_at(episode)
        g = int(rng.integers(n_goals))
        s = starts[int(rng.integers(len(starts)))]
        while s == goal_index[g]:
            s = starts[int(rng.integers(len(starts)))]
        for _ in range(env.max_steps):
            if rng.random() < epsilon:
                a = int(rng.integers(N_ACTIONS))
            else:
                a = int(np.argmax(values[g, s]))
            s_next = int(base.next_index[s, a])
            hits_goal = goal_index == s_next
            if lava_mask[s_next]:
                rewards = np.full(n_goals, env.lava_reward)
                done = np.ones(n_goals, dtype=bool)
            else:
                rewards = np.where(hits_goal, env.goal_reward, env.step_reward)
                done = hits_goal
            bootstrap = values[all_goals, s_next].max(axis=1)
            targets = rewards + gamma * bootstrap * ~done
            values[:, s, a] += alpha * (targets - values[:, s, a])
            steps += 1
            if done[g]:
                break
            s = s_next

    table = GCQTable(
        values=values,
        goal_set=goals,
        width=env.width,
        height=env.height,
        trained_steps=steps,
    )
    if hp.episodes > 0:
        failed = {}
        for position, goal in enumerate(goals):
            rate = greedy_success_rate(
                table, env, goal, hp.eval_episodes, hp.eval_jitter, seed + 1 + position
            )
            if rate < hp.success_threshold:
                failed[f"{goal.x},{goal.y}"] = rate
        if failed:
            raise TrainingFailure(
                "goal-conditioned agent missed its success criterion",
                failed_goals=failed,
                threshold=hp.success_threshold,
            )
        logger.debug("gc_agent_trained", goals=n_goals, episodes=hp.episodes, steps=steps)
    return table


def stochastic_rollout(
    policy: Policy,
    env: GridEnv,
    seed: int,
    temperature: float = 0.5,
    jitter_steps: int = 0,
    goal: State | None = None,
    max_retries: int = 20,
    scale: QScale = QScale.GAP,
) -> Trace:
    """Sample a goal-reaching trace with actions drawn from :func:`softmax_policy`.

    Rollouts that hit lava or time out are discarded and redrawn.
    """
    if goal is None:
        goal = getattr(policy, "goal", None)
    if goal is None:
        raise ContractViolation("rollout needs a goal for a goal-conditioned policy")
    goal = _check_goal(env, goal)
    if temperature <= 0:
        raise ContractViolation("temperature must be positive", temperature=temperature)
    rng = np.random.default_rng(seed)

    last_reason = DoneReason.RUNNING
    for _ in range(max_retries):
        state = initial_state(env, rng, jitter_steps, avoid=(goal,))
        observations: list[Observation] = []
        for t in range(env.max_steps):
            probs = softmax_policy(policy.q_values(state, goal), temperature, scale)
            action = Action(int(rng.choice(N_ACTIONS, p=probs)))
            result = env.step(state, action, goal, t)
            observations.append((state, action))
            if result.done:
                last_reason = result.done_reason
                break
            state = result.next_state
        if last_reason is DoneReason.GOAL_REACHED:
            return Trace(observations=tuple(observations), goal=goal)

    raise GenerationFailure(
        "rollouts kept failing to reach the goal",
        goal=list(goal),
        retries=max_retries,
        last_reason=str(last_reason),
    )
