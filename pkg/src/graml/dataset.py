"""Self-supervised pair generation, observability masking, and trace encoding."""

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
from numpy.typing import NDArray

from graml.env import N_ACTIONS, Action, GridEnv, State
from graml.errors import ContractViolation, DatasetError, EncodingError
from graml.log import get_logger
from graml.rl import GCQTable, MaskKind, QScale, QTable, Trace, stochastic_rollout

logger = get_logger(__name__)

OBSERVABILITY_RATIOS = (0.3, 0.5, 0.7, 1.0)
PARTIAL_KINDS = (MaskKind.CONSECUTIVE, MaskKind.NON_CONSECUTIVE)


class EncodingMode(StrEnum):
    ONE_HOT = "one_hot"
    COORDINATES = "coordinates"
    # one-hot cell followed by scaled coordinates
    HYBRID = "hybrid"


@dataclass(frozen=True)
class PairSample:
    trace_a: Trace
    trace_b: Trace
    label: int

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise ContractViolation("label must be 0 or 1", label=self.label)
        if self.trace_a.goal is None or self.trace_b.goal is None:
            raise ContractViolation("pair traces must carry their goals")
        if self.label != int(self.trace_a.goal == self.trace_b.goal):
            raise ContractViolation(
                "label must be 1 exactly when both traces share a goal",
                goal_a=self.trace_a.goal,
                goal_b=self.trace_b.goal,
                label=self.label,
            )


@dataclass(frozen=True)
class EncodedSequence:
    """Per-step feature vectors, shape ``(len, input_dim)``."""

    steps: NDArray[np.float64]
    source: Trace | None = None

    def __post_init__(self) -> None:
        if self.steps.ndim != 2:
            raise ContractViolation("encoded steps must be a 2-d array", shape=self.steps.shape)

    def __len__(self) -> int:
        return int(self.steps.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.steps.shape[1])


def kept_count(length: int, ratio: float) -> int:
    """ceil(ratio * length), at least one observation."""
    if not 0.0 < ratio <= 1.0:
        raise ContractViolation("observability ratio must lie in (0, 1]", ratio=ratio)
    # the epsilon absorbs products such as 0.7 * 10 = 7.000000000000001
    return max(1, min(length, math.ceil(ratio * length - 1e-9)))


def _masked(trace: Trace, keep: Sequence[int], kind: MaskKind, ratio: float) -> Trace:
    if ratio >= 1.0:
        return trace
    return Trace(
        observations=tuple(trace.observations[i] for i in keep),
        goal=trace.goal,
        mask_kind=kind,
        observed_ratio=ratio,
        indices=tuple(trace.indices[i] for i in keep),
    )


def mask_consecutive(trace: Trace, ratio: float) -> Trace:
    """Keep the prefix of length ceil(ratio * len)."""
    if not trace.observations:
        raise ContractViolation("cannot mask an empty trace")
    n = kept_count(len(trace), ratio)
    return _masked(trace, range(n), MaskKind.CONSECUTIVE, ratio)


def mask_nonconsecutive(trace: Trace, ratio: float, rng: np.random.Generator) -> Trace:
    """Keep a uniformly random, order-preserving subset of size ceil(ratio * len)."""
    if not trace.observations:
        raise ContractViolation("cannot mask an empty trace")
    n = kept_count(len(trace), ratio)
    if ratio >= 1.0:
        return trace
    keep = np.sort(rng.choice(len(trace), size=n, replace=False))
    return _masked(trace, keep.tolist(), MaskKind.NON_CONSECUTIVE, ratio)


def mask_trace(trace: Trace, kind: MaskKind, ratio: float, rng: np.random.Generator) -> Trace:
    if kind is MaskKind.NON_CONSECUTIVE:
        return mask_nonconsecutive(trace, ratio, rng)
    return mask_consecutive(trace, ratio)


def random_mask(trace: Trace, rng: np.random.Generator) -> Trace:
    """Mask with a ratio and kind drawn uniformly from the evaluation grid."""
    ratio = OBSERVABILITY_RATIOS[int(rng.integers(len(OBSERVABILITY_RATIOS)))]
    kind = PARTIAL_KINDS[int(rng.integers(len(PARTIAL_KINDS)))]
    return mask_trace(trace, kind, ratio, rng)


def generate_pairs(
    traces_by_goal: Mapping[State, Sequence[Trace]],
    n_pairs: int,
    balance: float = 0.5,
    rng: np.random.Generator | None = None,
) -> list[PairSample]:
    """Randomly pair goal-directed traces into labeled samples.

    ``round(balance * n_pairs)`` pairs share a goal; both members of every pair
    are masked independently.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    goals = [goal for goal, traces in traces_by_goal.items() if traces]
    if len(goals) < 2:
        raise DatasetError("pair generation needs at least two goals with traces", goals=len(goals))
    if not 0.0 < balance < 1.0:
        raise DatasetError("balance must lie in (0, 1)", balance=balance)
    if n_pairs <= 0:
        return []

    n_positive = round(balance * n_pairs)
    labels = np.array([1] * n_positive + [0] * (n_pairs - n_positive))
    rng.shuffle(labels)

    pairs = []
    for label in labels.tolist():
        if label == 1:
            goal = goals[int(rng.integers(len(goals)))]
            pool = traces_by_goal[goal]
            first = pool[int(rng.integers(len(pool)))]
            second = pool[int(rng.integers(len(pool)))]
        else:
            i, j = rng.choice(len(goals), size=2, replace=False)
            pool_a, pool_b = traces_by_goal[goals[int(i)]], traces_by_goal[goals[int(j)]]
            first = pool_a[int(rng.integers(len(pool_a)))]
            second = pool_b[int(rng.integers(len(pool_b)))]
        pairs.append(PairSample(random_mask(first, rng), random_mask(second, rng), label))
    return pairs


def generate_traces(
    policies: Mapping[State, QTable] | GCQTable,
    env: GridEnv,
    goals: Sequence[State] | None = None,
    per_goal: int = 20,
    temperature: float = 0.5,
    jitter_steps: int = 3,
    seed: int = 0,
    scale: QScale = QScale.GAP,
) -> dict[State, list[Trace]]:
    """Stochastic goal-directed traces for every goal, from per-goal or GC policies."""
    if isinstance(policies, GCQTable):
        goal_list = list(goals) if goals is not None else list(policies.goal_set)
    else:
        goal_list = list(goals) if goals is not None else list(policies)

    traces: dict[State, list[Trace]] = {}
    for goal_number, goal in enumerate(goal_list):
        policy = policies if isinstance(policies, GCQTable) else policies[goal]
        traces[goal] = [
            stochastic_rollout(
                policy,
                env,
                seed=seed + goal_number * per_goal + j,
                temperature=temperature,
                jitter_steps=jitter_steps,
                goal=goal,
                scale=scale,
            )
            for j in range(per_goal)
        ]
    logger.debug("traces_generated", goals=len(goal_list), per_goal=per_goal)
    return traces


def input_dim(env: GridEnv, mode: EncodingMode) -> int:
    mode = EncodingMode(mode)
    if mode is EncodingMode.ONE_HOT:
        return env.n_states + N_ACTIONS
    if mode is EncodingMode.HYBRID:
        return env.n_states + 2 + N_ACTIONS
    return 2 + N_ACTIONS


def encode_trace(
    trace: Trace, env: GridEnv, mode: EncodingMode = EncodingMode.ONE_HOT
) -> EncodedSequence:
    """Encode each observation as a state feature block followed by an action one-hot."""
    mode = EncodingMode(mode)
    dim = input_dim(env, mode)
    action_offset = dim - N_ACTIONS
    steps = np.zeros((len(trace), dim))
    for t, (raw_state, action) in enumerate(trace.observations):
        state = State(*raw_state)
        if not env.in_bounds(state):
            raise EncodingError("observation outside the grid", state=list(state), step=t)
        try:
            action_position = int(Action(action))
        except ValueError as e:
            raise EncodingError("unknown action", action=action, step=t) from e
        if mode is EncodingMode.COORDINATES:
            steps[t, 0] = state.x / env.width
            steps[t, 1] = state.y / env.height
        else:
            steps[t, env.state_index(state)] = 1.0
        if mode is EncodingMode.HYBRID:
            steps[t, action_offset - 2] = state.x / env.width
            steps[t, action_offset - 1] = state.y / env.height
        steps[t, action_offset + action_position] = 1.0
    return EncodedSequence(steps=steps, source=trace)


def decode_step(
    vector: NDArray[np.float64], env: GridEnv, mode: EncodingMode = EncodingMode.ONE_HOT
) -> tuple[State, Action]:
    """Inverse of one encoded observation."""
    mode = EncodingMode(mode)
    action = Action(int(np.argmax(vector[-N_ACTIONS:])))
    if mode is not EncodingMode.COORDINATES:
        state = env.index_state(int(np.argmax(vector[: env.n_states])))
    else:
        state = State(round(vector[0] * env.width), round(vector[1] * env.height))
    return state, action
