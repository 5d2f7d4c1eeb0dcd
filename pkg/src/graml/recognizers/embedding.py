"""GRAML goal adaptation and inference over per-goal trace libraries."""

import time
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import StrEnum

import numpy as np

from graml.env import GridEnv, State
from graml.errors import AdaptationError, ContractViolation, GramlError
from graml.log import get_logger
from graml.metric import Embedding, MetricModel, similarity
from graml.planner import MctsConfig, mcts_plan
from graml.recognizers.base import RecognitionResult, argmax_goal
from graml.rl import GCQTable, QScale, Trace, stochastic_rollout

logger = get_logger(__name__)


class AdaptationStrategy(StrEnum):
    EXPERT_TRACES = "expert_traces"
    MCTS = "mcts"
    GOAL_CONDITIONED = "goal_conditioned"


@dataclass(frozen=True)
class GoalLibrary:
    goal: State
    traces: tuple[Trace, ...]

    def __post_init__(self) -> None:
        if not self.traces:
            raise ContractViolation("a goal library needs at least one trace", goal=self.goal)
        if any(trace.goal != self.goal for trace in self.traces):
            raise ContractViolation("library traces must lead to the library goal", goal=self.goal)

    @property
    def size(self) -> int:
        return len(self.traces)


@dataclass(frozen=True)
class AdaptedState:
    libraries: tuple[GoalLibrary, ...]
    strategy: AdaptationStrategy
    adaptation_time: float = 0.0
    # untruncated library embeddings, only for timing comparisons
    precomputed: tuple[tuple[Embedding, ...], ...] | None = None

    def __post_init__(self) -> None:
        goals = self.goals
        if len(set(goals)) != len(goals):
            raise ContractViolation("adapted goals must be distinct")

    @property
    def goals(self) -> list[State]:
        return [library.goal for library in self.libraries]


AdaptationSource = Mapping[State, Sequence[Trace]] | MctsConfig | GCQTable


def _library_builder(
    env: GridEnv,
    strategy: AdaptationStrategy,
    source: AdaptationSource,
    library_size: int,
    temperature: float,
    jitter_steps: int,
    seed: int,
    scale: QScale = QScale.GAP,
) -> Callable[[int, State], GoalLibrary]:
    if strategy is AdaptationStrategy.EXPERT_TRACES:
        if not isinstance(source, Mapping):
            raise ContractViolation("expert adaptation needs a goal -> traces mapping")
        experts = source

        def from_experts(_: int, goal: State) -> GoalLibrary:
            provided = list(experts.get(goal, ()))[:library_size]
            if not provided:
                raise AdaptationError("no expert trace for goal", goal=list(goal))
            traces = []
            for trace in provided:
                if not trace.reaches(env, goal):
                    raise AdaptationError("expert trace does not end at its goal", goal=list(goal))
                traces.append(trace if trace.goal == goal else replace(trace, goal=goal))
            return GoalLibrary(goal, tuple(traces))

        return from_experts

    if strategy is AdaptationStrategy.MCTS:
        if not isinstance(source, MctsConfig):
            raise ContractViolation("MCTS adaptation needs an MctsConfig")
        cfg = source

        def from_planner(goal_number: int, goal: State) -> GoalLibrary:
            traces = tuple(
                mcts_plan(env, goal, replace(cfg, seed=cfg.seed + 1000 * goal_number + j))
                for j in range(library_size)
            )
            return GoalLibrary(goal, traces)

        return from_planner

    if not isinstance(source, GCQTable):
        raise ContractViolation("goal-conditioned adaptation needs a GCQTable")
    policy = source

    def from_policy(goal_number: int, goal: State) -> GoalLibrary:
        traces = tuple(
            stochastic_rollout(
                policy,
                env,
                seed=seed + 1000 * goal_number + j,
                temperature=temperature,
                jitter_steps=jitter_steps,
                goal=goal,
                scale=scale,
            )
            for j in range(library_size)
        )
        return GoalLibrary(goal, traces)

    return from_policy


def adapt_goals(
    model: MetricModel,
    env: GridEnv,
    goal_set: Sequence[State],
    strategy: AdaptationStrategy,
    source: AdaptationSource,
    library_size: int = 1,
    *,
    temperature: float = 0.5,
    jitter_steps: int = 0,
    seed: int = 0,
    precompute: bool = False,
    workers: int = 1,
    scale: QScale = QScale.GAP,
) -> AdaptedState:
    """Build one library of ``library_size`` goal-directed traces per active goal."""
    strategy = AdaptationStrategy(strategy)
    if not goal_set:
        raise ContractViolation("goal_set must not be empty")
    if library_size < 1:
        raise ContractViolation("library_size must be at least 1", library_size=library_size)
    goals = [State(*goal) for goal in goal_set]

    started = time.perf_counter()
    build = _library_builder(
        env, strategy, source, library_size, temperature, jitter_steps, seed, scale
    )

    def guarded(goal_number: int, goal: State) -> GoalLibrary:
        try:
            return build(goal_number, goal)
        except AdaptationError:
            raise
        except GramlError as e:
            raise AdaptationError(
                "library generation failed", goal=list(goal), cause=e.kind, detail=e.message
            ) from e

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            libraries = list(pool.map(guarded, range(len(goals)), goals))
    else:
        libraries = [guarded(n, goal) for n, goal in enumerate(goals)]

    precomputed = None
    if precompute:
        precomputed = tuple(
            tuple(model.embed_trace(trace, env) for trace in library.traces)
            for library in libraries
        )
    elapsed = time.perf_counter() - started
    logger.info(
        "goals_adapted",
        strategy=str(strategy),
        goals=len(goals),
        library_size=library_size,
        seconds=round(elapsed, 4),
    )
    return AdaptedState(
        libraries=tuple(libraries),
        strategy=strategy,
        adaptation_time=elapsed,
        precomputed=precomputed,
    )


def embed_library(
    model: MetricModel, library: GoalLibrary, truncate_len: int, env: GridEnv
) -> list[Embedding]:
    """Embeddings of the library traces cut to their first ``truncate_len`` observations."""
    if truncate_len < 1:
        raise ContractViolation("truncate_len must be at least 1", truncate_len=truncate_len)
    return [model.embed_trace(trace.prefix(truncate_len), env) for trace in library.traces]


def infer(model: MetricModel, adapted: AdaptedState, obs: Trace, env: GridEnv) -> RecognitionResult:
    """Return the goal whose library is, on average, most similar to ``obs``."""
    if not obs.observations:
        raise ContractViolation("observation trace is empty")
    if not adapted.libraries:
        raise ContractViolation("adapted state has no goal libraries")

    started = time.perf_counter()
    observed = model.embed_trace(obs, env)
    scores: dict[State, float] = {}
    for position, library in enumerate(adapted.libraries):
        if adapted.precomputed is not None:
            embeddings: Sequence[Embedding] = adapted.precomputed[position]
        else:
            embeddings = embed_library(model, library, len(obs), env)
        scores[library.goal] = float(np.mean([similarity(v, observed) for v in embeddings]))
    goal = argmax_goal(scores)
    return RecognitionResult(
        goal=goal,
        per_goal_scores=scores,
        inference_time=time.perf_counter() - started,
    )
