"""ODGR experiment driver.

An environment's ODGR problem fixes its base goals first, runs domain learning
once per algorithm, then receives its goal sets one after another. For every
goal set each algorithm adapts, and every goal of the set is used as the true
goal of an observation trace shown to the recognizers under each mask kind and
observability ratio.

Raw records never contain wall-clock values; those go to separate timing
records so that one config and seed always yield byte-identical raw logs.
"""

import difflib
import time
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Any

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from graml import reports
from graml.config import ExperimentConfig, settings
from graml.dataset import (
    OBSERVABILITY_RATIOS,
    PARTIAL_KINDS,
    generate_pairs,
    generate_traces,
    mask_trace,
)
from graml.env import GridEnv, State, initial_state, make_env, reachable_cells
from graml.errors import ContractViolation, ExperimentError, GramlError
from graml.log import get_logger
from graml.metric import MetricModel, similarity, train
from graml.planner import expert_trace
from graml.recognizers import (
    AdaptationStrategy,
    AdaptedState,
    Algorithm,
    GraqlState,
    RecognitionResult,
    adapt_goals,
    graql_adapt,
    graql_infer,
    infer,
)
from graml.rl import (
    GCQTable,
    MaskKind,
    QTable,
    Trace,
    stochastic_rollout,
    train_gc_q_agent,
    train_q_agent,
)

logger = get_logger(__name__)

_SAMPLING_ATTEMPTS = 200
GRAML_ALGORITHMS = (Algorithm.BG_GRAML, Algorithm.GC_GRAML)


class _Stream(IntEnum):
    BASE_GOALS = 1
    GOAL_SETS = 2
    BASE_AGENTS = 3
    BG_DATASET = 4
    GC_AGENT = 5
    GC_DATASET = 6
    METRIC = 7
    ACTORS = 8
    OBSERVATIONS = 9
    MASKS = 10
    ADAPTATION = 11
    GRAQL = 12
    EXPERTS = 13


def derive_seed(seed: int, stream: _Stream, *parts: int) -> int:
    """Independent seed for one named random stream of an experiment."""
    entropy = [seed, int(stream), *(int(p) for p in parts)]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def _rng(seed: int, stream: _Stream, *parts: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, stream, *parts))


# =============================================================================
# Problems
# =============================================================================


@dataclass(frozen=True)
class ObservationSpec:
    mask_kind: MaskKind
    ratio: float

    @property
    def column(self) -> str | None:
        return reports.column_for(self.mask_kind, self.ratio)


OBSERVATION_SPECS = tuple(
    ObservationSpec(kind, ratio) for kind in PARTIAL_KINDS for ratio in OBSERVABILITY_RATIOS
)


@dataclass(frozen=True)
class OdgrProblem:
    """One environment, its base goals, and the goal sets that arrive over time."""

    env: GridEnv
    base_goals: tuple[State, ...]
    goal_sets: tuple[tuple[State, ...], ...]
    observation_specs: tuple[ObservationSpec, ...] = OBSERVATION_SPECS
    gc_base_goals: tuple[State, ...] = ()

    def __post_init__(self) -> None:
        base = set(self.base_goals) | set(self.gc_base_goals)
        for goal in (*self.base_goals, *self.gc_base_goals):
            if not self.env.is_safe(goal):
                raise ContractViolation("base goal is not a free lava-free cell", goal=list(goal))
        for number, goal_set in enumerate(self.goal_sets):
            if not goal_set or len(set(goal_set)) != len(goal_set):
                raise ContractViolation("goal sets must be non-empty and distinct", goal_set=number)
            for goal in goal_set:
                if not self.env.is_safe(goal) or goal == self.env.start:
                    raise ContractViolation("active goal is not usable", goal=list(goal))
                if goal in base:
                    raise ContractViolation(
                        "active goal coincides with a base goal", goal=list(goal)
                    )


def goal_space(env: GridEnv) -> tuple[State, ...]:
    """Every lava-free cell reachable from the start, except the start itself."""
    cells = reachable_cells(env, env.start)
    return tuple(sorted(cell for cell in cells if cell != env.start and env.is_safe(cell)))


def _goal_candidates(env: GridEnv, count: int, exclude: Sequence[State]) -> list[State]:
    excluded = set(exclude)
    candidates = [cell for cell in goal_space(env) if cell not in excluded]
    if count > len(candidates):
        raise ExperimentError(
            "not enough free cells for the requested goals",
            env=env.env_id,
            requested=count,
            available=len(candidates),
        )
    return candidates


def sample_goals(
    env: GridEnv,
    count: int,
    rng: np.random.Generator,
    exclude: Sequence[State] = (),
    min_distance: int = 1,
) -> tuple[State, ...]:
    """Draw ``count`` goals at pairwise L1 distance of at least ``min_distance``."""
    candidates = _goal_candidates(env, count, exclude)
    for _ in range(_SAMPLING_ATTEMPTS):
        chosen: list[State] = []
        for position in rng.permutation(len(candidates)).tolist():
            cell = candidates[position]
            if all(abs(cell.x - c.x) + abs(cell.y - c.y) >= min_distance for c in chosen):
                chosen.append(cell)
                if len(chosen) == count:
                    return tuple(chosen)
    raise ExperimentError(
        "could not place goals at the required spacing",
        env=env.env_id,
        requested=count,
        min_distance=min_distance,
    )


def spread_goals(
    env: GridEnv, count: int, rng: np.random.Generator, exclude: Sequence[State] = ()
) -> tuple[State, ...]:
    """Farthest-point goals: a random first cell, then each cell farthest (L1) from the rest.

    Smaller counts drawn from equally seeded generators are prefixes of larger ones.
    """
    candidates = _goal_candidates(env, count, exclude)
    if count <= 0:
        return ()
    pool = [candidates[i] for i in rng.permutation(len(candidates)).tolist()]
    cells = np.array(pool, dtype=np.int64)
    chosen = [0]
    nearest = np.abs(cells - cells[0]).sum(axis=1)
    while len(chosen) < count:
        # first maximum wins, so ties follow the shuffled order
        position = int(np.argmax(nearest))
        chosen.append(position)
        nearest = np.minimum(nearest, np.abs(cells - cells[position]).sum(axis=1))
    return tuple(pool[i] for i in chosen)


def build_problem(env: GridEnv, cfg: ExperimentConfig, env_number: int = 0) -> OdgrProblem:
    """Spread the base goals, then sample the goal sets unless the config lists them.

    GC-GRAML base goals are drawn at random.
    """
    base = spread_goals(env, cfg.n_base_goals, _rng(cfg.seed, _Stream.BASE_GOALS, env_number))
    gc_base: tuple[State, ...] = ()
    if Algorithm.GC_GRAML in cfg.algorithms:
        space = [cell for cell in goal_space(env) if cell not in base]
        gc_base = sample_goals(
            env,
            min(cfg.n_gc_base_goals, max(2, len(space) // 2)),
            _rng(cfg.seed, _Stream.BASE_GOALS, env_number, 1),
            exclude=base,
        )
    if cfg.goal_sets is not None:
        goal_sets = cfg.goal_sets
    else:
        rng = _rng(cfg.seed, _Stream.GOAL_SETS, env_number)
        goal_sets = tuple(
            sample_goals(
                env,
                cfg.goals_per_set,
                rng,
                exclude=(*base, *gc_base),
                min_distance=cfg.min_goal_distance,
            )
            for _ in range(cfg.n_problems)
        )
    return OdgrProblem(env=env, base_goals=base, goal_sets=goal_sets, gc_base_goals=gc_base)


# =============================================================================
# Reports
# =============================================================================


@dataclass
class PhaseTimings:
    domain_learning: float = 0.0
    goal_adaptation: list[float] = field(default_factory=list)
    inference: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.domain_learning < 0 or min([*self.goal_adaptation, *self.inference], default=0) < 0:
            raise ContractViolation("phase timings must be non-negative")

    def summary(self) -> dict[str, float]:
        return {
            "domain_learning": self.domain_learning,
            "goal_adaptation_mean": (
                float(np.mean(self.goal_adaptation)) if self.goal_adaptation else 0.0
            ),
            "inference_mean": float(np.mean(self.inference)) if self.inference else 0.0,
        }


@dataclass(frozen=True)
class ConfusionMatrices:
    goals: tuple[State, ...]
    trace_space: NDArray[np.float64]
    embedding_space: NDArray[np.float64]


@dataclass
class AccuracyReport:
    records: list[dict[str, Any]] = field(default_factory=list)
    timing_records: list[dict[str, Any]] = field(default_factory=list)
    confusion: dict[str, ConfusionMatrices] = field(default_factory=dict)
    timings: dict[str, PhaseTimings] = field(default_factory=dict)
    summary: pd.DataFrame = field(default_factory=lambda: reports.summarize([]))

    @property
    def is_empty(self) -> bool:
        return not self.records

    def inference_phases(self, algorithm: Algorithm | str) -> int:
        return sum(1 for r in self.records if r["algorithm"] == str(algorithm))

    def accuracy(self, algorithm: Algorithm | str, column: str, env: str | None = None) -> float:
        """Accuracy of one grid cell; ``env`` defaults to the pooled row when there is one."""
        if env is None:
            envs = set(self.summary["env"])
            env = reports.AVERAGE if reports.AVERAGE in envs else next(iter(envs), "")
        row = self.summary[
            (self.summary["env"] == env)
            & (self.summary["algorithm"] == str(algorithm))
            & (self.summary["column"] == column)
        ]
        if row.empty:
            raise ContractViolation(
                "no such report cell", env=env, algorithm=str(algorithm), column=column
            )
        return float(row["accuracy"].iloc[0])

    def finalize(self) -> "AccuracyReport":
        self.summary = reports.summarize(self.records)
        self.timings = _phase_timings(self.timing_records)
        return self


def _phase_timings(timing_records: Sequence[Mapping[str, Any]]) -> dict[str, PhaseTimings]:
    timings: dict[str, PhaseTimings] = {}
    for record in timing_records:
        entry = timings.setdefault(f"{record['env']}/{record['algorithm']}", PhaseTimings())
        if record["phase"] == "domain_learning":
            entry.domain_learning += record["seconds"]
        elif record["phase"] == "goal_adaptation":
            entry.goal_adaptation.append(record["seconds"])
        else:
            entry.inference.append(record["seconds"])
    return timings


def emit_confusion_matrices(
    adapted: AdaptedState, model: MetricModel, probes: Sequence[Trace], env: GridEnv
) -> ConfusionMatrices:
    """Probe-versus-library similarity in trace space and in embedding space.

    Trace-space cells are the matching-block ratio of the state sequences;
    embedding-space cells are the mean similarity to the untruncated library
    members. Row ``i`` is the probe for goal ``i``.
    """
    goals = tuple(adapted.goals)
    if len(probes) != len(goals):
        raise ContractViolation(
            "need exactly one probe trace per goal", probes=len(probes), goals=len(goals)
        )
    for goal, probe in zip(goals, probes, strict=True):
        if probe.goal is not None and probe.goal != goal:
            raise ContractViolation("probe order must follow the goal order", goal=list(goal))

    library_embeddings = [
        [model.embed_trace(trace, env) for trace in library.traces] for library in adapted.libraries
    ]
    size = len(goals)
    trace_space = np.zeros((size, size))
    embedding_space = np.zeros((size, size))
    for i, probe in enumerate(probes):
        probe_embedding = model.embed_trace(probe, env)
        for j, library in enumerate(adapted.libraries):
            embedding_space[i, j] = np.mean(
                [similarity(probe_embedding, member) for member in library_embeddings[j]]
            )
            trace_space[i, j] = np.mean(
                [
                    difflib.SequenceMatcher(
                        None, probe.states, trace.states, autojunk=False
                    ).ratio()
                    for trace in library.traces
                ]
            )
    return ConfusionMatrices(goals=goals, trace_space=trace_space, embedding_space=embedding_space)


# =============================================================================
# Phases
# =============================================================================


@dataclass
class DomainState:
    """What domain learning leaves behind for one algorithm."""

    algorithm: Algorithm
    model: MetricModel | None = None
    gc_table: GCQTable | None = None
    seconds: float = 0.0
    error: dict[str, Any] | None = None


def _learn_bg(problem: OdgrProblem, cfg: ExperimentConfig, env_number: int) -> MetricModel:
    env = problem.env
    agents = {
        goal: train_q_agent(
            env, goal, cfg.q, seed=derive_seed(cfg.seed, _Stream.BASE_AGENTS, env_number, n)
        )
        for n, goal in enumerate(problem.base_goals)
    }
    traces = generate_traces(
        agents,
        env,
        per_goal=cfg.traces_per_goal,
        temperature=cfg.dataset_temperature,
        jitter_steps=cfg.dataset_jitter,
        seed=derive_seed(cfg.seed, _Stream.BG_DATASET, env_number),
        scale=cfg.rollout_scale,
    )
    pairs = generate_pairs(
        traces, cfg.n_pairs, cfg.balance, _rng(cfg.seed, _Stream.BG_DATASET, env_number, 1)
    )
    train_cfg = replace(
        cfg.train, seed=derive_seed(cfg.seed, _Stream.METRIC, env_number, 0, cfg.train.seed)
    )
    return train(pairs, train_cfg, env, cfg.encoding)


def _learn_gc(
    problem: OdgrProblem, cfg: ExperimentConfig, env_number: int
) -> tuple[GCQTable, MetricModel]:
    env = problem.env
    table = train_gc_q_agent(
        env, goal_space(env), cfg.q, seed=derive_seed(cfg.seed, _Stream.GC_AGENT, env_number)
    )
    traces = generate_traces(
        table,
        env,
        goals=problem.gc_base_goals,
        per_goal=cfg.traces_per_goal,
        temperature=cfg.dataset_temperature,
        jitter_steps=cfg.dataset_jitter,
        seed=derive_seed(cfg.seed, _Stream.GC_DATASET, env_number),
        scale=cfg.rollout_scale,
    )
    pairs = generate_pairs(
        traces, cfg.n_pairs, cfg.balance, _rng(cfg.seed, _Stream.GC_DATASET, env_number, 1)
    )
    train_cfg = replace(
        cfg.train, seed=derive_seed(cfg.seed, _Stream.METRIC, env_number, 1, cfg.train.seed)
    )
    return table, train(pairs, train_cfg, env, cfg.encoding)


def learn_domain(
    problem: OdgrProblem, cfg: ExperimentConfig, algorithm: Algorithm, env_number: int = 0
) -> DomainState:
    """Domain learning for one algorithm; GRAQL has none."""
    log = logger.bind(env=problem.env.env_id, algorithm=str(algorithm))
    started = time.perf_counter()
    try:
        if algorithm is Algorithm.BG_GRAML:
            state = DomainState(algorithm, model=_learn_bg(problem, cfg, env_number))
        elif algorithm is Algorithm.GC_GRAML:
            table, model = _learn_gc(problem, cfg, env_number)
            state = DomainState(algorithm, model=model, gc_table=table)
        else:
            state = DomainState(algorithm)
    except GramlError as e:
        log.error("domain_learning_failed", **e.to_record())
        return DomainState(algorithm, seconds=time.perf_counter() - started, error=e.to_record())
    state.seconds = time.perf_counter() - started
    log.info("domain_learned", seconds=round(state.seconds, 3))
    return state


class _ActorPool:
    """Per-goal Q agents that produce observation traces, trained on first use.

    Their seeds come from a stream no algorithm draws from, and their training
    is not attributed to any phase.
    """

    def __init__(self, env: GridEnv, cfg: ExperimentConfig, env_number: int) -> None:
        self.env = env
        self.cfg = cfg
        self.env_number = env_number
        self._tables: dict[State, QTable] = {}

    def actor(self, goal: State) -> QTable:
        if goal not in self._tables:
            seed = derive_seed(self.cfg.seed, _Stream.ACTORS, self.env_number, goal.x, goal.y)
            self._tables[goal] = train_q_agent(self.env, goal, self.cfg.q, seed=seed)
        return self._tables[goal]


def expert_library(
    env: GridEnv, goals: Sequence[State], size: int, rng: np.random.Generator, jitter_steps: int = 3
) -> dict[State, list[Trace]]:
    """Shortest-path demonstrations: the first from the start, the rest from jittered starts."""
    library: dict[State, list[Trace]] = {}
    for goal in goals:
        starts = [env.start] + [
            initial_state(env, rng, jitter_steps, avoid=(goal,)) for _ in range(size - 1)
        ]
        library[goal] = [expert_trace(env, goal, start) for start in starts]
    return library


RecognizerState = AdaptedState | GraqlState


def _adapt(
    algorithm: Algorithm,
    domain: DomainState,
    env: GridEnv,
    goal_set: Sequence[State],
    cfg: ExperimentConfig,
    env_number: int,
    set_number: int,
    workers: int,
) -> tuple[RecognizerState, float]:
    seed = derive_seed(cfg.seed, _Stream.ADAPTATION, env_number, set_number)
    if algorithm is Algorithm.GRAQL:
        graql = graql_adapt(
            env,
            goal_set,
            cfg.q,
            seed=derive_seed(cfg.seed, _Stream.GRAQL, env_number, set_number),
            timeout=cfg.graql_timeout,
            workers=workers,
        )
        return graql, graql.adaptation_time

    assert domain.model is not None
    if algorithm is Algorithm.GC_GRAML:
        assert domain.gc_table is not None
        adapted = adapt_goals(
            domain.model,
            env,
            goal_set,
            AdaptationStrategy.GOAL_CONDITIONED,
            domain.gc_table,
            cfg.library_size,
            temperature=cfg.dataset_temperature,
            seed=seed,
            workers=workers,
            scale=cfg.rollout_scale,
        )
        return adapted, adapted.adaptation_time

    source: Any
    if cfg.bg_adaptation is AdaptationStrategy.EXPERT_TRACES:
        # provided by the expert, so generated outside the timed adaptation
        source = expert_library(
            env,
            goal_set,
            cfg.library_size,
            _rng(cfg.seed, _Stream.EXPERTS, env_number, set_number),
            cfg.dataset_jitter,
        )
    else:
        source = replace(cfg.mcts, seed=seed % (2**31))
    adapted = adapt_goals(
        domain.model,
        env,
        goal_set,
        cfg.bg_adaptation,
        source,
        cfg.library_size,
        workers=workers,
    )
    return adapted, adapted.adaptation_time


def _recognize(
    algorithm: Algorithm,
    state: RecognizerState,
    domain: DomainState,
    obs: Trace,
    env: GridEnv,
    cfg: ExperimentConfig,
) -> RecognitionResult:
    if isinstance(state, GraqlState):
        return graql_infer(state, obs, cfg.graql_temperature)
    assert domain.model is not None
    return infer(domain.model, state, obs, env)


def evaluate_goal_set(
    env: GridEnv,
    goal_set: Sequence[State],
    set_number: int,
    domains: Mapping[Algorithm, DomainState],
    actors: _ActorPool,
    cfg: ExperimentConfig,
    report: AccuracyReport,
    env_number: int = 0,
    workers: int = 1,
    observation_specs: Sequence[ObservationSpec] = OBSERVATION_SPECS,
) -> None:
    """Adapt every algorithm to ``goal_set`` and run all its inference phases into ``report``."""
    goal_set = tuple(State(*goal) for goal in goal_set)
    log = logger.bind(env=env.env_id, problem=set_number)
    states: dict[Algorithm, RecognizerState] = {}
    failures: dict[Algorithm, dict[str, Any]] = {}

    for algorithm, domain in domains.items():
        if domain.error is not None:
            failures[algorithm] = {
                "error": "domain_learning_failed",
                "cause": domain.error["error"],
            }
            continue
        try:
            state, seconds = _adapt(
                algorithm, domain, env, goal_set, cfg, env_number, set_number, workers
            )
        except GramlError as e:
            log.warning("goal_adaptation_failed", algorithm=str(algorithm), failure=e.to_record())
            failures[algorithm] = e.to_record()
            continue
        states[algorithm] = state
        report.timing_records.append(
            {
                "env": env.env_id,
                "problem": set_number,
                "algorithm": str(algorithm),
                "phase": "goal_adaptation",
                "seconds": seconds,
            }
        )

    def record(goal: State, spec: ObservationSpec, algorithm: Algorithm, **outcome: Any) -> None:
        report.records.append(
            {
                "env": env.env_id,
                "problem": set_number,
                "algorithm": str(algorithm),
                "true_goal": list(goal),
                "mask_kind": str(spec.mask_kind),
                "ratio": spec.ratio,
                "column": spec.column,
                "n_observations": outcome.get("n_observations"),
                "predicted": outcome.get("predicted"),
                "correct": outcome.get("correct", False),
                "error": outcome.get("error"),
            }
        )

    probes: list[Trace | None] = []
    for goal_number, goal in enumerate(goal_set):
        observation_seed = derive_seed(
            cfg.seed, _Stream.OBSERVATIONS, env_number, set_number, goal_number
        )
        try:
            full = stochastic_rollout(
                actors.actor(goal),
                env,
                seed=observation_seed,
                temperature=cfg.observation_temperature,
                jitter_steps=cfg.observation_jitter,
                scale=cfg.rollout_scale,
            )
        except GramlError as e:
            log.warning("observation_failed", goal=list(goal), failure=e.to_record())
            probes.append(None)
            for spec in observation_specs:
                for algorithm in domains:
                    record(goal, spec, algorithm, error=e.to_record())
            continue
        probes.append(full)

        for spec_number, spec in enumerate(observation_specs):
            mask_rng = _rng(
                cfg.seed, _Stream.MASKS, env_number, set_number, goal_number, spec_number
            )
            obs = mask_trace(full, spec.mask_kind, spec.ratio, mask_rng)
            for algorithm in domains:
                if algorithm in failures:
                    record(goal, spec, algorithm, error=failures[algorithm])
                    continue
                try:
                    result = _recognize(
                        algorithm, states[algorithm], domains[algorithm], obs, env, cfg
                    )
                except GramlError as e:
                    record(goal, spec, algorithm, n_observations=len(obs), error=e.to_record())
                    continue
                record(
                    goal,
                    spec,
                    algorithm,
                    n_observations=len(obs),
                    predicted=list(result.goal),
                    correct=result.goal == goal,
                )
                report.timing_records.append(
                    {
                        "env": env.env_id,
                        "problem": set_number,
                        "algorithm": str(algorithm),
                        "phase": "inference",
                        "seconds": result.inference_time,
                    }
                )

    if all(probe is not None for probe in probes):
        for algorithm in GRAML_ALGORITHMS:
            state = states.get(algorithm)
            model = domains[algorithm].model if algorithm in domains else None
            if not isinstance(state, AdaptedState) or model is None:
                continue
            complete = [probe for probe in probes if probe is not None]
            key = f"{env.env_id}/{set_number}/{algorithm}"
            report.confusion[key] = emit_confusion_matrices(state, model, complete, env)
    log.info(
        "goal_set_evaluated",
        goals=len(goal_set),
        failed_algorithms=sorted(map(str, failures)),
    )


def run_problem(
    problem: OdgrProblem,
    cfg: ExperimentConfig,
    report: AccuracyReport,
    env_number: int = 0,
    workers: int = 1,
) -> None:
    """Domain learning, then each goal set in arrival order."""
    if not problem.goal_sets:
        return
    env = problem.env
    domains = {}
    for algorithm in cfg.algorithms:
        domain = learn_domain(problem, cfg, algorithm, env_number)
        domains[algorithm] = domain
        report.timing_records.append(
            {
                "env": env.env_id,
                "problem": None,
                "algorithm": str(algorithm),
                "phase": "domain_learning",
                "seconds": domain.seconds,
            }
        )
    actors = _ActorPool(env, cfg, env_number)
    for set_number, goal_set in enumerate(problem.goal_sets):
        evaluate_goal_set(
            env,
            goal_set,
            set_number,
            domains,
            actors,
            cfg,
            report,
            env_number=env_number,
            workers=workers,
            observation_specs=problem.observation_specs,
        )


def run_odgr_experiment(cfg: ExperimentConfig, workers: int | None = None) -> AccuracyReport:
    """Run every environment's ODGR problem and assemble the accuracy report."""
    workers = workers or settings.workers
    logger.info(
        "odgr_experiment_started",
        envs=list(cfg.envs),
        algorithms=[str(a) for a in cfg.algorithms],
        seed=cfg.seed,
    )
    report = AccuracyReport()
    for env_number, env_name in enumerate(cfg.envs):
        env = make_env(env_name, cfg.env_seed)
        problem = build_problem(env, cfg, env_number)
        run_problem(problem, cfg, report, env_number=env_number, workers=workers)
    report.finalize()
    logger.info("odgr_experiment_finished", records=len(report.records))
    return report


# =============================================================================
# Sweeps
# =============================================================================


@dataclass
class SweepReport:
    rows: list[dict[str, Any]] = field(default_factory=list)
    records: list[dict[str, Any]] = field(default_factory=list)
    summary: pd.DataFrame = field(default_factory=pd.DataFrame)
    trends: dict[str, bool] = field(default_factory=dict)


def _scored(records: Sequence[Mapping[str, Any]]) -> tuple[int, int, int]:
    """(correct, total, errors) over the report columns."""
    counted = [r for r in records if r["column"] is not None]
    scored = [r for r in counted if r["error"] is None]
    return sum(bool(r["correct"]) for r in scored), len(scored), len(counted) - len(scored)


def sweep_goal_counts(cfg: ExperimentConfig, workers: int | None = None) -> SweepReport:
    """BG-GRAML accuracy over the grid of base-goal and active-goal counts.

    Every seed and base-goal count gets its own domain learning; all goal sets
    are sampled up front so an infeasible grid fails before any training.
    """
    workers = workers or settings.workers
    grid = cfg.sweep
    sweep = SweepReport()
    for env_number, env_name in enumerate(cfg.envs):
        env = make_env(env_name, cfg.env_seed)
        plans = {}
        for seed in grid.seeds:
            for n_base in grid.base_goal_counts:
                base = spread_goals(env, n_base, _rng(seed, _Stream.BASE_GOALS, env_number))
                rng = _rng(seed, _Stream.GOAL_SETS, env_number, n_base)
                goal_sets = tuple(
                    sample_goals(
                        env, n_active, rng, exclude=base, min_distance=cfg.min_goal_distance
                    )
                    for n_active in grid.active_goal_counts
                )
                plans[(seed, n_base)] = OdgrProblem(env=env, base_goals=base, goal_sets=goal_sets)

        for (seed, n_base), problem in plans.items():
            run_cfg = replace(cfg, seed=seed, n_base_goals=n_base, algorithms=(Algorithm.BG_GRAML,))
            domain = learn_domain(problem, run_cfg, Algorithm.BG_GRAML, env_number)
            actors = _ActorPool(env, run_cfg, env_number)
            for set_number, goal_set in enumerate(problem.goal_sets):
                local = AccuracyReport()
                evaluate_goal_set(
                    env,
                    goal_set,
                    set_number,
                    {Algorithm.BG_GRAML: domain},
                    actors,
                    run_cfg,
                    local,
                    env_number=env_number,
                    workers=workers,
                )
                correct, total, errors = _scored(local.records)
                sweep.rows.append(
                    {
                        "env": env.env_id,
                        "seed": seed,
                        "n_base_goals": n_base,
                        "n_active_goals": len(goal_set),
                        "accuracy": correct / total if total else float("nan"),
                        "correct": correct,
                        "total": total,
                        "errors": errors,
                    }
                )
                sweep.records.extend(
                    {**r, "seed": seed, "n_base_goals": n_base} for r in local.records
                )
    sweep.summary = reports.sweep_summary(sweep.rows, ["env", "n_base_goals", "n_active_goals"])
    sweep.trends = reports.goal_count_trends(sweep.summary)
    logger.info("goal_count_trends", **sweep.trends)
    return sweep


def sweep_library_size(
    cfg: ExperimentConfig, sizes: Sequence[int] | None = None, workers: int | None = None
) -> SweepReport:
    """BG-GRAML adaptation time and accuracy as the library size grows."""
    workers = workers or settings.workers
    sizes = tuple(sizes) if sizes is not None else cfg.sweep.library_sizes
    if not sizes or min(sizes) < 1:
        raise ContractViolation("library sizes must be positive", sizes=list(sizes))
    run_cfg = replace(cfg, algorithms=(Algorithm.BG_GRAML,))
    sweep = SweepReport()
    for env_number, env_name in enumerate(cfg.envs):
        env = make_env(env_name, cfg.env_seed)
        problem = build_problem(env, run_cfg, env_number)
        if not problem.goal_sets:
            continue
        domain = learn_domain(problem, run_cfg, Algorithm.BG_GRAML, env_number)
        actors = _ActorPool(env, run_cfg, env_number)
        for size in sizes:
            size_cfg = replace(run_cfg, library_size=size)
            local = AccuracyReport()
            for set_number, goal_set in enumerate(problem.goal_sets):
                evaluate_goal_set(
                    env,
                    goal_set,
                    set_number,
                    {Algorithm.BG_GRAML: domain},
                    actors,
                    size_cfg,
                    local,
                    env_number=env_number,
                    workers=workers,
                )
            correct, total, errors = _scored(local.records)
            adaptation = [
                t["seconds"] for t in local.timing_records if t["phase"] == "goal_adaptation"
            ]
            sweep.rows.append(
                {
                    "env": env.env_id,
                    "library_size": size,
                    "accuracy": correct / total if total else float("nan"),
                    "correct": correct,
                    "total": total,
                    "errors": errors,
                    "adaptation_seconds": (
                        float(np.mean(adaptation)) if adaptation else float("nan")
                    ),
                }
            )
            sweep.records.extend({**r, "library_size": size} for r in local.records)
            logger.info("library_size_evaluated", env=env.env_id, library_size=size, total=total)
    sweep.summary = pd.DataFrame(sweep.rows)
    return sweep
