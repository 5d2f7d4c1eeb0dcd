"""Tests for the ODGR experiment driver."""

from dataclasses import replace
from unittest.mock import patch

import numpy as np
import pytest

from graml import harness, reports
from graml.config import ExperimentConfig, SweepConfig
from graml.dataset import EncodingMode, input_dim
from graml.env import Action, State, make_lava_crossing, shortest_path
from graml.errors import ContractViolation, ExperimentError
from graml.harness import (
    OBSERVATION_SPECS,
    AccuracyReport,
    DomainState,
    OdgrProblem,
    PhaseTimings,
    _Stream,
    build_problem,
    derive_seed,
    emit_confusion_matrices,
    expert_library,
    goal_space,
    run_odgr_experiment,
    sample_goals,
    spread_goals,
    sweep_goal_counts,
    sweep_library_size,
)
from graml.metric import LstmParams, MetricModel, TrainConfig
from graml.recognizers import (
    AdaptationStrategy,
    Algorithm,
    GraqlState,
    adapt_goals,
    graql_adapt,
)
from graml.rl import QHyperParams, QTable


def distance_table(env, goal):
    """A Q-table that prefers moves bringing the agent closer to ``goal``."""
    values = np.zeros((env.n_states, len(Action)))
    for cell in env.free_cells:
        for action in Action:
            result = env.step(cell, action, goal, 0)
            if result.next_state == goal:
                value = 0.0
            elif result.next_state in env.lava:
                value = -100.0
            else:
                path = shortest_path(env, result.next_state, goal)
                value = -1.0 - (len(path) if path is not None else 100)
            values[env.state_index(cell), action] = value
    return QTable(values=values, goal=goal, width=env.width, height=env.height)


def fake_model(env):
    rng = np.random.default_rng(0)
    params = LstmParams.initialize(input_dim(env, EncodingMode.ONE_HOT), 8, rng).scale_(3.0)
    return MetricModel(params=params, encoding=EncodingMode.ONE_HOT, env_id=env.env_id)


def fake_learn_domain(problem, cfg, algorithm, env_number=0):
    if algorithm is Algorithm.GRAQL:
        return DomainState(algorithm, seconds=0.5)
    return DomainState(algorithm, model=fake_model(problem.env), seconds=1.5)


def fake_graql_adapt(env, goal_set, hp=None, seed=0, *, timeout=None, workers=1):
    return GraqlState(
        qtables={goal: distance_table(env, goal) for goal in goal_set}, adaptation_time=0.25
    )


def fake_actor(self, goal):
    return distance_table(self.env, goal)


@pytest.fixture
def mocked_training():
    """Replace every learning step with cheap stand-ins built from shortest paths."""
    with (
        patch("graml.harness.learn_domain", side_effect=fake_learn_domain),
        patch("graml.harness.graql_adapt", side_effect=fake_graql_adapt),
        patch.object(harness._ActorPool, "actor", fake_actor),
    ):
        yield


@pytest.fixture
def small_cfg():
    return ExperimentConfig(
        envs=("lava_crossing",),
        n_problems=1,
        goals_per_set=5,
        n_base_goals=3,
        algorithms=(Algorithm.BG_GRAML, Algorithm.GRAQL),
        observation_jitter=1,
    )


class TestSeeds:
    """Tests for named random streams."""

    def test_deterministic(self):
        """Should derive the same seed from the same parts."""
        assert derive_seed(3, _Stream.MASKS, 1, 2) == derive_seed(3, _Stream.MASKS, 1, 2)

    def test_streams_differ(self):
        """Should separate streams, seeds, and parts."""
        seeds = {
            derive_seed(0, _Stream.MASKS, 1),
            derive_seed(0, _Stream.OBSERVATIONS, 1),
            derive_seed(1, _Stream.MASKS, 1),
            derive_seed(0, _Stream.MASKS, 2),
        }
        assert len(seeds) == 4


class TestGoalSampling:
    """Tests for goal placement."""

    def test_goal_space_excludes_start_and_lava(self, lava):
        """Should list reachable lava-free cells other than the start."""
        space = goal_space(lava)
        assert lava.start not in space
        assert not set(space) & lava.lava
        assert len(space) == len(lava.safe_cells) - 1

    def test_spacing(self, crossing):
        """Should keep sampled goals at least min_distance apart."""
        goals = sample_goals(crossing, 5, np.random.default_rng(0), min_distance=3)
        assert len(set(goals)) == 5
        for a in goals:
            for b in goals:
                if a != b:
                    assert abs(a.x - b.x) + abs(a.y - b.y) >= 3

    def test_excludes(self, room):
        """Should never return an excluded cell."""
        excluded = [State(2, 1), State(3, 1)]
        for seed in range(10):
            goals = sample_goals(room, 3, np.random.default_rng(seed), exclude=excluded)
            assert not set(goals) & set(excluded)

    def test_too_many_goals(self, room):
        """Should fail when the grid has too few cells."""
        with pytest.raises(ExperimentError):
            sample_goals(room, 9, np.random.default_rng(0))

    def test_infeasible_spacing(self, room):
        """Should fail when no placement meets the spacing."""
        with pytest.raises(ExperimentError):
            sample_goals(room, 4, np.random.default_rng(0), min_distance=4)

    def test_spread_goals_farthest_first(self, crossing):
        """Should pick each next goal at the largest L1 distance from those chosen."""
        goals = spread_goals(crossing, 5, np.random.default_rng(3))
        assert len(set(goals)) == 5

        def gap(cell, chosen):
            return min(abs(cell.x - c.x) + abs(cell.y - c.y) for c in chosen)

        space = goal_space(crossing)
        for n in range(1, 5):
            best = max(gap(cell, goals[:n]) for cell in space)
            assert gap(goals[n], goals[:n]) == best

    def test_spread_goals_nested(self, crossing):
        """Should keep smaller selections as prefixes of larger ones."""
        small = spread_goals(crossing, 3, np.random.default_rng(1))
        large = spread_goals(crossing, 10, np.random.default_rng(1))
        assert large[:3] == small

    def test_spread_goals_excludes(self, room):
        """Should honor exclusions and fail when too few cells remain."""
        excluded = [State(3, 3), State(2, 3)]
        goals = spread_goals(room, 3, np.random.default_rng(0), exclude=excluded)
        assert not set(goals) & set(excluded)
        with pytest.raises(ExperimentError):
            spread_goals(room, 9, np.random.default_rng(0))

    def test_build_problem(self, lava, small_cfg):
        """Should keep active goals apart from base goals and from each other."""
        problem = build_problem(lava, small_cfg)
        assert len(problem.base_goals) == 3
        assert len(problem.goal_sets) == 1
        assert not set(problem.goal_sets[0]) & set(problem.base_goals)
        assert problem.gc_base_goals == ()

    def test_explicit_goal_sets(self, lava, small_cfg):
        """Should use goal sets listed in the config."""
        goal_sets = ((State(7, 7), State(7, 1)),)
        cfg = replace(small_cfg, goal_sets=goal_sets, n_base_goals=2)
        with patch("graml.harness.spread_goals", return_value=(State(1, 7), State(2, 7))):
            problem = build_problem(lava, cfg)
        assert problem.goal_sets == goal_sets

    def test_problem_rejects_overlap(self, lava):
        """Should refuse active goals that are also base goals."""
        with pytest.raises(ContractViolation):
            OdgrProblem(
                env=lava,
                base_goals=(State(7, 7), State(1, 7)),
                goal_sets=((State(7, 7), State(7, 1)),),
            )


class TestExpertLibrary:
    """Tests for expert demonstrations used by BG-GRAML."""

    def test_first_member_from_start(self, lava):
        """Should begin the first demonstration at the start cell."""
        goals = [State(7, 7), State(7, 1)]
        library = expert_library(lava, goals, 3, np.random.default_rng(0))
        for goal in goals:
            assert len(library[goal]) == 3
            assert library[goal][0].states[0] == lava.start
            assert all(trace.reaches(lava, goal) for trace in library[goal])


class TestRunOdgrExperiment:
    """Tests for the full ODGR loop with learning replaced by stand-ins."""

    def test_forty_phases_per_algorithm(self, mocked_training, small_cfg):
        """Should run 5 goals x 8 observation specs per algorithm."""
        report = run_odgr_experiment(small_cfg, workers=1)
        assert len(OBSERVATION_SPECS) == 8
        assert report.inference_phases(Algorithm.BG_GRAML) == 40
        assert report.inference_phases(Algorithm.GRAQL) == 40
        assert all(r["error"] is None for r in report.records)

    def test_grid_columns(self, mocked_training, small_cfg):
        """Should score 35 phases per algorithm and leave the duplicate full run out."""
        report = run_odgr_experiment(small_cfg, workers=1)
        summary = report.summary
        bg = summary[summary["algorithm"] == "bg_graml"]
        assert len(bg) == 7
        assert bg["total"].sum() == 35
        accuracy = report.accuracy(Algorithm.GRAQL, "full_100")
        assert 0.0 <= accuracy <= 1.0
        with pytest.raises(ContractViolation):
            report.accuracy(Algorithm.GC_GRAML, "full_100")

    def test_records_hold_no_timings(self, mocked_training, small_cfg):
        """Should keep wall-clock values out of the raw records."""
        report = run_odgr_experiment(small_cfg, workers=1)
        for record in report.records:
            assert "seconds" not in record
            assert "inference_time" not in record
        phases = {t["phase"] for t in report.timing_records}
        assert phases == {"domain_learning", "goal_adaptation", "inference"}
        timings = report.timings["lava_crossing:0/bg_graml"]
        assert timings.domain_learning == 1.5
        assert len(timings.goal_adaptation) == 1
        assert len(timings.inference) == 40

    def test_deterministic(self, mocked_training, small_cfg):
        """Should reproduce identical raw records for a fixed config."""
        first = run_odgr_experiment(small_cfg, workers=1)
        second = run_odgr_experiment(small_cfg, workers=1)
        assert first.records == second.records

    def test_confusion_matrices_emitted(self, mocked_training, small_cfg):
        """Should build square matrices for each GRAML goal set."""
        report = run_odgr_experiment(small_cfg, workers=1)
        [key] = report.confusion
        assert key.endswith("/0/bg_graml")
        matrices = report.confusion[key]
        assert matrices.trace_space.shape == (5, 5)
        assert matrices.embedding_space.shape == (5, 5)

    def test_no_goal_sets(self, mocked_training, small_cfg):
        """Should return an empty report when no goal set arrives."""
        report = run_odgr_experiment(replace(small_cfg, n_problems=0), workers=1)
        assert report.is_empty
        assert report.summary.empty

    def test_domain_failure_is_recorded(self, small_cfg):
        """Should record a failed domain learning on every phase and keep going."""
        failed = DomainState(
            Algorithm.BG_GRAML, error={"error": "training_failure", "message": "no"}
        )

        def learn(problem, cfg, algorithm, env_number=0):
            if algorithm is Algorithm.BG_GRAML:
                return failed
            return fake_learn_domain(problem, cfg, algorithm, env_number)

        with (
            patch("graml.harness.learn_domain", side_effect=learn),
            patch("graml.harness.graql_adapt", side_effect=fake_graql_adapt),
            patch.object(harness._ActorPool, "actor", fake_actor),
        ):
            report = run_odgr_experiment(small_cfg, workers=1)
        bg = [r for r in report.records if r["algorithm"] == "bg_graml"]
        assert len(bg) == 40
        assert all(r["error"]["cause"] == "training_failure" for r in bg)
        graql = [r for r in report.records if r["algorithm"] == "graql"]
        assert all(r["error"] is None for r in graql)


class TestConfusionMatrices:
    """Tests for trace-space and embedding-space matrices."""

    def test_library_probes_give_unit_diagonal(self, random_model, big_room):
        """Should score 1 on the diagonal when probes are the library traces."""
        goals = [State(5, 1), State(1, 5), State(5, 5)]
        experts = expert_library(big_room, goals, 1, np.random.default_rng(0))
        adapted = adapt_goals(
            random_model, big_room, goals, AdaptationStrategy.EXPERT_TRACES, experts
        )
        probes = [experts[goal][0] for goal in goals]
        matrices = emit_confusion_matrices(adapted, random_model, probes, big_room)
        np.testing.assert_allclose(np.diag(matrices.trace_space), 1.0)
        np.testing.assert_allclose(np.diag(matrices.embedding_space), 1.0)
        assert matrices.trace_space.max() <= 1.0

    def test_probe_count_checked(self, random_model, big_room):
        """Should need one probe per goal."""
        goals = [State(5, 1), State(1, 5)]
        experts = expert_library(big_room, goals, 1, np.random.default_rng(0))
        adapted = adapt_goals(
            random_model, big_room, goals, AdaptationStrategy.EXPERT_TRACES, experts
        )
        with pytest.raises(ContractViolation):
            emit_confusion_matrices(adapted, random_model, [experts[goals[0]][0]], big_room)


class TestReports:
    """Tests for report containers."""

    def test_phase_timings_non_negative(self):
        """Should reject negative durations."""
        with pytest.raises(ContractViolation):
            PhaseTimings(goal_adaptation=[-1.0])

    def test_phase_timings_summary(self):
        """Should average adaptation and inference times."""
        timings = PhaseTimings(domain_learning=2.0, goal_adaptation=[1.0, 3.0], inference=[0.5])
        assert timings.summary() == {
            "domain_learning": 2.0,
            "goal_adaptation_mean": 2.0,
            "inference_mean": 0.5,
        }

    def test_empty_report(self):
        """Should start empty."""
        assert AccuracyReport().is_empty


class TestSweeps:
    """Tests for the goal-count and library-size sweeps."""

    def test_goal_count_grid(self, mocked_training):
        """Should produce one row per seed, base-goal count, and active-goal count."""
        cfg = ExperimentConfig(
            envs=("lava_crossing",),
            sweep=SweepConfig(base_goal_counts=(2, 3), active_goal_counts=(2, 3), seeds=(0,)),
        )
        sweep = sweep_goal_counts(cfg, workers=1)
        assert len(sweep.rows) == 4
        assert {(r["n_base_goals"], r["n_active_goals"]) for r in sweep.rows} == {
            (2, 2),
            (2, 3),
            (3, 2),
            (3, 3),
        }
        for row in sweep.rows:
            assert row["total"] == 7 * row["n_active_goals"]
        assert len(sweep.summary) == 4
        assert set(sweep.trends) == {"base_goals_non_decreasing", "active_goals_non_increasing"}

    def test_infeasible_grid_fails_before_training(self, mocked_training):
        """Should fail while sampling, before any domain learning."""
        cfg = ExperimentConfig(
            envs=("lava_crossing",),
            min_goal_distance=8,
            sweep=SweepConfig(base_goal_counts=(2,), active_goal_counts=(9,), seeds=(0,)),
        )
        with pytest.raises(ExperimentError):
            sweep_goal_counts(cfg, workers=1)
        harness.learn_domain.assert_not_called()

    def test_library_sizes(self, mocked_training, small_cfg):
        """Should report accuracy and adaptation time per library size."""
        sweep = sweep_library_size(small_cfg, sizes=(1, 2), workers=1)
        assert [row["library_size"] for row in sweep.rows] == [1, 2]
        for row in sweep.rows:
            assert row["total"] == 35
            assert row["adaptation_seconds"] >= 0.0
        assert {r["library_size"] for r in sweep.records} == {1, 2}

    def test_library_sizes_must_be_positive(self, small_cfg):
        """Should refuse a zero library size."""
        with pytest.raises(ContractViolation):
            sweep_library_size(small_cfg, sizes=(0,), workers=1)


@pytest.mark.slow
class TestEndToEnd:
    """Desk-scale run with real training."""

    def test_smoke_run(self):
        """Should complete a small experiment with every algorithm."""
        cfg = ExperimentConfig(
            envs=("lava_crossing",),
            n_problems=1,
            goals_per_set=3,
            n_base_goals=3,
            n_gc_base_goals=4,
            traces_per_goal=5,
            n_pairs=200,
            q=QHyperParams(episodes=6000),
            train=TrainConfig(epochs=3, hidden_dim=8),
        )
        report = run_odgr_experiment(cfg, workers=1)
        assert report.inference_phases(Algorithm.BG_GRAML) == 24
        assert set(report.summary["algorithm"]) <= {"bg_graml", "gc_graml", "graql"}
        assert make_lava_crossing(0).env_id in set(report.summary["env"])


SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture(scope="module")
def crossing_reports():
    """Default SimpleCrossing runs of BG-GRAML and GRAQL, one per seed."""
    base = ExperimentConfig(algorithms=(Algorithm.BG_GRAML, Algorithm.GRAQL))
    return [run_odgr_experiment(replace(base, seed=seed), workers=1) for seed in SEEDS]


def mean_accuracy(runs, algorithm, column):
    return float(np.mean([run.accuracy(algorithm, column) for run in runs]))


@pytest.mark.slow
class TestSimpleCrossingAccuracy:
    """Observability and baseline trends averaged over five seeds."""

    def test_observability_trend(self, crossing_reports):
        """Should favor non-consecutive observations and improve with observability."""
        consecutive = [
            mean_accuracy(crossing_reports, Algorithm.BG_GRAML, column)
            for column in ("consecutive_30", "consecutive_50", "consecutive_70", "full_100")
        ]
        non_consecutive = [
            mean_accuracy(crossing_reports, Algorithm.BG_GRAML, column)
            for column in (
                "non_consecutive_30",
                "non_consecutive_50",
                "non_consecutive_70",
                "full_100",
            )
        ]
        assert non_consecutive[0] > consecutive[0]
        assert non_consecutive[1] > consecutive[1]
        assert reports.follows_trend(consecutive, increasing=True)
        assert reports.follows_trend(non_consecutive, increasing=True)
        assert non_consecutive[-1] >= 0.70

    def test_close_to_graql(self, crossing_reports):
        """Should stay within 0.15 of GRAQL at non-consecutive 50%."""
        graml = mean_accuracy(crossing_reports, Algorithm.BG_GRAML, "non_consecutive_50")
        graql = mean_accuracy(crossing_reports, Algorithm.GRAQL, "non_consecutive_50")
        assert abs(graql - graml) <= 0.15

    def test_embeddings_group_by_goal(self, crossing_reports):
        """Should embed observations closer to their own goal's library than to the others."""
        diagonal, off_diagonal = [], []
        for run in crossing_reports:
            for key, matrices in run.confusion.items():
                if not key.endswith(str(Algorithm.BG_GRAML)):
                    continue
                embedding = matrices.embedding_space
                mask = np.eye(len(embedding), dtype=bool)
                diagonal.extend(embedding[mask].tolist())
                off_diagonal.extend(embedding[~mask].tolist())
        assert diagonal
        assert np.mean(diagonal) - np.mean(off_diagonal) >= 0.1


@pytest.mark.slow
class TestAdaptationTime:
    """Goal adaptation cost of BG-GRAML against GRAQL on five goals."""

    def test_library_adaptation_beats_policy_training(self, crossing):
        """Should adapt from experts almost instantly and plan in at most half of GRAQL's time."""
        cfg = ExperimentConfig(algorithms=(Algorithm.BG_GRAML, Algorithm.GRAQL))
        goals = build_problem(crossing, cfg).goal_sets[0]
        assert len(goals) == 5
        model = fake_model(crossing)
        experts = expert_library(crossing, goals, 1, np.random.default_rng(0))
        expert = adapt_goals(model, crossing, goals, AdaptationStrategy.EXPERT_TRACES, experts, 1)
        planned = adapt_goals(model, crossing, goals, AdaptationStrategy.MCTS, cfg.mcts, 1)
        graql = graql_adapt(crossing, goals, cfg.q, seed=0)
        assert expert.adaptation_time < 0.1
        assert planned.adaptation_time / graql.adaptation_time <= 0.5


@pytest.mark.slow
class TestGoalCountTrends:
    """The base-goal and active-goal sweep over five seeds."""

    def test_trends_hold(self):
        """Should gain accuracy with base goals and lose it with active goals."""
        cfg = ExperimentConfig()
        assert cfg.sweep.seeds == SEEDS
        sweep = sweep_goal_counts(cfg, workers=1)
        assert sweep.trends == {
            "base_goals_non_decreasing": True,
            "active_goals_non_increasing": True,
        }
