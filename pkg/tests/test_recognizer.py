"""Tests for GRAML goal adaptation and inference."""

import numpy as np
import pytest

from graml.dataset import encode_trace, mask_consecutive
from graml.env import State, initial_state
from graml.errors import AdaptationError, ContractViolation
from graml.metric import lstm_forward, similarity
from graml.planner import MctsConfig, expert_trace
from graml.recognizers import (
    AdaptationStrategy,
    AdaptedState,
    GoalLibrary,
    RecognitionResult,
    adapt_goals,
    argmax_goal,
    embed_library,
    infer,
)
from graml.rl import QHyperParams, Trace, train_gc_q_agent

GOALS = [State(5, 1), State(1, 5), State(5, 5), State(3, 5), State(5, 3)]


def expert_libraries(env, goals, size, seed):
    """Expert traces per goal from jittered starts."""
    rng = np.random.default_rng(seed)
    libraries = {}
    for goal in goals:
        starts = [initial_state(env, rng, 3, avoid=(goal,)) for _ in range(size)]
        libraries[goal] = [expert_trace(env, goal, start) for start in starts]
    return libraries


class TestArgmaxGoal:
    """Tests for goal selection."""

    def test_highest_score_wins(self):
        """Should pick the goal with the largest score."""
        assert argmax_goal({State(1, 1): 0.2, State(2, 2): 0.9, State(3, 3): 0.5}) == State(2, 2)

    def test_ties_go_to_first_listed(self):
        """Should break ties in favour of the first goal."""
        assert argmax_goal({State(3, 3): 0.5, State(1, 1): 0.5}) == State(3, 3)

    def test_empty(self):
        """Should refuse an empty score table."""
        with pytest.raises(ContractViolation):
            argmax_goal({})

    def test_confidence(self):
        """Should expose the winning score."""
        result = RecognitionResult(goal=State(1, 1), per_goal_scores={State(1, 1): 0.7})
        assert result.confidence == 0.7


class TestGoalLibrary:
    """Tests for per-goal trace libraries."""

    def test_rejects_empty(self):
        """Should need at least one trace."""
        with pytest.raises(ContractViolation):
            GoalLibrary(State(1, 1), ())

    def test_rejects_foreign_trace(self, big_room):
        """Should refuse traces that lead elsewhere."""
        with pytest.raises(ContractViolation):
            GoalLibrary(State(5, 5), (expert_trace(big_room, State(5, 1)),))

    def test_adapted_goals_distinct(self, big_room):
        """Should refuse duplicate goals in one adapted state."""
        library = GoalLibrary(State(5, 1), (expert_trace(big_room, State(5, 1)),))
        with pytest.raises(ContractViolation):
            AdaptedState(libraries=(library, library), strategy=AdaptationStrategy.EXPERT_TRACES)


class TestAdaptGoals:
    """Tests for building goal libraries."""

    def test_expert_adaptation(self, random_model, big_room):
        """Should build one library per goal, fast, in goal order."""
        experts = expert_libraries(big_room, GOALS, 2, seed=0)
        adapted = adapt_goals(
            random_model, big_room, GOALS, AdaptationStrategy.EXPERT_TRACES, experts
        )
        assert adapted.goals == GOALS
        assert all(library.size == 1 for library in adapted.libraries)
        assert adapted.adaptation_time < 0.01
        assert adapted.precomputed is None

    def test_library_size(self, random_model, big_room):
        """Should take the first library_size expert traces."""
        experts = expert_libraries(big_room, GOALS[:2], 3, seed=1)
        adapted = adapt_goals(
            random_model, big_room, GOALS[:2], AdaptationStrategy.EXPERT_TRACES, experts, 2
        )
        for library in adapted.libraries:
            assert library.traces == tuple(experts[library.goal][:2])

    def test_missing_expert(self, random_model, big_room):
        """Should fail when a goal has no expert trace."""
        experts = expert_libraries(big_room, GOALS[:1], 1, seed=0)
        with pytest.raises(AdaptationError):
            adapt_goals(
                random_model, big_room, GOALS[:2], AdaptationStrategy.EXPERT_TRACES, experts
            )

    def test_expert_must_reach_goal(self, random_model, big_room):
        """Should reject a demonstration that stops short of its goal."""
        short = mask_consecutive(expert_trace(big_room, State(5, 5)), 0.5)
        with pytest.raises(AdaptationError):
            adapt_goals(
                random_model,
                big_room,
                [State(5, 5)],
                AdaptationStrategy.EXPERT_TRACES,
                {State(5, 5): [short]},
            )

    def test_mcts_adaptation(self, random_model, big_room):
        """Should plan one goal-reaching trace per goal."""
        goals = [State(3, 1), State(1, 3)]
        adapted = adapt_goals(
            random_model, big_room, goals, AdaptationStrategy.MCTS, MctsConfig(iterations=200)
        )
        for library in adapted.libraries:
            assert all(trace.reaches(big_room, library.goal) for trace in library.traces)
            assert library.traces[0].states[0] == big_room.start

    def test_planner_errors_become_adaptation_errors(self, random_model, big_room):
        """Should report planner failures as adaptation failures."""
        with pytest.raises(AdaptationError) as exc:
            adapt_goals(
                random_model,
                big_room,
                [big_room.start],
                AdaptationStrategy.MCTS,
                MctsConfig(iterations=10),
            )
        assert exc.value.details["cause"] == "contract_violation"

    def test_goal_conditioned_adaptation(self, random_model, big_room):
        """Should roll the GC policy out once per goal and library slot."""
        goals = [State(5, 5), State(1, 5)]
        table = train_gc_q_agent(big_room, goals, QHyperParams(episodes=3000), seed=0)
        adapted = adapt_goals(
            random_model,
            big_room,
            goals,
            AdaptationStrategy.GOAL_CONDITIONED,
            table,
            library_size=3,
            seed=4,
        )
        assert [library.size for library in adapted.libraries] == [3, 3]
        for library in adapted.libraries:
            assert all(trace.reaches(big_room, library.goal) for trace in library.traces)

    def test_source_must_match_strategy(self, random_model, big_room):
        """Should refuse a source of the wrong kind."""
        with pytest.raises(ContractViolation):
            adapt_goals(
                random_model, big_room, GOALS, AdaptationStrategy.MCTS, {GOALS[0]: []}
            )

    def test_empty_goal_set(self, random_model, big_room):
        """Should refuse an empty goal set."""
        with pytest.raises(ContractViolation):
            adapt_goals(random_model, big_room, [], AdaptationStrategy.EXPERT_TRACES, {})

    def test_threaded_matches_serial(self, random_model, big_room):
        """Should build the same libraries with a worker pool."""
        experts = expert_libraries(big_room, GOALS, 1, seed=3)
        serial = adapt_goals(
            random_model, big_room, GOALS, AdaptationStrategy.EXPERT_TRACES, experts
        )
        threaded = adapt_goals(
            random_model, big_room, GOALS, AdaptationStrategy.EXPERT_TRACES, experts, workers=3
        )
        assert serial.libraries == threaded.libraries


class TestInfer:
    """Tests for embedding-similarity inference."""

    def test_matches_mean_similarity_oracle(self, random_model, big_room):
        """Should pick the goal with the highest mean similarity to truncated members."""
        rng = np.random.default_rng(0)
        for case in range(100):
            size = int(rng.integers(1, 4))
            experts = expert_libraries(big_room, GOALS, size, seed=case)
            adapted = adapt_goals(
                random_model,
                big_room,
                GOALS,
                AdaptationStrategy.EXPERT_TRACES,
                experts,
                library_size=size,
            )
            true_goal = GOALS[int(rng.integers(len(GOALS)))]
            start = initial_state(big_room, rng, 3, avoid=(true_goal,))
            full = expert_trace(big_room, true_goal, start)
            obs = mask_consecutive(full, [0.3, 0.5, 0.7, 1.0][case % 4])

            observed = lstm_forward(random_model.params, encode_trace(obs, big_room))
            oracle = {}
            for library in adapted.libraries:
                members = [
                    lstm_forward(random_model.params, encode_trace(t.prefix(len(obs)), big_room))
                    for t in library.traces
                ]
                oracle[library.goal] = np.mean([similarity(v, observed) for v in members])

            result = infer(random_model, adapted, obs, big_room)
            assert result.goal == argmax_goal(oracle)
            for goal, score in oracle.items():
                assert result.per_goal_scores[goal] == pytest.approx(score, abs=1e-12)

    def test_invariant_to_library_order(self, random_model, big_room):
        """Should give the same goal and scores when goals and members are shuffled."""
        rng = np.random.default_rng(3)
        experts = expert_libraries(big_room, GOALS, 3, seed=3)
        adapted = adapt_goals(
            random_model, big_room, GOALS, AdaptationStrategy.EXPERT_TRACES, experts, 3
        )
        for case in range(20):
            order = rng.permutation(len(adapted.libraries))
            shuffled = AdaptedState(
                libraries=tuple(
                    GoalLibrary(
                        goal=adapted.libraries[i].goal,
                        traces=tuple(
                            adapted.libraries[i].traces[j]
                            for j in rng.permutation(adapted.libraries[i].size)
                        ),
                    )
                    for i in order
                ),
                strategy=adapted.strategy,
            )
            true_goal = GOALS[case % len(GOALS)]
            start = initial_state(big_room, rng, 3, avoid=(true_goal,))
            obs = mask_consecutive(expert_trace(big_room, true_goal, start), 0.5)

            expected = infer(random_model, adapted, obs, big_room)
            result = infer(random_model, shuffled, obs, big_room)
            assert result.goal == expected.goal
            assert result.per_goal_scores == pytest.approx(expected.per_goal_scores, abs=1e-12)

    def test_single_goal(self, random_model, big_room):
        """Should always return the only goal."""
        experts = expert_libraries(big_room, GOALS[:1], 1, seed=0)
        adapted = adapt_goals(
            random_model, big_room, GOALS[:1], AdaptationStrategy.EXPERT_TRACES, experts
        )
        obs = expert_trace(big_room, State(1, 5))
        assert infer(random_model, adapted, obs, big_room).goal == GOALS[0]

    def test_identical_trace_scores_one(self, random_model, big_room):
        """Should score 1 for an observation equal to the library trace."""
        trace = expert_trace(big_room, State(5, 5))
        adapted = adapt_goals(
            random_model,
            big_room,
            [State(5, 5)],
            AdaptationStrategy.EXPERT_TRACES,
            {State(5, 5): [trace]},
        )
        result = infer(random_model, adapted, trace, big_room)
        assert result.per_goal_scores[State(5, 5)] == 1.0
        assert result.inference_time >= 0.0

    def test_precomputed_full_length(self, random_model, big_room):
        """Should reuse precomputed embeddings and agree for full-length observations."""
        experts = expert_libraries(big_room, GOALS, 1, seed=5)
        plain = adapt_goals(
            random_model, big_room, GOALS, AdaptationStrategy.EXPERT_TRACES, experts
        )
        cached = adapt_goals(
            random_model,
            big_room,
            GOALS,
            AdaptationStrategy.EXPERT_TRACES,
            experts,
            precompute=True,
        )
        assert cached.precomputed is not None
        assert [len(row) for row in cached.precomputed] == [1] * len(GOALS)
        # longer than any library member, so truncation changes nothing
        obs = expert_trace(big_room, State(5, 5), start=State(1, 5))
        obs = Trace(observations=obs.observations * 3, goal=obs.goal)
        assert infer(random_model, plain, obs, big_room).per_goal_scores == pytest.approx(
            infer(random_model, cached, obs, big_room).per_goal_scores
        )

    def test_empty_observation(self, random_model, big_room):
        """Should refuse an empty observation."""
        experts = expert_libraries(big_room, GOALS[:1], 1, seed=0)
        adapted = adapt_goals(
            random_model, big_room, GOALS[:1], AdaptationStrategy.EXPERT_TRACES, experts
        )
        with pytest.raises(ContractViolation):
            infer(random_model, adapted, Trace(observations=()), big_room)

    def test_embed_library_truncates(self, random_model, big_room):
        """Should embed each member cut to the requested length."""
        trace = expert_trace(big_room, State(5, 5))
        library = GoalLibrary(State(5, 5), (trace,))
        [embedding] = embed_library(random_model, library, 2, big_room)
        np.testing.assert_allclose(
            embedding, random_model.embed_trace(trace.prefix(2), big_room)
        )
        with pytest.raises(ContractViolation):
            embed_library(random_model, library, 0, big_room)
