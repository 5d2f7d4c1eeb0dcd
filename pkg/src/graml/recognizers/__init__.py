"""Goal recognizers: GRAML over embedding libraries and the GRAQL baseline."""

from graml.recognizers.base import Algorithm, RecognitionResult, argmax_goal
from graml.recognizers.embedding import (
    AdaptationStrategy,
    AdaptedState,
    GoalLibrary,
    adapt_goals,
    embed_library,
    infer,
)
from graml.recognizers.graql import (
    GraqlState,
    graql_adapt,
    graql_infer,
    observation_log_likelihood,
)

__all__ = [
    "AdaptationStrategy",
    "AdaptedState",
    "Algorithm",
    "GoalLibrary",
    "GraqlState",
    "RecognitionResult",
    "adapt_goals",
    "argmax_goal",
    "embed_library",
    "graql_adapt",
    "graql_infer",
    "infer",
    "observation_log_likelihood",
]
