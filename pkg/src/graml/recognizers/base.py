"""Types shared by the recognizers."""

from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import StrEnum

from graml.env import State
from graml.errors import ContractViolation


class Algorithm(StrEnum):
    BG_GRAML = "bg_graml"
    GC_GRAML = "gc_graml"
    GRAQL = "graql"


@dataclass(frozen=True)
class RecognitionResult:
    goal: State
    per_goal_scores: dict[State, float] = field(default_factory=dict)
    inference_time: float = 0.0

    @property
    def confidence(self) -> float:
        return self.per_goal_scores.get(self.goal, float("nan"))


def argmax_goal(scores: Mapping[State, float]) -> State:
    """Highest-scoring goal; ties go to the goal listed first."""
    if not scores:
        raise ContractViolation("no goals to choose from")
    best_goal, best_score = None, float("-inf")
    for goal, score in scores.items():
        if best_goal is None or score > best_score:
            best_goal, best_score = goal, score
    assert best_goal is not None
    return best_goal
