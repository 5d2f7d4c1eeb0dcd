"""Exception hierarchy for GRAML.

Every error carries a ``kind`` and optional details so the CLI and the
experiment harness can emit machine-readable failure records.
"""

from typing import Any


class GramlError(Exception):
    """Base class for all GRAML errors."""

    kind = "graml_error"

    def __init__(self, message: str, **details: Any) -> None:
        super().__init__(message)
        self.message = message
        self.details = details

    def to_record(self) -> dict[str, Any]:
        """Render as a flat, JSON-serializable record."""
        return {"error": self.kind, "message": self.message, **self.details}


class ContractViolation(GramlError, ValueError):
    """A precondition of an operation was not met."""

    kind = "contract_violation"


class ConfigError(GramlError, ValueError):
    """Invalid or unreadable configuration."""

    kind = "config_error"


class EncodingError(GramlError, ValueError):
    """An observation could not be encoded for the given environment."""

    kind = "encoding_error"


class DatasetError(GramlError, ValueError):
    """Pair dataset could not be generated from the supplied traces."""

    kind = "dataset_error"


class CheckpointError(GramlError, ValueError):
    """A checkpoint file is malformed or does not match what was requested."""

    kind = "checkpoint_error"


class TrainingFailure(GramlError, RuntimeError):
    """A Q-learning agent failed its greedy success criterion."""

    kind = "training_failure"


class GenerationFailure(GramlError, RuntimeError):
    """Stochastic rollouts kept failing to reach the goal."""

    kind = "generation_failure"


class PlanningFailure(GramlError, RuntimeError):
    """The planner did not reach the goal within the episode cap."""

    kind = "planning_failure"


class MetricTrainingError(GramlError, RuntimeError):
    """Metric model training diverged."""

    kind = "metric_training_error"


class AdaptationError(GramlError, RuntimeError):
    """Goal adaptation could not produce an internal state for the goal set."""

    kind = "adaptation_error"


class AdaptationTimeout(AdaptationError):
    """Goal adaptation exceeded its wall-clock budget."""

    kind = "adaptation_timeout"


class ExperimentError(GramlError, RuntimeError):
    """An experiment could not be set up (e.g. not enough free cells for the goal counts)."""

    kind = "experiment_error"
