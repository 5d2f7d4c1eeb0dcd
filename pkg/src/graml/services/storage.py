"""JSON checkpoints and line-delimited records passed between CLI invocations.

Arrays are written row-major as JSON lists. ``json`` renders floats with the
shortest repr that round-trips, so a loaded checkpoint is bitwise equal to the
saved one.
"""

import json
from collections.abc import Iterable, Iterator, Mapping
from pathlib import Path
from typing import Any

import numpy as np

from graml.dataset import EncodingMode, PairSample
from graml.env import Action, State
from graml.errors import CheckpointError, ContractViolation, GramlError
from graml.log import get_logger
from graml.metric import LstmParams, MetricModel
from graml.recognizers.embedding import AdaptationStrategy, AdaptedState, GoalLibrary
from graml.rl import GCQTable, MaskKind, QTable, Trace

logger = get_logger(__name__)

FORMAT_VERSION = 1


# =============================================================================
# Documents
# =============================================================================


def _write_document(path: str | Path, kind: str, body: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {"format": kind, "version": FORMAT_VERSION, **body}
    path.write_text(json.dumps(document) + "\n")
    logger.debug("checkpoint_written", kind=kind, path=str(path))
    return path


def _read_document(path: str | Path, kind: str) -> dict[str, Any]:
    path = Path(path)
    try:
        document = json.loads(path.read_text())
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint: {path}", reason=str(e)) from e
    except json.JSONDecodeError as e:
        raise CheckpointError(f"Checkpoint is not valid JSON: {path}", reason=str(e)) from e
    if not isinstance(document, dict) or document.get("format") != kind:
        found = document.get("format") if isinstance(document, dict) else None
        raise CheckpointError(f"Expected a {kind} checkpoint", path=str(path), found=found)
    if document.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            "Unsupported checkpoint version",
            path=str(path),
            version=document.get("version"),
            supported=FORMAT_VERSION,
        )
    return document


def _array(document: Mapping[str, Any], key: str, shape: tuple[int, ...]) -> np.ndarray:
    try:
        values = np.array(document[key], dtype=np.float64)
        return values.reshape(shape)
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"Malformed array '{key}'", shape=list(shape)) from e


def _state(raw: Any) -> State:
    x, y = raw
    return State(int(x), int(y))


# =============================================================================
# Traces
# =============================================================================


def trace_to_record(trace: Trace) -> dict[str, Any]:
    return {
        "observations": [[s.x, s.y, int(a)] for s, a in trace.observations],
        "goal": list(trace.goal) if trace.goal is not None else None,
        "mask_kind": str(trace.mask_kind),
        "observed_ratio": trace.observed_ratio,
        "indices": list(trace.indices),
    }


def trace_from_record(record: Mapping[str, Any]) -> Trace:
    try:
        observations = tuple(
            (State(int(x), int(y)), Action(int(a))) for x, y, a in record["observations"]
        )
        goal = _state(record["goal"]) if record.get("goal") is not None else None
        return Trace(
            observations=observations,
            goal=goal,
            mask_kind=MaskKind(record.get("mask_kind", MaskKind.FULL)),
            observed_ratio=float(record.get("observed_ratio", 1.0)),
            indices=tuple(int(i) for i in record.get("indices", ())),
        )
    except (KeyError, TypeError, ValueError, ContractViolation) as e:
        raise CheckpointError("Malformed trace record", reason=str(e)) from e


def save_trace(trace: Trace, path: str | Path) -> Path:
    return _write_document(path, "graml.trace", {"trace": trace_to_record(trace)})


def load_trace(path: str | Path) -> Trace:
    return trace_from_record(_read_document(path, "graml.trace")["trace"])


# =============================================================================
# Metric model
# =============================================================================


def save_model(model: MetricModel, path: str | Path) -> Path:
    params = model.params
    body = {
        "input_dim": params.input_dim,
        "hidden_dim": params.hidden_dim,
        "encoding": str(model.encoding),
        "env_id": model.env_id,
        "loss_history": list(model.loss_history),
        "held_out_accuracy": model.held_out_accuracy,
        "W": params.W.ravel().tolist(),
        "U": params.U.ravel().tolist(),
        "b": params.b.tolist(),
    }
    return _write_document(path, "graml.model", body)


def load_model(path: str | Path) -> MetricModel:
    document = _read_document(path, "graml.model")
    try:
        d, k = int(document["input_dim"]), int(document["hidden_dim"])
        params = LstmParams(
            W=_array(document, "W", (4 * k, d)),
            U=_array(document, "U", (4 * k, k)),
            b=_array(document, "b", (4 * k,)),
        )
        return MetricModel(
            params=params,
            encoding=EncodingMode(document["encoding"]),
            env_id=str(document["env_id"]),
            loss_history=[float(v) for v in document.get("loss_history", [])],
            held_out_accuracy=document.get("held_out_accuracy"),
        )
    except (KeyError, TypeError, ValueError, ContractViolation) as e:
        raise CheckpointError("Malformed model checkpoint", path=str(path), reason=str(e)) from e


# =============================================================================
# Q-tables
# =============================================================================


def save_qtable(table: QTable, path: str | Path) -> Path:
    body = {
        "goal": list(table.goal),
        "width": table.width,
        "height": table.height,
        "trained_steps": table.trained_steps,
        "values": table.values.ravel().tolist(),
    }
    return _write_document(path, "graml.qtable", body)


def load_qtable(path: str | Path) -> QTable:
    document = _read_document(path, "graml.qtable")
    try:
        width, height = int(document["width"]), int(document["height"])
        return QTable(
            values=_array(document, "values", (width * height, len(Action))),
            goal=_state(document["goal"]),
            width=width,
            height=height,
            trained_steps=int(document.get("trained_steps", 0)),
        )
    except (KeyError, TypeError, ValueError, ContractViolation) as e:
        raise CheckpointError("Malformed Q-table checkpoint", path=str(path), reason=str(e)) from e


def save_gc_qtable(table: GCQTable, path: str | Path) -> Path:
    body = {
        "goal_set": [list(goal) for goal in table.goal_set],
        "width": table.width,
        "height": table.height,
        "trained_steps": table.trained_steps,
        "values": table.values.ravel().tolist(),
    }
    return _write_document(path, "graml.gc_qtable", body)


def load_gc_qtable(path: str | Path) -> GCQTable:
    document = _read_document(path, "graml.gc_qtable")
    try:
        width, height = int(document["width"]), int(document["height"])
        goal_set = tuple(_state(goal) for goal in document["goal_set"])
        return GCQTable(
            values=_array(document, "values", (len(goal_set), width * height, len(Action))),
            goal_set=goal_set,
            width=width,
            height=height,
            trained_steps=int(document.get("trained_steps", 0)),
        )
    except (KeyError, TypeError, ValueError, ContractViolation) as e:
        raise CheckpointError(
            "Malformed GC Q-table checkpoint", path=str(path), reason=str(e)
        ) from e


# =============================================================================
# Adapted state
# =============================================================================


def save_adapted(adapted: AdaptedState, path: str | Path) -> Path:
    """Persist goal libraries; precomputed embeddings are not stored."""
    body = {
        "strategy": str(adapted.strategy),
        "adaptation_time": adapted.adaptation_time,
        "libraries": [
            {"goal": list(library.goal), "traces": [trace_to_record(t) for t in library.traces]}
            for library in adapted.libraries
        ],
    }
    return _write_document(path, "graml.adapted", body)


def load_adapted(path: str | Path) -> AdaptedState:
    document = _read_document(path, "graml.adapted")
    try:
        libraries = tuple(
            GoalLibrary(
                goal=_state(entry["goal"]),
                traces=tuple(trace_from_record(t) for t in entry["traces"]),
            )
            for entry in document["libraries"]
        )
        return AdaptedState(
            libraries=libraries,
            strategy=AdaptationStrategy(document["strategy"]),
            adaptation_time=float(document.get("adaptation_time", 0.0)),
        )
    except (KeyError, TypeError, ValueError, ContractViolation) as e:
        raise CheckpointError("Malformed adapted-state file", path=str(path), reason=str(e)) from e


# =============================================================================
# Line-delimited records
# =============================================================================


def write_records(records: Iterable[Mapping[str, Any]], path: str | Path) -> Path:
    """Write one JSON object per line with sorted keys."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as handle:
        for record in records:
            handle.write(json.dumps(record, sort_keys=True) + "\n")
    return path


def read_records(path: str | Path) -> Iterator[dict[str, Any]]:
    path = Path(path)
    try:
        handle = path.open()
    except OSError as e:
        raise CheckpointError(f"Cannot read records: {path}", reason=str(e)) from e
    with handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise CheckpointError("Malformed record line", path=str(path), line=number) from e


def pair_to_record(pair: PairSample) -> dict[str, Any]:
    assert pair.trace_a.goal is not None and pair.trace_b.goal is not None
    return {
        "label": pair.label,
        "goal_a": list(pair.trace_a.goal),
        "goal_b": list(pair.trace_b.goal),
        "indices_a": list(pair.trace_a.indices),
        "indices_b": list(pair.trace_b.indices),
        "trace_a": trace_to_record(pair.trace_a),
        "trace_b": trace_to_record(pair.trace_b),
    }


def write_pairs(pairs: Iterable[PairSample], path: str | Path) -> Path:
    return write_records((pair_to_record(pair) for pair in pairs), path)


def read_pairs(path: str | Path) -> list[PairSample]:
    pairs = []
    for record in read_records(path):
        try:
            pairs.append(
                PairSample(
                    trace_a=trace_from_record(record["trace_a"]),
                    trace_b=trace_from_record(record["trace_b"]),
                    label=int(record["label"]),
                )
            )
        except CheckpointError:
            raise
        except GramlError as e:
            raise CheckpointError("Invalid pair record", path=str(path), reason=e.message) from e
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError("Malformed pair record", path=str(path), reason=str(e)) from e
    return pairs
