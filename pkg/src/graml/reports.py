"""Accuracy grids, timing summaries, and matrix CSVs built from raw experiment records."""

from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np
import pandas as pd

from graml.env import State
from graml.rl import MaskKind
from graml.services import storage

if TYPE_CHECKING:
    from graml.harness import AccuracyReport, ConfusionMatrices

AVERAGE = "average"

# Fully observed traces are identical under both mask kinds, so only the
# consecutive run feeds the single full column.
COLUMNS = (
    "consecutive_30",
    "consecutive_50",
    "consecutive_70",
    "non_consecutive_30",
    "non_consecutive_50",
    "non_consecutive_70",
    "full_100",
)

SUMMARY_COLUMNS = ["env", "algorithm", "column", "accuracy", "std", "correct", "total", "errors"]


def column_for(kind: MaskKind | str, ratio: float) -> str | None:
    """Report column of an inference phase; ``None`` for the duplicate full run."""
    kind = MaskKind(kind)
    if ratio >= 1.0:
        return "full_100" if kind is MaskKind.CONSECUTIVE else None
    return f"{kind}_{round(ratio * 100)}"


def _cell_rows(frame: pd.DataFrame, env: str) -> list[dict[str, Any]]:
    rows = []
    for (algorithm, column), cell in frame.groupby(["algorithm", "column"], sort=True):
        scored = cell[cell["error"].isna()]
        per_problem = scored.groupby("problem")["correct"].mean()
        total = len(scored)
        rows.append(
            {
                "env": env,
                "algorithm": algorithm,
                "column": column,
                "accuracy": float(scored["correct"].mean()) if total else float("nan"),
                "std": float(per_problem.std(ddof=0)) if len(per_problem) else float("nan"),
                "correct": int(scored["correct"].sum()),
                "total": total,
                "errors": int(cell["error"].notna().sum()),
            }
        )
    return rows


def summarize(records: Iterable[Mapping[str, Any]]) -> pd.DataFrame:
    """Long-form accuracy per (env, algorithm, column), plus pooled ``average`` rows.

    Accuracy is correct over scored phases; std is over per-problem accuracies.
    """
    frame = pd.DataFrame(list(records))
    if frame.empty:
        return pd.DataFrame(columns=SUMMARY_COLUMNS)
    frame = frame[frame["column"].notna()].copy()
    if frame.empty:
        return pd.DataFrame(columns=SUMMARY_COLUMNS)
    frame["correct"] = frame["correct"].astype(bool)
    # problems are only comparable within an environment
    frame["problem"] = frame["env"].astype(str) + "/" + frame["problem"].astype(str)

    rows = []
    for env, env_frame in frame.groupby("env", sort=True):
        rows.extend(_cell_rows(env_frame, str(env)))
    if frame["env"].nunique() > 1:
        rows.extend(_cell_rows(frame, AVERAGE))
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def accuracy_grid(summary: pd.DataFrame) -> pd.DataFrame:
    """Wide table: one row per (env, algorithm), accuracy/std/count per column."""
    if summary.empty:
        return pd.DataFrame(columns=["env", "algorithm", *COLUMNS])
    wide = summary.pivot_table(
        index=["env", "algorithm"],
        columns="column",
        values=["accuracy", "std", "total"],
        aggfunc="first",
    )
    grid = pd.DataFrame(index=wide.index)
    for column in COLUMNS:
        if ("accuracy", column) not in wide.columns:
            continue
        grid[column] = wide[("accuracy", column)]
        grid[f"{column}_std"] = wide[("std", column)]
        grid[f"{column}_n"] = wide[("total", column)].astype("Int64")
    return grid.reset_index()


def timing_summary(timing_records: Iterable[Mapping[str, Any]]) -> pd.DataFrame:
    frame = pd.DataFrame(list(timing_records))
    if frame.empty:
        return pd.DataFrame(columns=["env", "algorithm", "phase", "count", "mean", "total"])
    grouped = frame.groupby(["env", "algorithm", "phase"], sort=True)["seconds"]
    return grouped.agg(count="count", mean="mean", total="sum").reset_index()


def matrix_frame(matrix: np.ndarray, goals: Sequence[State]) -> pd.DataFrame:
    labels = [f"{goal.x},{goal.y}" for goal in goals]
    return pd.DataFrame(matrix, index=labels, columns=labels)


def write_matrices(matrices: "ConfusionMatrices", out_dir: Path, stem: str) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for space, matrix in (("trace", matrices.trace_space), ("embedding", matrices.embedding_space)):
        path = out_dir / f"{stem}_{space}.csv"
        matrix_frame(matrix, matrices.goals).to_csv(path)
        paths.append(path)
    return paths


def write_report(report: "AccuracyReport", out_dir: str | Path) -> dict[str, Path]:
    """Write raw logs, the accuracy grid, timings, and confusion matrices under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "raw": storage.write_records(report.records, out_dir / "raw.jsonl"),
        "timings_raw": storage.write_records(report.timing_records, out_dir / "timings.jsonl"),
    }
    report.summary.to_csv(out_dir / "summary.csv", index=False)
    paths["summary"] = out_dir / "summary.csv"
    accuracy_grid(report.summary).to_csv(out_dir / "accuracy.csv", index=False)
    paths["accuracy"] = out_dir / "accuracy.csv"
    timing_summary(report.timing_records).to_csv(out_dir / "timings.csv", index=False)
    paths["timings"] = out_dir / "timings.csv"
    for key, matrices in sorted(report.confusion.items()):
        write_matrices(matrices, out_dir / "matrices", key.replace("/", "_").replace(":", "-"))
    return paths


def sweep_summary(rows: Iterable[Mapping[str, Any]], keys: Sequence[str]) -> pd.DataFrame:
    """Mean accuracy per sweep cell over seeds, from per-seed rows."""
    frame = pd.DataFrame(list(rows))
    if frame.empty:
        return pd.DataFrame(columns=[*keys, "accuracy", "std", "seeds"])
    grouped = frame.groupby(list(keys), sort=True)["accuracy"]
    summary = grouped.agg(accuracy="mean", std=lambda s: float(s.std(ddof=0)), seeds="count")
    return summary.reset_index()


TREND_SLACK = 0.05


def follows_trend(values: Sequence[float], increasing: bool, slack: float = TREND_SLACK) -> bool:
    """Whether consecutive values never move against the trend by more than ``slack``."""
    steps = np.diff(np.asarray(values, dtype=np.float64))
    if increasing:
        return bool(np.all(steps >= -slack))
    return bool(np.all(steps <= slack))


def goal_count_trends(summary: pd.DataFrame, slack: float = TREND_SLACK) -> dict[str, bool]:
    """Accuracy should rise with more base goals and fall with more active goals."""
    if summary.empty:
        return {"base_goals_non_decreasing": True, "active_goals_non_increasing": True}
    by_base = summary.groupby("n_base_goals", sort=True)["accuracy"].mean()
    by_active = summary.groupby("n_active_goals", sort=True)["accuracy"].mean()
    return {
        "base_goals_non_decreasing": follows_trend(by_base.tolist(), True, slack),
        "active_goals_non_increasing": follows_trend(by_active.tolist(), False, slack),
    }
