"""GRAML CLI - Domain learning, goal adaptation, inference, and experiments."""

import json
import math
import sys
from collections.abc import Iterator
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Any

import click
import numpy as np

from graml.config import ExperimentConfig, load_experiment_config, settings
from graml.env import GridEnv, State, make_env
from graml.errors import ContractViolation, ExperimentError, GramlError
from graml.harness import (
    build_problem,
    expert_library,
    learn_domain,
    run_odgr_experiment,
    sweep_goal_counts,
    sweep_library_size,
)
from graml.log import configure_logging, get_logger
from graml.metric import MetricModel
from graml.planner import MctsConfig
from graml.recognizers import AdaptationStrategy, Algorithm, adapt_goals, infer
from graml.reports import accuracy_grid, write_report
from graml.services import storage

logger = get_logger(__name__)


def output_json(data: Any) -> None:
    """Pretty-print JSON output."""
    click.echo(json.dumps(data, indent=2, default=str))


def output_table(rows: list[dict[str, Any]], columns: list[str]) -> None:
    """Output data as a simple table."""
    if not rows:
        click.echo("No results")
        return

    widths = {col: len(col) for col in columns}
    for row in rows:
        for col in columns:
            widths[col] = max(widths[col], min(len(_cell(row.get(col))), 60))

    header = " | ".join(col.ljust(widths[col]) for col in columns)
    click.echo(header)
    click.echo("-" * len(header))
    for row in rows:
        line = " | ".join(_cell(row.get(col))[:60].ljust(widths[col]) for col in columns)
        click.echo(line)


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return "" if math.isnan(value) else f"{value:.3f}"
    return "" if value is None else str(value)


@contextmanager
def graml_errors() -> Iterator[None]:
    """Turn GRAML failures into a JSON error record on stderr and exit code 1."""
    try:
        yield
    except GramlError as e:
        logger.error("command_failed", **e.to_record())
        click.echo(json.dumps(e.to_record(), default=str), err=True)
        sys.exit(1)


def parse_state(text: str) -> State:
    try:
        x, y = (int(part) for part in text.split(","))
    except ValueError as e:
        raise click.BadParameter(f"expected x,y but got '{text}'") from e
    return State(x, y)


def _goal_option(
    ctx: click.Context, param: click.Parameter, values: tuple[str, ...]
) -> list[State]:
    return [parse_state(value) for value in values]


def _check_model_env(model: MetricModel, env: GridEnv) -> None:
    if model.env_id != env.env_id:
        raise ContractViolation(
            "model was trained on another environment", model_env=model.env_id, env=env.env_id
        )


@click.group()
@click.option("--log-level", default=settings.log_level, show_default=True, help="Log level")
@click.option("--json-output", "-j", is_flag=True, help="Output raw JSON")
@click.pass_context
def cli(ctx: click.Context, log_level: str, json_output: bool) -> None:
    """GRAML - Goal recognition as metric learning."""
    ctx.ensure_object(dict)
    ctx.obj["json"] = json_output
    configure_logging("graml", log_level)


# =============================================================================
# Environment commands
# =============================================================================


@cli.command("show-env")
@click.argument("name")
@click.option("--seed", default=0, help="Layout seed")
@click.pass_context
def show_env(ctx: click.Context, name: str, seed: int) -> None:
    """Print an environment layout."""
    with graml_errors():
        env = make_env(name, seed)

    if ctx.obj["json"]:
        output_json(
            {
                "env_id": env.env_id,
                "width": env.width,
                "height": env.height,
                "start": list(env.start),
                "layout": env.to_text().splitlines(),
            }
        )
    else:
        click.echo(env.to_text())


# =============================================================================
# Phase commands
# =============================================================================


@cli.command("learn")
@click.option("--config", "-c", "config_path", type=click.Path(), help="Experiment YAML")
@click.option("--env", "env_name", default=None, help="Environment (default: first in config)")
@click.option(
    "--algorithm",
    "-a",
    type=click.Choice([str(Algorithm.BG_GRAML), str(Algorithm.GC_GRAML)]),
    default=str(Algorithm.BG_GRAML),
    show_default=True,
)
@click.option("--out", "-o", "out_dir", type=click.Path(), required=True, help="Output directory")
@click.pass_context
def learn(
    ctx: click.Context, config_path: str | None, env_name: str | None, algorithm: str, out_dir: str
) -> None:
    """Domain learning: base goals, agents, pair dataset, metric model."""
    with graml_errors():
        cfg = load_experiment_config(config_path) if config_path else ExperimentConfig()
        name = env_name or cfg.envs[0]
        cfg = replace(
            cfg, envs=(name,), algorithms=(Algorithm(algorithm),), n_problems=0, goal_sets=None
        )
        env = make_env(name, cfg.env_seed)
        problem = build_problem(env, cfg)
        domain = learn_domain(problem, cfg, Algorithm(algorithm))
        if domain.error is not None:
            raise ExperimentError("domain learning failed", cause=domain.error)
        assert domain.model is not None
        base_goals = problem.gc_base_goals if domain.gc_table is not None else problem.base_goals

        out = Path(out_dir)
        files = {"model": str(storage.save_model(domain.model, out / "model.json"))}
        if domain.gc_table is not None:
            files["gc_table"] = str(storage.save_gc_qtable(domain.gc_table, out / "gc_table.json"))

    result = {
        "env": env.env_id,
        "algorithm": algorithm,
        "base_goals": [list(g) for g in base_goals],
        "domain_learning_seconds": domain.seconds,
        "held_out_accuracy": domain.model.held_out_accuracy,
        "files": files,
    }
    if ctx.obj["json"]:
        output_json(result)
    else:
        click.echo(f"Learned {algorithm} on {env.env_id} in {domain.seconds:.1f}s")
        click.echo(f"Held-out pair accuracy: {_cell(domain.model.held_out_accuracy)}")
        for kind, path in files.items():
            click.echo(f"  {kind}: {path}")


@cli.command("adapt")
@click.option("--model", "-m", "model_path", type=click.Path(), required=True)
@click.option("--env", "env_name", required=True, help="Environment name")
@click.option("--env-seed", default=0, help="Layout seed")
@click.option(
    "--goal", "-g", "goals", multiple=True, required=True, callback=_goal_option, help="x,y"
)
@click.option(
    "--strategy",
    "-s",
    type=click.Choice([str(s) for s in AdaptationStrategy]),
    default=str(AdaptationStrategy.EXPERT_TRACES),
    show_default=True,
)
@click.option("--gc-table", type=click.Path(), help="GC Q-table for goal_conditioned")
@click.option("--library-size", default=1, show_default=True)
@click.option(
    "--iterations", default=MctsConfig().iterations, show_default=True, help="MCTS iterations"
)
@click.option("--temperature", default=0.5, show_default=True, help="GC rollout temperature")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "-o", "out_path", type=click.Path(), required=True)
@click.pass_context
def adapt(
    ctx: click.Context,
    model_path: str,
    env_name: str,
    env_seed: int,
    goals: list[State],
    strategy: str,
    gc_table: str | None,
    library_size: int,
    iterations: int,
    temperature: float,
    seed: int,
    out_path: str,
) -> None:
    """Goal adaptation: build goal libraries for a new goal set."""
    with graml_errors():
        model = storage.load_model(model_path)
        env = make_env(env_name, env_seed)
        _check_model_env(model, env)
        chosen = AdaptationStrategy(strategy)
        source: Any
        if chosen is AdaptationStrategy.EXPERT_TRACES:
            source = expert_library(env, goals, library_size, np.random.default_rng(seed))
        elif chosen is AdaptationStrategy.MCTS:
            source = MctsConfig(iterations=iterations, seed=seed)
        else:
            if not gc_table:
                raise ContractViolation("goal_conditioned adaptation needs --gc-table")
            source = storage.load_gc_qtable(gc_table)
        adapted = adapt_goals(
            model,
            env,
            goals,
            chosen,
            source,
            library_size,
            temperature=temperature,
            seed=seed,
            workers=settings.workers,
        )
        storage.save_adapted(adapted, out_path)

    result = {
        "goals": [list(g) for g in adapted.goals],
        "strategy": strategy,
        "library_size": library_size,
        "adaptation_seconds": adapted.adaptation_time,
        "file": out_path,
    }
    if ctx.obj["json"]:
        output_json(result)
    else:
        click.echo(
            f"Adapted {len(goals)} goals ({strategy}) "
            f"in {adapted.adaptation_time:.3f}s -> {out_path}"
        )


@cli.command("infer")
@click.option("--model", "-m", "model_path", type=click.Path(), required=True)
@click.option("--adapted", "-a", "adapted_path", type=click.Path(), required=True)
@click.option("--trace", "-t", "trace_path", type=click.Path(), required=True)
@click.option("--env", "env_name", required=True, help="Environment name")
@click.option("--env-seed", default=0, help="Layout seed")
@click.pass_context
def infer_cmd(
    ctx: click.Context,
    model_path: str,
    adapted_path: str,
    trace_path: str,
    env_name: str,
    env_seed: int,
) -> None:
    """Inference: the goal that best explains an observation trace."""
    with graml_errors():
        model = storage.load_model(model_path)
        env = make_env(env_name, env_seed)
        _check_model_env(model, env)
        adapted = storage.load_adapted(adapted_path)
        obs = storage.load_trace(trace_path)
        result = infer(model, adapted, obs, env)

    data = {
        "goal": list(result.goal),
        "confidence": result.confidence,
        "inference_time": result.inference_time,
        "scores": {f"{g.x},{g.y}": score for g, score in result.per_goal_scores.items()},
    }
    if ctx.obj["json"]:
        output_json(data)
    else:
        click.echo(f"Goal: {result.goal.x},{result.goal.y} (confidence {result.confidence:.4f})")
        output_table(
            [{"goal": goal, "score": score} for goal, score in data["scores"].items()],
            ["goal", "score"],
        )


# =============================================================================
# Experiment commands
# =============================================================================


@cli.command("eval")
@click.option("--config", "-c", "config_path", type=click.Path(), required=True)
@click.option("--out", "-o", "out_dir", type=click.Path(), default=None, help="Report directory")
@click.pass_context
def eval_cmd(ctx: click.Context, config_path: str, out_dir: str | None) -> None:
    """Run the full ODGR experiment grid and write the report."""
    with graml_errors():
        cfg = load_experiment_config(config_path)
        report = run_odgr_experiment(cfg)
        target = Path(out_dir or settings.output_dir)
        paths = write_report(report, target)

    grid = accuracy_grid(report.summary)
    if ctx.obj["json"]:
        output_json(
            {
                "records": len(report.records),
                "accuracy": grid.to_dict(orient="records"),
                "timings": {key: t.summary() for key, t in report.timings.items()},
                "files": {key: str(path) for key, path in paths.items()},
            }
        )
    else:
        output_table(grid.to_dict(orient="records"), ["env", "algorithm", *_grid_columns(grid)])
        click.echo()
        click.echo(f"Report written to {target}")


def _grid_columns(grid: Any) -> list[str]:
    return [
        c
        for c in grid.columns
        if c not in ("env", "algorithm") and not c.endswith(("_std", "_n"))
    ]


@cli.command("sweep")
@click.option("--config", "-c", "config_path", type=click.Path(), required=True)
@click.option("--out", "-o", "out_dir", type=click.Path(), default=None, help="Report directory")
@click.pass_context
def sweep(ctx: click.Context, config_path: str, out_dir: str | None) -> None:
    """Accuracy over base-goal and active-goal counts."""
    with graml_errors():
        cfg = load_experiment_config(config_path)
        result = sweep_goal_counts(cfg)
        target = Path(out_dir or settings.output_dir)
        target.mkdir(parents=True, exist_ok=True)
        storage.write_records(result.records, target / "sweep_raw.jsonl")
        storage.write_records(result.rows, target / "sweep_rows.jsonl")
        result.summary.to_csv(target / "sweep.csv", index=False)

    rows = result.summary.to_dict(orient="records")
    if ctx.obj["json"]:
        output_json(rows)
    else:
        output_table(rows, ["env", "n_base_goals", "n_active_goals", "accuracy", "std", "seeds"])


@cli.command("library-sweep")
@click.option("--config", "-c", "config_path", type=click.Path(), required=True)
@click.option("--sizes", default=None, help="Comma-separated library sizes")
@click.option("--out", "-o", "out_dir", type=click.Path(), default=None, help="Report directory")
@click.pass_context
def library_sweep(
    ctx: click.Context, config_path: str, sizes: str | None, out_dir: str | None
) -> None:
    """Adaptation time and accuracy as a function of library size."""
    with graml_errors():
        cfg = load_experiment_config(config_path)
        try:
            parsed = [int(s) for s in sizes.split(",")] if sizes else None
        except ValueError as e:
            raise ContractViolation(f"Invalid --sizes: {sizes}") from e
        result = sweep_library_size(cfg, parsed)
        target = Path(out_dir or settings.output_dir)
        target.mkdir(parents=True, exist_ok=True)
        storage.write_records(result.records, target / "library_raw.jsonl")
        result.summary.to_csv(target / "library_sweep.csv", index=False)

    rows = result.summary.to_dict(orient="records")
    if ctx.obj["json"]:
        output_json(rows)
    else:
        output_table(rows, ["env", "library_size", "accuracy", "adaptation_seconds", "total"])


def main() -> None:
    """Entry point."""
    cli(obj={})


if __name__ == "__main__":
    main()
