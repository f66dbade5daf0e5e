"""Operator entry point: run stages, benches, reports, and trace replay.

Exit codes are a stable contract: 0 success, 1 domain failure (a stage or
trace check failed), 2 usage or configuration error.
"""

from __future__ import annotations

import sys
import uuid
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click

from . import figures as figs
from . import metrics
from .config import DEFAULT_CONFIG_NAME, Config
from .errors import ConfigError, RunNotFound, TinyforgeError
from .pipeline import (
    PipelineRun,
    RetryPolicy,
    SimulatedClock,
    StageOutcome,
    StageResult,
    StageRunner,
    WallClock,
)
from .stages import PIPELINE_ORDER, LifecycleStage, validate_stage_input
from .trace import TraceStore, verify_trace

STAGE_CHOICES = ("dp", "mc", "sg", "all")


@click.group()
def main() -> None:
    """TinyML lifecycle automation driven by LLM code generation."""


def _load_config(path: str) -> Config:
    try:
        return Config.load(Path(path))
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)


def _policy(config: Config, max_attempts: int | None) -> RetryPolicy:
    if max_attempts is None:
        return config.retry
    return RetryPolicy(
        max_attempts=max_attempts,
        per_execution_timeout=config.retry.per_execution_timeout,
    )


def _build_runner(
    config: Config,
    tracer: TraceStore,
    stages: list[LifecycleStage],
    clock=None,
) -> StageRunner:
    return StageRunner(
        registry=config.build_registry(),
        providers={s: config.build_provider(s) for s in stages},
        tracer=tracer,
        workspace_root=config.workspace_root,
        toolchain=config.build_toolchain(),
        interpreter=config.interpreter,
        clock=clock or WallClock(),
        deploy=config.toolchain.deploy,
        port=config.toolchain.port,
    )


def _summary_line(result: StageResult) -> str:
    return (
        f"{result.stage.label}: {result.outcome.value} "
        f"attempts={len(result.attempts)} "
        f"seconds={result.total_duration:.2f} "
        f"tokens={result.total_tokens}"
    )


@main.command("run")
@click.option("--config", "config_path", default=DEFAULT_CONFIG_NAME, show_default=True)
@click.option("--stage", required=True, type=click.Choice(STAGE_CHOICES))
@click.option("--max-attempts", type=int, default=None, help="Override the retry cap.")
@click.option("--trace", "trace_path", default=None, help="Override the trace file path.")
def cmd_run(config_path: str, stage: str, max_attempts: int | None, trace_path: str | None) -> None:
    """Run one lifecycle stage or the full pipeline."""
    config = _load_config(config_path)
    policy = _policy(config, max_attempts)
    tracer = TraceStore(Path(trace_path) if trace_path else config.trace_path)
    stages_needed = (
        list(PIPELINE_ORDER) if stage == "all" else [LifecycleStage.from_token(stage)]
    )
    try:
        runner = _build_runner(config, tracer, stages_needed)
        if stage == "all":
            run = runner.run_pipeline(config.stage_inputs, policy)
            results = list(run.stage_results)
        else:
            target = LifecycleStage.from_token(stage)
            if target not in config.stage_inputs:
                raise ConfigError(f"no stage_input.{stage} section in config")
            stage_input = validate_stage_input(target, config.stage_inputs[target])
            run_id = f"run-{uuid.uuid4().hex[:12]}"
            results = [runner.run_stage(run_id, stage_input, policy)]
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    except TinyforgeError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)

    for result in results:
        click.echo(_summary_line(result))
    if any(r.outcome is not StageOutcome.SUCCESS for r in results):
        sys.exit(1)


@main.command("bench")
@click.option("--config", "config_path", default=DEFAULT_CONFIG_NAME, show_default=True)
@click.option("--stage", required=True, type=click.Choice(("dp", "mc", "sg")))
@click.option("--runs", type=int, required=True)
@click.option("--parallel", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=None, help="Override the provider seed.")
@click.option("--max-attempts", type=int, default=None)
@click.option("--trace", "trace_path", default=None)
def cmd_bench(
    config_path: str,
    stage: str,
    runs: int,
    parallel: int,
    seed: int | None,
    max_attempts: int | None,
    trace_path: str | None,
) -> None:
    """Run N independent repetitions of one stage and print aggregate stats."""
    if runs < 1:
        click.echo("error: --runs must be at least 1", err=True)
        sys.exit(2)
    if parallel < 1:
        click.echo("error: --parallel must be at least 1", err=True)
        sys.exit(2)
    config = _load_config(config_path)
    if seed is not None:
        config.provider.seed = seed
    policy = _policy(config, max_attempts)
    target = LifecycleStage.from_token(stage)
    if target not in config.stage_inputs:
        click.echo(f"config error: no stage_input.{stage} section in config", err=True)
        sys.exit(2)
    try:
        stage_input = validate_stage_input(target, config.stage_inputs[target])
    except TinyforgeError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)

    tracer = TraceStore(Path(trace_path) if trace_path else config.trace_path)
    deterministic = config.provider.kind in ("scripted", "stochastic")
    base_seed = config.provider.seed

    def one_run(index: int) -> StageResult:
        # each run owns its provider instances and clock; the trace store is
        # the only shared sink
        clock = (
            SimulatedClock(base_seed * 100_003 + index, start_offset=index * 10_000.0)
            if deterministic
            else WallClock()
        )
        runner = StageRunner(
            registry=config.build_registry(),
            providers={target: config.build_provider(target, seed_offset=index)},
            tracer=tracer,
            workspace_root=config.workspace_root,
            toolchain=config.build_toolchain(),
            interpreter=config.interpreter,
            clock=clock,
        )
        run_id = f"bench-{stage}-{base_seed}-{index:04d}"
        return runner.run_stage(run_id, stage_input, policy)

    if parallel == 1:
        results = [one_run(i) for i in range(runs)]
    else:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(one_run, range(runs)))

    samples = [
        metrics.RunSample(
            run_id=f"bench-{stage}-{base_seed}-{i:04d}",
            stage=target,
            success=r.outcome is StageOutcome.SUCCESS,
            duration=r.total_duration,
            prompt_tokens=sum(a.prompt_tokens for a in r.attempts),
            completion_tokens=sum(a.completion_tokens for a in r.attempts),
        )
        for i, r in enumerate(results)
    ]
    stats = metrics.aggregate_stage_stats(samples)
    click.echo(metrics.render_stats([stats], "table"), nl=False)


@main.command("report")
@click.option("--config", "config_path", default=DEFAULT_CONFIG_NAME, show_default=True)
@click.option("--trace", "trace_path", default=None)
@click.option("--view", required=True, type=click.Choice(("stats", "scatter", "tradeoff")))
@click.option("--format", "fmt", default="table", type=click.Choice(("table", "csv")),
              show_default=True)
@click.option("--figures-dir", default=None,
              help="Also render the view as a PNG figure into this directory.")
def cmd_report(
    config_path: str,
    trace_path: str | None,
    view: str,
    fmt: str,
    figures_dir: str | None,
) -> None:
    """Render stats, scatter, or trade-off views from the trace."""
    config = _load_config(config_path)
    path = Path(trace_path) if trace_path else config.trace_path
    try:
        events = TraceStore(path).load_all() if path.exists() else _unreadable(path)
    except (OSError, ValueError) as exc:
        click.echo(f"error: cannot read trace {path}: {exc}", err=True)
        sys.exit(1)

    samples = metrics.samples_from_events(events)
    figure_path = None
    if view == "stats":
        stats_list = [
            metrics.aggregate_stage_stats([s for s in samples if s.stage is stage])
            for stage in PIPELINE_ORDER
            if any(s.stage is stage for s in samples)
        ]
        click.echo(metrics.render_stats(stats_list, fmt), nl=False)
        if figures_dir:
            figure_path = figs.render_stats_figure(
                stats_list, Path(figures_dir) / "stats.png"
            )
    elif view == "scatter":
        click.echo(metrics.render_scatter(samples, fmt), nl=False)
        if figures_dir:
            figure_path = figs.render_scatter_figure(
                samples, Path(figures_dir) / "scatter.png"
            )
    else:
        click.echo(metrics.render_tradeoff(samples, config.cost_model, fmt), nl=False)
        if figures_dir:
            figure_path = figs.render_tradeoff_figure(
                samples, config.cost_model, Path(figures_dir) / "tradeoff.png"
            )
    if figure_path is not None:
        click.echo(f"figure written: {figure_path}", err=True)


def _unreadable(path: Path):
    raise OSError(f"no such file: {path}")


@main.command("replay")
@click.option("--trace", "trace_path", required=True)
@click.option("--run", "run_id", default=None, help="Limit the timeline to one run.")
def cmd_replay(trace_path: str, run_id: str | None) -> None:
    """Verify trace integrity and print an attempt-by-attempt timeline."""
    path = Path(trace_path)
    try:
        issues = verify_trace(path)
    except FileNotFoundError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    if issues:
        for issue in issues:
            click.echo(f"line {issue.line_number}: {issue.message}")
        sys.exit(1)

    store = TraceStore(path)
    try:
        events = store.load_run(run_id) if run_id else store.load_all()
    except RunNotFound as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    for e in events:
        click.echo(
            f"{e.ts_start.isoformat()} {e.run_id} {e.stage} "
            f"{e.kind.value}#{e.attempt_index} {e.outcome} "
            f"tokens={e.prompt_tokens}+{e.completion_tokens}"
        )


if __name__ == "__main__":
    main()
