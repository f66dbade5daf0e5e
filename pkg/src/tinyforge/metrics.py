"""Per-stage statistics across runs: success rate, time/token spread, cost.

All functions are pure over immutable sample collections. Arithmetic is
unrounded internally; display rounding is fixed at percentages to 1 decimal,
seconds to 2, USD to 6.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, replace
from decimal import Decimal

from .errors import EmptySampleSet, MixedStages, UnknownFormat
from .gateway import CostModel, price
from .stages import LifecycleStage
from .trace import EventKind, TraceEvent


@dataclass(frozen=True)
class RunSample:
    """One stage run's cumulative usage: all attempts, failures included."""

    run_id: str
    stage: LifecycleStage
    success: bool
    duration: float
    prompt_tokens: int
    completion_tokens: int
    total_cost: Decimal | None = None

    def __post_init__(self) -> None:
        if self.duration < 0:
            raise ValueError("duration must be non-negative")
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    @property
    def outcome_label(self) -> str:
        return "success" if self.success else "failure"


@dataclass(frozen=True)
class StageStats:
    stage: LifecycleStage
    n_runs: int
    success_rate: float
    time_mean: float
    time_min: float
    time_max: float
    tokens_mean: float
    tokens_min: int
    tokens_max: int


def samples_from_events(events: list[TraceEvent]) -> list[RunSample]:
    """Reconstruct per-run samples from stage_result trace events."""
    return [
        RunSample(
            run_id=e.run_id,
            stage=LifecycleStage(e.stage),
            success=e.outcome == "success",
            duration=(e.ts_end - e.ts_start).total_seconds(),
            prompt_tokens=e.prompt_tokens,
            completion_tokens=e.completion_tokens,
        )
        for e in events
        if e.kind is EventKind.STAGE_RESULT
    ]


def aggregate_stage_stats(samples: list[RunSample]) -> StageStats:
    """Mean/min/max over every sample, successes and failures alike."""
    if not samples:
        raise EmptySampleSet("cannot aggregate zero samples")
    stages = {s.stage for s in samples}
    if len(stages) > 1:
        raise MixedStages(f"samples span stages: {sorted(s.value for s in stages)}")

    durations = [s.duration for s in samples]
    tokens = [s.total_tokens for s in samples]
    n = len(samples)
    return StageStats(
        stage=samples[0].stage,
        n_runs=n,
        success_rate=sum(1 for s in samples if s.success) / n,
        # fsum: exact float summation keeps aggregation permutation-invariant
        time_mean=math.fsum(durations) / n,
        time_min=min(durations),
        time_max=max(durations),
        tokens_mean=sum(tokens) / n,
        tokens_min=min(tokens),
        tokens_max=max(tokens),
    )


def attach_costs(samples: list[RunSample], model: CostModel) -> list[RunSample]:
    """Price each sample's usage; a pure mapping."""
    return [
        replace(s, total_cost=price(s.prompt_tokens, s.completion_tokens, model))
        for s in samples
    ]


SCATTER_HEADER = "stage,run_id,duration_s,total_tokens,outcome"
TRADEOFF_HEADER = "stage,outcome,mean_duration_s,mean_cost_usd,n"
STATS_HEADER = (
    "stage,n,success_rate_pct,time_mean_s,time_min_s,time_max_s,tok_mean,tok_min,tok_max"
)


def scatter_rows(samples: list[RunSample]) -> list[tuple[str, str, float, int, str]]:
    """Lossless per-run projection, ordered by (stage, run_id)."""
    ordered = sorted(samples, key=lambda s: (s.stage.order, s.run_id))
    return [
        (s.stage.label, s.run_id, s.duration, s.total_tokens, s.outcome_label)
        for s in ordered
    ]


def tradeoff_rows(
    samples: list[RunSample], model: CostModel
) -> list[tuple[str, str, float, Decimal, int]]:
    """Mean duration and mean cost per (stage, outcome) group; empty groups omitted."""
    priced = attach_costs(samples, model)
    groups: dict[tuple[int, str], list[RunSample]] = {}
    for s in priced:
        groups.setdefault((s.stage.order, s.outcome_label), []).append(s)

    rows = []
    for (order, outcome), members in sorted(groups.items()):
        n = len(members)
        mean_duration = sum(m.duration for m in members) / n
        mean_cost = sum(m.total_cost for m in members) / n
        rows.append(
            (members[0].stage.label, outcome, mean_duration, Decimal(mean_cost), n)
        )
    return rows


def _pct(rate: float) -> str:
    return f"{rate * 100:.1f}"


def render_stats(stats_list: list[StageStats], fmt: str) -> str:
    """Stats view: one row per stage with rate, time and token spread."""
    if fmt == "csv":
        out = [STATS_HEADER]
        for st in stats_list:
            out.append(
                f"{st.stage.label},{st.n_runs},{_pct(st.success_rate)},"
                f"{st.time_mean:.2f},{st.time_min:.2f},{st.time_max:.2f},"
                f"{st.tokens_mean:.1f},{st.tokens_min},{st.tokens_max}"
            )
        return "\n".join(out) + "\n"
    if fmt == "table":
        buf = io.StringIO()
        header = (
            f"{'Stage':<6} {'Success':>8} {'Time mean [min-max] s':>26} "
            f"{'Tokens mean [min-max]':>28}"
        )
        buf.write(header + "\n")
        buf.write("-" * len(header) + "\n")
        for st in stats_list:
            time_cell = f"{st.time_mean:.2f} [{st.time_min:.2f}-{st.time_max:.2f}]"
            tok_cell = f"{st.tokens_mean:.1f} [{st.tokens_min}-{st.tokens_max}]"
            buf.write(
                f"{st.stage.label:<6} {_pct(st.success_rate) + '%':>8} "
                f"{time_cell:>26} {tok_cell:>28}\n"
            )
        return buf.getvalue()
    raise UnknownFormat(f"unknown format: {fmt}")


def render_scatter(samples: list[RunSample], fmt: str) -> str:
    rows = scatter_rows(samples)
    if fmt == "csv":
        out = [SCATTER_HEADER]
        out += [f"{s},{r},{d:.2f},{t},{o}" for s, r, d, t, o in rows]
        return "\n".join(out) + "\n"
    if fmt == "table":
        out = [f"{'Stage':<6} {'Run':<20} {'Seconds':>10} {'Tokens':>8} {'Outcome':<8}"]
        out += [f"{s:<6} {r:<20} {d:>10.2f} {t:>8} {o:<8}" for s, r, d, t, o in rows]
        return "\n".join(out) + "\n"
    raise UnknownFormat(f"unknown format: {fmt}")


def render_tradeoff(samples: list[RunSample], model: CostModel, fmt: str) -> str:
    rows = tradeoff_rows(samples, model)
    if fmt == "csv":
        out = [TRADEOFF_HEADER]
        out += [f"{s},{o},{d:.2f},{c:.6f},{n}" for s, o, d, c, n in rows]
        return "\n".join(out) + "\n"
    if fmt == "table":
        out = [f"{'Stage':<6} {'Outcome':<8} {'Mean s':>10} {'Mean USD':>12} {'N':>4}"]
        out += [f"{s:<6} {o:<8} {d:>10.2f} {c:>12.6f} {n:>4}" for s, o, d, c, n in rows]
        return "\n".join(out) + "\n"
    raise UnknownFormat(f"unknown format: {fmt}")
