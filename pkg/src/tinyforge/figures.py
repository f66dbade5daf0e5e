"""Figure rendering for the report command.

Renders the same views the delimited output carries: a time-vs-tokens
scatter with success/failure markers per stage, and a time-vs-cost
trade-off chart grouped by stage and outcome.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .gateway import CostModel
from .metrics import RunSample, StageStats, tradeoff_rows

_STAGE_COLORS = {"DP": "tab:blue", "MC": "tab:green", "SG": "tab:red"}
_OUTCOME_MARKERS = {"success": "o", "failure": "x"}


def render_scatter_figure(samples: list[RunSample], out_path: Path) -> Path:
    """Execution time vs token consumption, one marker per run."""
    fig, ax = plt.subplots(figsize=(7, 5))
    for stage_label, color in _STAGE_COLORS.items():
        for outcome, marker in _OUTCOME_MARKERS.items():
            xs = [
                s.duration
                for s in samples
                if s.stage.label == stage_label and s.outcome_label == outcome
            ]
            ys = [
                s.total_tokens
                for s in samples
                if s.stage.label == stage_label and s.outcome_label == outcome
            ]
            if xs:
                ax.scatter(
                    xs, ys, c=color, marker=marker, alpha=0.75,
                    label=f"{stage_label} {outcome}",
                )
    ax.set_xlabel("Execution time (s)")
    ax.set_ylabel("Token consumption")
    ax.set_title("Time vs tokens per stage run")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def render_tradeoff_figure(
    samples: list[RunSample], model: CostModel, out_path: Path
) -> Path:
    """Mean execution time vs mean USD cost per (stage, outcome) group."""
    rows = tradeoff_rows(samples, model)
    fig, ax = plt.subplots(figsize=(7, 5))
    for stage_label, outcome, mean_duration, mean_cost, n in rows:
        ax.scatter(
            [mean_duration],
            [float(mean_cost)],
            c=_STAGE_COLORS.get(stage_label, "tab:gray"),
            marker=_OUTCOME_MARKERS.get(outcome, "s"),
            s=40 + 4 * n,
            label=f"{stage_label} {outcome} (n={n})",
        )
    ax.set_xlabel("Mean execution time (s)")
    ax.set_ylabel("Mean operational cost (USD)")
    ax.set_title("Time vs cost trade-off by stage and outcome")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def render_stats_figure(stats_list: list[StageStats], out_path: Path) -> Path:
    """Success rate bars with time range annotations."""
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = [st.stage.label for st in stats_list]
    rates = [st.success_rate * 100 for st in stats_list]
    colors = [_STAGE_COLORS.get(label, "tab:gray") for label in labels]
    ax.bar(labels, rates, color=colors, alpha=0.8)
    for i, st in enumerate(stats_list):
        ax.annotate(
            f"{st.time_mean:.1f}s",
            (i, rates[i]),
            ha="center", va="bottom", fontsize=8,
        )
    ax.set_ylabel("Success rate (%)")
    ax.set_ylim(0, 110)
    ax.set_title("Per-stage success rate (mean time annotated)")
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
