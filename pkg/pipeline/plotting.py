"""
Explainability / accuracy trade-off plots.

x = fraud recall at the target FPR, y = concept mAP, one color per strategy,
larger markers for runs on their strategy's Pareto front and a black ring
around runs on the front over all strategies.

- emit_tradeoff_plot: static SVG (matplotlib), byte-stable for equal input
- tradeoff_figure:    interactive plotly figure for the dashboard
"""

from pathlib import Path
from typing import Dict, List, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import pandas as pd
import plotly.express as px

from evaluation.metrics import pareto_front
from pipeline.grid_runner import RunRecord, results_frame

STRATEGY_ORDER = ["fully-supervised", "pretrain", "two-stage", "hybrid"]
STRATEGY_COLORS = {
    "fully-supervised": "#4c72b0",
    "pretrain": "#8c8c8c",
    "two-stage": "#dd8452",
    "hybrid": "#55a868",
}
MARKER_SIZE = 24
FRONT_MARKER_SIZE = 110
OVERALL_RING_SIZE = 260


def _as_frame(runs: Union[pd.DataFrame, List[RunRecord]]) -> pd.DataFrame:
    if isinstance(runs, pd.DataFrame):
        return runs
    return results_frame(runs)


def _overall_front(df: pd.DataFrame) -> pd.Series:
    """Front membership over every run; rows with a NaN coordinate are never on it."""
    on_front = pd.Series(False, index=df.index)
    finite = df[["recall_at_fpr", "map"]].notna().all(axis=1)
    if finite.any():
        points = list(zip(df.loc[finite, "recall_at_fpr"], df.loc[finite, "map"]))
        on_front[finite] = pareto_front(points)
    return on_front


def _strategies(df: pd.DataFrame) -> List[str]:
    present = set(df["strategy"].astype(str))
    known = [s for s in STRATEGY_ORDER if s in present]
    return known + sorted(present - set(known))


def emit_tradeoff_plot(runs: Union[pd.DataFrame, List[RunRecord]], path: Path) -> Dict:
    """Write the trade-off scatter as SVG; returns point / front counts per strategy."""
    df = _as_frame(runs)
    if df.empty:
        raise ValueError("no runs to plot")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    overall = _overall_front(df)
    summary = {
        "points": int(len(df)),
        "pareto_points": 0,
        "overall_pareto_points": int(overall.sum()),
        "strategies": {},
    }
    with plt.rc_context({"svg.hashsalt": "tradeoff", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(7, 5))
        for strategy in _strategies(df):
            group = df[df["strategy"].astype(str) == strategy]
            front = group["pareto"].astype(bool)
            color = STRATEGY_COLORS.get(strategy, "#333333")
            ax.scatter(group["recall_at_fpr"], group["map"], s=[FRONT_MARKER_SIZE if f else MARKER_SIZE for f in front],
                       color=color, alpha=0.8, edgecolors="black", linewidths=0.4, label=strategy)
            summary["strategies"][strategy] = {
                "points": int(len(group)),
                "pareto_points": int(front.sum()),
                "overall_pareto_points": int(overall[group.index].sum()),
            }
            summary["pareto_points"] += int(front.sum())
        ring = df[overall]
        ax.scatter(ring["recall_at_fpr"], ring["map"], s=OVERALL_RING_SIZE, facecolors="none",
                   edgecolors="black", linewidths=1.2, label="overall front")
        ax.set_xlabel("Fraud recall @ target FPR")
        ax.set_ylabel("Concept mAP")
        ax.set_title("Explainability vs. decision performance")
        ax.grid(True, alpha=0.3)
        ax.legend(loc="best", frameon=False)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    summary["path"] = str(path)
    return summary


def tradeoff_figure(runs: Union[pd.DataFrame, List[RunRecord]]):
    df = _as_frame(runs).copy()
    df["strategy"] = df["strategy"].astype(str)
    df["marker"] = [FRONT_MARKER_SIZE if p else MARKER_SIZE for p in df["pareto"].astype(bool)]
    df["overall_front"] = _overall_front(df)
    fig = px.scatter(
        df,
        x="recall_at_fpr",
        y="map",
        color="strategy",
        size="marker",
        category_orders={"strategy": _strategies(df)},
        color_discrete_map=STRATEGY_COLORS,
        hover_data=(
            ["model_id", "seed", "layers", "lr", "alpha", "finetune", "overall_front"]
            if "finetune" in df else ["model_id", "overall_front"]
        ),
        labels={"recall_at_fpr": "Fraud recall @ target FPR", "map": "Concept mAP"},
        template="plotly_dark",
    )
    ring = df[df["overall_front"]]
    fig.add_scatter(
        x=ring["recall_at_fpr"], y=ring["map"], mode="markers", name="overall front",
        marker={"symbol": "circle-open", "size": 22, "color": "white", "line": {"width": 2}},
        hoverinfo="skip",
    )
    return fig
