"""Report figures, rendered off-screen to image files."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_STYLE = {
    "figure.dpi": 120,
    "savefig.bbox": "tight",
    "savefig.facecolor": "w",
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
}
GROUP_COLORS = {1: "#4C72B0", 2: "#DD8452"}


def _save(fig, path):
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_metric_distributions(records: list[dict], columns: list[str], path):
    """One box per metric column over the evaluated cases."""
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, len(columns), figsize=(2.6 * len(columns), 3.2), squeeze=False)
        for ax, col in zip(axes[0], columns):
            values = [r[col] for r in records if r.get(col) is not None]
            if values:
                ax.boxplot(values, widths=0.5)
                ax.scatter([1] * len(values), values, s=8, alpha=0.5, color="k", zorder=3)
            ax.set_title(col)
            ax.set_xticks([])
        return _save(fig, path)


def plot_group_dice(group_means: dict[int, float | None], path, title: str = "Mean Dice by group"):
    """Group 1 vs Group 2 mean Dice as two bars (percent)."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(3.2, 3.2))
        groups = sorted(group_means)
        heights = [100 * (group_means[g] or 0.0) for g in groups]
        bars = ax.bar([f"Group {g}" for g in groups], heights, color=[GROUP_COLORS[g] for g in groups])
        for bar, g in zip(bars, groups):
            label = "n/a" if group_means[g] is None else f"{bar.get_height():.1f}"
            ax.annotate(label, (bar.get_x() + bar.get_width() / 2, bar.get_height()), ha="center", va="bottom")
        ax.set_ylim(0, 105)
        ax.set_ylabel("Dice (%)")
        ax.set_title(title)
        return _save(fig, path)


def plot_match_rates(rates: dict[str, dict[str, tuple[int, int]]], path):
    """Per-variant share of topologically matched cases, anterior and posterior."""
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(7.5, 2.8))
        for ax, axis in zip(axes, ("anterior", "posterior")):
            entries = rates.get(axis, {})
            names = list(entries)
            pct = [100 * m / t for m, t in entries.values()]
            bars = ax.barh(names, pct, color="#55A868")
            for bar, (m, t) in zip(bars, entries.values()):
                ax.annotate(f" {m}/{t}", (bar.get_width(), bar.get_y() + bar.get_height() / 2), va="center")
            ax.set_xlim(0, 115)
            ax.set_xlabel("matched (%)")
            ax.set_title(f"{axis} variants")
            ax.invert_yaxis()
        return _save(fig, path)


def plot_detection(pr: dict[str, tuple[float, float]], path):
    """Grouped precision/recall bars; undefined values are drawn as 'nan' labels."""
    with plt.rc_context(_STYLE):
        names = list(pr)
        fig, ax = plt.subplots(figsize=(max(3.0, 0.7 * len(names) + 1), 3.2))
        width = 0.38
        for k, (label, color) in enumerate((("precision", "#4C72B0"), ("recall", "#C44E52"))):
            for i, name in enumerate(names):
                value = pr[name][k]
                x = i + (k - 0.5) * width
                if math.isnan(value):
                    ax.annotate("nan", (x, 1), ha="center", fontsize=7, rotation=90)
                    continue
                ax.bar(x, 100 * value, width, color=color, label=label if i == 0 else None)
        ax.set_xticks(range(len(names)), names, rotation=45, ha="right")
        ax.set_ylim(0, 105)
        ax.set_ylabel("%")
        ax.legend(frameon=False, fontsize=7, loc="upper left", bbox_to_anchor=(1.0, 1.0))
        return _save(fig, path)


def plot_leaderboard(rows: list[dict], path):
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 0.4 * len(rows) + 1))
        teams = [r["team"] for r in rows]
        ax.barh(teams, [r["average_rank"] for r in rows], color="#8172B3")
        ax.invert_yaxis()
        ax.set_xlabel("average rank (lower is better)")
        return _save(fig, path)
