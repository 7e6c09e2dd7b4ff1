"""Render the report figures next to their TSVs.

Figures are written with fixed metadata so identical inputs produce
identical PNG bytes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_SAVE_KWARGS = {"dpi": 120, "metadata": {"Software": None}}


def _finish(fig, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def render_tokens_figure(rows: list[tuple[str, int, int]], path: str | Path) -> None:
    """Stacked horizontal bars of input/output tokens per step."""
    steps = [r[0] for r in rows if r[0] != "total"]
    inputs = [r[1] for r in rows if r[0] != "total"]
    outputs = [r[2] for r in rows if r[0] != "total"]
    fig, ax = plt.subplots(figsize=(7, max(2.0, 0.4 * len(steps) + 1)))
    positions = range(len(steps))
    ax.barh(positions, inputs, color="#4878a8", label="input tokens")
    ax.barh(positions, outputs, left=inputs, color="#e8a33d", label="output tokens")
    ax.set_yticks(list(positions))
    ax.set_yticklabels(steps)
    ax.invert_yaxis()
    ax.set_xlabel("tokens")
    ax.set_title("Token usage by step")
    ax.legend(loc="lower right")
    _finish(fig, path)


def render_fr_figure(k_values: list[int], rates: list[float], path: str | Path) -> None:
    """Failure rate as a function of the attempt budget."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(k_values, rates, marker="o", color="#b04a4a")
    ax.set_xlabel("K (attempt budget)")
    ax.set_ylabel("failure rate")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title("FR@K")
    ax.grid(True, alpha=0.3)
    _finish(fig, path)


_STAGE_MARKERS = {
    "preprocess": ("o", "#4878a8"),
    "feature_engineering": ("s", "#e8a33d"),
    "model_selection": ("^", "#5d9e52"),
    "hyperparameter_tuning": ("D", "#b04a4a"),
}


def render_pca_figure(
    points: list[tuple[str, int, float, float]], path: str | Path
) -> None:
    """Scatter of plan embeddings projected to two components, by stage."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for stage, (marker, color) in _STAGE_MARKERS.items():
        xs = [x for s, _, x, _ in points if s == stage]
        ys = [y for s, _, _, y in points if s == stage]
        if xs:
            ax.scatter(xs, ys, marker=marker, color=color, label=stage, alpha=0.85)
    ax.set_xlabel("component 1")
    ax.set_ylabel("component 2")
    ax.set_title("Plan diversity (PCA)")
    if points:
        ax.legend(fontsize=8)
    _finish(fig, path)
