"""Figure rendering for the report path.

Every chart is written next to its delimited data file; nothing here feeds
back into metrics. The Agg backend keeps rendering headless and the PNG
metadata is pinned so reruns produce identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_BAR_COLOR = "#4878a8"
_NEG_COLOR = "#b65b47"
_METADATA = {"Software": "ruad"}


def _style_axis(ax, bars, title):
    colors = [_BAR_COLOR if v >= 0 else _NEG_COLOR for v in bars]
    ax.bar(range(len(bars)), bars, color=colors)
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xlabel("predicted-uplift bin")
    ax.set_ylabel("actual uplift")
    ax.set_xticks(range(len(bars)))
    if title:
        ax.set_title(title, fontsize=10)


def render_uplift_bars(bars: list[float], path: str | Path, title: str = "") -> Path:
    """One bar chart: actual uplift per predicted-uplift bin."""
    fig, ax = plt.subplots(figsize=(4.5, 3.2), dpi=120)
    _style_axis(ax, bars, title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, metadata=_METADATA)
    plt.close(fig)
    return path


def render_robustness_panels(baseline_bars: list[float],
                             repeat_bars: list[list[float]],
                             path: str | Path, bins: int) -> Path:
    """Grid of bar charts: the unperturbed baseline plus each perturbed copy."""
    panels = [("no perturbation", baseline_bars)]
    panels += [(f"perturbed copy {i + 1}", bars) for i, bars in enumerate(repeat_bars)]
    ncols = 2
    nrows = (len(panels) + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(4.5 * ncols, 3.0 * nrows), dpi=120)
    axes = axes.ravel() if hasattr(axes, "ravel") else [axes]
    for ax, (title, bars) in zip(axes, panels):
        _style_axis(ax, bars, f"{title} ({bins} bins)")
    for ax in axes[len(panels):]:
        ax.axis("off")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, metadata=_METADATA)
    plt.close(fig)
    return path


def render_validation_trace(trace: list[float], path: str | Path) -> Path:
    """Per-epoch validation metric line (entry 0 is the untrained model)."""
    fig, ax = plt.subplots(figsize=(4.5, 3.0), dpi=120)
    ax.plot(range(len(trace)), trace, marker="o", markersize=3, color=_BAR_COLOR)
    ax.set_xlabel("epoch")
    ax.set_ylabel("validation qini")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, metadata=_METADATA)
    plt.close(fig)
    return path
