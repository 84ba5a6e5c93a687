"""Figure rendering: trajectory bands, subpopulation overlays, log-MAE boxes.

Output is deterministic for fixed inputs: a fixed style sheet, a fixed SVG
hash salt, and no timestamps in the image metadata.
"""

import math
import warnings
from dataclasses import dataclass, field

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .io import read_score_csv, read_trajectory_csv, write_trajectory_csv  # noqa: E402

_STYLE = {
    "figure.dpi": 100,
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "panelmix-plots",
}
_LINE_STYLES = [("tab:blue", "-"), ("tab:red", "--"), ("tab:green", "-."),
                ("tab:purple", ":")]


@dataclass
class PlotSpec:
    """One figure request."""

    inputs: list                 # CSV paths; compare/mae-box accept several
    kind: str                    # trajectory | compare | mae-box
    out: str                     # output image path (.png or .svg)
    pairs: list = field(default_factory=list)   # pair filter, empty = all
    labels: list = field(default_factory=list)  # per-input legend labels
    echo: str = ""               # optional path: echo consumed rows back out

    def __post_init__(self):
        if self.kind not in ("trajectory", "compare", "mae-box"):
            raise ValueError(f"unknown figure kind {self.kind!r}")
        if not self.inputs:
            raise ValueError("at least one input CSV is required")
        if self.kind == "compare" and len(self.inputs) < 2:
            raise ValueError("compare needs at least two trajectory files")


def _save(fig, out) -> None:
    fig.savefig(out, metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)


def _select_pairs(rows, wanted):
    pairs = sorted({r["pair"] for r in rows})
    if wanted:
        missing = [p for p in wanted if p not in pairs]
        if missing:
            raise ValueError(f"pairs not present in the CSV: {missing}")
        pairs = list(wanted)
    return pairs


def _panel_grid(n_panels):
    cols = min(3, n_panels)
    rows = math.ceil(n_panels / cols)
    return rows, cols


def _draw_band(ax, rows, color, dash, label=None):
    rows = sorted(rows, key=lambda r: r["time"])
    t = np.array([r["time"] for r in rows])
    mean = np.array([r["mean"] for r in rows])
    lo = np.array([r["lo95"] for r in rows])
    hi = np.array([r["hi95"] for r in rows])
    ok = ~np.isnan(mean)
    if not ok.any():
        ax.text(0.5, 0.5, "undefined", ha="center", va="center",
                transform=ax.transAxes, color="gray")
        return
    ax.plot(t[ok], mean[ok], dash, color=color, lw=1.4, label=label)
    band = ok & ~np.isnan(lo) & ~np.isnan(hi)
    if band.any():
        ax.fill_between(t[band], lo[band], hi[band], color=color, alpha=0.2, lw=0)


def plot_trajectories(spec: PlotSpec) -> str:
    """Per-pair association trajectories with 95% bands.

    kind "trajectory" renders one file; kind "compare" overlays two or more
    subpopulation files (solid vs dashed, one colour per file).
    """
    with plt.rc_context(_STYLE):
        per_file = [read_trajectory_csv(p) for p in spec.inputs]
        if spec.echo:
            write_trajectory_csv([r for rows in per_file for r in rows], spec.echo)
        pairs = _select_pairs([r for rows in per_file for r in rows], spec.pairs)
        if not pairs:
            raise ValueError("no pairs selected")
        nrows, ncols = _panel_grid(len(pairs))
        fig, axes = plt.subplots(nrows, ncols, figsize=(3.2 * ncols, 2.4 * nrows),
                                 squeeze=False, sharex=True)
        labels = list(spec.labels) if spec.labels else [
            rows[0]["subpop"] for rows in per_file
        ]
        for idx, pair in enumerate(pairs):
            ax = axes[idx // ncols][idx % ncols]
            for fi, rows in enumerate(per_file):
                color, dash = _LINE_STYLES[fi % len(_LINE_STYLES)]
                sel = [r for r in rows if r["pair"] == pair]
                _draw_band(ax, sel, color, dash,
                           label=labels[fi] if idx == 0 and len(per_file) > 1 else None)
            ax.set_title(pair, fontsize=8)
            ax.set_ylim(-1.05, 1.05)
            ax.axhline(0.0, color="black", lw=0.5)
        for idx in range(len(pairs), nrows * ncols):
            axes[idx // ncols][idx % ncols].axis("off")
        for ax in axes[-1]:
            ax.set_xlabel("age")
        for row in axes:
            row[0].set_ylabel("association")
        if len(per_file) > 1:
            axes[0][0].legend(loc="lower right", fontsize=7)
        _save(fig, spec.out)
    return spec.out


def _log_floor(all_values):
    """Clamp level for log scale: min positive MAE across all inputs, over 10."""
    vals = np.asarray(all_values, dtype=float)
    positive = vals[vals > 0]
    if positive.size == 0:
        raise ValueError("all MAE values are zero; nothing to plot on a log scale")
    return positive.min() / 10.0


def _clamp_log(values, floor):
    values = np.asarray(values, dtype=float)
    if (values <= 0).any():
        warnings.warn(
            f"clamping {(values <= 0).sum()} zero MAE value(s) at {floor!r}",
            stacklevel=2,
        )
    return np.log(np.maximum(values, floor))


def plot_mae_boxes(spec: PlotSpec) -> str:
    """Grouped boxplots of log-MAE by time point plus the average column.

    Each input argument is one method / replicate set; within a set every row
    of every file contributes one value to its time column.
    """
    with plt.rc_context(_STYLE):
        sets = []
        for entry in spec.inputs:
            paths = entry.split(",") if isinstance(entry, str) else list(entry)
            rows = []
            for p in paths:
                rows.extend(read_score_csv(p))
            sets.append(rows)
        times = None
        for rows in sets:
            own = sorted({r["time"] for r in rows if r["time"] != "average"})
            if times is None:
                times = own
            elif own != times:
                raise ValueError(f"inconsistent time grids across inputs: {own} vs {times}")
        columns = list(times) + ["average"]
        labels = list(spec.labels) if spec.labels else [
            f"set{i+1}" for i in range(len(sets))
        ]
        floor = _log_floor([r["mae"] for rows in sets for r in rows])
        fig, ax = plt.subplots(figsize=(1.0 + 0.85 * len(columns), 3.4))
        n_sets = len(sets)
        width = 0.8 / n_sets
        for si, rows in enumerate(sets):
            data = []
            for t in columns:
                vals = [r["mae"] for r in rows if r["time"] == t]
                data.append(_clamp_log(vals, floor) if vals else np.array([]))
            pos = np.arange(len(columns)) + (si - (n_sets - 1) / 2) * width
            color, _ = _LINE_STYLES[si % len(_LINE_STYLES)]
            bp = ax.boxplot(
                data, positions=pos, widths=width * 0.9, patch_artist=True,
                medianprops={"color": "black"},
            )
            for patch in bp["boxes"]:
                patch.set_facecolor(color)
                patch.set_alpha(0.5)
        ax.set_xticks(np.arange(len(columns)))
        ax.set_xticklabels([str(int(t)) if isinstance(t, float) and t == int(t)
                            else str(t) for t in columns])
        ax.set_xlabel("time point")
        ax.set_ylabel("log MAE")
        if n_sets > 1:
            handles = [plt.Line2D([], [], color=_LINE_STYLES[i % len(_LINE_STYLES)][0],
                                  lw=4, alpha=0.5) for i in range(n_sets)]
            ax.legend(handles, labels, fontsize=7)
        _save(fig, spec.out)
    return spec.out
