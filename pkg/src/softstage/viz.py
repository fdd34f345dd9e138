"""Hypnogram and hypnodensity figures.

Figures render through matplotlib's SVG backend and every figure ships with
a companion csv holding exactly the plotted numbers, so downstream checks
read the data table instead of scraping the drawing. Output is
deterministic: fixed hash salt, no embedded timestamps, atomic writes.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

import numpy as np

from .errors import ValidationError
from .fileio import atomic_write_text, fmt_float
from .records import EPOCH_SECONDS, NUM_STAGES, STAGE_NAMES, Hypnogram, stage_token

# one palette for every figure; keyed by stage token
STAGE_COLORS = {
    "W": "#f2b134",
    "R": "#e74c3c",
    "N1": "#a8d5e2",
    "N2": "#4a90d9",
    "N3": "#1f3b73",
}

# hypnograms read top-down W, R, N1, N2, N3, so the y axis goes N3..W
_DISPLAY_LEVEL = {"W": 4, "R": 3, "N1": 2, "N2": 1, "N3": 0}
_STACK_BOTTOM_UP = ("N3", "N2", "N1", "R", "W")

matplotlib.rcParams["svg.hashsalt"] = "softstage"


@dataclass(frozen=True)
class HypnodensitySeries:
    """A per-epoch stage distribution to draw: scorer votes or model output."""

    subject_id: str
    source: str
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[1] != NUM_STAGES:
            raise ValidationError("hypnodensity values must be T x 5")
        if (vals < 0).any() or np.abs(vals.sum(axis=1) - 1.0).max() > 1e-9:
            raise ValidationError("hypnodensity rows must sum to 1")
        object.__setattr__(self, "values", vals)


def _minutes(num_epochs: int) -> np.ndarray:
    return np.arange(num_epochs) * (EPOCH_SECONDS / 60.0)


def _atomic_savefig(fig, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    os.close(fd)
    try:
        fig.savefig(tmp, format="svg", metadata={"Date": None})
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    finally:
        plt.close(fig)


def emit_hypnogram(hypnogram: Hypnogram, svg_path) -> tuple:
    """Step plot of one stage sequence; returns (svg_path, csv_path)."""
    stages = np.asarray(hypnogram.stages)
    if stages.size == 0:
        raise ValidationError("empty hypnogram")
    if (stages < 0).any():
        raise ValidationError("hypnogram for plotting must not contain NC")
    svg_path = Path(svg_path)
    tokens = [stage_token(int(c)) for c in stages]
    levels = [_DISPLAY_LEVEL[t] for t in tokens]
    minutes = _minutes(stages.shape[0])

    fig, ax = plt.subplots(figsize=(10, 2.8))
    ax.step(minutes, levels, where="post", color="#333333", linewidth=1.0)
    ax.set_yticks(range(NUM_STAGES))
    ax.set_yticklabels([t for t, _ in sorted(_DISPLAY_LEVEL.items(), key=lambda kv: kv[1])])
    ax.set_ylim(-0.5, NUM_STAGES - 0.5)
    ax.set_xlim(0.0, max(float(minutes[-1]), 1e-9))
    ax.set_xlabel("time (minutes)")
    ax.set_title(f"{hypnogram.subject_id}: {hypnogram.scorer_id}")
    fig.tight_layout()
    _atomic_savefig(fig, svg_path)

    csv_path = svg_path.with_suffix(".csv")
    lines = ["epoch,minutes,stage"]
    for t, (m, tok) in enumerate(zip(minutes, tokens)):
        lines.append(f"{t},{fmt_float(m)},{tok}")
    atomic_write_text(csv_path, "\n".join(lines) + "\n")
    return svg_path, csv_path


def emit_hypnodensity(series: HypnodensitySeries, svg_path, acs_value: float | None = None) -> tuple:
    """Stacked-area chart of a stage distribution over the night.

    Bands stack W, R, N1, N2, N3 from the top down. When the series is paired
    with an agreement score, it lands in the title. Returns (svg_path, csv_path).
    """
    svg_path = Path(svg_path)
    minutes = _minutes(series.values.shape[0])
    bands = [series.values[:, _TOKEN_INDEX[token]] for token in _STACK_BOTTOM_UP]
    colors = [STAGE_COLORS[token] for token in _STACK_BOTTOM_UP]

    fig, ax = plt.subplots(figsize=(10, 2.8))
    polys = ax.stackplot(minutes, bands, colors=colors, labels=_STACK_BOTTOM_UP)
    ax.set_ylim(0.0, 1.0)
    ax.set_xlim(0.0, max(float(minutes[-1]), 1e-9))
    ax.set_xlabel("time (minutes)")
    ax.set_ylabel("probability")
    title = f"{series.subject_id}: {series.source}"
    if acs_value is not None:
        title += f" (ACS {acs_value:.4f})"
    ax.set_title(title)
    ax.legend(
        handles=polys[::-1],
        labels=list(_STACK_BOTTOM_UP[::-1]),
        loc="upper right",
        fontsize="small",
        framealpha=0.9,
    )
    fig.tight_layout()
    _atomic_savefig(fig, svg_path)

    csv_path = svg_path.with_suffix(".csv")
    header = "epoch," + ",".join(f"p_{n}" for n in STAGE_NAMES)
    lines = [header]
    for t, row in enumerate(series.values):
        lines.append(f"{t}," + ",".join(fmt_float(v) for v in row))
    atomic_write_text(csv_path, "\n".join(lines) + "\n")
    return svg_path, csv_path


_TOKEN_INDEX = {name: i for i, name in enumerate(STAGE_NAMES)}


def read_hypnodensity_csv(path) -> np.ndarray:
    """Re-read a companion data table into the plotted matrix."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("epoch,"):
        raise ValidationError(f"{path} is not a hypnodensity data table")
    return np.array([[float(v) for v in ln.split(",")[1:]] for ln in lines[1:]])
