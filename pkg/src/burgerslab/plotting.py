"""Figures rendered next to the CSV series of each experiment."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


@dataclass
class Series:
    """A table of equal-length columns plus how to draw it.

    ``y`` columns are plotted against ``x``; ``errors`` maps a y column to
    the column holding its standard errors; ``group`` splits rows into
    separate curves by the value of one column.
    """

    columns: dict
    x: str
    y: tuple
    title: str = ""
    logx: bool = False
    logy: bool = False
    errors: dict = field(default_factory=dict)
    group: str | None = None
    ylabel: str = ""
    reference: dict = field(default_factory=dict)    # label -> (x array, y array)
    kind: str = "line"


def _draw(ax, s: Series):
    x = np.asarray(s.columns[s.x], float)
    groups = [None] if s.group is None else list(dict.fromkeys(np.asarray(s.columns[s.group]).tolist()))
    for g in groups:
        mask = np.ones(len(x), bool) if g is None else np.asarray(s.columns[s.group]) == g
        for name in s.y:
            y = np.asarray(s.columns[name], float)[mask]
            label = name if g is None else f"{name} ({s.group}={g:g})"
            err = s.errors.get(name)
            if s.kind == "scatter":
                ax.plot(x[mask], y, ".", ms=3, label=label)
            elif err is not None:
                ax.errorbar(x[mask], y, yerr=np.asarray(s.columns[err], float)[mask], marker="o", ms=3,
                            capsize=2, label=label)
            else:
                ax.plot(x[mask], y, marker="o" if mask.sum() < 40 else None, ms=3, label=label)
    for label, (rx, ry) in s.reference.items():
        ax.plot(rx, ry, "k--", lw=1, label=label)
    if s.logx:
        ax.set_xscale("log")
    if s.logy:
        ax.set_yscale("log")
    ax.set_xlabel(s.x)
    ax.set_ylabel(s.ylabel or ", ".join(s.y))
    ax.set_title(s.title)
    if len(s.y) > 1 or s.group is not None or s.reference:
        ax.legend(fontsize=7)
    ax.grid(alpha=0.3)


def render(series: dict, out, stem: str) -> list:
    """One PNG per series; returns the written paths."""
    out = Path(out)
    paths = []
    for name, s in series.items():
        if not isinstance(s, Series) or not s.y:
            continue
        fig, ax = plt.subplots(figsize=(6, 4))
        _draw(ax, s)
        fig.tight_layout()
        path = out / f"{stem}_{name}.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        paths.append(path)
    return paths
