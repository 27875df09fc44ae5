"""Static orbit figures rendered off-screen with the Agg backend."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure


def orbit_figure(times, positions, labels=None, title=None, half_period=None) -> Figure:
    """Positions against time, one line per body.

    ``positions`` is ``(n, K)``.  A dotted vertical line marks
    ``half_period`` when given, where the second collision pattern occurs.
    """
    x = np.atleast_2d(np.asarray(positions, dtype=float))
    t = np.asarray(times, dtype=float)
    labels = labels or [f"x_{i}" for i in range(1, x.shape[0] + 1)]
    fig = Figure(figsize=(6.4, 4.0))
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(1, 1, 1)
    for row, label in zip(x, labels):
        ax.plot(t, row, lw=1.2, label=label)
    if half_period is not None:
        ax.axvline(half_period, color="0.5", ls=":", lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("x")
    ax.set_xlim(t[0], t[-1])
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize=8, frameon=False)
    fig.tight_layout()
    return fig


def save_figure(fig: Figure, path, dpi=120) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=dpi, metadata={"Software": None})
    return path
