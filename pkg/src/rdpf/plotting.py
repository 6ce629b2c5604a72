"""Optional figure rendering for CLI reports.

The CSV stays the primary output; this module only draws what is already in
it. matplotlib is imported lazily with the non-interactive Agg backend so the
library itself never needs a display.
"""

from __future__ import annotations

import math


def plot_rate_curve(rows, path, title: str = "", bounds=None) -> None:
    """Draw rate (nats) against distortion and save to ``path``.

    Parameters
    ----------
    rows : sequence of dict
        CSV rows with at least ``D`` and ``rate_nats``. Rows with a NaN rate
        are skipped.
    path : str or path-like
        Output file; the format follows the extension.
    title : str, optional
        Axes title.
    bounds : sequence of (D, rate), optional
        Extra reference curve, e.g. a Shannon lower bound, drawn dashed.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    pts = sorted((r["D"], r["rate_nats"]) for r in rows if not math.isnan(r["rate_nats"]))
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    if pts:
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "o-", label="estimate")
    if bounds:
        b = sorted(bounds)
        ax.plot([p[0] for p in b], [p[1] for p in b], "--", label="lower bound")
    ax.set_xlabel("distortion D")
    ax.set_ylabel("rate (nats)")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
