"""Optional figures of optimality gap versus iterations and communication rounds.

Figures are a convenience on top of the trajectory CSV, which stays the
authoritative output.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_gap(series, path, title=None):
    """Save a two-panel semilog figure of the optimality gap.

    Parameters
    ----------
    series : dict
        Maps a label to a list of :class:`~mappro.metrics.DiagnosticsRecord`.
    path : str or Path
        Output file; the format follows the suffix.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, (ax_k, ax_r) = plt.subplots(1, 2, figsize=(9, 3.6), sharey=True)
    for label, records in series.items():
        ks = [r.k for r in records]
        rounds = [r.rounds for r in records]
        gaps = [max(r.opt_gap, 1e-300) for r in records]
        ax_k.semilogy(ks, gaps, label=label)
        ax_r.semilogy(rounds, gaps, label=label)
    ax_k.set_xlabel("iteration")
    ax_r.set_xlabel("communication rounds")
    ax_k.set_ylabel("optimality gap")
    for ax in (ax_k, ax_r):
        ax.grid(True, which="major", alpha=0.3)
    ax_r.legend(frameon=False)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
