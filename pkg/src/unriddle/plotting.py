"""Figures written next to the evaluation report."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def score_histogram(path, scores, accuracy: float, title: str = ""):
    """Histogram of per-riddle max similarities with the mean marked."""
    values = np.array([s.max_sim for s in scores if not s.excluded], dtype=float)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.hist(values, bins=np.linspace(-1.0, 1.0, 21), color="0.55", edgecolor="black")
    ax.axvline(accuracy / 100.0, color="crimson", linestyle="--", label=f"mean {accuracy:.1f}%")
    ax.set_xlabel("max similarity to groundtruth")
    ax.set_ylabel("riddles")
    ax.set_xlim(-1.0, 1.0)
    if title:
        ax.set_title(title)
    ax.legend(loc="upper left")
    fig.tight_layout()
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
