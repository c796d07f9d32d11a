"""Figure rendering for the CLI report paths.

Every figure goes to a file next to the delimited output it illustrates.
The Agg backend and fixed PNG metadata keep renders byte-identical across
reruns with the same inputs.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .corpus import LabelTimeline  # noqa: E402
from .retrieval import BookMatch, Mmis  # noqa: E402

_PNG_META = {"Software": "megmatch"}


def _save(fig, path) -> None:
    fig.savefig(Path(path), dpi=110, metadata=_PNG_META)
    plt.close(fig)


def mmis_scatter(mmis: Mmis, match: BookMatch | None, path) -> None:
    """Corpus segment index vs best query window index; ascending chain highlighted."""
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.scatter(range(len(mmis.entries)), mmis.entries, s=9, color="0.65", label="best window")
    if match is not None:
        xs = [p[0] for p in match.pairs]
        ys = [p[1] for p in match.pairs]
        ax.scatter(xs, ys, s=13, color="tab:red", label=f"ascending chain ({match.las.length})")
        ax.legend(loc="upper left", fontsize=8)
    ax.set_xlabel("corpus segment")
    ax.set_ylabel("query window")
    ax.set_title(mmis.book_id)
    fig.tight_layout()
    _save(fig, path)


def training_curves(history: list[dict], metric_key: str, path) -> None:
    """Train loss and the monitored validation metric per epoch."""
    epochs = [h["epoch"] for h in history]
    fig, ax1 = plt.subplots(figsize=(6.0, 3.6))
    ax1.plot(epochs, [h["train_loss"] for h in history], color="tab:blue", label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(epochs, [h[metric_key] for h in history], color="tab:orange", label=metric_key)
    ax2.set_ylabel(metric_key, color="tab:orange")
    fig.tight_layout()
    _save(fig, path)


def timeline_strip(pred: LabelTimeline, truth: LabelTimeline, path) -> None:
    """Predicted vs reference label sequences as two image rows."""
    fig, ax = plt.subplots(figsize=(7.0, 1.8))
    stack = np.vstack([truth.labels, pred.labels])
    ax.imshow(stack, aspect="auto", interpolation="nearest", cmap="Greys")
    ax.set_yticks([0, 1], ["truth", "pred"])
    ax.set_xlabel(f"frame ({truth.rate_hz:g} Hz)")
    fig.tight_layout()
    _save(fig, path)
