"""Report figures written next to the text/JSON reports (PNG, Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 110,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_training_curves(log: list[dict], path) -> Path:
    """Loss curves on the left, validation accuracy and learning rate on the right."""
    epochs = [r["epoch"] for r in log]
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3))
        ax1.plot(epochs, [r["train_loss"] for r in log], label="train")
        ax1.plot(epochs, [r["val_loss"] for r in log], label="validation")
        best = min(log, key=lambda r: r["val_loss"]) if log else None
        if best:
            ax1.axvline(best["epoch"], color="0.6", ls=":", lw=1)
        ax1.set_xlabel("epoch")
        ax1.set_ylabel("cross-entropy")
        ax1.legend(frameon=False)
        ax2.plot(epochs, [r["metric"] for r in log], color="C2")
        ax2.set_xlabel("epoch")
        ax2.set_ylabel("validation accuracy", color="C2")
        ax2.set_ylim(0, 1.02)
        lr_ax = ax2.twinx()
        lr_ax.step(epochs, [r["lr"] for r in log], where="post", color="C3", lw=1)
        lr_ax.set_ylabel("learning rate", color="C3")
        lr_ax.spines["right"].set_visible(True)
        fig.tight_layout()
        return _save(fig, path)


def plot_attribution(tokens: list[str], word_scores, char_scores, path, title: str = "") -> Path:
    """Word-level bar heatmap above a word-by-character heatmap."""
    word_scores = np.asarray(word_scores)
    char_scores = np.asarray(char_scores)
    width = max(char_scores.shape[1] if char_scores.ndim == 2 else 1, 1)
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(max(4, 0.7 * len(tokens) + 1), 1.2 + 0.35 * len(tokens)),
                                       gridspec_kw={"height_ratios": [1, max(len(tokens), 1) / 2]})
        ax1.imshow(word_scores[None, :], cmap="Reds", vmin=0, vmax=1, aspect="auto")
        ax1.set_xticks(range(len(tokens)), tokens, rotation=30, ha="right")
        ax1.set_yticks([])
        ax1.set_title(title or "word-level attribution")
        ax2.imshow(char_scores, cmap="Blues", vmin=0, vmax=1, aspect="auto")
        ax2.set_yticks(range(len(tokens)), tokens)
        ax2.set_xticks(range(width))
        for i, tok in enumerate(tokens):
            for j, ch in enumerate(tok[:width]):
                ax2.text(j, i, ch, ha="center", va="center", fontsize=7,
                         color="white" if char_scores[i, j] > 0.6 else "black")
        ax2.set_xlabel("character position")
        fig.tight_layout()
        return _save(fig, path)


def plot_overlap(names: list[str], overlap, path) -> Path:
    """Source-by-target heatmap of vocabulary overlap fractions."""
    overlap = np.asarray(overlap, dtype=float)
    with plt.rc_context(STYLE):
        k = len(names)
        fig, ax = plt.subplots(figsize=(1.0 + 0.9 * k, 0.8 + 0.8 * k))
        im = ax.imshow(overlap, cmap="viridis", vmin=0, vmax=1)
        ax.set_xticks(range(k), names, rotation=30, ha="right")
        ax.set_yticks(range(k), names)
        ax.set_xlabel("target corpus")
        ax.set_ylabel("source corpus")
        for i in range(k):
            for j in range(k):
                ax.text(j, i, f"{overlap[i, j]:.2f}", ha="center", va="center",
                        color="white" if overlap[i, j] < 0.5 else "black", fontsize=8)
        fig.colorbar(im, ax=ax, fraction=0.046)
        fig.tight_layout()
        return _save(fig, path)
