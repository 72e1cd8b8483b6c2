"""Report figures written next to the CSV outputs (headless Agg backend)."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 120,
    "savefig.dpi": 120,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    # fixed metadata keeps repeated runs byte-identical
    "svg.hashsalt": "kcvision",
}


def _save(fig, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def similarity_figure(matrix, path, title="KC cosine similarity", split=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 3.4))
        im = ax.imshow(matrix, vmin=0 if np.min(matrix) >= 0 else -1, vmax=1, cmap="viridis")
        if split is not None:
            ax.axhline(split - 0.5, color="w", lw=0.8)
            ax.axvline(split - 0.5, color="w", lw=0.8)
        ax.set_title(title)
        ax.set_xlabel("reference")
        ax.set_ylabel("query")
        fig.colorbar(im, ax=ax, fraction=0.046)
        fig.tight_layout()
        return _save(fig, path)


def recall_figure(results, path, title="Recall@K"):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 3))
        for name in sorted(results):
            r = results[name].recall_at_k
            ks = sorted(r)
            ax.plot(ks, [r[k] for k in ks], marker="o", label=name)
        ax.set_xlabel("K")
        ax.set_ylabel("recall")
        ax.set_ylim(0, 1.02)
        ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def accuracy_figure(accuracies, path, title="Scanning classification"):
    """``accuracies``: mapping checkpoint label -> per-seed accuracies."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 3))
        labels = list(accuracies)
        for i, name in enumerate(labels):
            acc = np.asarray(accuracies[name])
            ax.scatter(np.full(len(acc), i), acc, s=10, alpha=0.6)
            ax.errorbar(i, acc.mean(), yerr=acc.std(), fmt="k_", capsize=4)
        ax.set_xticks(range(len(labels)), labels, rotation=20)
        ax.set_ylabel("held-out accuracy")
        ax.set_ylim(0, 1)
        ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)


def selectivity_figure(si, path, title="KC selectivity"):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.hist(si, bins=40, color="0.3")
        ax.axvline(np.percentile(si, 90), color="C1", lw=1, label="90th pct")
        ax.set_xlabel("selectivity index")
        ax.set_ylabel("neurons")
        ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def kc_code_figure(codes, path, title="KC codes"):
    with plt.rc_context(STYLE):
        codes = np.atleast_2d(codes)
        fig, axes = plt.subplots(len(codes), 1, figsize=(6, 0.8 * len(codes) + 0.6),
                                 sharex=True, squeeze=False)
        for ax, code in zip(axes[:, 0], codes):
            ax.bar(np.arange(len(code)), code, width=1.0, color="0.2")
            ax.set_yticks([])
        axes[0, 0].set_title(title)
        axes[-1, 0].set_xlabel("Kenyon cell")
        fig.tight_layout()
        return _save(fig, path)
