"""Matplotlib figures for filter stages and loss histories.

Figures are rendered off-screen with the Agg canvas, so nothing here needs a
display.
"""

from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .filters import MxdogParams, dog, gaussian_blur, mxdog, threshold_xdog, xdog
from .losses import TERM_NAMES
from .tensor_io import as_image

__all__ = ["filter_stages", "plot_filter_stages", "plot_loss_history"]

# deterministic PNG bytes: no timestamp or software tag in the metadata
_PNG_META = {"Software": None}


def _save(fig: Figure, path) -> None:
    FigureCanvasAgg(fig)
    fig.savefig(path, format="png", metadata=_PNG_META)


def filter_stages(img, params: MxdogParams = MxdogParams()) -> dict[str, np.ndarray]:
    """Every intermediate of the MXDoG pipeline, keyed by CLI mode name."""
    img = as_image(img)
    xd = xdog(img, params)
    return {
        "input": img,
        "gaussian": gaussian_blur(img, params.sigma),
        "dog": dog(img, params),
        "xdog": xd,
        "txdog": threshold_xdog(xd),
        "mxdog": mxdog(img, params),
    }


def _show(ax, img, title):
    img = np.asarray(img)
    if img.shape[2] == 1:
        ax.imshow(img[:, :, 0], cmap="gray", vmin=float(img.min()), vmax=float(img.max()) or 1.0)
    else:
        lo, hi = float(img.min()), float(img.max())
        ax.imshow((img - lo) / (hi - lo) if hi > lo else np.zeros_like(img))
    ax.set_title(title, fontsize=9)
    ax.set_axis_off()


def plot_filter_stages(img, path, params: MxdogParams = MxdogParams()) -> None:
    """One panel per stage; the DoG panel is min-max stretched for visibility."""
    stages = filter_stages(img, params)
    fig = Figure(figsize=(2.4 * len(stages), 2.8))
    for i, (name, stage) in enumerate(stages.items(), start=1):
        _show(fig.add_subplot(1, len(stages), i), stage, name)
    fig.tight_layout()
    _save(fig, path)


def plot_loss_history(history, path) -> None:
    """Weighted total on the left, the five unweighted terms on the right.

    ``history`` is the list of ``(iteration, LossBreakdown)`` pairs returned
    by :func:`mxdog_transfer.optimizer.stylize`.
    """
    if not history:
        raise ValueError("empty loss history")
    its = np.array([it for it, _ in history])
    fig = Figure(figsize=(10, 3.8))
    ax = fig.add_subplot(1, 2, 1)
    ax.plot(its, [b.total for _, b in history], marker=".", color="k")
    ax.set_xlabel("iteration")
    ax.set_ylabel("weighted total")
    ax.set_title("objective")
    ax.grid(alpha=0.3)

    ax = fig.add_subplot(1, 2, 2)
    for j, name in enumerate(TERM_NAMES):
        vals = np.array([b.terms[j] for _, b in history])
        if np.any(vals > 0):
            ax.semilogy(its, np.where(vals > 0, vals, np.nan), marker=".", label=name)
    hard = [b.hard_mxdog_style_cns for _, b in history]
    if all(h is not None and h > 0 for h in hard):
        ax.semilogy(its, hard, ls="--", color="gray", label="hard style_cns")
    ax.set_xlabel("iteration")
    ax.set_title("terms (unweighted)")
    ax.grid(alpha=0.3, which="both")
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)
