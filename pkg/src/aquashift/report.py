"""Matplotlib figures written next to the CLI's text reports."""

from __future__ import annotations

import io
import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .imaging import atomic_write_bytes  # noqa: E402


def _save(fig, path) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=100, bbox_inches="tight")
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def plot_loss_history(history: list[dict], path) -> None:
    """Four stacked panels: pixel, colorfulness, edge and total loss per step."""
    fig, axes = plt.subplots(4, 1, figsize=(7, 8), sharex=True)
    steps = [r["step"] for r in history]
    for ax, key in zip(axes, ("pixel", "uicm", "edge", "total")):
        ax.plot(steps, [r[key] for r in history], lw=1.2)
        ax.set_ylabel(key)
        ax.grid(alpha=0.3)
    axes[-1].set_xlabel("step")
    if not history:
        axes[0].set_title("no steps run")
    _save(fig, path)


def plot_metrics(records: list[dict], path) -> None:
    """Per-pair SSIM, PSNR and MSE bars; infinite PSNR is drawn as a hatched bar at the finite max."""
    names = [r["name"] for r in records]
    x = np.arange(len(names))
    fig, axes = plt.subplots(1, 3, figsize=(max(9, 0.5 * len(names) + 6), 3.5))
    for ax, key in zip(axes, ("ssim", "psnr", "mse")):
        vals = np.array([float(r[key]) for r in records])
        inf = ~np.isfinite(vals)
        finite = vals[~inf]
        cap = finite.max() if finite.size else 1.0
        ax.bar(x[~inf], finite, color="tab:blue")
        if inf.any():
            ax.bar(x[inf], np.full(inf.sum(), cap), color="none", edgecolor="tab:blue", hatch="//")
        ax.set_title(key.upper())
        ax.set_xticks(x)
        ax.set_xticklabels(names, rotation=60, ha="right", fontsize=8)
    _save(fig, path)


def plot_enhancement(image, result, path) -> None:
    """Input, color-corrected and final images plus the predicted maps' magnitudes."""
    panels = [
        ("input", image),
        ("color corrected", result.o_prime),
        ("output", result.output),
        ("|W| (mean over channels)", np.abs(result.shift.w).mean(axis=2)),
        ("|B| (mean over channels)", np.abs(result.shift.b).mean(axis=2)),
    ]
    cols = 3
    rows = math.ceil(len(panels) / cols)
    fig, axes = plt.subplots(rows, cols, figsize=(3.2 * cols, 3.2 * rows))
    for ax in axes.ravel():
        ax.axis("off")
    for ax, (title, data) in zip(axes.ravel(), panels):
        if data.ndim == 3:
            ax.imshow(np.clip(data, 0, 1))
        else:
            im = ax.imshow(data, cmap="viridis")
            fig.colorbar(im, ax=ax, fraction=0.046)
        ax.set_title(title, fontsize=9)
    _save(fig, path)
