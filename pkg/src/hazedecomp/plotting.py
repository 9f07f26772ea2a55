"""Figures for CLI reports. Everything renders off-screen to files."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .pm25 import horner  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "image.cmap": "magma",
}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # no Software stamp, so PNG bytes do not depend on the matplotlib version
    fig.savefig(path, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_decomposition(path, hazy, clear, range_est, mask, range_true=None, title=None):
    """Hazy/clear inputs, estimated range (unidentifiable pixels greyed out)
    and, when ground truth is given, a truth-vs-estimate panel."""
    with plt.rc_context(STYLE):
        ncols = 4 if range_true is not None else 3
        fig, axes = plt.subplots(1, ncols, figsize=(3.2 * ncols, 2.4), constrained_layout=True)
        axes[0].imshow(np.clip(hazy, 0, 1))
        axes[0].set_title("hazy")
        axes[1].imshow(np.clip(clear, 0, 1))
        axes[1].set_title("clear")
        shown = np.ma.masked_where(~mask, range_est)
        cmap = plt.get_cmap().with_extremes(bad="0.75")
        im = axes[2].imshow(shown, cmap=cmap)
        axes[2].set_title("estimated range [m]")
        fig.colorbar(im, ax=axes[2], shrink=0.8)
        for ax in axes[:3]:
            ax.set_axis_off()
        if range_true is not None:
            ax = axes[3]
            t, e = range_true[mask], range_est[mask]
            ax.plot(t, e, ".", ms=1.5, alpha=0.4)
            lim = [0, float(max(t.max(initial=1), e.max(initial=1)))]
            ax.plot(lim, lim, "k--", lw=0.8)
            ax.set_xlabel("true range [m]")
            ax.set_ylabel("estimate [m]")
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def plot_recovery(path, truth, estimate, label="visibility", unit="m"):
    """Scatter of per-sample estimates against ground truth."""
    truth = np.asarray(truth, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.4, 3.2), constrained_layout=True)
        ax.plot(truth, estimate, "o", ms=3)
        lo = float(min(truth.min(), estimate.min()))
        hi = float(max(truth.max(), estimate.max()))
        ax.plot([lo, hi], [lo, hi], "k--", lw=0.8)
        ax.set_xlabel(f"true {label} [{unit}]")
        ax.set_ylabel(f"estimated {label} [{unit}]")
        return _save(fig, path)


def plot_pm25_fit(path, samples, models):
    """Samples coloured by humidity with one fitted curve per model."""
    v = np.array([s.visibility for s in samples])
    rho = np.array([s.pm25 for s in samples])
    rh = np.array([s.relative_humidity for s in samples])
    grid = np.linspace(max(v.min(), 1e-3), 1.0, 200)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.0), constrained_layout=True)
        sc = ax.scatter(v, rho, c=rh, s=6, cmap="viridis", vmin=0, vmax=1)
        fig.colorbar(sc, ax=ax, label="relative humidity")
        for m in models:
            label = f"k={m.order}"
            if m.humidity_bin is not None:
                label += f", RH [{m.humidity_bin[0]:g}, {m.humidity_bin[1]:g})"
            ax.plot(grid, np.maximum(horner(m.coefficients, grid), 0), lw=1.2, label=label)
        ax.set_xlabel("relative visibility")
        ax.set_ylabel("PM2.5 [ug/m3]")
        ax.legend(fontsize=7, frameon=False)
        return _save(fig, path)


def plot_loss_trace(path, trace):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 2.4), constrained_layout=True)
        ax.semilogy(np.arange(len(trace)), np.maximum(trace, 1e-300))
        ax.set_xlabel("iteration")
        ax.set_ylabel("total loss")
        return _save(fig, path)
