"""Report figures, written as PNG next to the text reports."""
from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "figure.figsize": [6.0, 3.8],
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "font.size": 10,
    "axes.labelsize": 10,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "axes.linewidth": 0.8,
    "lines.linewidth": 1.2,
    "axes.grid": True,
    "grid.linestyle": "--",
    "grid.linewidth": 0.5,
    "grid.alpha": 0.6,
    "xtick.direction": "in",
    "ytick.direction": "in",
    "xtick.top": True,
    "ytick.right": True,
    "axes.spines.top": True,
    "svg.hashsalt": "cavityrecon",
}

# PNG text chunks otherwise carry the matplotlib version
_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return path


def distance_histogram(distances: dict, path, voxel_size=None, bins=60):
    """Overlaid histograms of per-point distances, one per labelled set."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        hi = max((float(np.max(d)) for d in distances.values() if len(d)), default=1.0)
        edges = np.linspace(0.0, hi if hi > 0 else 1.0, bins + 1)
        for label, d in distances.items():
            d = np.asarray(d)
            ax.hist(d, bins=edges, histtype="step", label=f"{label} (mean {d.mean():.3f})")
        if voxel_size:
            ax.axvline(voxel_size, color="k", ls=":", lw=0.8, label="voxel size")
        ax.set_xlabel("point-to-mesh distance")
        ax.set_ylabel("count")
        ax.set_yscale("log")
        ax.legend()
        return _save(fig, path)


def section_areas(rows, path):
    """Recon vs reference cross-sectional area along the trajectory."""
    rows = np.array([r[:4] for r in rows], dtype=np.float64).reshape(-1, 4)
    with plt.rc_context(RC):
        fig, (a0, a1) = plt.subplots(2, 1, sharex=True, figsize=(6.0, 5.0))
        a0.plot(rows[:, 0], rows[:, 2], "k-", label="reference")
        a0.plot(rows[:, 0], rows[:, 1], "o", ms=3, mfc="none", color="C3", label="reconstruction")
        a0.set_ylabel("area")
        a0.legend()
        a1.plot(rows[:, 0], 100 * rows[:, 3], ".-", color="C0")
        skipped = np.flatnonzero(np.isnan(rows[:, 3]))
        if len(skipped):
            a1.plot(rows[skipped, 0], np.zeros(len(skipped)), "x", color="0.5", label="skipped")
            a1.legend()
        a1.set_xlabel("pose index")
        a1.set_ylabel("relative difference (%)")
        return _save(fig, path)


def registration_history(history, path, title=None):
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        ax.semilogy(np.arange(len(history)), np.maximum(history, 1e-300), "o-", ms=3)
        ax.set_xlabel("iteration")
        ax.set_ylabel("trimmed RMS residual")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def scale_log(frame_ids, scales, path, reference=None):
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        ax.plot(frame_ids, scales, ".-", label="recovered")
        if reference is not None:
            ax.plot(frame_ids, reference, "k+", label="ground truth")
            ax.legend()
        ax.set_xlabel("frame id")
        ax.set_ylabel("depth scale")
        lo, hi = float(np.min(scales)), float(np.max(scales))
        if math.isclose(lo, hi):
            ax.set_ylim(lo - 0.05 * abs(lo) - 1e-3, hi + 0.05 * abs(hi) + 1e-3)
        return _save(fig, path)
