"""Optional PNG figures for episode records and bench summaries (matplotlib, headless)."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_episode(record, out_dir, eps: float | None = None) -> list[Path]:
    """Photometric error per iteration and the camera path; returns the written files."""
    plt = _pyplot()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.semilogy(np.arange(len(record.photometric)), record.photometric, lw=1.2)
    if eps is not None:
        ax.axhline(eps, color="k", ls="--", lw=0.8, label="threshold")
        ax.legend(frameon=False)
    ax.set_xlabel("iteration")
    ax.set_ylabel("photometric error")
    fig.tight_layout()
    path = out_dir / "photometric.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    xyz = np.array([p.translation for p in record.poses])
    fig = plt.figure(figsize=(4.5, 4.5))
    ax = fig.add_subplot(projection="3d")
    ax.plot(xyz[:, 0], xyz[:, 1], xyz[:, 2], lw=1.2)
    ax.scatter(*xyz[0], color="tab:red", label="start")
    ax.scatter(*xyz[-1], color="tab:green", label="end")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_zlabel("z (m)")
    ax.legend(frameon=False)
    fig.tight_layout()
    path = out_dir / "trajectory.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written


def plot_summary(table, path) -> Path:
    """Side-by-side bars of mean trajectory length and iterations per controller."""
    plt = _pyplot()
    names = [r.controller for r in table.rows]
    x = np.arange(len(names))
    fig, axes = plt.subplots(1, 2, figsize=(7, 3))
    axes[0].bar(x, [r.length for r in table.rows], color="tab:blue")
    axes[0].set_ylabel("trajectory length (m)")
    axes[1].bar(x, [r.iterations for r in table.rows], color="tab:orange")
    axes[1].set_ylabel("iterations")
    for ax in axes:
        ax.set_xticks(x, names, rotation=20)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
