"""Static SVG figures for trajectory logs.

Line charts only, rendered straight to files; the Agg backend is forced
so the module works headless.  Two entry points: plot_columns draws an
arbitrary selection of logged columns from a CSV, render_run_figures
draws the standard four-figure summary of an in-memory log next to the
trajectory file.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

__all__ = ["read_log_csv", "plot_columns", "render_run_figures"]

_FOOT_LABELS = ("FL", "FR", "RL", "RR")


def read_log_csv(path):
    """Column names (units stripped) and the float data matrix."""
    path = Path(path)
    with path.open() as fh:
        header = fh.readline()
    names = [c.split(" [")[0].strip() for c in header.strip().split(",")]
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size and data.shape[1] != len(names):
        raise ValueError(f"{path}: {data.shape[1]} columns, header names {len(names)}")
    return names, data


def plot_columns(csv_path, cols, out_path):
    """Line chart of the named columns against time (or row index)."""
    names, data = read_log_csv(csv_path)
    missing = [c for c in cols if c not in names]
    if missing:
        raise ValueError(f"unknown columns: {', '.join(missing)}")
    if not cols:
        raise ValueError("no columns requested")
    if "t" in names:
        x, xlabel = data[:, names.index("t")], "t [s]"
    else:
        x, xlabel = np.arange(len(data)), "sample"
    fig, ax = plt.subplots(figsize=(8.0, 4.5))
    for c in cols:
        ax.plot(x, data[:, names.index(c)], lw=1.0, label=c)
    ax.set_xlabel(xlabel)
    ax.grid(alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path)
    plt.close(fig)
    return out_path


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def render_run_figures(log, config, out_dir) -> list[Path]:
    """Standard four-figure summary of a run (body, forces, margins, refs)."""
    out = Path(out_dir)
    t = log.col("t")
    written = []

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8.0, 6.0), sharex=True)
    p = log.block("p_B")
    v = log.block("v_B")
    for k, ax_name in enumerate("xyz"):
        ax1.plot(t, p[:, k], lw=1.0, label=f"p_B {ax_name}")
        ax2.plot(t, v[:, k], lw=1.0, label=f"v_B {ax_name}")
    ax1.set_ylabel("position [m]")
    ax2.set_ylabel("velocity [m/s]")
    ax2.set_xlabel("t [s]")
    for ax in (ax1, ax2):
        ax.grid(alpha=0.3)
        ax.legend(loc="best", fontsize=8)
    written.append(_save(fig, out / "body_state.svg"))

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8.0, 6.0), sharex=True)
    f = log.block("f_true").reshape(len(t), 4, 3)
    mu_s = config.ground.mu_s
    for i, name in enumerate(_FOOT_LABELS):
        ax1.plot(t, f[:, i, 2], lw=0.8, label=name)
        # tangential demand above the pyramid edge; <= 0 means inside
        excess = np.maximum(np.abs(f[:, i, 0]), np.abs(f[:, i, 1])) - mu_s * f[:, i, 2]
        ax2.plot(t, excess, lw=0.8, label=name)
    ax2.axhline(0.0, color="k", lw=0.8, ls="--")
    ax1.set_ylabel("f_z [N]")
    ax2.set_ylabel("max(|f_x|,|f_y|) - mu_s f_z [N]")
    ax2.set_xlabel("t [s]")
    for ax in (ax1, ax2):
        ax.grid(alpha=0.3)
        ax.legend(loc="best", fontsize=8)
    written.append(_save(fig, out / "grf.svg"))

    fig, ax = plt.subplots(figsize=(8.0, 4.5))
    ax.plot(t, log.block("h_r").min(axis=1), lw=1.0, label="min h_r (target ref)")
    ax.plot(t, log.block("h_w").min(axis=1), lw=1.0, label="min h_w (applied ref)")
    ax.axhline(0.0, color="k", lw=0.8, ls="--")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("constraint margin [N]")
    ax.grid(alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    written.append(_save(fig, out / "constraints.svg"))

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8.0, 6.0), sharex=True)
    x_r = log.block("x_r")
    x_w = log.block("x_w")
    ax1.plot(t, x_r[:, 0], lw=1.0, label="x_r px")
    ax1.plot(t, x_w[:, 0], lw=1.0, ls="--", label="x_w px")
    ax2.plot(t, x_r[:, 3], lw=1.0, label="x_r vx")
    ax2.plot(t, x_w[:, 3], lw=1.0, ls="--", label="x_w vx")
    ax1.set_ylabel("forward position [m]")
    ax2.set_ylabel("forward velocity [m/s]")
    ax2.set_xlabel("t [s]")
    for ax in (ax1, ax2):
        ax.grid(alpha=0.3)
        ax.legend(loc="best", fontsize=8)
    written.append(_save(fig, out / "references.svg"))
    return written
