"""Figure rendering for the report paths (PNG files next to the data)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import numpy as np
import matplotlib.pyplot as plt


def plot_trajectory(traj, path, title=""):
    m = traj.states.shape[1]
    fig, axes = plt.subplots(1, 2, figsize=(11, 4.2))
    for i in range(m):
        axes[0].plot(traj.times, traj.states[:, i], label=f"x{i + 1}")
    axes[0].set_xlabel("t")
    axes[0].set_ylabel("state")
    axes[0].legend(fontsize=8)
    axes[0].set_title(title or "trajectory")
    axes[1].plot(traj.times, traj.control_samples[:, 0], label="u0")
    for i in range(1, traj.control_samples.shape[1]):
        axes[1].plot(traj.times, traj.control_samples[:, i], lw=0.8,
                     label=f"u{i}" if i < 4 else None)
    axes[1].plot(traj.times, traj.omega_pairings, "k--", lw=0.8,
                 label="omega(dgamma)")
    axes[1].set_xlabel("t")
    axes[1].legend(fontsize=8)
    axes[1].set_title("controls / pairing")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_path_projection(traj, path, loop_points=None, title=""):
    fig, ax = plt.subplots(figsize=(5.2, 4.6))
    ax.plot(traj.states[:, 0], traj.states[:, 1], lw=1.0, label="trajectory")
    if loop_points is not None:
        pts = np.asarray(loop_points)
        ax.plot(pts[:, 0], pts[:, 1], "o--", ms=3, lw=0.6, label="samples")
    ax.plot([traj.states[0, 0]], [traj.states[0, 1]], "g^", label="start")
    ax.plot([traj.states[-1, 0]], [traj.states[-1, 1]], "rv", label="end")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.set_title(title or "chart projection")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_bch_scan(rows, slope, path):
    scales = [r["scale"] for r in rows if r["scale"] > 0 and r["residual"] > 0]
    residuals = [r["residual"] for r in rows if r["scale"] > 0 and r["residual"] > 0]
    fig, ax = plt.subplots(figsize=(5.2, 4.2))
    if scales:
        ax.loglog(scales, residuals, "o-", label="residual")
        ref = residuals[-1] * (np.asarray(scales) / scales[-1]) ** 3
        ax.loglog(scales, ref, "k--", lw=0.8, label="cubic reference")
    ax.set_xlabel("parameter scale")
    ax.set_ylabel("commutator word residual")
    ax.set_title(f"fitted order {slope:.2f}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_homotopy_grid(rows, path):
    zetas = sorted({r["zeta"] for r in rows})
    svals = sorted({r["s"] for r in rows})
    grid = np.full((len(zetas), len(svals)), np.nan)
    for r in rows:
        grid[zetas.index(r["zeta"]), svals.index(r["s"])] = r["closure"]
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    im = ax.imshow(np.log10(np.maximum(grid, 1e-18)), aspect="auto",
                   origin="lower",
                   extent=(min(svals), max(svals), min(zetas) - 0.5,
                           max(zetas) + 0.5))
    fig.colorbar(im, ax=ax, label="log10 closure residual")
    ax.set_xlabel("s")
    ax.set_ylabel("strand")
    ax.set_title("grid lift closure")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_lp_table(rows, path):
    fig, ax = plt.subplots(figsize=(5.2, 4.2))
    by_p = {}
    for r in rows:
        by_p.setdefault(r["p"], []).append((r["s"], r["residual"]))
    for p, pairs in sorted(by_p.items()):
        pairs.sort()
        ax.loglog([s for s, _ in pairs], [v for _, v in pairs], "o-",
                  label=f"p = {p:g}")
    ax.set_xlabel("s")
    ax.set_ylabel("L^p residual vs s = 0")
    ax.set_title("time-change continuity probe")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
