"""Figure rendering for CLI reports.

Only the CLI report path imports this module; the numerical core stays
matplotlib-free.  Every function renders to a file and returns the path.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = [
    "value_slices_figure",
    "trajectories_figure",
    "cost_histogram_figure",
    "convergence_figure",
    "bloch_components_figure",
    "check_summary_figure",
]


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def value_slices_figure(grid, path, t: float = None):
    """Midplane heatmaps of the value function at time t (default t0)."""
    t = grid.times[0] if t is None else t
    k = grid.slice_index(t)
    ax1d = grid.axis
    N = grid.n_points
    mid = N // 2
    S = grid.values[k]
    mask = grid.mask
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    planes = [
        (S[:, :, mid], mask[:, :, mid], "x", "y", "z = 0"),
        (S[:, mid, :], mask[:, mid, :], "x", "z", "y = 0"),
    ]
    for ax, (plane, m, xl, yl, title) in zip(axes, planes):
        data = np.where(m, plane, np.nan)
        im = ax.imshow(data.T, origin="lower", extent=[-1, 1, -1, 1],
                       cmap="viridis")
        ax.set_xlabel(xl)
        ax.set_ylabel(yl)
        ax.set_title(f"S(t={grid.times[k]:.3g}), {title}")
        fig.colorbar(im, ax=ax, shrink=0.85)
    return _save(fig, path)


def trajectories_figure(trajs, path):
    """Bloch components of a handful of filtered trajectories."""
    fig, axes = plt.subplots(3, 1, figsize=(7, 6), sharex=True)
    labels = ["x", "y", "z"]
    for traj in trajs:
        states = traj.states
        p = np.stack([
            2.0 * states[:, 0, 1].real,
            -2.0 * states[:, 0, 1].imag,
            (states[:, 0, 0] - states[:, 1, 1]).real,
        ])
        for ax, comp in zip(axes, p):
            ax.plot(traj.times, comp, lw=0.7, alpha=0.8)
    for ax, lab in zip(axes, labels):
        ax.set_ylabel(lab)
        ax.set_ylim(-1.05, 1.05)
        ax.grid(alpha=0.3)
    axes[-1].set_xlabel("t")
    axes[0].set_title("filtered Bloch trajectories")
    return _save(fig, path)


def cost_histogram_figure(costs, path, mean=None, stderr=None, value=None):
    fig, ax = plt.subplots(figsize=(6.5, 4))
    ax.hist(costs, bins=40, color="steelblue", alpha=0.8)
    if mean is not None:
        ax.axvline(mean, color="k", lw=1.5,
                   label=f"mean J = {mean:.4f}" +
                         ("" if stderr is None else f" ± {stderr:.4f}"))
    if value is not None:
        ax.axvline(value, color="crimson", ls="--", lw=1.5,
                   label=f"S(t0, p0) = {value:.4f}")
    ax.set_xlabel("trajectory cost J")
    ax.set_ylabel("count")
    ax.legend()
    return _save(fig, path)


def convergence_figure(reports: dict, path):
    """Log-log error ladders from ConvergenceReport objects."""
    fig, ax = plt.subplots(figsize=(6, 4.2))
    for name, rep in reports.items():
        vals = np.asarray(rep.values, dtype=float)
        errs = np.asarray(rep.errors, dtype=float)
        ax.loglog(vals, errs, "o-", label=f"{name} (order ≈ {rep.order:.2f})")
    ax.set_xlabel("mesh parameter")
    ax.set_ylabel("terminal-state error (trace norm)")
    ax.grid(alpha=0.3, which="both")
    ax.legend()
    return _save(fig, path)


def bloch_components_figure(traj, path, title="master-equation trajectory"):
    states = traj.states
    p = np.stack([
        2.0 * states[:, 0, 1].real,
        -2.0 * states[:, 0, 1].imag,
        (states[:, 0, 0] - states[:, 1, 1]).real,
    ])
    fig, ax = plt.subplots(figsize=(6.5, 4))
    for comp, lab in zip(p, ["x", "y", "z"]):
        ax.plot(traj.times, comp, label=lab)
    purity = np.einsum("kij,kji->k", states, states).real
    ax.plot(traj.times, purity, "k--", lw=1, label="tr ρ²")
    ax.set_xlabel("t")
    ax.legend()
    ax.grid(alpha=0.3)
    ax.set_title(title)
    return _save(fig, path)


def check_summary_figure(checks: list, path):
    """Horizontal pass/fail overview of the verification battery."""
    names = [c["name"] for c in checks]
    status = [c["status"] for c in checks]
    colors = {"pass": "seagreen", "fail": "crimson", "inconclusive": "orange"}
    fig, ax = plt.subplots(figsize=(7, 0.45 * len(names) + 1.2))
    y = np.arange(len(names))
    ax.barh(y, [1.0] * len(names),
            color=[colors.get(s, "gray") for s in status])
    for yi, (name, st) in enumerate(zip(names, status)):
        ax.text(0.02, yi, f"{name}: {st}", va="center", fontsize=9)
    ax.set_yticks([])
    ax.set_xticks([])
    ax.set_xlim(0, 1)
    ax.set_title("verification battery")
    return _save(fig, path)
