"""Report figures rendered to files with the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import dynamics as dyn  # noqa: E402

STYLE = {"figure.figsize": (6.4, 4.2), "axes.grid": True, "grid.alpha": 0.3,
         "savefig.dpi": 120, "font.size": 9}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def _primaries(ax, mu: float, plane: str = "xy"):
    ax.plot([-mu], [0.0], "o", color="tab:blue", ms=4, label="Earth" if plane == "xy" else None)
    ax.plot([1 - mu], [0.0], "o", color="0.5", ms=3, label="Moon")


def plot_family(table, path, every: int | None = None, ns: int | None = None) -> Path:
    """Orbit family in the x-y plane (Lyapunov) or x-y / x-z projections (Halo)."""
    mu = table.mu
    ns = table.ns if ns is None else ns
    members = table.members
    every = every or max(1, len(members) // 25)
    halo = members[0].kind == "halo"
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2 if halo else 1, squeeze=False,
                                 figsize=(9.6, 4.2) if halo else (6.4, 4.2))
        cmap = plt.get_cmap("viridis")
        sel = members[::every]
        for i, m in enumerate(sel):
            tr = dyn.trajectory(m.x0, m.period, min(ns, 2000), mu)
            c = cmap(i / max(len(sel) - 1, 1))
            axes[0, 0].plot(tr[:, 0], tr[:, 1], lw=0.6, color=c)
            if halo:
                axes[0, 1].plot(tr[:, 0], tr[:, 2], lw=0.6, color=c)
        _primaries(axes[0, 0], mu)
        axes[0, 0].set_xlabel("x")
        axes[0, 0].set_ylabel("y")
        if halo:
            _primaries(axes[0, 1], mu, "xz")
            axes[0, 1].set_xlabel("x")
            axes[0, 1].set_ylabel("z")
        for ax in axes[0]:
            ax.set_aspect("equal", adjustable="datalim")
        fig.suptitle(f"{table.family_id}: {len(members)} members")
        return _save(fig, path)


def plot_kappa_profile(table, path) -> Path:
    """Family parameter and period along the sweep; folds show as turning points."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(table.kappas, table.periods, ".-", ms=2, lw=0.6)
        ax.set_xlabel("kappa = x0")
        ax.set_ylabel("period")
        ax.set_title(table.family_id)
        return _save(fig, path)


def plot_hold(result, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        revs = np.arange(1, result.revs + 1)
        ax.semilogy(revs, result.rmse, "o-", label="RMSE")
        ax.semilogy(revs, result.max_error, "s--", label="max")
        ax.set_xlabel("revolutions")
        ax.set_ylabel("position error")
        ax.legend()
        return _save(fig, path)


def plot_global_local(result, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = result.dkappas / result.span
        ax.semilogy(x, result.global_error, "o-", ms=3, label="global")
        ax.semilogy(x, result.local_error, "s-", ms=3, label=f"local (w={result.window}, "
                                                             f"deg={result.degree})")
        ax.axvspan(-0.5, 0.5, color="0.9", zorder=0)
        ax.set_xlabel("dkappa / window span")
        ax.set_ylabel("one-period return error")
        ax.legend()
        return _save(fig, path)


def plot_loci(cmp, path, trajectory=None) -> Path:
    """Fixed-eta versus fixed-t member loci over an optional reference orbit."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if trajectory is not None:
            ax.plot(trajectory[:, 0], trajectory[:, 1], color="0.7", lw=0.8)
        for i, (a, b) in enumerate(zip(cmp.normalized, cmp.absolute)):
            ax.plot(a.states[:, 0], a.states[:, 1], "o-", ms=2, lw=0.8, color="tab:blue",
                    label="fixed eta" if i == 0 else None)
            ax.plot(b.states[:, 0], b.states[:, 1], "x-", ms=3, lw=0.8, color="tab:red",
                    label="fixed t" if i == 0 else None)
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.set_aspect("equal", adjustable="datalim")
        ax.legend()
        return _save(fig, path)


def plot_control(runs, path) -> Path:
    """Impulse magnitudes over time and the controlled paths (x-y)."""
    with plt.rc_context(STYLE):
        fig, (a0, a1) = plt.subplots(1, 2, figsize=(10, 4))
        for run in runs:
            if not run.impulses:
                continue
            t = np.array([i.time for i in run.impulses]) / run.period
            a0.semilogy(t, np.maximum(run.dv_magnitudes, 1e-16), ".-", ms=3, lw=0.7,
                        label=f"{run.method} (total {run.total_dv:.3g})")
            a1.plot(run.states[:, 0], run.states[:, 1], lw=0.7, label=run.method)
        a0.set_xlabel("revolutions")
        a0.set_ylabel("|dv|")
        a0.legend()
        a1.set_xlabel("x")
        a1.set_ylabel("y")
        a1.set_aspect("equal", adjustable="datalim")
        a1.legend()
        return _save(fig, path)
