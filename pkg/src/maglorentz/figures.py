"""Figure rendering for the experiment runner.

Everything draws from already-computed records or saved JSON, writes one
file per figure via the Agg backend, and returns the path.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

ARC_POINTS_PER_RADIAN = 12


def _arc_xy(center, start_angle, sweep):
    n = max(4, int(abs(sweep) * ARC_POINTS_PER_RADIAN) + 1)
    ang = start_angle + np.linspace(0.0, sweep, n)
    x = np.real(center) + np.cos(ang)
    y = np.imag(center) + np.sin(ang)
    return x, y


def trajectory_figure(arc_rows, scatterers=(), collision_points=(),
                      mismatch_points=(), eps=None, title="", path="trajectory.svg"):
    """Arcs colored by order, scatterer disks, optional mismatch markers.

    arc_rows: iterables of (cx, cy, start_angle, sweep); scatterers:
    (x, y) pairs drawn as circles of radius eps.
    """
    fig, ax = plt.subplots(figsize=(7, 7))
    cmap = plt.get_cmap("viridis")
    n = max(1, len(arc_rows))
    for i, (cx, cy, a0, sweep) in enumerate(arc_rows):
        x, y = _arc_xy(complex(cx, cy), a0, sweep)
        ax.plot(x, y, lw=0.9, color=cmap(i / n))
    if scatterers and eps:
        for (sx, sy) in scatterers:
            ax.add_patch(plt.Circle((sx, sy), eps, fill=False, color="crimson", lw=0.8))
    if collision_points:
        pts = np.asarray(collision_points)
        ax.plot(pts[:, 0], pts[:, 1], ".", ms=3, color="black")
    if mismatch_points:
        pts = np.asarray(mismatch_points)
        ax.plot(pts[:, 0], pts[:, 1], "x", ms=9, color="red", mew=2)
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def census_figure(rows, fit, path="mismatch_scaling.svg"):
    """Mismatch probability against eps |log eps| with the linear fit."""
    x = np.array([r.eps * abs(math.log(r.eps)) for r in rows])
    p = np.array([r.p_hat for r in rows])
    lo = np.array([r.ci_lo for r in rows])
    hi = np.array([r.ci_hi for r in rows])
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.errorbar(x, p, yerr=[p - lo, hi - p], fmt="o", capsize=3, label="census")
    if math.isfinite(fit["slope"]):
        xs = np.linspace(0, x.max() * 1.05, 50)
        ax.plot(xs, fit["slope"] * xs + fit["intercept"], "--",
                label=f"fit, R^2 = {fit['r_squared']:.3f}")
    ax.set_xlabel(r"$\epsilon\,|\log\epsilon|$")
    ax.set_ylabel(r"P(mismatch by T)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def occupation_figure(hists, report, path="occupation.svg"):
    """Radial occupation densities with the fitted envelope."""
    fig, ax = plt.subplots(figsize=(6.5, 5))
    for kind, h in hists.items():
        r = 0.5 * (h.r_edges[:-1] + h.r_edges[1:])
        dens = h.density()
        sel = dens > 0
        ax.loglog(r[sel], dens[sel], "o-", ms=3, lw=0.8, label=kind)
    if report is not None and hists:
        h = next(iter(hists.values()))
        r = np.geomspace(max(h.r_edges[1] / 2, 1e-4), h.r_edges[-1], 200)
        c = report["c"]
        C = max(report["constants"].values())
        env = C * (np.minimum(1.0 / h.eps, 1.0 / r) + 1.0 + np.exp(-c * r) / r)
        ax.loglog(r, env, "k--", lw=1, label="fitted envelope")
    ax.set_xlabel("r")
    ax.set_ylabel("occupation density")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def endpoint_figure(endpoints, T, path="endpoints.svg"):
    """Rescaled endpoint cloud plus per-component histogram vs the normal fit."""
    z = np.asarray(endpoints) / math.sqrt(T)
    fig, axes = plt.subplots(1, 2, figsize=(10, 4.5))
    axes[0].plot(z.real, z.imag, ".", ms=2, alpha=0.4)
    axes[0].set_aspect("equal")
    axes[0].set_title("rescaled endpoints")
    for comp, vals in (("x", z.real), ("y", z.imag)):
        axes[1].hist(vals, bins=60, density=True, histtype="step", label=comp)
    grid = np.linspace(z.real.min(), z.real.max(), 200)
    sd = z.real.std()
    axes[1].plot(grid, np.exp(-0.5 * (grid / sd) ** 2) / (sd * math.sqrt(2 * math.pi)),
                 "k--", lw=1, label="normal")
    axes[1].legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def msd_figure(msd, path="msd.svg"):
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.plot(msd["times"], msd["values"], "o", label="MSD")
    xs = np.asarray(msd["times"])
    ax.plot(xs, msd["slope"] * xs + msd["intercept"], "--",
            label=f"linear fit, R^2 = {msd['r_squared']:.4f}")
    ax.set_xlabel("t")
    ax.set_ylabel(r"E|Y(t)|$^2$")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
