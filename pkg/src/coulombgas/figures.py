"""Figure rendering for the report path.

Every run pipeline writes its delimited outputs first; these helpers then
render companion PNGs into the same directory.  The CSV files remain the
machine-readable contract -- figures are presentation only and can be turned
off with ``figures: false`` in the run spec.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

__all__ = [
    "equilibrium_figure",
    "configuration_figure",
    "gibbs_figure",
    "free_energy_figure",
    "jellium_figure",
    "tails_figure",
    "density_profile_figure",
]


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def equilibrium_figure(mu, zeta_values, path):
    """Density heat map (d=2) or radial profile, with the zeta landscape."""
    grid = mu.grid
    if grid.d == 2:
        fig, axes = plt.subplots(1, 2, figsize=(10, 4))
        extent = (grid.lo[0], grid.hi[0], grid.lo[1], grid.hi[1])
        im0 = axes[0].imshow(mu.density.T, origin="lower", extent=extent,
                             cmap="viridis")
        axes[0].set_title("equilibrium density")
        fig.colorbar(im0, ax=axes[0], shrink=0.85)
        im1 = axes[1].imshow(zeta_values.T, origin="lower", extent=extent,
                             cmap="magma")
        axes[1].set_title("effective potential zeta")
        fig.colorbar(im1, ax=axes[1], shrink=0.85)
        for ax in axes:
            ax.set_xlabel("x0")
            ax.set_ylabel("x1")
    else:
        nodes = grid.nodes()
        r = np.linalg.norm(nodes, axis=1)
        fig, ax = plt.subplots(figsize=(6, 4))
        order = np.argsort(r)
        ax.plot(r[order], mu.density.ravel()[order], ".", ms=1, label="density")
        ax.plot(r[order], zeta_values.ravel()[order], ".", ms=1, label="zeta")
        ax.set_xlabel("|x|")
        ax.legend()
        ax.set_title("equilibrium measure (radial scatter)")
    return _save(fig, path)


def configuration_figure(config, path, psi6=None, title="configuration"):
    fig, ax = plt.subplots(figsize=(5.5, 5))
    pts = config.points
    if config.d == 2:
        if psi6 is not None:
            sc = ax.scatter(pts[:, 0], pts[:, 1], c=psi6, cmap="coolwarm",
                            vmin=0.0, vmax=1.0, s=18)
            fig.colorbar(sc, ax=ax, label="|psi6|", shrink=0.85)
        else:
            ax.plot(pts[:, 0], pts[:, 1], "o", ms=3)
        ax.set_aspect("equal")
    else:
        ax = fig.add_subplot(projection="3d")
        ax.scatter(pts[:, 0], pts[:, 1], pts[:, 2], s=8)
    ax.set_title(title)
    return _save(fig, path)


def gibbs_figure(energy_trace, config, path):
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    axes[0].plot(energy_trace, lw=0.7)
    axes[0].set_xlabel("sweep")
    axes[0].set_ylabel("H_n")
    axes[0].set_title("energy trace")
    pts = config.points
    if config.d == 2:
        axes[1].plot(pts[:, 0], pts[:, 1], "o", ms=3)
        axes[1].set_aspect("equal")
    else:
        axes[1].plot(np.linalg.norm(pts, axis=1), "o", ms=3)
        axes[1].set_ylabel("|x_i|")
    axes[1].set_title("final configuration")
    return _save(fig, path)


def free_energy_figure(estimates, bounds, path):
    """<pair>_lambda curves and the sandwich per beta."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for beta, est in estimates.items():
        axes[0].errorbar(est.lambda_nodes, est.pair_means, yerr=est.pair_errors,
                         marker="o", ms=3, lw=1, label=f"beta={beta:g}")
    axes[0].set_xlabel("lambda")
    axes[0].set_ylabel("<pair energy>")
    axes[0].legend(fontsize=8)
    axes[0].set_title("thermodynamic integration")
    betas = sorted(estimates)
    vals = [estimates[b].value for b in betas]
    errs = [estimates[b].stderr for b in betas]
    axes[1].errorbar(betas, vals, yerr=errs, marker="o", label="F (TI)")
    if bounds:
        axes[1].plot(betas, [bounds[b]["lower"] for b in betas], "v--",
                     label="lower bound")
        axes[1].plot(betas, [bounds[b]["upper"] for b in betas], "^--",
                     label="upper bound")
    axes[1].set_xlabel("beta")
    axes[1].set_ylabel("free energy")
    axes[1].legend(fontsize=8)
    return _save(fig, path)


def jellium_figure(rows, path):
    """Bar chart of lattice energies plus zeta(s) curves."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    names = [r["lattice"] for r in rows]
    axes[0].bar(names, [r["W"] for r in rows])
    axes[0].set_ylabel("renormalized energy W")
    axes[0].tick_params(axis="x", rotation=30)
    for r in rows:
        if r.get("zeta"):
            s_vals, z_vals = zip(*sorted(r["zeta"].items()))
            axes[1].plot(s_vals, z_vals, marker="o", ms=3, label=r["lattice"])
    axes[1].set_xlabel("s")
    axes[1].set_ylabel("epstein zeta")
    axes[1].legend(fontsize=8)
    return _save(fig, path)


def tails_figure(table, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, R in enumerate(table.radii):
        ax.errorbar(table.lambdas, table.probabilities[i],
                    yerr=[table.probabilities[i] - table.ci_low[i],
                          table.ci_high[i] - table.probabilities[i]],
                    marker="o", ms=3,
                    label=f"R={R:.3g} ({table.scale_tags[i]})")
    ax.set_yscale("log")
    ax.set_xlabel("lambda")
    ax.set_ylabel("P(|D| >= lambda n R^d)")
    ax.legend(fontsize=8)
    ax.set_title("charge-discrepancy tails")
    return _save(fig, path)


def density_profile_figure(report, mu, path):
    grid = report.grid
    if grid.d == 2:
        fig, axes = plt.subplots(1, 2, figsize=(10, 4))
        extent = (grid.lo[0], grid.hi[0], grid.lo[1], grid.hi[1])
        im0 = axes[0].imshow(report.empirical_density.T, origin="lower",
                             extent=extent, cmap="viridis")
        axes[0].set_title("empirical one-point density")
        fig.colorbar(im0, ax=axes[0], shrink=0.85)
        diff = report.empirical_density - mu.density
        lim = float(np.max(np.abs(diff))) or 1.0
        im1 = axes[1].imshow(diff.T, origin="lower", extent=extent,
                             cmap="coolwarm", vmin=-lim, vmax=lim)
        axes[1].set_title(f"difference to mu0 (L1 = {report.l1_distance:.3g})")
        fig.colorbar(im1, ax=axes[1], shrink=0.85)
    else:
        nodes = grid.nodes()
        r = np.linalg.norm(nodes, axis=1)
        fig, ax = plt.subplots(figsize=(6, 4))
        order = np.argsort(r)
        ax.plot(r[order], report.empirical_density.ravel()[order], ".", ms=1,
                label="empirical")
        ax.plot(r[order], mu.density.ravel()[order], ".", ms=1, label="mu0")
        ax.set_xlabel("|x|")
        ax.legend()
    return _save(fig, path)
