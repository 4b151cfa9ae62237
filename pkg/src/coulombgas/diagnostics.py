"""Charge-fluctuation statistics, density profiles and crystal order.

The central observable is the charge discrepancy
D(x, R) = #points in B(x, R) - n mu_0(B(x, R)); its tails over Gibbs samples
are compared against the i.i.d.-from-mu_0 baseline (hyperuniformity shows up
as strictly smaller low-temperature tails at the microscopic radius
R_n = n^{-1/(d+2)}).  Weak-norm deviations use a fixed dictionary of smooth
bumps, which gives a certified lower bound on any dual norm dominating the
dictionary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Configuration
from .equilibrium import EquilibriumMeasure, Grid

__all__ = [
    "charge_discrepancy",
    "micro_radius",
    "FluctuationTailTable",
    "fluctuation_tails",
    "DensityProfileReport",
    "density_profile",
    "bond_order_psi6",
    "period_density_check",
]


def micro_radius(n: int, d: int) -> float:
    """Default microscopic probe radius n^{-1/(d+2)}."""
    return float(n) ** (-1.0 / (d + 2))


def charge_discrepancy(config: Configuration, mu0: EquilibriumMeasure,
                       x, R: float) -> float:
    """D(x, R) = nu_n(B(x, R)) - n mu_0(B(x, R))."""
    if R <= 0.0:
        raise ValueError("radius must be positive")
    x = np.asarray(x, dtype=float)
    count = int(np.sum(np.linalg.norm(config.points - x, axis=1) <= R))
    return float(count - config.n * mu0.ball_mass(x, R))


# ---------------------------------------------------------------------------
# tails
# ---------------------------------------------------------------------------

def _wilson_interval(successes: int, total: int, z: float = 1.96) -> tuple:
    if total == 0:
        return (0.0, 1.0)
    p = successes / total
    denom = 1.0 + z * z / total
    center = (p + z * z / (2 * total)) / denom
    half = z * math.sqrt(p * (1 - p) / total + z * z / (4 * total * total)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


@dataclass
class FluctuationTailTable:
    """Empirical P(|D(x, R)| >= lambda n R^d) with Wilson 95% intervals."""

    center: tuple
    radii: tuple
    lambdas: tuple
    n: int
    counts: np.ndarray        # shape (len(radii), len(lambdas))
    total: int
    probabilities: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    scale_tags: tuple         # "micro" / "macro" per radius

    def rows(self):
        for i, R in enumerate(self.radii):
            for j, lam in enumerate(self.lambdas):
                yield {
                    "radius": R, "lambda": lam, "scale": self.scale_tags[i],
                    "probability": float(self.probabilities[i, j]),
                    "ci_low": float(self.ci_low[i, j]),
                    "ci_high": float(self.ci_high[i, j]),
                    "exceedances": int(self.counts[i, j]),
                    "samples": self.total,
                }


def fluctuation_tails(samples: Sequence[Configuration], mu0: EquilibriumMeasure,
                      R_grid: Sequence[float], lambda_grid: Sequence[float],
                      x=None, min_samples: int = 100) -> FluctuationTailTable:
    """Tail table of the charge discrepancy over decorrelated samples.

    Radii at or below the micro radius of the sample size are tagged "micro".
    A warning flag rides along when fewer than ``min_samples`` samples are
    supplied (intervals are then wide).
    """
    if not samples:
        raise ValueError("no samples given")
    n = samples[0].n
    d = samples[0].d
    x = np.zeros(d) if x is None else np.asarray(x, dtype=float)
    radii = tuple(float(r) for r in R_grid)
    lambdas = tuple(float(l) for l in lambda_grid)
    ball_masses = {R: mu0.ball_mass(x, R) for R in radii}
    counts = np.zeros((len(radii), len(lambdas)), dtype=int)
    for cfg in samples:
        dist = np.linalg.norm(cfg.points - x, axis=1)
        for i, R in enumerate(radii):
            D = abs(float(np.sum(dist <= R)) - n * ball_masses[R])
            for j, lam in enumerate(lambdas):
                if D >= lam * n * R ** d:
                    counts[i, j] += 1
    total = len(samples)
    probs = counts / total
    lo = np.zeros_like(probs)
    hi = np.zeros_like(probs)
    for i in range(len(radii)):
        for j in range(len(lambdas)):
            lo[i, j], hi[i, j] = _wilson_interval(int(counts[i, j]), total)
    rn = micro_radius(n, d)
    tags = tuple("micro" if R <= 2.0 * rn else "macro" for R in radii)
    return FluctuationTailTable(center=tuple(x), radii=radii, lambdas=lambdas,
                                n=n, counts=counts, total=total,
                                probabilities=probs, ci_low=lo, ci_high=hi,
                                scale_tags=tags)


# ---------------------------------------------------------------------------
# density profiles and the weak-norm proxy
# ---------------------------------------------------------------------------

def _bump_value(r2, s: float):
    """C^2 bump (1 - r^2/s^2)^3 on its support."""
    t = 1.0 - r2 / (s * s)
    return np.where(t > 0.0, t ** 3, 0.0)


def _bump_grad_norm(s: float, d: int) -> float:
    """L^inf norm of the bump gradient: max of 6 r (1 - r^2/s^2)^2 / s^2."""
    # maximize g(r) = 6 r (1 - r^2/s^2)^2 / s^2 over [0, s]: r = s / sqrt(5)
    r = s / math.sqrt(5.0)
    return 6.0 * r * (1.0 - 0.2) ** 2 / (s * s)


@dataclass
class DensityProfileReport:
    grid: Grid
    empirical_density: np.ndarray
    l1_distance: float
    weak_norm_proxy: float
    dictionary_scales: tuple
    n_samples: int


def density_profile(samples: Sequence[Configuration], mu0: EquilibriumMeasure,
                    grid: Optional[Grid] = None,
                    bump_scales: Optional[Sequence[float]] = None,
                    centers_per_axis: int = 5) -> DensityProfileReport:
    """Histogram estimate of the one-point marginal plus deviation measures.

    Reports the L1 distance of the empirical density to mu_0 and the proxy
    sup_phi |int (nu - n mu_0) phi| / (n ||grad phi||_inf) over a fixed
    dictionary of C^2 bumps at three scales.
    """
    if not samples:
        raise ValueError("no samples given")
    d = samples[0].d
    n = samples[0].n
    if grid is None:
        # histogram cells need many points each: ~24 bins across the cloud
        half = max(abs(v) for v in (*mu0.grid.lo, *mu0.grid.hi))
        grid = Grid.centered(d, half, 2.0 * half / 24)
    all_pts = np.concatenate([cfg.points for cfg in samples], axis=0)

    edges = [np.concatenate([ax - 0.5 * grid.h, [ax[-1] + 0.5 * grid.h]])
             for ax in grid.axes()]
    hist, _ = np.histogramdd(all_pts, bins=edges)
    emp = hist / (len(samples) * n * grid.cell_volume)
    # cell-averaged reference: histograms estimate cell means, not node values
    sub = 3
    offs = ((np.arange(sub) + 0.5) / sub - 0.5) * grid.h
    mesh = np.meshgrid(*([offs] * d), indexing="ij")
    shifts = np.stack([m.ravel() for m in mesh], axis=-1)
    nodes = grid.nodes()
    mu_on_grid = np.zeros(len(nodes))
    for sft in shifts:
        mu_on_grid += mu0.density_at(nodes + sft)
    mu_on_grid = (mu_on_grid / len(shifts)).reshape(grid.shape)
    l1 = float(np.sum(np.abs(emp - mu_on_grid)) * grid.cell_volume)

    if bump_scales is None:
        r_typ = 0.5 * float(np.max(np.linalg.norm(all_pts, axis=1)))
        bump_scales = (0.25 * r_typ, 0.5 * r_typ, r_typ)
    lo = np.min(all_pts, axis=0)
    hi = np.max(all_pts, axis=0)
    axes = [np.linspace(lo[a], hi[a], centers_per_axis) for a in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([m.ravel() for m in mesh], axis=-1)

    nodes = grid.nodes()
    best = 0.0
    for s in bump_scales:
        gnorm = _bump_grad_norm(s, d)
        for c in centers:
            r2_pts = np.sum((all_pts - c) ** 2, axis=1)
            emp_int = float(np.sum(_bump_value(r2_pts, s))) / len(samples)
            r2_nodes = np.sum((nodes - c) ** 2, axis=1)
            mu_int = float(np.sum(_bump_value(r2_nodes, s)
                                  * mu_on_grid.ravel()) * grid.cell_volume)
            gap = abs(emp_int - n * mu_int) / (n * gnorm)
            best = max(best, gap)
    return DensityProfileReport(grid=grid, empirical_density=emp,
                                l1_distance=l1, weak_norm_proxy=best,
                                dictionary_scales=tuple(bump_scales),
                                n_samples=len(samples))


# ---------------------------------------------------------------------------
# crystalline order
# ---------------------------------------------------------------------------

def bond_order_psi6(config: Configuration,
                    interior_margin: Optional[float] = None) -> dict:
    """Per-point |psi_6| from Delaunay neighbors (k = 6 fallback), d = 2 only.

    Returns per-point magnitudes, an interior mask (points farther than the
    margin from the convex hull of the cloud) and the bulk mean.
    """
    if config.d != 2:
        raise ValueError("psi_6 is a two-dimensional diagnostic")
    if config.n < 7:
        raise ValueError("psi_6 needs at least 7 points")
    pts = config.points
    n = pts.shape[0]
    neighbors = [set() for _ in range(n)]
    try:
        from scipy.spatial import Delaunay

        tri = Delaunay(pts)
        for simplex in tri.simplices:
            for a in simplex:
                for b in simplex:
                    if a != b:
                        neighbors[a].add(int(b))
        hull_pts = set()
        for (a, b) in tri.convex_hull.reshape(-1, 2):
            hull_pts.add(int(a))
            hull_pts.add(int(b))
    except Exception:
        from scipy.spatial import cKDTree

        tree = cKDTree(pts)
        _, idx = tree.query(pts, k=7)
        for a in range(n):
            neighbors[a] = set(int(b) for b in idx[a, 1:])
        hull_pts = set()

    mags = np.zeros(n)
    for a in range(n):
        nb = sorted(neighbors[a])
        if not nb:
            continue
        vecs = pts[nb] - pts[a]
        ang = np.arctan2(vecs[:, 1], vecs[:, 0])
        mags[a] = abs(np.mean(np.exp(6j * ang)))

    center = pts.mean(axis=0)
    radii = np.linalg.norm(pts - center, axis=1)
    r_max = radii.max()
    if interior_margin is None:
        # 1.5 median nearest-neighbor spacings inside the cloud edge
        from scipy.spatial import cKDTree

        nn = cKDTree(pts).query(pts, k=2)[0][:, 1]
        interior_margin = 1.5 * float(np.median(nn))
    interior = radii <= r_max - interior_margin
    interior &= ~np.isin(np.arange(n), sorted(hull_pts))
    bulk = float(np.mean(mags[interior])) if interior.any() else float(np.mean(mags))
    return {"magnitudes": mags, "interior": interior, "bulk_mean": bulk,
            "interior_margin": float(interior_margin)}


# ---------------------------------------------------------------------------
# periodic density check
# ---------------------------------------------------------------------------

def period_density_check(obj, R_ladder: Sequence[float]) -> dict:
    """nu(K_R)/|K_R| across a ladder of half-widths R for a periodic input.

    Asserts convergence to the point density m with the surface-order
    envelope |ratio - m| <= C / R, C = m d s_max with s_max the largest
    spanning-vector norm.
    """
    from .jellium import Lattice, TorusConfiguration

    if isinstance(obj, Lattice):
        lat = obj
        base_pts = np.zeros((1, obj.d))
        cell = lat.basis_matrix
        m = lat.density
        d = lat.d
    elif isinstance(obj, TorusConfiguration):
        lat = obj.translation_lattice()
        base_pts = obj.point_array
        cell = obj.matrix
        m = obj.n_points / obj.volume
        d = obj.d
    else:
        raise TypeError("expected a Lattice or TorusConfiguration")

    s_max = float(np.max(np.linalg.norm(cell, axis=1)))
    envelope_c = m * d * s_max * 2.0
    pt_reach = float(np.max(np.abs(base_pts))) if len(base_pts) else 0.0
    rows = []
    for R in R_ladder:
        R = float(R)
        trans = lat.vectors_within((R + pt_reach) * math.sqrt(d) + 2.0 * s_max,
                                   include_zero=True)
        pts = (trans[:, None, :] + base_pts[None, :, :]).reshape(-1, d)
        # half-open window so commensurate boxes count exactly m |K_R| points
        inside = np.all((pts >= -R - 1e-12) & (pts < R - 1e-12), axis=1)
        count = int(np.sum(inside))
        ratio = count / (2.0 * R) ** d
        rows.append({"R": R, "count": count, "ratio": ratio,
                     "deviation": abs(ratio - m),
                     "envelope": envelope_c / R})
    ok = all(r["deviation"] <= r["envelope"] + 1e-12 for r in rows)
    return {"density": m, "rows": rows, "within_envelope": ok}
