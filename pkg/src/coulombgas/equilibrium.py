"""Mean-field energy, equilibrium measures and the effective potential.

The equilibrium measure mu_0 minimizes E[mu] = D(mu, mu) + int V dmu over
probability measures.  Two solvers are provided:

* ``solve_equilibrium_radial`` -- for radial V with positive Laplacian the
  minimizer has density Lap(V)/(2 c_d) on a centered ball whose radius is
  fixed by unit mass; potentials and all integrals come out in closed or
  1-D-quadrature form.

* ``solve_equilibrium_obstacle`` -- grid solver for general confining V.
  The potential h of the measure solves an obstacle problem with obstacle
  phi = -V/2 + c; we relax it by projected red-black SOR and tune the
  unknown constant c by a monotone root find on the total mass.

Grid interaction energies use FFT convolution with an exact average of the
kernel over the self-cell, so the integrable log / 1/r diagonal is not
simply dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad

from .core import (
    check_dimension,
    coulomb_kernel_r,
    space_constants,
)

_QUAD = dict(epsabs=1e-13, epsrel=1e-13, limit=400)

__all__ = [
    "Potential",
    "quadratic_potential",
    "radial_power_potential",
    "shifted_potential",
    "Grid",
    "EquilibriumMeasure",
    "EffectivePotential",
    "RadialEquilibrium",
    "NoEquilibriumError",
    "ObstacleSolverError",
    "MuBetaError",
    "mf_energy",
    "solve_equilibrium_radial",
    "solve_equilibrium_obstacle",
    "zeta_potential",
    "solve_mu_beta",
    "unit_cell_kernel_average",
    "grid_potential",
    "grid_interaction_energy",
]


class NoEquilibriumError(RuntimeError):
    """The unit-mass equation has no solution in the search bracket."""


class ObstacleSolverError(RuntimeError):
    """Projected relaxation failed to converge; carries the final residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class MuBetaError(RuntimeError):
    """Fixed-point iteration for mu_beta diverged."""


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Potential:
    """Confining one-body potential with gradient and Laplacian callables.

    All three callables are vectorized over arrays of points with shape
    (..., d).  ``confining`` is the caller's certificate that V grows fast
    enough at infinity for the equilibrium measure to exist.
    """

    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    laplacian: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"
    confining: bool = True
    radial: bool = False


def quadratic_potential(alpha: float = 1.0, d: int = 2) -> Potential:
    """V(x) = alpha * |x|^2 with Lap V = 2 d alpha."""
    check_dimension(d)

    def value(x):
        x = np.asarray(x, dtype=float)
        return alpha * np.sum(x * x, axis=-1)

    def gradient(x):
        return 2.0 * alpha * np.asarray(x, dtype=float)

    def laplacian(x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], 2.0 * d * alpha)

    return Potential(value, gradient, laplacian, name=f"{alpha}*|x|^2",
                     radial=True)


def radial_power_potential(p: float, coeff: float = 1.0, d: int = 2) -> Potential:
    """V(x) = coeff * |x|^p (p >= 2), Lap V = coeff * p (p + d - 2) |x|^(p-2)."""
    check_dimension(d)
    if p < 2:
        raise ValueError("radial power potentials need p >= 2 here")

    def value(x):
        x = np.asarray(x, dtype=float)
        return coeff * np.sum(x * x, axis=-1) ** (p / 2.0)

    def gradient(x):
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1, keepdims=True)
        r2 = np.where(r2 == 0.0, 1.0, r2)
        return coeff * p * x * r2 ** (p / 2.0 - 1.0)

    def laplacian(x):
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1)
        return coeff * p * (p + d - 2.0) * r2 ** (p / 2.0 - 1.0)

    return Potential(value, gradient, laplacian, name=f"{coeff}*|x|^{p}",
                     radial=True)


def shifted_potential(V: Potential, a) -> Potential:
    """V(. - a): translates the equilibrium measure by a."""
    a = np.asarray(a, dtype=float)
    return Potential(
        value=lambda x: V.value(np.asarray(x, dtype=float) - a),
        gradient=lambda x: V.gradient(np.asarray(x, dtype=float) - a),
        laplacian=lambda x: V.laplacian(np.asarray(x, dtype=float) - a),
        name=f"{V.name} shifted",
        confining=V.confining,
        radial=False,
    )


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    """Uniform node-centered grid on a box; nodes at lo + i*h per axis."""

    d: int
    lo: tuple
    h: float
    shape: tuple

    def __post_init__(self):
        check_dimension(self.d)
        if self.h <= 0.0:
            raise ValueError("grid spacing must be positive")
        if len(self.lo) != self.d or len(self.shape) != self.d:
            raise ValueError("lo and shape must have length d")

    @classmethod
    def centered(cls, d: int, half_width: float, h: float) -> "Grid":
        m = int(round(2.0 * half_width / h)) + 1
        lo = tuple(-half_width for _ in range(d))
        return cls(d=d, lo=lo, h=h, shape=tuple(m for _ in range(d)))

    @property
    def hi(self):
        return tuple(l + (m - 1) * self.h for l, m in zip(self.lo, self.shape))

    @property
    def cell_volume(self) -> float:
        return self.h ** self.d

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    def axes(self):
        return [l + self.h * np.arange(m) for l, m in zip(self.lo, self.shape)]

    def nodes(self) -> np.ndarray:
        """All node coordinates, shape (n_nodes, d), C order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def node_array(self) -> np.ndarray:
        """Node coordinates with shape self.shape + (d,)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(values) * self.cell_volume)


# ---------------------------------------------------------------------------
# exact self-cell kernel averages
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def unit_cell_kernel_average(d: int) -> float:
    """Mean of w(u - v) over two independent uniform points of the unit cell.

    d=2: both coordinate differences have the triangular density 2(1-t); in
    polar coordinates the radial integral of -log(r) * poly(r) is available
    in closed form, leaving a smooth 1-D angular quadrature.

    d=3: the cube is split into three congruent pyramids over its far faces;
    the radial integral is a polynomial and the remaining 2-D integrand is
    smooth, handled by dblquad.
    """
    check_dimension(d)
    if d == 2:
        def inner(phi):
            c, s = math.cos(phi), math.sin(phi)
            L = min(1.0 / c, 1.0 / s) if min(c, s) > 1e-300 else 1.0 / max(c, s)
            # integrand: -log r * (a r + b r^2 + c3 r^3), closed-form primitive
            a, b, c3 = 4.0, -4.0 * (c + s), 4.0 * c * s

            def piece(k, coef):
                kk = k + 1.0
                return coef * L ** kk * (1.0 / kk ** 2 - math.log(L) / kk)

            return piece(1, a) + piece(2, b) + piece(3, c3)

        val, _ = quad(inner, 0.0, math.pi / 2.0, points=[math.pi / 4.0], **_QUAD)
        return float(val)

    from scipy.integrate import dblquad

    def integrand(y, x):
        poly = 0.5 - (x + y + 1.0) / 3.0 + (x * y + x + y) / 4.0 - x * y / 5.0
        return poly / math.sqrt(x * x + y * y + 1.0)

    val, _ = dblquad(integrand, 0.0, 1.0, 0.0, 1.0, epsabs=1e-12, epsrel=1e-12)
    return float(24.0 * val)


@lru_cache(maxsize=32)
def _circulant_kernel_fft(d: int, shape: tuple, h: float):
    """FFT of the kernel on the doubled (circulant-embedded) grid.

    Offset 0 holds the exact cell average of the kernel so the diagonal of
    D(mu, mu) is integrated, not skipped.
    """
    import scipy.fft

    ext = tuple(2 * m for m in shape)
    offs = [np.concatenate([np.arange(0, m), np.arange(-m, 0)]) * h for m in shape]
    mesh = np.meshgrid(*offs, indexing="ij")
    r2 = sum(mm * mm for mm in mesh)
    r = np.sqrt(r2)
    with np.errstate(divide="ignore"):
        K = 1.0 / r if d == 3 else -np.log(r)
    if d == 3:
        K[(0,) * d] = unit_cell_kernel_average(3) / h
    else:
        K[(0,) * d] = unit_cell_kernel_average(2) - math.log(h)
    return scipy.fft.rfftn(K), ext


def grid_potential(grid: Grid, density: np.ndarray) -> np.ndarray:
    """h = w * (density on the grid), cell-averaged kernel, via circulant FFT."""
    import scipy.fft

    Khat, ext = _circulant_kernel_fft(grid.d, grid.shape, grid.h)
    pad = np.zeros(ext)
    pad[tuple(slice(0, m) for m in grid.shape)] = density
    conv = scipy.fft.irfftn(scipy.fft.rfftn(pad) * Khat, s=ext)
    out = conv[tuple(slice(0, m) for m in grid.shape)]
    return out * grid.cell_volume


def grid_interaction_energy(grid: Grid, density: np.ndarray) -> float:
    """D(mu, mu) for a gridded density (quadrature with self-cell average)."""
    h_mu = grid_potential(grid, density)
    return float(np.sum(density * h_mu) * grid.cell_volume)


# ---------------------------------------------------------------------------
# measures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadialEquilibrium:
    """Closed-form radial description: density Lap(V)/(2 c_d) on B(0, R)."""

    d: int
    V: Potential
    radius: float
    robin_constant: float
    center: np.ndarray

    def _radial_point(self, r):
        r = np.asarray(r, dtype=float)
        x = np.zeros(r.shape + (self.d,))
        x[..., 0] = r
        return x

    def density_r(self, r):
        r = np.asarray(r, dtype=float)
        k = space_constants(self.d)
        dens = self.V.laplacian(self._radial_point(r)) / (2.0 * k.c)
        return np.where(r <= self.radius, dens, 0.0)

    def potential_r(self, r):
        """h_mu0 as a function of radius: c - V/2 inside, w outside."""
        r = np.asarray(r, dtype=float)
        inside = self.robin_constant - 0.5 * self.V.value(self._radial_point(r))
        r_safe = np.where(r == 0.0, 1.0, r)
        outside = coulomb_kernel_r(r_safe, self.d)
        return np.where(r <= self.radius, inside, outside)

    def mass_in_ball(self, R: float) -> float:
        R = min(float(R), self.radius)
        if R <= 0.0:
            return 0.0
        surf = 2.0 * math.pi if self.d == 2 else 4.0 * math.pi
        val, _ = quad(lambda r: self.density_r(r) * surf * r ** (self.d - 1),
                      0.0, R, **_QUAD)
        return float(val)

    def radial_integral(self, f) -> float:
        """Integral of f(r) against mu_0 (f scalar-vectorized)."""
        surf = 2.0 * math.pi if self.d == 2 else 4.0 * math.pi
        val, _ = quad(lambda r: f(r) * self.density_r(r) * surf * r ** (self.d - 1),
                      0.0, self.radius, **_QUAD)
        return float(val)

    def interaction_energy(self) -> float:
        return self.radial_integral(lambda r: self.potential_r(r))

    def potential_energy(self) -> float:
        return self.radial_integral(lambda r: self.V.value(self._radial_point(r)))


@dataclass
class EquilibriumMeasure:
    """Gridded density with support mask and Robin constant.

    ``potential_values`` holds h_mu0 on the grid when the solver produced it.
    ``radial`` carries the closed-form description for radial solutions and
    is used by high-precision consumers (splitting identities, oracles).
    """

    grid: Grid
    density: np.ndarray
    support: np.ndarray
    robin_constant: float
    potential_values: Optional[np.ndarray] = None
    radial: Optional[RadialEquilibrium] = None
    solver_info: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.grid.d

    def mass(self) -> float:
        if self.radial is not None:
            return self.radial.mass_in_ball(self.radial.radius)
        return self.grid.integrate(self.density)

    def max_density(self) -> float:
        return float(np.max(self.density))

    def check_mass(self, tol: float = 1e-6):
        m = self.mass()
        if abs(m - 1.0) > tol:
            raise ValueError(f"measure is not normalized: mass = {m!r}")

    def density_at(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.radial is not None:
            r = np.linalg.norm(points - self.radial.center, axis=-1)
            return self.radial.density_r(r)
        return self._interpolator("density")(points)

    def potential_at(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.radial is not None:
            r = np.linalg.norm(points - self.radial.center, axis=-1)
            return self.radial.potential_r(r)
        if self.potential_values is None:
            self.potential_values = grid_potential(self.grid, self.density)
        return self._interpolator("potential")(points)

    def ball_mass(self, center, R: float) -> float:
        """mu_0(B(center, R)); exact (quadrature) for radial measures."""
        center = np.asarray(center, dtype=float)
        if self.radial is not None:
            rad = self.radial
            s = float(np.linalg.norm(center - rad.center))
            if s < 1e-14:
                return rad.mass_in_ball(R)
            # shell decomposition: the fraction of the sphere of radius r
            # (about the measure's center) inside B(center, R) is an arc in
            # d=2 and a spherical cap in d=3
            from ._quadrature import gauss_segments

            lo, hi = abs(s - R), min(rad.radius, s + R)
            surf = 2.0 * math.pi if self.d == 2 else 4.0 * math.pi
            acc = 0.0
            if s < R:  # shells fully inside the ball
                full_hi = min(rad.radius, R - s)
                if full_hi > 0.0:
                    acc += rad.mass_in_ball(full_hi)
            if hi > lo:
                r_nodes, w_nodes = gauss_segments(lo, hi, order=64)
                cosx = (s * s + r_nodes ** 2 - R * R) / (2.0 * s * r_nodes)
                cosx = np.clip(cosx, -1.0, 1.0)
                if self.d == 2:
                    frac = np.arccos(cosx) / math.pi
                else:
                    frac = 0.5 * (1.0 - cosx)
                dens = rad.density_r(r_nodes)
                acc += float(np.sum(w_nodes * dens * frac * surf
                                    * r_nodes ** (self.d - 1)))
            return acc
        nodes = self.grid.node_array()
        dist2 = np.sum((nodes - center) ** 2, axis=-1)
        inside = dist2 <= R * R
        return float(np.sum(self.density[inside]) * self.grid.cell_volume)

    def entropy(self) -> float:
        """int mu log mu (0 log 0 = 0)."""
        if self.radial is not None:
            return self.radial.radial_integral(
                lambda r: np.log(np.maximum(self.radial.density_r(r), 1e-300)))
        dens = self.density
        mask = dens > 0.0
        return float(np.sum(dens[mask] * np.log(dens[mask])) * self.grid.cell_volume)

    def density_power_integral(self, p: float) -> float:
        """int mu_0^p dx."""
        if self.radial is not None:
            surf = 2.0 * math.pi if self.d == 2 else 4.0 * math.pi
            val, _ = quad(
                lambda r: self.radial.density_r(r) ** p * surf * r ** (self.d - 1),
                0.0, self.radial.radius, **_QUAD)
            return float(val)
        return float(np.sum(self.density ** p) * self.grid.cell_volume)

    def _interpolator(self, which: str):
        from scipy.interpolate import RegularGridInterpolator

        key = f"_interp_{which}"
        cached = self.solver_info.get(key)
        if cached is None:
            values = self.density if which == "density" else self.potential_values
            cached = RegularGridInterpolator(
                tuple(self.grid.axes()), values, method="linear",
                bounds_error=False, fill_value=None)
            self.solver_info[key] = cached
        return lambda pts: cached(pts)


@dataclass
class EffectivePotential:
    """zeta = h_mu0 + V/2 - c on grid nodes; >= 0, zero on the support."""

    grid: Grid
    values: np.ndarray
    min_value: float
    max_on_support: float


# ---------------------------------------------------------------------------
# mean-field energy
# ---------------------------------------------------------------------------

def mf_energy(mu: EquilibriumMeasure, V: Potential, mass_tol: float = 1e-6) -> float:
    """E[mu] = D(mu, mu) + int V dmu."""
    mu.check_mass(mass_tol)
    if mu.radial is not None:
        rad = mu.radial
        if V.radial:
            pot_term = rad.radial_integral(
                lambda r: V.value(rad._radial_point(np.asarray(r))))
        else:
            nodes = mu.grid.node_array()
            pot_term = float(np.sum(mu.density * V.value(nodes))
                             * mu.grid.cell_volume)
        return rad.interaction_energy() + pot_term
    nodes = mu.grid.node_array()
    pot_term = float(np.sum(mu.density * V.value(nodes)) * mu.grid.cell_volume)
    return grid_interaction_energy(mu.grid, mu.density) + pot_term


# ---------------------------------------------------------------------------
# radial solver
# ---------------------------------------------------------------------------

def solve_equilibrium_radial(V: Potential, d: int, grid: Optional[Grid] = None,
                             r_max: float = 64.0) -> EquilibriumMeasure:
    """Equilibrium measure for radial V with Lap V > 0 near the origin.

    The candidate density Lap(V)/(2 c_d) is integrated over growing balls
    until it carries unit mass; the Robin constant follows from matching the
    exterior Coulomb tail at the support edge.
    """
    from scipy.optimize import brentq

    check_dimension(d)
    k = space_constants(d)
    surf = 2.0 * math.pi if d == 2 else 4.0 * math.pi

    def point(r):
        x = np.zeros((1, d))
        x[0, 0] = r
        return x

    def mass(R):
        if R <= 0.0:
            return 0.0
        val, _ = quad(lambda r: V.laplacian(point(r))[0] / (2.0 * k.c)
                      * surf * r ** (d - 1), 0.0, R, **_QUAD)
        return val

    if mass(r_max) < 1.0:
        raise NoEquilibriumError(
            f"unit mass not reached inside radius {r_max}; V may not be confining"
        )
    R_star = brentq(lambda R: mass(R) - 1.0, 1e-9, r_max, xtol=1e-14, rtol=1e-15)
    c = float(coulomb_kernel_r(R_star, d) + 0.5 * V.value(point(R_star))[0])

    radial = RadialEquilibrium(d=d, V=V, radius=float(R_star), robin_constant=c,
                               center=np.zeros(d))
    if grid is None:
        half = 1.5 * R_star
        m = 121 if d == 3 else 181
        grid = Grid(d=d, lo=tuple(-half for _ in range(d)),
                    h=2.0 * half / (m - 1), shape=tuple(m for _ in range(d)))
    nodes = grid.node_array()
    r = np.linalg.norm(nodes, axis=-1)
    density = radial.density_r(r)
    support = density > 0.0
    return EquilibriumMeasure(
        grid=grid, density=density, support=support, robin_constant=c,
        potential_values=radial.potential_r(r), radial=radial,
        solver_info={"solver": "radial", "support_radius": float(R_star)},
    )


# ---------------------------------------------------------------------------
# obstacle solver
# ---------------------------------------------------------------------------

def _laplacian_interior(h_arr: np.ndarray, h: float, d: int) -> np.ndarray:
    """Discrete -Laplacian at interior nodes (same shape, boundary zeroed)."""
    out = np.zeros_like(h_arr)
    core = tuple(slice(1, -1) for _ in range(d))
    acc = -2.0 * d * h_arr[core]
    for ax in range(d):
        lo = tuple(slice(1, -1) if a != ax else slice(0, -2) for a in range(d))
        hi = tuple(slice(1, -1) if a != ax else slice(2, None) for a in range(d))
        acc = acc + h_arr[lo] + h_arr[hi]
    out[core] = -acc / (h * h)
    return out


def _psor_sweeps(h_arr, phi, grid: Grid, omega: float, sweeps: int,
                 red_mask, black_mask):
    """Projected red-black SOR sweeps for the Laplace obstacle problem."""
    h2 = grid.h * grid.h
    d = grid.d
    core = tuple(slice(1, -1) for _ in range(d))
    for _ in range(sweeps):
        for mask in (red_mask, black_mask):
            nb = np.zeros_like(h_arr[core])
            for ax in range(d):
                lo = tuple(slice(1, -1) if a != ax else slice(0, -2) for a in range(d))
                hi = tuple(slice(1, -1) if a != ax else slice(2, None) for a in range(d))
                nb += h_arr[lo] + h_arr[hi]
            gs = nb / (2.0 * d)
            upd = np.where(mask, np.maximum(phi[core],
                                            (1.0 - omega) * h_arr[core] + omega * gs),
                           h_arr[core])
            h_arr[core] = upd
    return h_arr


class _ObstacleLevel:
    """One grid level of the obstacle solve: PSOR + mass iteration on c."""

    def __init__(self, V: Potential, grid: Grid, tol: float, omega: Optional[float],
                 max_sweeps: int):
        self.grid = grid
        self.d = grid.d
        self.k = space_constants(grid.d)
        self.nodes = grid.node_array()
        self.Vvals = V.value(self.nodes)
        m_min = min(grid.shape)
        self.omega = omega if omega is not None else 2.0 / (1.0 + math.sin(math.pi / m_min))
        self.tol = tol
        self.max_sweeps = max_sweeps
        self.core = tuple(slice(1, -1) for _ in range(self.d))
        idx = np.indices(tuple(m - 2 for m in grid.shape)).sum(axis=0)
        self.red = idx % 2 == 0
        self.black = ~self.red
        self.boundary = np.ones(grid.shape, dtype=bool)
        self.boundary[self.core] = False
        # monopole boundary data centered at the potential minimum
        x0 = self.nodes.reshape(-1, self.d)[np.argmin(self.Vvals)]
        rbc = np.maximum(np.linalg.norm(self.nodes - x0, axis=-1), grid.h)
        self.h_bc = coulomb_kernel_r(rbc, self.d)

    def recover_density(self, h_arr, phi):
        # the projection writes phi bit-for-bit at contact nodes, so exact
        # comparison separates the coincidence set from PDE-region noise
        neglap = _laplacian_interior(h_arr, self.grid.h, self.d)
        dens = np.maximum(neglap, 0.0) / self.k.c
        contact = h_arr - phi <= 1e-13 * np.maximum(1.0, np.abs(phi))
        contact[self.boundary] = False
        dens[~contact] = 0.0
        return dens

    def solve_for_c(self, c, h_start, tol=None, sweeps_block=40):
        phi = -0.5 * self.Vvals + c
        h_cur = np.maximum(np.array(h_start), phi)
        h_cur[self.boundary] = self.h_bc[self.boundary]
        tol = self.tol if tol is None else tol
        resid = math.inf
        for _ in range(max(1, self.max_sweeps // sweeps_block)):
            prev = h_cur[self.core].copy()
            _psor_sweeps(h_cur, phi, self.grid, self.omega, sweeps_block,
                         self.red, self.black)
            resid = float(np.max(np.abs(h_cur[self.core] - prev)))
            if resid < tol:
                break
        else:
            raise ObstacleSolverError(
                f"projected SOR stalled at residual {resid:.3e} (tol {tol:.1e})",
                residual=resid)
        dens = self.recover_density(h_cur, phi)
        return h_cur, dens, float(np.sum(dens) * self.grid.cell_volume)

    def mass_solve(self, c0, c_delta, h_start, mass_tol, slope_hint=None):
        """Root-find mass(c) = 1 near c0; returns (c, h, dens, slope).

        Safeguarded secant on the monotone map c -> mass(c).  Intermediate
        solves run at a relaxed PSOR tolerance; the accepted c gets a final
        full-tolerance solve.
        """
        tol_inner = max(self.tol, 3e-8)
        slope = slope_hint
        c_cur = c0
        h_cur, dens, m = self.solve_for_c(c_cur, h_start, tol=tol_inner)
        f_cur = m - 1.0
        lo = hi = None  # bracketing values (c, f) seen so far
        for _ in range(60):
            if abs(f_cur) < 0.5 * mass_tol:
                break
            if f_cur > 0.0 and (hi is None or c_cur < hi[0]):
                hi = (c_cur, f_cur)
            if f_cur < 0.0 and (lo is None or c_cur > lo[0]):
                lo = (c_cur, f_cur)
            if slope is not None and slope > 0.0:
                step = -f_cur / slope
                step = math.copysign(min(abs(step), 4.0 * max(c_delta, 0.25)), step)
                c_next = c_cur + step
            else:
                c_next = c_cur + (c_delta if f_cur < 0.0 else -c_delta)
            if lo is not None and hi is not None:
                # keep iterates inside the bracket (bisect on violation)
                if not (lo[0] < c_next < hi[0]):
                    c_next = 0.5 * (lo[0] + hi[0])
            h_cur, dens, m = self.solve_for_c(c_next, h_cur, tol=tol_inner)
            f_next = m - 1.0
            if abs(c_next - c_cur) > 0.0 and f_next != f_cur:
                slope = (f_next - f_cur) / (c_next - c_cur)
            c_cur, f_cur = c_next, f_next
        else:
            raise ObstacleSolverError(
                f"mass iteration did not reach |mass - 1| < {mass_tol}; "
                f"last {1.0 + f_cur!r}", residual=abs(f_cur))
        # polish at full tolerance
        h_cur, dens, m = self.solve_for_c(c_cur, h_cur, tol=self.tol)
        if abs(m - 1.0) > mass_tol:
            # one slope-corrected retry at full tolerance
            if slope and slope > 0.0:
                c_cur -= (m - 1.0) / slope
            h_cur, dens, m = self.solve_for_c(c_cur, h_cur, tol=self.tol)
            if abs(m - 1.0) > mass_tol:
                raise ObstacleSolverError(
                    f"mass iteration did not reach |mass - 1| < {mass_tol}; "
                    f"final {m!r}", residual=abs(m - 1.0))
        return c_cur, h_cur, dens, slope


def _coarsen_grid(grid: Grid) -> Optional[Grid]:
    if any((m - 1) % 2 != 0 for m in grid.shape) or min(grid.shape) < 33:
        return None
    return Grid(d=grid.d, lo=grid.lo, h=2.0 * grid.h,
                shape=tuple((m - 1) // 2 + 1 for m in grid.shape))


def solve_equilibrium_obstacle(V: Potential, grid: Grid, tol: float = 1e-9,
                               omega: Optional[float] = None,
                               max_sweeps: int = 40000,
                               mass_tol: float = 1e-6,
                               bc_rounds: int = 2) -> EquilibriumMeasure:
    """Grid equilibrium measure via the obstacle problem for h_mu0.

    Inner loop: projected red-black SOR (over-relaxed) for h >= phi = -V/2 + c
    with Dirichlet data on the box boundary.  Outer loop: monotone root find
    on c to enforce unit mass, plus a refresh of the boundary data from the
    recovered measure.  A coarse-to-fine grid cascade warm-starts both h and
    the Robin constant, which is what makes h = 0.02 boxes affordable.
    """
    check_dimension(grid.d)

    # grid cascade, coarsest first
    levels = [grid]
    while True:
        coarse = _coarsen_grid(levels[-1])
        if coarse is None:
            break
        levels.append(coarse)
    levels.reverse()

    c = None
    c_delta = None
    h_prev = None
    prev_level = None
    slope = None
    for li, g in enumerate(levels):
        level = _ObstacleLevel(V, g, tol=tol, omega=omega, max_sweeps=max_sweeps)
        if h_prev is None:
            h_start = np.array(level.h_bc)
            c0 = float(np.min(0.5 * level.Vvals) + 1.0)
            delta = 0.5 * max(1.0, abs(c0))
        else:
            from scipy.interpolate import RegularGridInterpolator

            interp = RegularGridInterpolator(tuple(prev_level.grid.axes()), h_prev,
                                             method="linear", bounds_error=False,
                                             fill_value=None)
            h_start = interp(level.nodes.reshape(-1, g.d)).reshape(g.shape)
            c0, delta = c, c_delta
        rounds = bc_rounds if li == len(levels) - 1 else 1
        for round_ in range(rounds):
            c_new, h_arr, dens, slope = level.mass_solve(c0, delta, h_start,
                                                         mass_tol, slope_hint=slope)
            if round_ < rounds - 1:
                level.h_bc = np.where(level.boundary,
                                      grid_potential(g, dens), level.h_bc)
                h_start = h_arr
                c0, delta = c_new, max(8.0 * abs(c_new - c0), 1e-4)
        c_delta = max(8.0 * abs(c_new - (c if c is not None else c_new)), 1e-4)
        c = c_new
        h_prev = h_arr
        prev_level = level

    support = dens > 1e-8 * max(dens.max(), 1e-300)
    info = {"solver": "obstacle", "omega": prev_level.omega,
            "bc_rounds": bc_rounds, "levels": len(levels),
            "mass": float(np.sum(dens) * grid.cell_volume), "robin_constant": c}
    return EquilibriumMeasure(grid=grid, density=dens, support=support,
                              robin_constant=float(c), potential_values=h_prev,
                              radial=None, solver_info=info)


def zeta_potential(mu0: EquilibriumMeasure, V: Potential,
                   tol: float = 1e-6) -> EffectivePotential:
    """zeta = h_mu0 + V/2 - c on the grid; zero on the support, >= 0 outside."""
    grid = mu0.grid
    nodes = grid.node_array()
    if mu0.radial is not None:
        r = np.linalg.norm(nodes - mu0.radial.center, axis=-1)
        hvals = mu0.radial.potential_r(r)
    elif mu0.potential_values is not None:
        hvals = mu0.potential_values
    else:
        hvals = grid_potential(grid, mu0.density)
    zeta = hvals + 0.5 * V.value(nodes) - mu0.robin_constant
    min_val = float(zeta.min())
    on_support = float(np.max(np.abs(zeta[mu0.support]))) if mu0.support.any() else 0.0
    return EffectivePotential(grid=grid, values=zeta, min_value=min_val,
                              max_on_support=on_support)


def zeta_at_points(mu0: EquilibriumMeasure, V: Potential, points) -> np.ndarray:
    """zeta evaluated off-grid (exact for radial measures)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    h = mu0.potential_at(points)
    return h + 0.5 * V.value(points) - mu0.robin_constant


# ---------------------------------------------------------------------------
# finite-temperature mean-field density
# ---------------------------------------------------------------------------

def solve_mu_beta(V: Potential, n: int, beta: float, grid: Grid,
                  damping: float = 0.5, tol: float = 1e-8,
                  max_iter: int = 2000) -> EquilibriumMeasure:
    """Minimizer of E[mu] + 2/(n beta) int mu log mu by damped fixed point.

    Iterates mu <- normalize(exp(-(n beta / 2)(2 h_mu + V))) with linear
    damping; the returned density is strictly positive on the grid.
    """
    if n * beta <= 0.0:
        raise ValueError("n * beta must be positive")
    nodes = grid.node_array()
    Vvals = V.value(nodes)
    nb = n * beta

    logmu = -0.5 * nb * Vvals
    logmu -= logmu.max()
    mu = np.exp(logmu)
    mu /= np.sum(mu) * grid.cell_volume

    t = damping
    best_resid = math.inf
    best_mu = mu
    stall = 0
    for it in range(max_iter):
        h_mu = grid_potential(grid, mu)
        target_log = -0.5 * nb * (2.0 * h_mu + Vvals)
        target_log -= target_log.max()
        target = np.exp(target_log)
        target /= np.sum(target) * grid.cell_volume

        # variational residual: 2 h + V + (2/(n beta)) log mu should be flat
        expr = 2.0 * h_mu + Vvals + (2.0 / nb) * np.log(np.maximum(mu, 1e-300))
        mean = float(np.sum(expr * mu) * grid.cell_volume)
        resid = float(np.max(np.abs(expr - mean) * (mu > 1e-8 * mu.max())))
        if resid < tol:
            break
        if resid < best_resid * 0.9999:
            best_resid = resid
            best_mu = mu
            stall = 0
        else:
            stall += 1
            if stall > 20:
                # oscillation: restart from the best iterate, damp harder
                t *= 0.5
                mu = best_mu
                stall = 0
                if t < 1e-3:
                    raise MuBetaError(
                        f"mu_beta iteration stalled at residual {resid:.3e} "
                        f"even at damping {t:.1e}; refine the grid or tolerance")
                continue
        mu = (1.0 - t) * mu + t * target
        mu /= np.sum(mu) * grid.cell_volume
    else:
        raise MuBetaError(
            f"mu_beta iteration did not converge below {tol} in {max_iter} steps; "
            "try a stronger damping (smaller damping parameter)")

    support = mu > 0.0
    # Robin-like constant: mu-weighted mean of h + V/2 over the bulk
    h_mu = grid_potential(grid, mu)
    c_eff = float(np.sum((h_mu + 0.5 * Vvals) * mu) * grid.cell_volume)
    return EquilibriumMeasure(grid=grid, density=mu, support=support,
                              robin_constant=c_eff, potential_values=h_mu,
                              radial=None,
                              solver_info={"solver": "mu_beta", "residual": resid,
                                           "iterations": it + 1,
                                           "n_beta": nb})


def mean_field_free_energy(mu: EquilibriumMeasure, V: Potential, n: int,
                           beta: float) -> float:
    """F[mu] = E[mu] + 2/(n beta) int mu log mu."""
    return mf_energy(mu, V) + 2.0 / (n * beta) * mu.entropy()
