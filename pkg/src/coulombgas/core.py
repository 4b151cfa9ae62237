"""Coulomb kernels, smeared charges and the n-body Hamiltonian.

Energies are in natural units: the pair kernel is w(x) = 1/|x| in d = 3 and
w(x) = -log|x| in d = 2, so that -Delta w = c_d * delta_0 with c_2 = 2*pi and
c_3 = 4*pi.  Point charges are smeared with the normalized indicator of a
ball, which gives closed-form potentials; the two smearing constants
(ball-ball self interaction in each dimension) are computed once by radial
quadrature and cached.

Everything here is a pure function of its arguments and safe to call
concurrently.  Pair sums use numpy's pairwise accumulation with a fixed
ordering, so results are reproducible bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad

__all__ = [
    "SUPPORTED_DIMENSIONS",
    "SpaceConstants",
    "Configuration",
    "SmearingScale",
    "CoincidentPointsError",
    "check_dimension",
    "space_constants",
    "coulomb_kernel",
    "coulomb_kernel_r",
    "kernel_gradient",
    "smeared_potential",
    "smeared_potential_gradient",
    "smeared_pair_energy",
    "self_energy",
    "ball_profile_fourier",
    "hamiltonian",
    "hamiltonian_gradient",
    "pair_energy_matrix",
    "min_separation",
]

SUPPORTED_DIMENSIONS = (2, 3)

_QUAD_OPTS = dict(epsabs=1e-13, epsrel=1e-13, limit=400)


class CoincidentPointsError(ValueError):
    """Raised when an operation requires distinct points but found duplicates."""

    def __init__(self, pairs):
        self.pairs = list(pairs)
        super().__init__(
            "coincident points (pair energy is +inf) at index pairs: "
            + ", ".join(f"({i}, {j})" for i, j in self.pairs)
        )


def check_dimension(d: int) -> int:
    if d not in SUPPORTED_DIMENSIONS:
        raise ValueError(f"dimension must be one of {SUPPORTED_DIMENSIONS}, got {d!r}")
    return int(d)


def coulomb_kernel_r(r, d: int):
    """Kernel w as a function of the separation r > 0."""
    check_dimension(d)
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0.0):
        raise ValueError("coulomb kernel is singular at zero separation")
    return 1.0 / r if d == 3 else -np.log(r)


def coulomb_kernel(x, d: int):
    """w(x) = 1/|x| (d=3) or -log|x| (d=2) for a displacement vector x."""
    x = np.asarray(x, dtype=float)
    return coulomb_kernel_r(np.linalg.norm(x, axis=-1), d)


def kernel_gradient(x, d: int):
    """Gradient of w at displacement x (vector of the same shape)."""
    check_dimension(d)
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1, keepdims=True)
    if np.any(r2 == 0.0):
        raise ValueError("kernel gradient is singular at zero separation")
    if d == 3:
        return -x / r2 ** 1.5
    return -x / r2


def smeared_potential(r, eta: float, d: int):
    """Potential of the unit charge smeared uniformly over a ball of radius eta.

    Equals w(r) outside the ball (Newton's theorem); inside it is the radial
    Poisson solution: (3*eta^2 - r^2)/(2*eta^3) in d=3 and
    -log(eta) + (1 - r^2/eta^2)/2 in d=2.  Vectorized over r >= 0.
    """
    check_dimension(d)
    if eta <= 0.0:
        raise ValueError("smearing radius eta must be positive")
    r = np.asarray(r, dtype=float)
    out = np.empty_like(r)
    inside = r < eta
    if d == 3:
        out[~inside] = 1.0 / r[~inside]
        out[inside] = (3.0 * eta * eta - r[inside] ** 2) / (2.0 * eta ** 3)
    else:
        out[~inside] = -np.log(r[~inside])
        out[inside] = -math.log(eta) + 0.5 * (1.0 - (r[inside] / eta) ** 2)
    return out if out.ndim else float(out)


def smeared_potential_gradient_r(r, eta: float, d: int):
    """Radial derivative of the smeared potential (d/dr)."""
    check_dimension(d)
    r = np.asarray(r, dtype=float)
    out = np.empty_like(r)
    inside = r < eta
    if d == 3:
        out[~inside] = -1.0 / r[~inside] ** 2
        out[inside] = -r[inside] / eta ** 3
    else:
        safe = ~inside
        out[safe] = -1.0 / r[safe]
        out[inside] = -r[inside] / eta ** 2
    return out if out.ndim else float(out)


def smeared_potential_gradient(x, eta: float, d: int):
    """Gradient (vector) of the smeared potential at displacement x."""
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    r_safe = np.where(r == 0.0, 1.0, r)
    dr = smeared_potential_gradient_r(r, eta, d)
    return np.where(r[..., None] == 0.0, 0.0, np.asarray(dr)[..., None] * x / r_safe[..., None])


def ball_profile_fourier(u, d: int):
    """Fourier transform of the normalized ball indicator at u = 2*pi*eta*|k|.

    Returns 1 at u = 0; 2*J1(u)/u in d=2 and 3*(sin u - u cos u)/u^3 in d=3.
    """
    from scipy.special import j1

    check_dimension(d)
    u = np.asarray(u, dtype=float)
    small = np.abs(u) < 1e-8
    us = np.where(small, 1.0, u)
    if d == 2:
        val = 2.0 * j1(us) / us
    else:
        val = 3.0 * (np.sin(us) - us * np.cos(us)) / us ** 3
    return np.where(small, 1.0 - u * u / (10.0 if d == 3 else 8.0), val)


# ---------------------------------------------------------------------------
# smeared pair energies
# ---------------------------------------------------------------------------

def _t_potential_primitive(t, a: float):
    """Primitive of t * smeared_potential(t, a, d=3), continuous across t = a."""
    t = np.asarray(t, dtype=float)
    inner = (6.0 * a * a * t * t - t ** 4) / (8.0 * a ** 3)
    outer = 5.0 * a / 8.0 + (t - a)
    return np.where(t <= a, inner, outer)


def _sphere_average_d3(s: float, r: float, a: float) -> float:
    """Average of the radius-a smeared potential over a sphere of radius r
    centered at distance s from the charge (d = 3)."""
    if s < 1e-14:
        return float(smeared_potential(r, a, 3))
    lo, hi = abs(s - r), s + r
    return float(_t_potential_primitive(hi, a) - _t_potential_primitive(lo, a)) / (2.0 * s * r)


def _circle_average_d2(s: float, r: float, a: float) -> float:
    """Average of the radius-a smeared potential over a circle of radius r
    centered at distance s from the charge (d = 2)."""
    if s < 1e-14:
        return float(smeared_potential(r, a, 2))

    def integrand(theta):
        rho = math.sqrt(max(s * s + r * r - 2.0 * s * r * math.cos(theta), 0.0))
        return smeared_potential(rho, a, 2)

    # the integrand has a C^1 kink where the circle crosses the ball edge
    pts = []
    cos_star = (s * s + r * r - a * a) / (2.0 * s * r)
    if -1.0 < cos_star < 1.0:
        pts.append(math.acos(cos_star))
    val, _ = quad(integrand, 0.0, math.pi, points=pts or None, **_QUAD_OPTS)
    return val / math.pi


def smeared_pair_energy(x, y, eta: float, d: int, eta2: float | None = None) -> float:
    """Coulomb interaction D of two uniformly smeared unit charges.

    The charges sit at x and y with ball radii eta and eta2 (default eta).
    For separation >= eta + eta2 this is exactly the point kernel (Newton);
    overlapping balls fall back to adaptive 1-D radial quadrature of the
    first charge's potential against the second ball's shell profile,
    accurate to ~1e-12 absolute.
    """
    check_dimension(d)
    if eta <= 0.0 or (eta2 is not None and eta2 <= 0.0):
        raise ValueError("smearing radii must be positive")
    a = float(eta)
    b = float(eta if eta2 is None else eta2)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    s = float(np.linalg.norm(x - y))
    if s >= a + b:
        return float(coulomb_kernel_r(s, d))

    if d == 3:
        def outer(r):
            return 3.0 * r * r / b ** 3 * _sphere_average_d3(s, r, a)
    else:
        def outer(r):
            return 2.0 * r / b ** 2 * _circle_average_d2(s, r, a)

    # radii where the averaging sphere touches the edge of the other ball
    pts = [t for t in (a - s, a + s, s - a) if 0.0 < t < b]
    val, _ = quad(outer, 0.0, b, points=pts or None, **_QUAD_OPTS)
    return float(val)


@lru_cache(maxsize=None)
def _ball_self_interaction(d: int) -> float:
    """D(delta^(1), delta^(1)) for the unit-ball profile, by radial quadrature."""
    if d == 3:
        val, _ = quad(lambda r: smeared_potential(r, 1.0, 3) * 3.0 * r * r, 0.0, 1.0,
                      **_QUAD_OPTS)
    else:
        val, _ = quad(lambda r: smeared_potential(r, 1.0, 2) * 2.0 * r, 0.0, 1.0,
                      **_QUAD_OPTS)
    return float(val)


@dataclass(frozen=True)
class SpaceConstants:
    """Dimension-dependent constants for the ball smearing profile.

    c: kernel normalization (-Delta w = c * delta_0), 2*pi or 4*pi.
    kappa: c_d * D(delta^(1), delta^(1)) for d >= 3, and c_2 for d = 2.
    gamma2: c_2 * D(delta^(1), delta^(1)) in d = 2, stored as 0 for d = 3.
    """

    d: int
    c: float
    kappa: float
    gamma2: float
    ball_self: float  # D(delta^(1), delta^(1))


@lru_cache(maxsize=None)
def space_constants(d: int) -> SpaceConstants:
    check_dimension(d)
    c = 2.0 * math.pi if d == 2 else 4.0 * math.pi
    d11 = _ball_self_interaction(d)
    if d == 2:
        return SpaceConstants(d=2, c=c, kappa=c, gamma2=c * d11, ball_self=d11)
    return SpaceConstants(d=3, c=c, kappa=c * d11, gamma2=0.0, ball_self=d11)


def self_energy(eta: float, d: int) -> float:
    """D(delta^(eta), delta^(eta)): (kappa/c)*w(eta) in d=3, w(eta) + gamma2/c in d=2."""
    if eta <= 0.0:
        raise ValueError("smearing radius eta must be positive")
    k = space_constants(d)
    if d == 3:
        return k.kappa / k.c / eta
    return -math.log(eta) + k.gamma2 / k.c


def renormalization_per_point(eta: float, d: int) -> float:
    """kappa_d * w(eta) + gamma2 * 1_{d=2}; equals c_d * self_energy(eta)."""
    k = space_constants(d)
    w = 1.0 / eta if d == 3 else -math.log(eta)
    return k.kappa * w + k.gamma2


# ---------------------------------------------------------------------------
# configurations and the Hamiltonian
# ---------------------------------------------------------------------------

@dataclass
class Configuration:
    """An ordered list of n points in R^d (macroscopic coordinates)."""

    d: int
    points: np.ndarray

    def __post_init__(self):
        check_dimension(self.d)
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.ndim != 2 or pts.shape[1] != self.d:
            raise ValueError(f"points must have shape (n, {self.d}), got {pts.shape}")
        if pts.shape[0] < 1:
            raise ValueError("a configuration needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("configuration coordinates must be finite")
        self.points = pts

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def copy(self) -> "Configuration":
        return Configuration(self.d, self.points.copy())

    def coincident_pairs(self, tol: float = 0.0):
        """Index pairs (i < j) at separation <= tol."""
        diff = self.points[:, None, :] - self.points[None, :, :]
        dist = np.linalg.norm(diff, axis=-1)
        iu = np.triu_indices(self.n, 1)
        hits = np.flatnonzero(dist[iu] <= tol)
        return [(int(iu[0][k]), int(iu[1][k])) for k in hits]


@dataclass(frozen=True)
class SmearingScale:
    """Linked smearing radii: eta at the blown-up scale, ell = eta * n^(-1/d)."""

    eta: float
    n: int
    d: int

    def __post_init__(self):
        if not (0.0 < self.eta <= 1.0):
            raise ValueError("eta must lie in (0, 1] for renormalized-energy use")
        check_dimension(self.d)

    @property
    def ell(self) -> float:
        return self.eta * self.n ** (-1.0 / self.d)


def _pair_distances(config: Configuration):
    diff = config.points[:, None, :] - config.points[None, :, :]
    return np.linalg.norm(diff, axis=-1)


def min_separation(config: Configuration) -> float:
    if config.n == 1:
        return math.inf
    dist = _pair_distances(config)
    iu = np.triu_indices(config.n, 1)
    return float(dist[iu].min())


def pair_energy_matrix(config: Configuration) -> np.ndarray:
    """Matrix w(x_i - x_j) with zero diagonal; raises on coincident points."""
    dist = _pair_distances(config)
    iu = np.triu_indices(config.n, 1)
    if config.n > 1 and np.any(dist[iu] == 0.0):
        raise CoincidentPointsError(config.coincident_pairs())
    out = np.zeros_like(dist)
    if config.n > 1:
        vals = coulomb_kernel_r(dist[iu], config.d)
        out[iu] = vals
        out[(iu[1], iu[0])] = vals
    return out


def hamiltonian(config: Configuration, V) -> float:
    """H_n = sum_{i != j} w(x_i - x_j) + n * sum_i V(x_i) (ordered pairs)."""
    w = pair_energy_matrix(config)
    pair_term = 2.0 * float(np.sum(w[np.triu_indices(config.n, 1)])) if config.n > 1 else 0.0
    pot_term = config.n * float(np.sum(V.value(config.points)))
    return pair_term + pot_term


def hamiltonian_gradient(config: Configuration, V) -> np.ndarray:
    """Gradient of H_n: row i is 2*sum_{j != i} grad w(x_i - x_j) + n * grad V(x_i)."""
    pts = config.points
    n, d = pts.shape
    dist = _pair_distances(config)
    iu = np.triu_indices(n, 1)
    if n > 1 and np.any(dist[iu] == 0.0):
        raise CoincidentPointsError(config.coincident_pairs())
    grad = config.n * np.asarray(V.gradient(pts), dtype=float)
    if n > 1:
        diff = pts[:, None, :] - pts[None, :, :]
        r2 = dist ** 2
        np.fill_diagonal(r2, 1.0)
        if d == 3:
            gw = -diff / (r2 ** 1.5)[..., None]
        else:
            gw = -diff / r2[..., None]
        idx = np.arange(n)
        gw[idx, idx, :] = 0.0
        grad += 2.0 * gw.sum(axis=1)
    return grad
