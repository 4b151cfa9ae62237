import math

import numpy as np
import pytest

from coulombgas import equilibrium as eq


def test_unit_cell_kernel_average_monte_carlo():
    rng = np.random.default_rng(1)
    m = 2_000_000
    for d, tol in ((2, 2e-3), (3, 3e-3)):
        u = rng.random((m, d))
        v = rng.random((m, d))
        r = np.linalg.norm(u - v, axis=1)
        mc = float(np.mean(1.0 / r if d == 3 else -np.log(r)))
        assert eq.unit_cell_kernel_average(d) == pytest.approx(mc, abs=tol)


# --- radial solver ----------------------------------------------------------

def test_radial_quadratic_d2(radial_measures):
    mu = radial_measures[2]
    assert mu.radial.radius == pytest.approx(1.0, abs=1e-12)
    assert mu.radial.density_r(0.5) == pytest.approx(1 / math.pi, rel=1e-13)
    assert mu.robin_constant == pytest.approx(0.5, abs=1e-13)
    assert mu.mass() == pytest.approx(1.0, abs=1e-10)


def test_radial_quadratic_d3(radial_measures):
    mu = radial_measures[3]
    assert mu.radial.radius == pytest.approx(1.0, abs=1e-12)
    assert mu.radial.density_r(0.2) == pytest.approx(3 / (4 * math.pi), rel=1e-13)
    assert mu.robin_constant == pytest.approx(1.5, abs=1e-13)


def test_radial_scaled_quadratic():
    V = eq.quadratic_potential(2.0, 2)
    mu = eq.solve_equilibrium_radial(V, 2)
    assert mu.radial.density_r(0.1) == pytest.approx(2 / math.pi, rel=1e-12)
    assert mu.radial.radius == pytest.approx(2 ** -0.5, rel=1e-12)


def test_radial_no_equilibrium_error():
    # Laplacian-free potential cannot reach unit mass
    flat = eq.Potential(value=lambda x: np.zeros(np.asarray(x).shape[:-1]),
                        gradient=lambda x: np.zeros_like(np.asarray(x)),
                        laplacian=lambda x: np.zeros(np.asarray(x).shape[:-1]))
    with pytest.raises(eq.NoEquilibriumError):
        eq.solve_equilibrium_radial(flat, 2, r_max=8.0)


# --- mean-field energy ------------------------------------------------------

def test_mf_energy_uniform_disk_interaction(radial_measures, quad_potentials):
    # D(mu, mu) = 1/4 for the uniform unit disk, E = 1/4 + 1/2
    mu = radial_measures[2]
    assert mu.radial.interaction_energy() == pytest.approx(0.25, abs=1e-12)
    assert eq.mf_energy(mu, quad_potentials[2]) == pytest.approx(0.75, abs=1e-12)


def test_mf_energy_d3(radial_measures, quad_potentials):
    assert eq.mf_energy(radial_measures[3], quad_potentials[3]) \
        == pytest.approx(1.8, abs=1e-12)


def test_mf_energy_constant_shift(radial_measures):
    mu = radial_measures[2]
    base = eq.quadratic_potential(1.0, 2)
    shifted = eq.Potential(
        value=lambda x: base.value(x) + 3.0,
        gradient=base.gradient, laplacian=base.laplacian, radial=True)
    assert eq.mf_energy(mu, shifted) == pytest.approx(
        eq.mf_energy(mu, base) + 3.0, abs=1e-10)


def test_mf_energy_rejects_unnormalized(radial_measures, quad_potentials):
    mu = radial_measures[2]
    bad = eq.EquilibriumMeasure(grid=mu.grid, density=2 * mu.density,
                                support=mu.support, robin_constant=0.0)
    with pytest.raises(ValueError):
        eq.mf_energy(bad, quad_potentials[2])


def test_grid_interaction_energy_vs_radial(radial_measures):
    # grid quadrature with the self-cell correction against the exact 1/4
    g = eq.Grid.centered(2, 1.4, 0.02)
    nodes = g.node_array()
    r = np.linalg.norm(nodes, axis=-1)
    dens = np.where(r <= 1.0, 1 / math.pi, 0.0)
    dens /= np.sum(dens) * g.cell_volume
    assert eq.grid_interaction_energy(g, dens) == pytest.approx(0.25, abs=2e-3)


def test_mf_energy_convexity(radial_measures, quad_potentials):
    # E is convex: midpoint energy no larger than the mean of the endpoints
    rng = np.random.default_rng(8)
    g = eq.Grid.centered(2, 1.6, 0.05)
    nodes = g.node_array()
    V = quad_potentials[2]
    for _ in range(3):
        c1, c2 = rng.uniform(-0.3, 0.3, size=(2, 2))
        d1 = np.exp(-np.sum((nodes - c1) ** 2, axis=-1) / 0.4)
        d2 = np.exp(-np.sum((nodes - c2) ** 2, axis=-1) / 0.2)
        d1 /= np.sum(d1) * g.cell_volume
        d2 /= np.sum(d2) * g.cell_volume
        def measure(dens):
            return eq.EquilibriumMeasure(grid=g, density=dens,
                                         support=dens > 0,
                                         robin_constant=0.0)
        e1 = eq.mf_energy(measure(d1), V)
        e2 = eq.mf_energy(measure(d2), V)
        em = eq.mf_energy(measure(0.5 * (d1 + d2)), V)
        assert em <= 0.5 * (e1 + e2) + 1e-10


# --- obstacle solver ---------------------------------------------------------

def test_obstacle_matches_radial_quadratic_d2(quad_potentials):
    g = eq.Grid.centered(2, 1.3, 0.05)
    mu = eq.solve_equilibrium_obstacle(quad_potentials[2], g, tol=1e-9)
    nodes = g.node_array()
    exact = np.where(np.linalg.norm(nodes, axis=-1) <= 1.0, 1 / math.pi, 0.0)
    l1 = np.sum(np.abs(mu.density - exact)) * g.cell_volume
    assert l1 < 0.03
    assert mu.mass() == pytest.approx(1.0, abs=1e-6)
    assert mu.robin_constant == pytest.approx(0.5, abs=5e-3)


def cell_averaged_density(grid, density_fn, sub=4):
    """Cell averages of an analytic density: the honest L1 reference."""
    nodes = grid.node_array().reshape(-1, grid.d)
    offs = (np.arange(sub) + 0.5) / sub - 0.5
    mesh = np.meshgrid(*([offs] * grid.d), indexing="ij")
    shifts = np.stack([m.ravel() for m in mesh], axis=-1) * grid.h
    pts = nodes[:, None, :] + shifts[None, :, :]
    vals = density_fn(pts.reshape(-1, grid.d)).reshape(len(nodes), -1)
    return vals.mean(axis=1).reshape(grid.shape)


def test_obstacle_quartic_density_profile():
    # V = |x|^4: support a ball, density 16 |x|^2 / (4 pi) on it
    V = eq.radial_power_potential(4.0, 1.0, 2)
    mu_rad = eq.solve_equilibrium_radial(V, 2)
    R = mu_rad.radial.radius
    # radial oracle: mass of 16 r^2/(4 pi) ball = 2 R^4 = 1
    assert R == pytest.approx((0.5) ** 0.25, rel=1e-10)
    g = eq.Grid.centered(2, 1.1, 0.02)
    mu = eq.solve_equilibrium_obstacle(V, g, tol=1e-9)

    def dens(p):
        r = np.linalg.norm(p, axis=-1)
        return np.where(r <= R, 16 * r ** 2 / (4 * math.pi), 0.0)

    exact = cell_averaged_density(g, dens)
    l1 = np.sum(np.abs(mu.density - exact)) * g.cell_volume
    assert l1 < 0.02
    # density increases radially on the support (sampled)
    r = np.linalg.norm(g.node_array(), axis=-1)
    interior = mu.density[mu.support]
    rr = r[mu.support]
    order = np.argsort(rr)
    coarse = np.array_split(interior[order], 6)
    means = [c.mean() for c in coarse]
    assert all(b >= a - 1e-3 for a, b in zip(means, means[1:]))


def test_obstacle_translation_covariance(quad_potentials):
    a = np.array([0.35, -0.2])
    V = eq.shifted_potential(eq.quadratic_potential(1.0, 2), a)
    g0 = eq.Grid.centered(2, 1.3, 0.05)
    g1 = eq.Grid(d=2, lo=(g0.lo[0] + a[0], g0.lo[1] + a[1]), h=g0.h,
                 shape=g0.shape)
    mu0 = eq.solve_equilibrium_obstacle(quad_potentials[2], g0, tol=1e-9)
    mu1 = eq.solve_equilibrium_obstacle(V, g1, tol=1e-9)
    assert np.max(np.abs(mu0.density - mu1.density)) < 1e-6
    assert mu1.robin_constant == pytest.approx(mu0.robin_constant, abs=1e-6)


def test_obstacle_variational_inequality(quad_potentials):
    g = eq.Grid.centered(2, 1.3, 0.05)
    mu = eq.solve_equilibrium_obstacle(quad_potentials[2], g, tol=1e-9)
    zeta = eq.zeta_potential(mu, quad_potentials[2])
    assert zeta.min_value >= -1e-9
    assert zeta.max_on_support <= 1e-6


# --- zeta --------------------------------------------------------------------

def test_zeta_radial_exact(radial_measures, quad_potentials):
    mu = radial_measures[2]
    zeta = eq.zeta_potential(mu, quad_potentials[2])
    assert zeta.min_value >= -1e-12
    assert zeta.max_on_support <= 1e-12
    # exterior formula: zeta(r) = -log r + r^2/2 - c
    pts = np.array([[2.0, 0.0]])
    val = eq.zeta_at_points(mu, quad_potentials[2], pts)[0]
    assert val == pytest.approx(-math.log(2.0) + 2.0 - 0.5, rel=1e-12)


def test_zeta_grows_along_rays(radial_measures, quad_potentials):
    mu = radial_measures[2]
    rs = np.array([1.5, 2.5, 4.0, 8.0])
    pts = np.stack([rs, np.zeros_like(rs)], axis=-1)
    vals = eq.zeta_at_points(mu, quad_potentials[2], pts)
    assert np.all(np.diff(vals) > 0)


# --- finite temperature -----------------------------------------------------

def test_mu_beta_approaches_mu0(quad_potentials):
    V = quad_potentials[2]
    g = eq.Grid.centered(2, 1.8, 0.05)
    nodes = g.node_array()
    dens0 = np.where(np.linalg.norm(nodes, axis=-1) <= 1.0, 1 / math.pi, 0.0)
    l1_prev = math.inf
    for nb in (5.0, 50.0, 500.0):
        mu = eq.solve_mu_beta(V, 1, nb, g, tol=1e-8)
        l1 = np.sum(np.abs(mu.density - dens0)) * g.cell_volume
        assert l1 < l1_prev
        l1_prev = l1
    assert l1_prev < 0.1


def test_mu_beta_small_nb_limit(quad_potentials):
    # n beta -> 0: density approaches normalize(exp(-(n beta/2) V))
    V = quad_potentials[2]
    g = eq.Grid.centered(2, 6.0, 0.1)
    nb = 0.05
    mu = eq.solve_mu_beta(V, 1, nb, g, tol=1e-10)
    nodes = g.node_array()
    ref = np.exp(-0.5 * nb * V.value(nodes))
    ref /= np.sum(ref) * g.cell_volume
    assert np.sum(np.abs(mu.density - ref)) * g.cell_volume < 0.05


def test_mu_beta_radial_symmetry(quad_potentials):
    g = eq.Grid.centered(2, 1.8, 0.06)
    mu = eq.solve_mu_beta(quad_potentials[2], 1, 30.0, g, tol=1e-8)
    dens = mu.density
    assert np.max(np.abs(dens - dens[::-1, :])) < 1e-8
    assert np.max(np.abs(dens - dens[:, ::-1])) < 1e-8
    assert np.max(np.abs(dens - dens.T)) < 1e-8
    assert np.all(dens > 0)


def test_mu_beta_mass(quad_potentials):
    g = eq.Grid.centered(2, 2.0, 0.08)
    mu = eq.solve_mu_beta(quad_potentials[2], 5, 4.0, g)
    assert mu.mass() == pytest.approx(1.0, abs=1e-9)
