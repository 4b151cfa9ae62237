import math

import numpy as np
import pytest
from scipy.integrate import quad

from coulombgas import core
from coulombgas.equilibrium import quadratic_potential

from conftest import separated_config


def test_kernel_values():
    assert core.coulomb_kernel(np.array([1.0, 0.0, 0.0]), 3) == 1.0
    assert core.coulomb_kernel(np.array([1.0, 0.0]), 2) == 0.0
    assert core.coulomb_kernel(np.array([math.e, 0.0]), 2) == pytest.approx(-1.0, abs=1e-15)


def test_kernel_rejects_origin():
    with pytest.raises(ValueError):
        core.coulomb_kernel(np.zeros(2), 2)
    with pytest.raises(ValueError):
        core.coulomb_kernel_r(0.0, 3)


def test_dimension_validation():
    with pytest.raises(ValueError):
        core.check_dimension(4)
    with pytest.raises(ValueError):
        core.space_constants(1)


# --- smeared potential -----------------------------------------------------

def test_smeared_potential_exterior_is_coulomb():
    assert core.smeared_potential(2.0, 1.0, 3) == pytest.approx(0.5, abs=1e-15)
    assert core.smeared_potential(3.0, 1.0, 2) == pytest.approx(-math.log(3.0))


def test_smeared_potential_center_values():
    # radial Poisson solve for the uniform ball charge
    assert core.smeared_potential(0.0, 1.0, 3) == pytest.approx(1.5, abs=1e-14)
    assert core.smeared_potential(0.0, 1.0, 2) == pytest.approx(0.5, abs=1e-14)


@pytest.mark.parametrize("d", [2, 3])
def test_smeared_potential_monte_carlo_oracle(d):
    # w * (uniform ball) at a few radii against Monte Carlo integration
    rng = np.random.default_rng(17)
    m = 200000
    u = rng.normal(size=(m, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    ball = u * (rng.random(m) ** (1.0 / d))[:, None]
    for r in (0.0, 0.4, 0.8, 1.5):
        x = np.zeros(d)
        x[0] = r
        mc = float(np.mean(core.coulomb_kernel(ball - x, d)))
        val = core.smeared_potential(r, 1.0, d)
        assert val == pytest.approx(mc, abs=5e-3)


def test_smeared_potential_continuity_at_edge():
    for d in (2, 3):
        lo = core.smeared_potential(1.0 - 1e-12, 1.0, d)
        hi = core.smeared_potential(1.0 + 1e-12, 1.0, d)
        assert lo == pytest.approx(hi, abs=1e-10)


# --- pair energies ----------------------------------------------------------

def test_pair_energy_newton_exact():
    x = np.zeros(3)
    y = np.array([1.0, 0.0, 0.0])
    assert core.smeared_pair_energy(x, y, 0.1, 3) == 1.0


def test_pair_energy_self_values():
    # self-energy of the uniform ball: radial quadrature oracles
    oracle3, _ = quad(lambda r: (3 - r * r) / 2 * 3 * r * r, 0, 1,
                      epsabs=1e-13, epsrel=1e-13)
    oracle2, _ = quad(lambda r: (1 - r * r) / 2 * 2 * r, 0, 1,
                      epsabs=1e-13, epsrel=1e-13)
    assert oracle3 == pytest.approx(1.2, abs=1e-13)
    assert oracle2 == pytest.approx(0.25, abs=1e-13)
    z2, z3 = np.zeros(2), np.zeros(3)
    assert core.smeared_pair_energy(z3, z3, 1.0, 3) == pytest.approx(1.2, abs=1e-10)
    assert core.smeared_pair_energy(z2, z2, 1.0, 2) == pytest.approx(0.25, abs=1e-10)


def test_newton_exactness_eta_sweep():
    rng = np.random.default_rng(3)
    for d in (2, 3):
        for eta in 10.0 ** np.linspace(-3, 0, 7):
            u = rng.normal(size=d)
            u /= np.linalg.norm(u)
            s = 2.0 * eta * 1.0001
            got = core.smeared_pair_energy(np.zeros(d), s * u, eta, d)
            assert got == pytest.approx(float(core.coulomb_kernel_r(s, d)),
                                        abs=1e-10)


def test_monotone_domination():
    # smeared pair energy never exceeds the point kernel
    rng = np.random.default_rng(4)
    for d in (2, 3):
        for _ in range(40):
            eta = float(10.0 ** rng.uniform(-1.5, 0))
            s = float(rng.uniform(0.05, 2.5) * eta)
            u = rng.normal(size=d)
            u /= np.linalg.norm(u)
            val = core.smeared_pair_energy(np.zeros(d), s * u, eta, d)
            assert val <= float(core.coulomb_kernel_r(s, d)) + 1e-12


def test_two_radius_pair_energy_symmetry():
    x, y = np.zeros(2), np.array([0.6, 0.0])
    a = core.smeared_pair_energy(x, y, 0.5, 2, eta2=0.3)
    b = core.smeared_pair_energy(y, x, 0.3, 2, eta2=0.5)
    assert a == pytest.approx(b, abs=1e-11)


def test_self_energy_scaling():
    for eta in (0.1, 0.25, 0.5, 1.0):
        assert core.self_energy(eta, 3) == pytest.approx(1.2 / eta, rel=1e-13)
        assert core.self_energy(eta, 2) == pytest.approx(-math.log(eta) + 0.25,
                                                         rel=1e-13)
    assert core.self_energy(0.5, 3) == pytest.approx(2.4)
    assert core.self_energy(0.5, 2) == pytest.approx(math.log(2) + 0.25)


def test_self_energy_matches_pair_quadrature():
    for d in (2, 3):
        for eta in (0.2, 0.7, 1.0):
            z = np.zeros(d)
            assert core.self_energy(eta, d) == pytest.approx(
                core.smeared_pair_energy(z, z, eta, d), abs=1e-10)


def test_space_constants():
    k2 = core.space_constants(2)
    k3 = core.space_constants(3)
    assert k2.c == pytest.approx(2 * math.pi)
    assert k3.c == pytest.approx(4 * math.pi)
    assert k2.kappa == k2.c
    assert k2.gamma2 == pytest.approx(2 * math.pi * 0.25)
    assert k3.kappa == pytest.approx(4 * math.pi * 1.2)
    assert k3.gamma2 == 0.0


# --- Hamiltonian ------------------------------------------------------------

def test_hamiltonian_single_point():
    V = quadratic_potential(1.0, 2)
    cfg = core.Configuration(2, np.array([[1.0, 0.0]]))
    assert core.hamiltonian(cfg, V) == pytest.approx(1.0)


def test_hamiltonian_two_points():
    V0 = quadratic_potential(0.0, 3)
    cfg = core.Configuration(3, np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]))
    assert core.hamiltonian(cfg, V0) == pytest.approx(2.0)


def test_hamiltonian_brute_force_oracle():
    rng = np.random.default_rng(11)
    for d in (2, 3):
        V = quadratic_potential(1.3, d)
        cfg = separated_config(rng, 9, d, 1.0, 1e-3)
        brute = 0.0
        for i in range(9):
            for j in range(9):
                if i != j:
                    brute += float(core.coulomb_kernel(
                        cfg.points[i] - cfg.points[j], d))
        brute += 9 * float(np.sum(V.value(cfg.points)))
        assert core.hamiltonian(cfg, V) == pytest.approx(brute, rel=1e-12)


def test_hamiltonian_permutation_invariance():
    rng = np.random.default_rng(12)
    V = quadratic_potential(1.0, 2)
    cfg = separated_config(rng, 12, 2, 1.0, 1e-3)
    base = core.hamiltonian(cfg, V)
    for _ in range(5):
        perm = rng.permutation(12)
        assert core.hamiltonian(core.Configuration(2, cfg.points[perm]), V) \
            == pytest.approx(base, rel=1e-13)


def test_hamiltonian_coincident_points_error():
    V = quadratic_potential(1.0, 2)
    pts = np.array([[0.0, 0.0], [0.5, 0.5], [0.0, 0.0]])
    with pytest.raises(core.CoincidentPointsError) as err:
        core.hamiltonian(core.Configuration(2, pts), V)
    assert (0, 2) in err.value.pairs


# --- gradient ---------------------------------------------------------------

def test_gradient_symmetric_pair():
    V0 = quadratic_potential(0.0, 2)
    cfg = core.Configuration(2, np.array([[0.4, 0.1], [-0.4, -0.1]]))
    g = core.hamiltonian_gradient(cfg, V0)
    assert np.allclose(g[0], -g[1], atol=1e-14)


def test_gradient_single_point_potential_term():
    V = quadratic_potential(1.0, 2)
    cfg = core.Configuration(2, np.array([[1.0, 0.0]]))
    g = core.hamiltonian_gradient(cfg, V)
    assert np.allclose(g, [[2.0, 0.0]], atol=1e-14)


@pytest.mark.parametrize("d", [2, 3])
def test_gradient_finite_difference(d):
    rng = np.random.default_rng(13 + d)
    V = quadratic_potential(0.7, d)
    for _ in range(20):
        n = int(rng.integers(3, 10))
        cfg = separated_config(rng, n, d, 1.0, 0.1)
        g = core.hamiltonian_gradient(cfg, V)
        h = 1e-6
        num = np.zeros_like(g)
        for i in range(n):
            for a in range(d):
                for sgn in (1.0, -1.0):
                    pts = cfg.points.copy()
                    pts[i, a] += sgn * h
                    num[i, a] += sgn * core.hamiltonian(
                        core.Configuration(d, pts), V)
        num /= 2 * h
        assert np.max(np.abs(num - g)) / max(1.0, np.max(np.abs(g))) < 1e-6


def test_blowup_scale_type():
    s = core.SmearingScale(eta=0.5, n=16, d=2)
    assert s.ell == pytest.approx(0.125)
    with pytest.raises(ValueError):
        core.SmearingScale(eta=1.5, n=16, d=2)
