import math

import numpy as np
import pytest

from coulombgas import core, equilibrium as eq, splitting as sp
from coulombgas._quadrature import gauss_segments

from conftest import separated_config


# --- blow-up ------------------------------------------------------------------

def test_blow_up_examples():
    cfg1 = core.Configuration(2, np.array([[0.3, -0.2]]))
    assert np.allclose(sp.blow_up(cfg1).points, cfg1.points)
    cfg16 = core.Configuration(2, np.vstack([[1.0, 0.0]] + [[i + 2.0, 0.0] for i in range(15)]))
    assert np.allclose(sp.blow_up(cfg16).points[0], [4.0, 0.0])
    cfg8 = core.Configuration(3, np.vstack([[1.0, 1.0, 1.0]] + [[i + 2.0, 0, 0] for i in range(7)]))
    assert np.allclose(sp.blow_up(cfg8).points[0], [2.0, 2.0, 2.0])


def test_blow_up_round_trip():
    rng = np.random.default_rng(0)
    cfg = core.Configuration(3, rng.normal(size=(11, 3)))
    back = sp.blow_down(sp.blow_up(cfg))
    assert np.max(np.abs(back.points - cfg.points)) < 1e-14


# --- cross energies -----------------------------------------------------------

def test_cross_energy_matches_two_ball_quadrature(radial_measures):
    # mu0 is the uniform unit disk/ball, so D(mu0, delta_x^(l)) is a
    # two-radius smeared pair energy
    for d in (2, 3):
        mu = radial_measures[d]
        for s in (0.0, 0.4, 0.95, 1.3):
            x = np.zeros(d)
            x[0] = s
            got = sp.mu_smeared_cross_energy(mu, x, 0.25)
            want = core.smeared_pair_energy(np.zeros(d), x, 1.0, d, eta2=0.25)
            assert got == pytest.approx(want, abs=1e-11)


def test_lieb_smearing_cost_scaling(radial_measures):
    # |D(mu0, delta_x - delta_x^(l))| <= C l^2 ||mu0||_inf with stable C
    for d in (2, 3):
        mu = radial_measures[d]
        m_inf = mu.max_density()
        x = np.zeros(d)
        x[0] = 0.3
        ratios = []
        for ell in (0.2, 0.1, 0.05, 0.025):
            cost = sp.lieb_smearing_cost(mu, x, ell)
            assert cost >= 0.0
            ratios.append(cost / (ell ** 2 * m_inf))
        # fitted constant stable across the ladder once ell is small
        assert max(ratios) <= 2.0 * min(ratios) + 1e-9
        assert ratios[-1] == pytest.approx(ratios[-2], rel=0.05)


# --- smeared field energy -------------------------------------------------------

def test_smeared_field_energy_single_point(radial_measures):
    # one point at the center: c_d [D(mu,mu) - 2 D(mu, delta^(l)) + self(l)]
    for d in (2, 3):
        mu = radial_measures[d]
        k = core.space_constants(d)
        ell = 0.05
        cfg = core.Configuration(d, np.zeros((1, d)))
        got = sp.smeared_field_energy(cfg, mu, ell)
        want = k.c * (mu.radial.interaction_energy()
                      - 2.0 * sp.mu_smeared_cross_energy(mu, np.zeros(d), ell)
                      + core.self_energy(ell, d))
        assert got == pytest.approx(want, rel=1e-12)
        assert got >= 0.0


def test_smeared_field_energy_nonnegative(radial_measures):
    rng = np.random.default_rng(5)
    for _ in range(25):
        d = int(rng.integers(2, 4))
        n = int(rng.integers(1, 9))
        cfg = core.Configuration(d, rng.uniform(-1.0, 1.0, size=(n, d)))
        val = sp.smeared_field_energy(cfg, radial_measures[d], 0.1)
        assert val >= -1e-9


def test_smeared_field_energy_blowup_scaling(radial_measures):
    # int |grad h_{n,l}|^2 = n^{1-2/d} int |grad h'_{n,eta}|^2 is how the
    # blown-up J_n is assembled; check the identity via two independent sums
    rng = np.random.default_rng(6)
    for d in (2, 3):
        mu = radial_measures[d]
        n = 8
        eta = 0.5
        ell = eta * n ** (-1.0 / d)
        cfg = separated_config(rng, n, d, 0.8, 2.2 * ell)
        macro = sp.smeared_field_energy(cfg, mu, ell)
        # blown-up version computed from first principles:
        # all pair distances scale by n^{1/d}; D terms scale with the kernel
        rep = sp.onsager_split(cfg, mu, eq.quadratic_potential(1.0, d), eta)
        j_n = rep.j_n
        k = core.space_constants(d)
        blown = n * (k.c * j_n + core.renormalization_per_point(eta, d))
        assert blown == pytest.approx(n ** (2.0 / d - 1.0) * macro * k.c
                                      / k.c, rel=1e-10)


# --- the splitting --------------------------------------------------------------

@pytest.mark.parametrize("d", [2, 3])
def test_onsager_equality_separated(d, radial_measures, quad_potentials):
    rng = np.random.default_rng(40 + d)
    mu, V = radial_measures[d], quad_potentials[d]
    for _ in range(5):
        n = int(rng.integers(5, 30))
        eta = float(rng.uniform(0.2, 0.5))
        ell = eta * n ** (-1.0 / d)
        cfg = separated_config(rng, n, d, 0.9, 2.2 * ell)
        rep = sp.onsager_split(cfg, mu, V, eta)
        assert rep.equality_flag
        assert abs(rep.residual) / abs(rep.hamiltonian_value) < 1e-9
        assert rep.smearing_cost <= 1e-12


@pytest.mark.parametrize("d", [2, 3])
def test_onsager_strict_inequality_overlap(d, radial_measures, quad_potentials):
    rng = np.random.default_rng(50 + d)
    mu, V = radial_measures[d], quad_potentials[d]
    n = 10
    eta = 0.5
    ell = eta * n ** (-1.0 / d)
    cfg = separated_config(rng, n, d, 1.0, 2.2 * ell)
    pts = np.vstack([cfg.points, cfg.points[0] + 0.25 * ell])
    rep = sp.onsager_split(core.Configuration(d, pts), mu, V, eta)
    assert not rep.equality_flag
    assert rep.residual > 0.0


def test_j_n_eta_ladder_converges(radial_measures, quad_potentials):
    # J_n(eta) settles as eta -> 0 on a fixed well-separated configuration
    rng = np.random.default_rng(60)
    d = 2
    mu, V = radial_measures[d], quad_potentials[d]
    n = 12
    cfg = separated_config(rng, n, d, 0.8, 2.2 * 0.5 * n ** (-0.5))
    etas = [0.5, 0.25, 0.125, 0.0625]
    vals = [sp.onsager_split(cfg, mu, V, eta).j_n for eta in etas]
    diffs = [abs(b - a) for a, b in zip(vals, vals[1:])]
    assert diffs[1] < diffs[0]
    assert diffs[2] < diffs[1]


def test_j_n_permutation_invariant(radial_measures, quad_potentials):
    rng = np.random.default_rng(61)
    cfg = separated_config(rng, 9, 2, 0.8, 0.15)
    rep = sp.onsager_split(cfg, radial_measures[2], quad_potentials[2], 0.5)
    perm = rng.permutation(9)
    rep_p = sp.onsager_split(core.Configuration(2, cfg.points[perm]),
                             radial_measures[2], quad_potentials[2], 0.5)
    assert rep_p.j_n == pytest.approx(rep.j_n, rel=1e-12)


# --- renormalized energy ---------------------------------------------------------

@pytest.mark.parametrize("d", [2, 3])
def test_exact_splitting_identity_via_w(d, radial_measures, quad_potentials):
    # H_n - [n^2 E + 2n sum zeta - (n/2) log n] recovers the blown-up W
    rng = np.random.default_rng(70 + d)
    mu, V = radial_measures[d], quad_potentials[d]
    n = 14
    cfg = separated_config(rng, n, d, 0.85, 2.8 * 0.4 * n ** (-1.0 / d))
    west = sp.renormalized_w_global(cfg, mu, etas=(0.4, 0.2, 0.1, 0.05))
    k = core.space_constants(d)
    H = core.hamiltonian(cfg, V)
    lhs = H - n * n * eq.mf_energy(mu, V) \
        - 2.0 * n * float(np.sum(eq.zeta_at_points(mu, V, cfg.points)))
    if d == 2:
        lhs += 0.5 * n * math.log(n)
    lhs *= k.c / n ** (1.0 - 2.0 / d)
    assert abs(lhs - west.value) / abs(lhs) < 1e-3
    assert west.tolerance < 1e-3 * abs(west.value)


def test_box_w_single_point_vs_annulus_oracle():
    a = 1.0
    m = 0.25
    west = sp.renormalized_w_box(np.zeros((1, 2)), (-a, -a), (a, a), m,
                                 etas=(0.2, 0.1, 0.05, 0.025))
    box = sp.BoxPotential2D((-a, -a), (a, a))
    # direct cutoff oracle: the alpha-singularity cancels analytically into
    # the angular log integral; the rest is regular polar quadrature
    th, wt = gauss_segments(0.0, 2 * math.pi,
                            [i * math.pi / 4 for i in range(1, 8)], order=24)
    rho = a / np.maximum(np.abs(np.cos(th)), np.abs(np.sin(th)))
    term1 = float(np.sum(wt * np.log(rho)))
    alpha = 1e-7
    acc = 0.0
    for t, w in zip(th, wt):
        e = np.array([math.cos(t), math.sin(t)])
        rh = a / max(abs(math.cos(t)), abs(math.sin(t)))
        rr, wr = gauss_segments(alpha, rh, [0.01, 0.1, 0.5], order=28)
        vals = []
        for r in rr:
            z = r * e
            es = -m * box.gradient(z)
            vals.append((2.0 * float((-z / (r * r)) @ es) + float(es @ es)) * r)
        acc += w * np.sum(wr * np.asarray(vals))
    oracle = term1 + acc
    assert west.value == pytest.approx(oracle, abs=1e-3)


def test_box_w_translation_invariance():
    a = 1.0
    m = 0.25
    base = sp.renormalized_w_box(np.zeros((1, 2)), (-a, -a), (a, a), m,
                                 etas=(0.2, 0.1, 0.05))
    shift = np.array([0.37, -0.21])
    moved = sp.renormalized_w_box(shift[None, :], (-a + shift[0], -a + shift[1]),
                                  (a + shift[0], a + shift[1]), m,
                                  etas=(0.2, 0.1, 0.05))
    assert moved.value == pytest.approx(base.value, abs=1e-10)


def test_box_w_two_far_points_vs_brute_force_field_energy():
    # the Green-assembled box field energy for two points matches a direct
    # masked tensor quadrature of |E_eta|^2
    m = 1.0 / 16.0
    eta = 0.2
    pts = np.array([[-2.0, 0.0], [2.0, 0.0]])
    box = sp.BoxPotential2D((-4.0, -2.0), (4.0, 2.0))
    impl = sp._box_field_energy_2d(pts, box, m, box.self_interaction(), eta)

    def e_eta(z):
        g = core.smeared_potential_gradient(z - pts, eta, 2).sum(axis=0)
        return g - m * box.gradient(z)

    xs, wx = gauss_segments(-4.0, 4.0,
                            [-2.0 - eta, -2.0, -2.0 + eta, 2.0 - eta, 2.0,
                             2.0 + eta], order=30)
    acc = 0.0
    for x, w1 in zip(xs, wx):
        ys, wy = gauss_segments(-2.0, 2.0, [-eta, 0.0, eta], order=30)
        vals = [float(e_eta(np.array([x, y])) @ e_eta(np.array([x, y])))
                for y in ys]
        acc += w1 * float(np.sum(wy * np.asarray(vals)))
    assert impl == pytest.approx(acc, rel=2e-4)


def test_box_w_two_far_points_decomposition():
    # two far points in a neutral box: W splits into two neutral half-box
    # single-point values plus the explicit cross terms (pair kernel and the
    # source-background interactions across the cut), up to the exterior
    # tail rearrangement of the neutral halves
    m = 1.0 / 16.0
    sep = 4.0
    pts = np.array([[-2.0, 0.0], [2.0, 0.0]])
    whole = sp.renormalized_w_box(pts, (-4.0, -2.0), (4.0, 2.0), m,
                                  etas=(0.2, 0.1, 0.05))
    left = sp.renormalized_w_box(np.array([[-2.0, 0.0]]), (-4.0, -2.0),
                                 (0.0, 2.0), m, etas=(0.2, 0.1, 0.05))
    right = sp.renormalized_w_box(np.array([[2.0, 0.0]]), (0.0, -2.0),
                                  (4.0, 2.0), m, etas=(0.2, 0.1, 0.05))
    box_l = sp.BoxPotential2D((-4.0, -2.0), (0.0, 2.0))
    box_r = sp.BoxPotential2D((0.0, -2.0), (4.0, 2.0))
    d_lr = 0.0
    xs, wx = gauss_segments(0.0, 4.0, order=20)
    ys, wy = gauss_segments(-2.0, 2.0, order=20)
    for x, w1 in zip(xs, wx):
        for y, w2 in zip(ys, wy):
            d_lr += w1 * w2 * box_l.value(np.array([x, y]))
    cross = (2.0 * float(core.coulomb_kernel_r(sep, 2))
             - 2.0 * m * box_l.value(pts[1]) - 2.0 * m * box_r.value(pts[0])
             + 2.0 * m * m * d_lr)
    pred = left.value + right.value + cross
    assert abs(whole.value - pred) / abs(whole.value) < 0.05


def test_box_w_separation_check():
    with pytest.raises(sp.SeparationError):
        sp.renormalized_w_box(np.array([[0.0, 0.0], [0.05, 0.0]]),
                              (-1, -1), (1, 1), 0.5, etas=(0.2, 0.1))
    with pytest.raises(sp.SeparationError):
        sp.renormalized_w_box(np.array([[0.95, 0.0]]),
                              (-1, -1), (1, 1), 0.25, etas=(0.2, 0.1))


# --- next order ------------------------------------------------------------------

def test_next_order_lower_bound_with_measured_constant(radial_measures,
                                                       quad_potentials):
    # eta = 1 splitting gives H >= n^2 E - (n/2) log n - C n^{2-2/d} with a
    # computable constant; every random configuration obeys it
    rng = np.random.default_rng(80)
    for d in (2, 3):
        mu, V = radial_measures[d], quad_potentials[d]
        k = core.space_constants(d)
        m_max = mu.max_density()
        for _ in range(10):
            n = int(rng.integers(4, 25))
            cfg = core.Configuration(d, rng.uniform(-1, 1, size=(n, d)))
            ell = n ** (-1.0 / d)
            cost = math.pi * ell ** 2 / 4 if d == 2 else 2 * math.pi * ell ** 3 / 5
            c_bound = (core.renormalization_per_point(1.0, d) / k.c
                       + 2.0 * m_max * cost * n ** (2.0 / d))
            no = sp.next_order_energy(cfg, mu, V)
            assert no >= -c_bound - 1e-9


def test_next_order_stability_under_potential_scaling():
    # doubling V shifts the mean-field term enormously but the next-order
    # coefficient of a matched near-minimizer stays at its own xi_2 value,
    # which moves only by (1/2) log 2 through the entropy term
    from coulombgas import jellium as jl, sampler as sam

    w_tri = jl.lattice_energy(jl.lattice_catalog(2)["triangular"])
    results = {}
    for alpha in (1.0, 2.0):
        V = eq.quadratic_potential(alpha, 2)
        mu = eq.solve_equilibrium_radial(V, 2)
        cfg = sam.generate_tiled_configuration(mu, 80, R_cell=2.0, seed=2)
        polished, e, _ = sam._descent_polish(cfg, V, 3000, 1e-5)
        xi = jl.xi_d(mu, w_tri).value
        results[alpha] = (sp.next_order_energy(polished, mu, V, energy=e), xi)
    for alpha, (no, xi) in results.items():
        assert abs(no - xi) / abs(xi) < 0.15
    shift = results[2.0][0] - results[1.0][0]
    # entropy shift prediction: -(1/2) log(mu doubling) = -(1/2) log 2... with
    # the sign fixed by xi_2(2V) - xi_2(V) = +log(2)/2 * (-1): use xi values
    predicted = results[2.0][1] - results[1.0][1]
    assert shift == pytest.approx(predicted, abs=0.2 * abs(predicted))


def test_splitting_report_json_round_trip(radial_measures, quad_potentials):
    import json

    rng = np.random.default_rng(90)
    cfg = separated_config(rng, 8, 2, 0.8, 0.2)
    rep = sp.onsager_split(cfg, radial_measures[2], quad_potentials[2], 0.5)
    payload = json.loads(rep.to_json(tolerance=1e-9))
    for key in ("mean_field_term", "log_term", "zeta_term", "smeared_energy",
                "renormalization_term", "smearing_cost", "residual", "j_n",
                "next_order", "equality_flag", "eta", "ell", "tolerance"):
        assert key in payload
    assert payload["equality_flag"] == rep.equality_flag


def test_onsager_inequality_thousand_draws(radial_measures, quad_potentials):
    # H_n always dominates the splitting sum, equality only when separated
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(1000):
        d = int(rng.integers(2, 4))
        n = int(rng.integers(3, 9))
        eta = float(rng.uniform(0.2, 1.0))
        cfg = core.Configuration(d, rng.uniform(-0.9, 0.9, size=(n, d)))
        rep = sp.onsager_split(cfg, radial_measures[d], quad_potentials[d], eta)
        scale = max(1.0, abs(rep.hamiltonian_value))
        worst = min(worst, rep.residual / scale)
        if rep.equality_flag:
            assert abs(rep.residual) / scale < 1e-9
    assert worst > -1e-9
