import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

from coulombgas import core, equilibrium as eq, sampler as sam


@pytest.fixture
def v2():
    return eq.quadratic_potential(1.0, 2)


# --- metropolis ---------------------------------------------------------------

def test_sweep_preserves_count_and_cache(v2):
    rng = np.random.default_rng(0)
    cfg = core.Configuration(2, rng.normal(scale=0.5, size=(15, 2)))
    chain = sam.new_chain(cfg, 3.0, v2, seed=1)
    for _ in range(60):
        sam.metropolis_sweep(chain, v2)
    assert chain.config.n == 15
    drift = chain.audit_energy(v2, tol=1e-9)
    assert drift < 1e-9 * max(1.0, abs(chain.energy))


def test_energy_cache_audit_long_run(v2):
    rng = np.random.default_rng(1)
    cfg = core.Configuration(2, rng.normal(scale=0.5, size=(8, 2)))
    chain = sam.new_chain(cfg, 2.0, v2, seed=2)
    for _ in range(2000):
        sam.metropolis_sweep(chain, v2)
    assert chain.audit_energy(v2) < 1e-9 * max(1.0, abs(chain.energy))


def test_beta_infinity_only_downhill(v2):
    # at huge beta, accepted moves lower the energy (up to floating fuzz)
    rng = np.random.default_rng(2)
    cfg = core.Configuration(2, rng.normal(scale=0.5, size=(10, 2)))
    chain = sam.new_chain(cfg, 1e12, v2, seed=3)
    e_prev = chain.energy
    for _ in range(50):
        sam.metropolis_sweep(chain, v2)
        assert chain.energy <= e_prev + 1e-6
        e_prev = chain.energy


def test_two_body_radial_distribution_vs_quadrature(v2):
    # n = 2: the separation r = |x1 - x2| has density prop. to
    # r^{beta+1} exp(-beta r^2 / 2) (after integrating the center out);
    # compare the empirical mean separation against quadrature
    beta = 2.0
    num = quad(lambda r: r * r ** (beta + 1) * math.exp(-beta * r * r / 2),
               0, 30, limit=200)[0]
    den = quad(lambda r: r ** (beta + 1) * math.exp(-beta * r * r / 2),
               0, 30, limit=200)[0]
    mean_sep_exact = num / den
    cfg = core.Configuration(2, np.array([[0.4, 0.0], [-0.4, 0.0]]))
    chain = sam.new_chain(cfg, beta, v2, seed=4)
    sam.tune_proposal_scale(chain, v2, sweeps=50)
    for _ in range(500):
        sam.metropolis_sweep(chain, v2)
    seps = []
    for _ in range(60000):
        sam.metropolis_sweep(chain, v2)
        seps.append(float(np.linalg.norm(chain.config.points[0]
                                         - chain.config.points[1])))
    assert np.mean(seps) == pytest.approx(mean_sep_exact, rel=0.03)


def test_seeded_determinism(v2):
    def run():
        cfg = core.Configuration(2, np.random.default_rng(7).normal(size=(9, 2)))
        chain = sam.new_chain(cfg, 2.5, v2, seed=77)
        for _ in range(40):
            sam.metropolis_sweep(chain, v2)
        return chain.config.points.copy(), chain.energy

    p1, e1 = run()
    p2, e2 = run()
    assert np.array_equal(p1, p2)
    assert e1 == e2


def test_checkpoint_round_trip(v2):
    cfg = core.Configuration(2, np.random.default_rng(8).normal(size=(6, 2)))
    chain = sam.new_chain(cfg, 2.0, v2, seed=5)
    for _ in range(10):
        sam.metropolis_sweep(chain, v2)
    state = chain.state_dict()
    resumed = sam.Chain.from_state_dict(state)
    for _ in range(10):
        sam.metropolis_sweep(chain, v2)
        sam.metropolis_sweep(resumed, v2)
    assert np.array_equal(chain.config.points, resumed.config.points)
    assert chain.energy == resumed.energy


# --- langevin ----------------------------------------------------------------

def test_langevin_small_dt_acceptance(v2):
    rng = np.random.default_rng(9)
    cfg = core.Configuration(2, rng.normal(scale=0.4, size=(8, 2)))
    chain = sam.new_chain(cfg, 2.0, v2, seed=6)
    for _ in range(200):
        sam.langevin_step(chain, v2, dt=1e-6)
    assert chain.acceptance_rate > 0.99


def test_langevin_agrees_with_metropolis(v2):
    # long-run mean energy from both samplers within joint error bars
    beta, n = 3.0, 6

    def run(stepper, seed):
        cfg = core.Configuration(2, np.random.default_rng(seed).normal(
            scale=0.5, size=(n, 2)))
        chain = sam.new_chain(cfg, beta, v2, seed=seed)
        for _ in range(500):
            stepper(chain)
        es = []
        for _ in range(6000):
            stepper(chain)
            es.append(chain.energy)
        es = np.asarray(es)
        tau = sam.integrated_autocorrelation_time(es)
        return es.mean(), es.std() * math.sqrt(tau / len(es))

    m1, s1 = run(lambda c: sam.metropolis_sweep(c, v2), 10)
    m2, s2 = run(lambda c: sam.langevin_step(c, v2, dt=2e-3), 11)
    assert abs(m1 - m2) < 4.0 * math.hypot(s1, s2)


def test_langevin_detailed_balance_two_state_toy():
    # the accept rule on a discretized two-state toy satisfies
    # pi_a P(a->b) = pi_b P(b->a) exactly
    e_a, e_b = 0.0, 0.7
    beta = 1.3
    q_ab, q_ba = 0.4, 0.25  # asymmetric proposal densities
    pi_a, pi_b = math.exp(-beta / 2 * e_a), math.exp(-beta / 2 * e_b)
    acc_ab = min(1.0, (pi_b * q_ba) / (pi_a * q_ab))
    acc_ba = min(1.0, (pi_a * q_ab) / (pi_b * q_ba))
    assert pi_a * q_ab * acc_ab == pytest.approx(pi_b * q_ba * acc_ba, rel=1e-14)


def test_langevin_nan_proposal_error(v2):
    cfg = core.Configuration(2, np.array([[0.0, 0.0], [1e-12, 0.0]]))
    chain = sam.new_chain(cfg, 1.0, v2, seed=12)
    with pytest.raises(FloatingPointError):
        sam.langevin_step(chain, v2, dt=1e300)


# --- ground states --------------------------------------------------------------

def test_ground_state_two_points(v2, radial_measures):
    res = minimize_scalar(lambda r: -2 * math.log(2 * r) + 4 * r * r,
                          bounds=(0.05, 2.0), method="bounded")
    sched = sam.AnnealSchedule(betas=(4, 16, 64, 256, 1024),
                               sweeps_per_level=60, descent_steps=800,
                               restarts=2)
    cfg, e, info = sam.find_ground_state(2, v2, radial_measures[2], sched, seed=1)
    r_found = 0.5 * float(np.linalg.norm(cfg.points[0] - cfg.points[1]))
    assert r_found == pytest.approx(res.x, abs=1e-6)
    assert e == pytest.approx(-2 * math.log(2 * res.x) + 4 * res.x ** 2,
                              abs=1e-8)


def test_ground_state_three_points_equilateral(v2, radial_measures):
    sched = sam.AnnealSchedule(betas=(4, 16, 64, 256, 1024),
                               sweeps_per_level=60, descent_steps=1500,
                               restarts=2)
    cfg, e, info = sam.find_ground_state(3, v2, radial_measures[2], sched, seed=2)
    d01 = np.linalg.norm(cfg.points[0] - cfg.points[1])
    d02 = np.linalg.norm(cfg.points[0] - cfg.points[2])
    d12 = np.linalg.norm(cfg.points[1] - cfg.points[2])
    assert d01 == pytest.approx(d02, abs=1e-6)
    assert d01 == pytest.approx(d12, abs=1e-6)
    # scalar oracle over the circumradius of the equilateral triangle
    res = minimize_scalar(lambda r: -6 * math.log(math.sqrt(3) * r) + 9 * r * r,
                          bounds=(0.05, 2.0), method="bounded")
    assert d01 == pytest.approx(math.sqrt(3) * res.x, abs=1e-6)


def test_ground_state_points_inside_support(v2, radial_measures):
    cfg, e, info = sam.find_ground_state(
        12, v2, radial_measures[2],
        sam.AnnealSchedule(betas=(2, 8, 32, 128), sweeps_per_level=50,
                           descent_steps=1500, restarts=2), seed=3)
    zeta = eq.zeta_at_points(radial_measures[2], v2, cfg.points)
    assert np.max(zeta) < 1e-4


# --- free energy ------------------------------------------------------------------

def test_independent_particle_reference(v2):
    # closed form for the quadratic trap: int e^{-b n |x|^2 / 2} = 2 pi/(b n)
    n, beta = 3, 1.5
    ref = sam.independent_particle_free_energy(v2, n, beta, 2)
    want = -2.0 * n / beta * math.log(2 * math.pi / (beta * n / 2) / 2)
    exact = -2.0 * n / beta * math.log(2.0 * math.pi / (beta * n))
    assert ref == pytest.approx(exact, rel=1e-10)


def test_free_energy_two_body_oracle(v2):
    beta = 0.7
    i_r = quad(lambda r: math.exp(-2 * beta * r * r) * 2 * math.pi * r,
               0, 30, limit=200)[0]
    i_u = quad(lambda u: u ** beta * math.exp(-beta * u * u / 2) * 2 * math.pi * u,
               0, 60, limit=200)[0]
    f_exact = -2.0 / beta * math.log(i_r * i_u)
    est = sam.free_energy(2, v2, beta, d=2, lambda_nodes=8, sweeps=1500,
                          burn=400, chains=2, seed=11)
    assert est.value == pytest.approx(f_exact, rel=0.01)
    assert est.converged


def test_free_energy_lambda_refinement(v2):
    # doubling the lambda grid moves the estimate by less than the error bar
    est4 = sam.free_energy(4, v2, 1.0, d=2, lambda_nodes=4, sweeps=900,
                           burn=300, chains=2, seed=13)
    est8 = sam.free_energy(4, v2, 1.0, d=2, lambda_nodes=8, sweeps=900,
                           burn=300, chains=2, seed=13)
    assert abs(est8.value - est4.value) < 3.0 * (est4.stderr + est8.stderr + 1e-3)


def test_free_energy_sandwich(v2, radial_measures):
    n, beta = 10, 2.0
    grid = eq.Grid.centered(2, 2.0, 0.05)
    bounds = sam.free_energy_bounds(n, v2, beta, radial_measures[2], grid=grid)
    est = sam.free_energy(n, v2, beta, d=2, lambda_nodes=6, sweeps=900,
                          burn=300, chains=2, seed=5)
    assert bounds["lower"] - 2 * est.stderr <= est.value
    assert est.value <= bounds["upper"] + 2 * est.stderr


def test_mean_energy_decreases_in_beta(v2):
    # d(-log Z)/d beta = <H>/2: the sampled mean energy must fall as beta
    # rises, which is the monotonicity of the free energy in its natural
    # normalization
    means = []
    for beta in (0.5, 2.0, 8.0):
        cfg = core.Configuration(2, np.random.default_rng(3).normal(
            scale=0.5, size=(6, 2)))
        chain = sam.new_chain(cfg, beta, v2, seed=21)
        sam.tune_proposal_scale(chain, v2, sweeps=40)
        for _ in range(300):
            sam.metropolis_sweep(chain, v2)
        es = []
        for _ in range(2500):
            sam.metropolis_sweep(chain, v2)
            es.append(chain.energy)
        means.append(float(np.mean(es)))
    assert means[0] > means[1] > means[2]


# --- tiling ------------------------------------------------------------------------

@pytest.mark.parametrize("n", [50, 100, 400])
def test_tiled_configuration_count(n, radial_measures):
    cfg = sam.generate_tiled_configuration(radial_measures[2], n, R_cell=2.5,
                                           seed=3)
    assert cfg.n == n


def test_tiled_configuration_min_separation(radial_measures):
    from scipy.spatial import cKDTree

    n = 100
    cfg = sam.generate_tiled_configuration(radial_measures[2], n, R_cell=2.5,
                                           seed=3)
    blown = cfg.points * math.sqrt(n)
    r0 = 0.5 / math.sqrt(1.0 / math.pi)
    nn = cKDTree(blown).query(blown, k=2)[0][:, 1]
    assert nn.min() >= 0.95 * r0


def test_tiled_configuration_3d(radial_measures):
    cfg = sam.generate_tiled_configuration(radial_measures[3], 600, R_cell=2.0,
                                           seed=4)
    assert cfg.n == 600
    assert cfg.d == 3


def test_tiled_infeasible_small_n(radial_measures):
    with pytest.raises(ValueError):
        sam.generate_tiled_configuration(radial_measures[2], 8, R_cell=3.0)


def test_tiled_near_ground_state_energy(v2, radial_measures):
    # upper-bound construction: within 10% of the annealed minimum at n = 100
    from coulombgas import splitting as sp

    mu = radial_measures[2]
    n = 100
    tiled = sam.generate_tiled_configuration(mu, n, R_cell=2.5, seed=3)
    polished, e_t, _ = sam._descent_polish(tiled, v2, 3000, 1e-5)
    no_tiled = sp.next_order_energy(polished, mu, v2, energy=e_t)
    cfg, e_gs, _ = sam.find_ground_state(
        n, v2, mu, sam.AnnealSchedule(betas=tuple(2.0 ** k for k in range(9)),
                                      sweeps_per_level=60, descent_steps=3000,
                                      restarts=2), seed=7)
    no_gs = sp.next_order_energy(cfg, mu, v2, energy=e_gs)
    assert abs(no_tiled - no_gs) / abs(no_gs) < 0.10
