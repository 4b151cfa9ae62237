"""Gibbs sampling, ground-state search, free energies and tiled configurations.

Chains target the Gibbs law  P propto exp(-(beta/2) H_n)  with single-particle
Gaussian Metropolis moves (O(n) incremental energy updates) or whole-config
Metropolis-adjusted Langevin steps.  Ground states come from best-of-restarts
annealing plus a backtracking gradient descent polish.  Free energies use
thermodynamic integration in the pair-coupling parameter, with batch-mean
error bars and a split-chain convergence flag.

Determinism: every stochastic routine takes a seed (or an explicitly seeded
chain) and a fixed update order, so identical seeds reproduce bit-identical
trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import quad

from .core import (
    Configuration,
    CoincidentPointsError,
    coulomb_kernel_r,
    hamiltonian,
    hamiltonian_gradient,
    space_constants,
)
from .equilibrium import (
    EquilibriumMeasure,
    Grid,
    Potential,
    mean_field_free_energy,
    mf_energy,
    solve_mu_beta,
)

__all__ = [
    "Chain",
    "AnnealSchedule",
    "new_chain",
    "metropolis_sweep",
    "langevin_step",
    "tune_proposal_scale",
    "find_ground_state",
    "FreeEnergyEstimate",
    "free_energy",
    "independent_particle_free_energy",
    "free_energy_bounds",
    "generate_tiled_configuration",
    "integrated_autocorrelation_time",
    "sample_from_measure",
]


# ---------------------------------------------------------------------------
# chains
# ---------------------------------------------------------------------------

@dataclass
class Chain:
    """State of one Gibbs sampler: configuration, temperature, RNG, stats."""

    config: Configuration
    beta: float
    rng: np.random.Generator
    proposal_scale: float
    energy: float
    accepted: int = 0
    rejected: int = 0
    sweeps: int = 0
    seed: Optional[int] = None

    @property
    def acceptance_rate(self) -> float:
        total = self.accepted + self.rejected
        return self.accepted / total if total else 0.0

    def audit_energy(self, V: Potential, tol: float = 1e-9) -> float:
        """Recompute H_n, check cache drift, resync; returns the drift."""
        fresh = hamiltonian(self.config, V)
        drift = abs(fresh - self.energy)
        scale = max(1.0, abs(fresh))
        if drift > tol * scale:
            raise RuntimeError(f"energy cache drifted by {drift:.3e}")
        self.energy = fresh
        return drift

    def state_dict(self) -> dict:
        return {
            "d": self.config.d,
            "points": self.config.points.tolist(),
            "beta": self.beta,
            "proposal_scale": self.proposal_scale,
            "energy": self.energy,
            "accepted": self.accepted,
            "rejected": self.rejected,
            "sweeps": self.sweeps,
            "seed": self.seed,
            "rng_state": _jsonify_rng(self.rng.bit_generator.state),
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "Chain":
        rng = np.random.default_rng()
        rng.bit_generator.state = _unjsonify_rng(state["rng_state"])
        return cls(
            config=Configuration(state["d"], np.asarray(state["points"])),
            beta=state["beta"], rng=rng,
            proposal_scale=state["proposal_scale"], energy=state["energy"],
            accepted=state["accepted"], rejected=state["rejected"],
            sweeps=state["sweeps"], seed=state.get("seed"),
        )


def _jsonify_rng(state):
    if isinstance(state, dict):
        return {k: _jsonify_rng(v) for k, v in state.items()}
    if isinstance(state, np.ndarray):
        return {"__ndarray__": state.tolist(), "dtype": str(state.dtype)}
    if isinstance(state, (np.integer,)):
        return int(state)
    return state


def _unjsonify_rng(state):
    if isinstance(state, dict):
        if "__ndarray__" in state:
            return np.asarray(state["__ndarray__"], dtype=state["dtype"])
        return {k: _unjsonify_rng(v) for k, v in state.items()}
    return state


def new_chain(config: Configuration, beta: float, V: Potential, seed: int,
              proposal_scale: Optional[float] = None) -> Chain:
    if beta <= 0.0:
        raise ValueError("beta must be positive")
    if proposal_scale is None:
        # heuristic: a fraction of the typical interparticle distance
        proposal_scale = 0.3 * config.n ** (-1.0 / config.d)
    return Chain(config=config.copy(), beta=beta,
                 rng=np.random.default_rng(seed),
                 proposal_scale=proposal_scale,
                 energy=hamiltonian(config, V), seed=seed)


def _pair_sum_to(points: np.ndarray, i: int, x, d: int) -> float:
    """sum_{j != i} w(x_j - x); +inf on a coincidence."""
    r = np.linalg.norm(points - x, axis=1)
    r[i] = 1.0  # masked out below
    if np.any(r == 0.0):
        return math.inf
    vals = coulomb_kernel_r(r, d)
    vals[i] = 0.0
    return float(np.sum(vals))


def metropolis_sweep(chain: Chain, V: Potential) -> Chain:
    """n single-particle Gaussian Metropolis updates targeting e^{-(beta/2) H_n}.

    The per-move energy change is computed incrementally in O(n); moves onto
    an occupied site are rejected outright (the pair energy is +inf).
    """
    pts = chain.config.points
    n, d = pts.shape
    steps = chain.rng.normal(scale=chain.proposal_scale, size=(n, d))
    logu = np.log(chain.rng.random(n))
    for i in range(n):
        old = pts[i].copy()
        new = old + steps[i]
        s_old = _pair_sum_to(pts, i, old, d)
        s_new = _pair_sum_to(pts, i, new, d)
        if math.isinf(s_new):
            chain.rejected += 1
            continue
        dV = float(V.value(new[None, :])[0] - V.value(old[None, :])[0])
        delta = 2.0 * (s_new - s_old) + n * dV
        if logu[i] < -0.5 * chain.beta * delta:
            pts[i] = new
            chain.energy += delta
            chain.accepted += 1
        else:
            chain.rejected += 1
    chain.sweeps += 1
    return chain


def langevin_step(chain: Chain, V: Potential, dt: float) -> Chain:
    """One Metropolis-adjusted Langevin update of the whole configuration.

    Proposal y = x - (dt/2) grad U(x) + sqrt(dt) xi with U = (beta/2) H_n;
    the accept step keeps the dynamics exact for the Gibbs target.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    x = chain.config.points
    n, d = x.shape
    b2 = 0.5 * chain.beta
    gx = b2 * hamiltonian_gradient(chain.config, V)
    noise = chain.rng.normal(size=(n, d))
    y = x - 0.5 * dt * gx + math.sqrt(dt) * noise
    if not np.all(np.isfinite(y)):
        raise FloatingPointError(
            "Langevin proposal overflowed; use a smaller dt")
    y_cfg = Configuration(d, y)
    try:
        e_y = hamiltonian(y_cfg, V)
        gy = b2 * hamiltonian_gradient(y_cfg, V)
    except CoincidentPointsError:
        chain.rejected += 1
        chain.sweeps += 1
        return chain
    # log q(x | y) - log q(y | x)
    fwd = y - (x - 0.5 * dt * gx)
    bwd = x - (y - 0.5 * dt * gy)
    log_q = (np.sum(fwd * fwd) - np.sum(bwd * bwd)) / (2.0 * dt)
    log_alpha = -b2 * (e_y - chain.energy) + log_q
    if math.log(chain.rng.random()) < log_alpha:
        chain.config.points[:] = y
        chain.energy = e_y
        chain.accepted += 1
    else:
        chain.rejected += 1
    chain.sweeps += 1
    return chain


def tune_proposal_scale(chain: Chain, V: Potential, sweeps: int = 40,
                        target: tuple = (0.25, 0.40)) -> Chain:
    """Adjust the proposal scale towards the target acceptance band (burn-in
    only; the scale is frozen afterwards so the chain stays exact)."""
    for _ in range(max(1, sweeps // 10)):
        a0, r0 = chain.accepted, chain.rejected
        for _ in range(10):
            metropolis_sweep(chain, V)
        rate = (chain.accepted - a0) / max(1, chain.accepted - a0 + chain.rejected - r0)
        if rate < target[0]:
            chain.proposal_scale *= 0.7
        elif rate > target[1]:
            chain.proposal_scale *= 1.4
    return chain


def sample_from_measure(mu0: EquilibriumMeasure, n: int, rng) -> Configuration:
    """n i.i.d. draws from the measure (cell-weighted, uniform within cells)."""
    dens = np.maximum(mu0.density, 0.0).ravel()
    probs = dens / dens.sum()
    idx = rng.choice(len(probs), size=n, p=probs)
    coords = np.unravel_index(idx, mu0.grid.shape)
    pts = np.stack([mu0.grid.axes()[ax][coords[ax]] for ax in range(mu0.d)], axis=-1)
    pts = pts + rng.uniform(-0.5 * mu0.grid.h, 0.5 * mu0.grid.h, size=pts.shape)
    return Configuration(mu0.d, pts)


def integrated_autocorrelation_time(series: np.ndarray, c: float = 6.0) -> float:
    """Sokal-windowed IAT of a scalar series (>= 1; 1 means uncorrelated)."""
    x = np.asarray(series, dtype=float)
    x = x - x.mean()
    m = len(x)
    if m < 8 or np.allclose(x, 0.0):
        return 1.0
    acf = np.correlate(x, x, mode="full")[m - 1:] / (np.arange(m, 0, -1) * x.var())
    tau = 1.0
    for window in range(1, m // 2):
        tau = 1.0 + 2.0 * float(np.sum(acf[1:window + 1]))
        if window >= c * tau:
            break
    return max(tau, 1.0)


# ---------------------------------------------------------------------------
# ground states
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnnealSchedule:
    """Increasing beta ladder with per-level sweep and descent budgets."""

    betas: tuple
    sweeps_per_level: int = 60
    descent_steps: int = 400
    restarts: int = 3

    def __post_init__(self):
        b = tuple(float(x) for x in self.betas)
        if any(b2 <= b1 for b1, b2 in zip(b, b[1:])) or not b:
            raise ValueError("beta ladder must be strictly increasing and nonempty")
        object.__setattr__(self, "betas", b)

    @classmethod
    def default(cls, n: int, d: int, restarts: int = 3) -> "AnnealSchedule":
        base = n ** (2.0 / d - 1.0)
        betas = tuple(base * 2.0 ** k for k in range(0, 9))
        return cls(betas=betas, sweeps_per_level=60,
                   descent_steps=400, restarts=restarts)


def _descent_polish(config: Configuration, V: Potential, max_steps: int,
                    gtol: float) -> tuple:
    """Gradient descent with backtracking on H_n (Barzilai-Borwein step guess).

    Returns (config, energy, sup-norm of the gradient)."""
    x = config.points.copy()
    cfg = Configuration(config.d, x)
    e = hamiltonian(cfg, V)
    g = hamiltonian_gradient(cfg, V)
    step = 1e-3 / max(1.0, cfg.n)
    for _ in range(max_steps):
        gnorm = float(np.max(np.abs(g)))
        if gnorm < gtol:
            break
        t = step
        accepted = False
        for _ in range(50):
            trial = Configuration(cfg.d, x - t * g)
            try:
                e_t = hamiltonian(trial, V)
            except CoincidentPointsError:
                t *= 0.5
                continue
            if e_t < e - 1e-4 * t * float(np.sum(g * g)):
                g_new = hamiltonian_gradient(trial, V)
                s = trial.points - x
                y = g_new - g
                sy = float(np.sum(s * y))
                step = float(np.sum(s * s)) / sy if sy > 0.0 else 2.0 * t
                x, cfg, e, g = trial.points, trial, e_t, g_new
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
    return cfg, e, float(np.max(np.abs(g)))


def find_ground_state(n: int, V: Potential, mu0: Optional[EquilibriumMeasure],
                      schedule: Optional[AnnealSchedule] = None,
                      d: int = 2, seed: int = 0, gtol: float = 1e-6) -> tuple:
    """Best-of-restarts annealing plus gradient polish for min H_n.

    Returns (configuration, energy, info).  Global optimality is never
    claimed; ``info`` records the final sup-norm of the gradient and the
    per-restart energies.
    """
    if mu0 is not None:
        d = mu0.d
    schedule = schedule or AnnealSchedule.default(n, d)
    best = None
    energies = []
    for r in range(schedule.restarts):
        rng = np.random.default_rng(np.random.SeedSequence([seed, r]))
        cfg = None
        if r == 0 and mu0 is not None and mu0.radial is not None:
            try:
                cfg = generate_tiled_configuration(mu0, n, seed=seed)
            except ValueError:
                cfg = None
        if cfg is None and mu0 is not None:
            cfg = sample_from_measure(mu0, n, rng)
        elif cfg is None:
            cfg = Configuration(d, rng.normal(scale=0.5, size=(n, d)))
        chain = Chain(config=cfg, beta=schedule.betas[0],
                      rng=rng, proposal_scale=0.3 * n ** (-1.0 / d),
                      energy=hamiltonian(cfg, V), seed=seed)
        for beta in schedule.betas:
            chain.beta = beta
            tune_proposal_scale(chain, V, sweeps=10)
            for _ in range(schedule.sweeps_per_level):
                metropolis_sweep(chain, V)
        polished, e, gnorm = _descent_polish(chain.config, V,
                                             schedule.descent_steps, gtol)
        energies.append(e)
        if best is None or e < best[1]:
            best = (polished, e, gnorm)
    cfg, e, gnorm = best
    info = {"grad_sup_norm": gnorm, "restart_energies": energies,
            "schedule_betas": list(schedule.betas), "seed": seed}
    return cfg, e, info


# ---------------------------------------------------------------------------
# free energy by thermodynamic integration
# ---------------------------------------------------------------------------

@dataclass
class FreeEnergyEstimate:
    value: float
    stderr: float
    reference: float            # independent-particle F at lambda = 0
    lambda_nodes: tuple
    pair_means: tuple
    pair_errors: tuple
    converged: bool
    rhat: tuple


def independent_particle_free_energy(V: Potential, n: int, beta: float, d: int,
                                     r_max: float = 40.0) -> float:
    """F for H_0 = n sum_i V(x_i): equals -(2 n / beta) log int e^{-beta n V / 2}.

    Radial quadrature; V must be radial (the standard reference system).
    """
    surf = 2.0 * math.pi if d == 2 else 4.0 * math.pi

    def point(r):
        x = np.zeros((1, d))
        x[0, 0] = r
        return x

    val, _ = quad(lambda r: math.exp(-0.5 * beta * n * float(V.value(point(r))[0]))
                  * surf * r ** (d - 1), 0.0, r_max, limit=400)
    return -2.0 * n / beta * math.log(val)


def _pair_energy(config: Configuration) -> float:
    pts = config.points
    n = config.n
    if n < 2:
        return 0.0
    diff = pts[:, None, :] - pts[None, :, :]
    r = np.linalg.norm(diff, axis=-1)
    iu = np.triu_indices(n, 1)
    return 2.0 * float(np.sum(coulomb_kernel_r(r[iu], config.d)))


def free_energy(n: int, V: Potential, beta: float, d: int = 2,
                lambda_nodes: int = 8, sweeps: int = 1500, burn: int = 500,
                chains: int = 2, seed: int = 0,
                rhat_threshold: float = 1.1) -> FreeEnergyEstimate:
    """F_{n,beta} = -(2/beta) log Z by thermodynamic integration.

    Switches on the pair interaction: H_lam = lam * (pair term) + n sum V.
    F(1) = F(0) + int_0^1 <pair>_lam d lam with Gauss-Legendre nodes; errors
    by batch means, cross-chain convergence by a split-R-hat style statistic.
    """
    ref = independent_particle_free_energy(V, n, beta, d)
    x_nodes, w_nodes = np.polynomial.legendre.leggauss(lambda_nodes)
    lams = 0.5 * (x_nodes + 1.0)
    ws = 0.5 * w_nodes

    means, errs, rhats = [], [], []
    for li, lam in enumerate(lams):
        chain_means, chain_vars, samples = [], [], []
        for ci in range(chains):
            rng = np.random.default_rng(np.random.SeedSequence([seed, li, ci]))
            cfg = Configuration(d, rng.normal(scale=0.5, size=(n, d)))
            chain = Chain(config=cfg, beta=beta, rng=rng,
                          proposal_scale=0.4 * n ** (-1.0 / d),
                          energy=lam * _pair_energy(cfg)
                          + n * float(np.sum(V.value(cfg.points))), seed=seed)
            series = _run_switched_chain(chain, V, lam, burn, sweeps)
            k = max(1, len(series) // 20)
            batches = np.array([np.mean(series[j:j + k])
                                for j in range(0, len(series) - k + 1, k)])
            chain_means.append(float(np.mean(series)))
            chain_vars.append(float(np.var(batches, ddof=1) / len(batches))
                              if len(batches) > 1 else 0.0)
            samples.append(np.asarray(series))
        mean = float(np.mean(chain_means))
        err = math.sqrt(max(np.mean(chain_vars), 0.0) / chains)
        rhat = _split_rhat(samples)
        means.append(mean)
        errs.append(err)
        rhats.append(rhat)

    value = ref + float(np.sum(ws * np.asarray(means)))
    stderr = float(np.sqrt(np.sum((ws * np.asarray(errs)) ** 2)))
    converged = all(r < rhat_threshold for r in rhats)
    return FreeEnergyEstimate(value=value, stderr=stderr, reference=ref,
                              lambda_nodes=tuple(float(l) for l in lams),
                              pair_means=tuple(means), pair_errors=tuple(errs),
                              converged=converged, rhat=tuple(rhats))


def _run_switched_chain(chain: Chain, V: Potential, lam: float,
                        burn: int, sweeps: int):
    """Metropolis on H_lam = lam * pair + n * sum V; returns pair-energy series."""
    pts = chain.config.points
    n, d = pts.shape
    pair = _pair_energy(chain.config)
    series = []
    scale_tuned = chain.proposal_scale
    for sweep in range(burn + sweeps):
        steps = chain.rng.normal(scale=scale_tuned, size=(n, d))
        logu = np.log(chain.rng.random(n))
        acc = 0
        for i in range(n):
            old = pts[i].copy()
            new = old + steps[i]
            s_old = _pair_sum_to(pts, i, old, d)
            s_new = _pair_sum_to(pts, i, new, d)
            if math.isinf(s_new):
                continue
            d_pair = 2.0 * (s_new - s_old)
            dV = float(V.value(new[None, :])[0] - V.value(old[None, :])[0])
            delta = lam * d_pair + n * dV
            if logu[i] < -0.5 * chain.beta * delta:
                pts[i] = new
                pair += d_pair
                acc += 1
        if sweep < burn:
            rate = acc / n
            if rate < 0.25:
                scale_tuned *= 0.8
            elif rate > 0.4:
                scale_tuned *= 1.25
        else:
            series.append(pair)
    return series


def _split_rhat(samples) -> float:
    """Gelman-Rubin statistic over chains split in half."""
    halves = []
    for s in samples:
        m = len(s) // 2
        halves.extend([s[:m], s[m:2 * m]])
    halves = np.asarray(halves, dtype=float)
    mchains, nlen = halves.shape
    if nlen < 4:
        return math.inf
    means = halves.mean(axis=1)
    w = float(np.mean(halves.var(axis=1, ddof=1)))
    b = nlen * float(np.var(means, ddof=1))
    if w <= 0.0:
        return 1.0
    var_plus = (nlen - 1) / nlen * w + b / nlen
    return math.sqrt(var_plus / w)


def free_energy_bounds(n: int, V: Potential, beta: float,
                       mu0: EquilibriumMeasure,
                       mu_beta: Optional[EquilibriumMeasure] = None,
                       grid: Optional[Grid] = None) -> dict:
    """Non-asymptotic sandwich for F_{n,beta}.

    Lower: the eta = 1 smeared splitting bound with the exact ball-smearing
    cost constant and the zeta partition integral.  Upper: the product trial
    state built on the finite-temperature mean-field density.
    """
    d = mu0.d
    k = space_constants(d)
    e_mf = mf_energy(mu0, V)
    ell = n ** (-1.0 / d)
    m_max = mu0.max_density()
    # exact ball-profile smearing cost: int_{B_ell} (w - w_ell) = pi ell^2 / 4
    # (d=2) or 2 pi ell^3 / 5 (d=3), times the density sup
    cost_max = m_max * (math.pi * ell ** 2 / 4.0 if d == 2
                        else 2.0 * math.pi * ell ** 3 / 5.0)
    from .core import renormalization_per_point

    renorm = renormalization_per_point(1.0, d) / k.c  # eta = 1 splitting

    # zeta partition integral int e^{-n beta zeta}
    if mu0.radial is not None:
        rad = mu0.radial
        surf = 2.0 * math.pi if d == 2 else 4.0 * math.pi

        def integrand(r):
            z = float(rad.potential_r(np.array([r]))[0]
                      + 0.5 * V.value(rad._radial_point(np.array([r])))[0]
                      - rad.robin_constant)
            return math.exp(-n * beta * max(z, 0.0)) * surf * r ** (d - 1)

        hi = rad.radius
        while integrand(hi) > 1e-300 and hi < 1e4:
            hi *= 1.5
        zint, _ = quad(integrand, 0.0, hi, limit=400,
                       points=[rad.radius] if rad.radius < hi else None)
    else:
        zeta_vals = np.maximum(
            mu0.potential_values + 0.5 * V.value(mu0.grid.node_array())
            - mu0.robin_constant, 0.0)
        zint = float(np.sum(np.exp(-n * beta * zeta_vals)) * mu0.grid.cell_volume)

    lower = (n * n * e_mf
             - (0.5 * n * math.log(n) if d == 2 else 0.0)
             - n ** (2.0 - 2.0 / d) * renorm
             - 2.0 * n * n * cost_max
             - 2.0 * n / beta * math.log(zint))

    if mu_beta is None:
        if grid is None:
            grid = mu0.grid
        mu_beta = solve_mu_beta(V, n, beta, grid)
    from .equilibrium import grid_interaction_energy

    d_mubeta = grid_interaction_energy(mu_beta.grid, mu_beta.density)
    upper = (n * n * mean_field_free_energy(mu_beta, V, n, beta) - n * d_mubeta)
    return {
        "lower": float(lower), "upper": float(upper),
        "mean_field_energy": float(e_mf), "zeta_integral": float(zint),
        "smearing_cost_bound": float(2.0 * n * n * cost_max),
        "renormalization": float(n ** (2.0 - 2.0 / d) * renorm),
        "mu_beta_interaction": float(d_mubeta),
    }


# ---------------------------------------------------------------------------
# tiled near-minimizers
# ---------------------------------------------------------------------------

def _triangular_patch(center, spacing: float, half_extent: float) -> np.ndarray:
    """Triangular lattice points within a centered square of given half side."""
    a1 = np.array([spacing, 0.0])
    a2 = np.array([0.5 * spacing, 0.5 * math.sqrt(3.0) * spacing])
    kmax = int(math.ceil(2.0 * half_extent / spacing)) + 2
    out = []
    for i in range(-kmax, kmax + 1):
        for j in range(-kmax, kmax + 1):
            p = i * a1 + j * a2
            if abs(p[0]) <= half_extent and abs(p[1]) <= half_extent:
                out.append(center + p)
    return np.asarray(out) if out else np.zeros((0, 2))


def _global_lattice_in_box(density: float, lo, side: float, d: int) -> np.ndarray:
    """Points of the origin-anchored triangular/FCC lattice at the given
    density lying in the half-open box [lo, lo + side)^d.

    A shared origin and orientation across cells keeps equal-density cells
    seamless."""
    lo = np.asarray(lo, dtype=float)
    if d == 2:
        spacing = (2.0 / (math.sqrt(3.0) * density)) ** 0.5
        basis = np.array([[spacing, 0.0],
                          [0.5 * spacing, 0.5 * math.sqrt(3.0) * spacing]])
    else:
        a = (4.0 / density) ** (1.0 / 3.0)
        basis = 0.5 * a * np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 1.0],
                                    [1.0, 1.0, 0.0]])
    corners = lo[None, :] + side * np.stack(
        [np.array(bits) for bits in np.ndindex(*(2,) * d)])
    coeff_corners = corners @ np.linalg.inv(basis)
    lo_i = np.floor(coeff_corners.min(axis=0)).astype(int) - 1
    hi_i = np.ceil(coeff_corners.max(axis=0)).astype(int) + 1
    ranges = [np.arange(a_, b_ + 1) for a_, b_ in zip(lo_i, hi_i)]
    mesh = np.meshgrid(*ranges, indexing="ij")
    coeffs = np.stack([m.ravel() for m in mesh], axis=-1)
    pts = coeffs @ basis
    keep = np.all((pts >= lo) & (pts < lo + side), axis=1)
    return pts[keep]


def _fcc_patch(center, density: float, half_extent: float) -> np.ndarray:
    """FCC points (density as given) within a centered cube of given half side."""
    a = (4.0 / density) ** (1.0 / 3.0)
    basis = 0.5 * a * np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
    kmax = int(math.ceil(2.0 * half_extent / (0.5 * a))) + 2
    rng_idx = range(-kmax, kmax + 1)
    out = []
    for i in rng_idx:
        for j in rng_idx:
            for l in rng_idx:
                p = i * basis[0] + j * basis[1] + l * basis[2]
                if np.all(np.abs(p) <= half_extent):
                    out.append(center + p)
    return np.asarray(out) if out else np.zeros((0, 3))


def generate_tiled_configuration(mu0: EquilibriumMeasure, n: int,
                                 R_cell: float = 3.0, seed: int = 0,
                                 r0: Optional[float] = None) -> Configuration:
    """Near-minimizer built by tiling the blown-up support with crystal patches.

    The interior of the blown-up support is cut into cells of side about
    2 R_cell carrying integer target masses; each cell is filled with a
    triangular (d = 2) or FCC (d = 3) patch matching the local density, and
    the leftover boundary mass is placed by dart throwing with a minimum
    separation.  Exactly n points come back (macroscopic coordinates).
    """
    if mu0.radial is None:
        raise ValueError("tiling needs a radial equilibrium measure")
    d = mu0.d
    rad = mu0.radial
    scale = n ** (1.0 / d)
    R_support = rad.radius * scale

    def blown_density(pts):
        return mu0.density_at(np.asarray(pts) / scale)

    mean_density = n / (R_support ** d * (math.pi if d == 2 else 4.0 * math.pi / 3.0))
    if r0 is None:
        r0 = 0.5 / math.sqrt(mean_density)
    spacing = ((2.0 / (math.sqrt(3.0) * mean_density)) ** 0.5 if d == 2
               else (4.0 / mean_density) ** (1.0 / 3.0) / math.sqrt(2.0))
    edge_width = 1.2 * spacing
    R_int = R_support - edge_width
    # cap the cell so the central block fits inside the interior disk
    side = min(2.0 * R_cell, 0.95 * R_int / math.sqrt(d))
    if side < 1.2 * spacing:
        raise ValueError(
            f"tiling infeasible: interior radius {R_int:.2f} only fits cells of "
            f"side {side:.2f} below 1.2 interparticle spacings; increase n or "
            "decrease R_cell")

    kmax = int(math.ceil(R_int / side))
    cells = []
    cell_index = set()
    for multi in np.ndindex(*(2 * kmax,) * d):
        lo = np.array([(-kmax + m) * side for m in multi])
        corners = lo[None, :] + side * np.stack(
            [np.array(bits) for bits in np.ndindex(*(2,) * d)])
        if np.all(np.linalg.norm(corners, axis=1) <= R_int):
            cells.append((lo, lo + 0.5 * side))
            cell_index.add(multi)

    def in_tiled_region(x):
        idx = tuple(int(math.floor((xi + kmax * side) / side)) for xi in x)
        return idx in cell_index

    rng = np.random.default_rng(seed)
    from scipy.spatial import cKDTree

    placed = []
    deficits = []  # (cell lo, missing count)
    total_interior = 0
    for lo, center in cells:
        m_loc = float(blown_density(center[None, :])[0])
        k_pts = int(round(m_loc * side ** d))
        if k_pts <= 0:
            continue
        patch = _global_lattice_in_box(m_loc, lo, side, d)
        if len(patch) > k_pts:
            # drop the points nearest the cell faces (vacancies stay local)
            edge_dist = np.minimum(patch - lo, lo + side - patch).min(axis=1)
            order = np.argsort(edge_dist, kind="stable")
            patch = patch[order[len(patch) - k_pts:]]
        elif len(patch) < k_pts:
            deficits.append((lo, k_pts - len(patch)))
        placed.append(patch)
        total_interior += k_pts

    interior = np.concatenate(placed) if placed else np.zeros((0, d))
    # make up per-cell deficits at the largest voids, checked globally
    for lo, missing in deficits:
        for _ in range(missing):
            cand = lo + rng.random((512, d)) * side
            dmin = (cKDTree(interior).query(cand, k=1)[0] if len(interior)
                    else np.full(len(cand), math.inf))
            interior = np.vstack([interior, cand[int(np.argmax(dmin))]])
    n_boundary = n - total_interior
    if n_boundary < 0:
        raise ValueError("interior tiling overfilled; decrease R_cell")

    # dart throwing in the uncovered region with a minimum-separation constraint
    from scipy.spatial import cKDTree

    darts = []
    rr0 = r0
    attempts = 0
    tree = cKDTree(interior) if len(interior) else None
    while len(darts) < n_boundary:
        attempts += 1
        if attempts > 400 * max(1, n_boundary):
            rr0 *= 0.9  # relax the separation rather than loop forever
            attempts = 0
        u = rng.normal(size=d)
        u /= np.linalg.norm(u)
        radius = rng.random() ** (1.0 / d) * R_support
        cand = radius * u
        if in_tiled_region(cand):
            continue
        # density thinning for non-constant profiles
        if rng.random() * mean_density > float(blown_density(cand[None, :])[0]):
            continue
        if tree is not None and tree.query(cand, k=1)[0] < rr0:
            continue
        if darts and np.min(np.linalg.norm(np.asarray(darts) - cand, axis=1)) < rr0:
            continue
        darts.append(cand)
    pts = np.concatenate([interior, np.asarray(darts).reshape(-1, d)]) if n_boundary \
        else interior
    assert pts.shape[0] == n
    return Configuration(d, pts / scale)
