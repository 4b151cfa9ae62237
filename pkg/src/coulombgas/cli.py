"""Batch front-end: ``coulombgas run --spec FILE`` and ``coulombgas verify``.

A run spec is a single JSON or TOML document naming one pipeline and its
parameters; outputs (CSV + JSON manifest, plus companion figures unless
disabled) land in the output directory.  Exit codes: 0 success, 2 invalid
spec, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

__all__ = ["main", "run_spec_file", "validate_spec", "SpecError"]

PIPELINES = ("equilibrium", "ground-state", "gibbs", "free-energy",
             "jellium", "diagnostics", "tile")


class SpecError(ValueError):
    """Invalid run specification; message names the offending field."""


# ---------------------------------------------------------------------------
# spec parsing and validation
# ---------------------------------------------------------------------------

def _load_spec_text(text: str, suffix: str) -> dict:
    if suffix in (".toml", ".tml"):
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(text)
    return json.loads(text)


_POTENTIAL_KEYS = {"type", "alpha", "p", "coeff", "center"}

_COMMON_KEYS = {"pipeline", "dimension", "seed", "out", "figures", "threads"}

_PIPELINE_KEYS = {
    "equilibrium": {"potential", "solver", "grid", "tol"},
    "ground-state": {"potential", "n", "schedule", "grid"},
    "gibbs": {"potential", "n", "beta", "sweeps", "burn", "sample_stride",
              "checkpoint", "grid"},
    "free-energy": {"potential", "n", "beta", "betas", "lambda_nodes",
                    "sweeps", "burn", "chains", "bounds", "grid"},
    "jellium": {"lattices", "s_values", "eta", "tolerance", "catalog_file"},
    "diagnostics": {"potential", "n", "beta", "samples", "R_grid",
                    "lambda_grid", "grid", "profile"},
    "tile": {"potential", "n", "R_cell", "r0"},
}

_SCHEDULE_KEYS = {"betas", "sweeps_per_level", "descent_steps", "restarts"}
_GRID_KEYS = {"half_width", "h"}

_REQUIRED_KEYS = {
    "equilibrium": {"dimension", "potential"},
    "ground-state": {"dimension", "potential", "n"},
    "gibbs": {"dimension", "potential", "n", "beta"},
    "free-energy": {"dimension", "potential", "n"},
    "jellium": set(),
    "diagnostics": {"dimension", "potential", "n"},
    "tile": {"dimension", "potential", "n"},
}


def validate_spec(spec: dict) -> dict:
    if not isinstance(spec, dict):
        raise SpecError("spec must be a table/object at top level")
    if "pipeline" not in spec:
        raise SpecError("missing required field 'pipeline'")
    pipeline = spec["pipeline"]
    if pipeline not in PIPELINES:
        raise SpecError(f"unknown pipeline {pipeline!r}; expected one of "
                        f"{', '.join(PIPELINES)}")
    allowed = _COMMON_KEYS | _PIPELINE_KEYS[pipeline]
    unknown = set(spec) - allowed
    if unknown:
        raise SpecError(f"unknown field(s) for pipeline {pipeline!r}: "
                        f"{', '.join(sorted(unknown))}")
    missing = _REQUIRED_KEYS[pipeline] - set(spec)
    if missing:
        raise SpecError(f"missing required field(s) for pipeline {pipeline!r}: "
                        f"{', '.join(sorted(missing))}")
    if pipeline != "jellium":
        d = spec.get("dimension")
        if d not in (2, 3):
            raise SpecError("field 'dimension' must be 2 or 3")
        pot = spec.get("potential")
        if not isinstance(pot, dict):
            raise SpecError("field 'potential' must be a table "
                            "(e.g. {type: 'quadratic', alpha: 1.0})")
        bad = set(pot) - _POTENTIAL_KEYS
        if bad:
            raise SpecError(f"unknown potential field(s): {', '.join(sorted(bad))}")
        if pot.get("type", "quadratic") not in ("quadratic", "power"):
            raise SpecError("potential type must be 'quadratic' or 'power'")
    if "grid" in spec:
        g = spec["grid"]
        if not isinstance(g, dict) or set(g) - _GRID_KEYS:
            raise SpecError("grid must be a table with keys half_width, h")
    if "schedule" in spec:
        s = spec["schedule"]
        if not isinstance(s, dict) or set(s) - _SCHEDULE_KEYS:
            raise SpecError("schedule accepts keys: betas, sweeps_per_level, "
                            "descent_steps, restarts")
        if "betas" in s:
            b = list(s["betas"])
            if any(y <= x for x, y in zip(b, b[1:])):
                raise SpecError("schedule.betas must be strictly increasing")
    for int_field in ("n", "sweeps", "burn", "sample_stride", "lambda_nodes",
                      "chains", "samples", "threads"):
        if int_field in spec and (not isinstance(spec[int_field], int)
                                  or spec[int_field] <= 0):
            raise SpecError(f"field {int_field!r} must be a positive integer")
    if "beta" in spec and not (isinstance(spec["beta"], (int, float))
                               and spec["beta"] > 0):
        raise SpecError("field 'beta' must be a positive number")
    return spec


def _build_potential(spec: dict, d: int):
    from . import equilibrium as eq

    pot = spec["potential"]
    kind = pot.get("type", "quadratic")
    if kind == "quadratic":
        V = eq.quadratic_potential(float(pot.get("alpha", 1.0)), d)
    else:
        V = eq.radial_power_potential(float(pot.get("p", 4)),
                                      float(pot.get("coeff", 1.0)), d)
    if pot.get("center"):
        V = eq.shifted_potential(V, np.asarray(pot["center"], dtype=float))
    return V


def _build_grid(spec: dict, d: int, default_half=1.5, default_h=0.05):
    from .equilibrium import Grid

    g = spec.get("grid", {})
    return Grid.centered(d, float(g.get("half_width", default_half)),
                         float(g.get("h", default_h)))


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------

def _run_equilibrium(spec, outdir, seed, figures):
    from . import equilibrium as eq
    from .serialize import save_measure

    d = spec["dimension"]
    V = _build_potential(spec, d)
    grid = _build_grid(spec, d, default_half=1.5, default_h=0.02 if d == 2 else 0.04)
    solver = spec.get("solver", "obstacle")
    if solver == "radial":
        mu = eq.solve_equilibrium_radial(V, d, grid=grid)
    elif solver == "obstacle":
        mu = eq.solve_equilibrium_obstacle(V, grid, tol=float(spec.get("tol", 1e-9)))
    else:
        raise SpecError("solver must be 'radial' or 'obstacle'")
    zeta = eq.zeta_potential(mu, V)
    paths = list(save_measure(mu, outdir / "measure.csv", zeta.values))
    if figures:
        from .figures import equilibrium_figure

        paths.append(equilibrium_figure(mu, zeta.values, outdir / "measure.png"))
    return paths, {"robin_constant": mu.robin_constant, "mass": mu.mass(),
                   "zeta_min": zeta.min_value,
                   "zeta_max_on_support": zeta.max_on_support}


def _run_ground_state(spec, outdir, seed, figures):
    from . import diagnostics, equilibrium as eq, sampler as sam, splitting as sp
    from .serialize import save_configuration

    d = spec["dimension"]
    n = spec["n"]
    V = _build_potential(spec, d)
    mu = eq.solve_equilibrium_radial(V, d) if V.radial else None
    sched = None
    if "schedule" in spec:
        s = spec["schedule"]
        sched = sam.AnnealSchedule(
            betas=tuple(s.get("betas", sam.AnnealSchedule.default(n, d).betas)),
            sweeps_per_level=int(s.get("sweeps_per_level", 60)),
            descent_steps=int(s.get("descent_steps", 2000)),
            restarts=int(s.get("restarts", 3)))
    cfg, energy, info = sam.find_ground_state(n, V, mu, sched, d=d, seed=seed)
    paths = [save_configuration(cfg, outdir / "ground_state.csv")]
    report = {"energy": energy, **info}
    if mu is not None:
        report["next_order"] = sp.next_order_energy(cfg, mu, V, energy=energy)
    psi6 = None
    if d == 2 and n >= 7:
        rep = diagnostics.bond_order_psi6(cfg)
        report["psi6_bulk_mean"] = rep["bulk_mean"]
        psi6 = rep["magnitudes"]
    (outdir / "ground_state.json").write_text(
        json.dumps(report, indent=2, sort_keys=True, default=float) + "\n")
    paths.append(outdir / "ground_state.json")
    if figures:
        from .figures import configuration_figure

        paths.append(configuration_figure(cfg, outdir / "ground_state.png",
                                          psi6=psi6, title="ground state"))
    return paths, report


def _run_gibbs(spec, outdir, seed, figures):
    from . import equilibrium as eq, sampler as sam
    from .serialize import save_configuration, write_csv

    d = spec["dimension"]
    n = spec["n"]
    beta = float(spec["beta"])
    V = _build_potential(spec, d)
    sweeps = int(spec.get("sweeps", 2000))
    burn = int(spec.get("burn", 500))
    stride = int(spec.get("sample_stride", 10))
    rng = np.random.default_rng(seed)
    if V.radial:
        cfg0 = sam.sample_from_measure(eq.solve_equilibrium_radial(V, d), n, rng)
    else:
        cfg0 = sam.Configuration(d, rng.normal(scale=0.5, size=(n, d)))
    chain = sam.new_chain(cfg0, beta, V, seed=seed)
    sam.tune_proposal_scale(chain, V, sweeps=min(50, burn))
    for _ in range(burn):
        sam.metropolis_sweep(chain, V)
    trace = []
    paths = []
    k = 0
    for sweep in range(sweeps):
        sam.metropolis_sweep(chain, V)
        trace.append(chain.energy)
        if (sweep + 1) % stride == 0:
            paths.append(save_configuration(chain.config,
                                            outdir / f"sample_{k:05d}.csv"))
            k += 1
    chain.audit_energy(V)
    paths.append(write_csv(outdir / "energy_trace.csv", ["sweep", "energy"],
                           [(i, float(e)) for i, e in enumerate(trace)]))
    if spec.get("checkpoint", True):
        (outdir / "checkpoint.json").write_text(
            json.dumps(chain.state_dict(), indent=2, sort_keys=True) + "\n")
        paths.append(outdir / "checkpoint.json")
    if figures:
        from .figures import gibbs_figure

        paths.append(gibbs_figure(trace, chain.config, outdir / "gibbs.png"))
    return paths, {"acceptance_rate": chain.acceptance_rate,
                   "final_energy": chain.energy, "samples": k}


def _run_free_energy(spec, outdir, seed, figures):
    from . import equilibrium as eq, sampler as sam
    from .serialize import write_csv

    d = spec["dimension"]
    n = spec["n"]
    V = _build_potential(spec, d)
    betas = spec.get("betas") or [spec.get("beta", 1.0)]
    betas = [float(b) for b in betas]
    want_bounds = bool(spec.get("bounds", True)) and V.radial
    mu = eq.solve_equilibrium_radial(V, d) if want_bounds else None
    grid = _build_grid(spec, d, default_half=2.0, default_h=0.05)
    estimates, bounds = {}, {}
    rows = []
    for beta in betas:
        est = sam.free_energy(n, V, beta, d=d,
                              lambda_nodes=int(spec.get("lambda_nodes", 8)),
                              sweeps=int(spec.get("sweeps", 1500)),
                              burn=int(spec.get("burn", 500)),
                              chains=int(spec.get("chains", 2)), seed=seed)
        estimates[beta] = est
        row = {"beta": beta, "free_energy": est.value, "stderr": est.stderr,
               "reference": est.reference,
               "converged": est.converged}
        if want_bounds:
            b = sam.free_energy_bounds(n, V, beta, mu, grid=grid)
            bounds[beta] = b
            row["lower_bound"] = b["lower"]
            row["upper_bound"] = b["upper"]
        rows.append(row)
    header = list(rows[0].keys())
    paths = [write_csv(outdir / "free_energy.csv", header,
                       [[r[h] for h in header] for r in rows])]
    if figures:
        from .figures import free_energy_figure

        paths.append(free_energy_figure(estimates, bounds,
                                        outdir / "free_energy.png"))
    return paths, {"rows": rows}


def _run_jellium(spec, outdir, seed, figures):
    from . import jellium as jl
    from .serialize import write_csv

    names = spec.get("lattices", "catalog")
    s_values = [float(s) for s in spec.get("s_values", (0.1, 0.5, 1.0, 2.0))]
    tol = float(spec.get("tolerance", 1e-12))
    if spec.get("catalog_file"):
        catalog = jl.catalog_from_json(Path(spec["catalog_file"]).read_text())
    else:
        catalog = {**jl.lattice_catalog(2), **jl.lattice_catalog(3)}
    if names == "catalog":
        chosen = catalog
    else:
        missing = [nm for nm in names if nm not in catalog]
        if missing:
            raise SpecError(f"unknown lattice name(s): {', '.join(missing)}")
        chosen = {nm: catalog[nm] for nm in names}
    rows = []
    eta = spec.get("eta")
    for name, lat in chosen.items():
        entry = {"lattice": name, "d": lat.d, "density": lat.density,
                 "W": jl.lattice_energy(lat),
                 "zeta": {}}
        for s in s_values:
            if abs(s - (lat.d - 2)) < 1e-9:
                continue  # pole
            entry["zeta"][s] = jl.epstein_zeta(lat, s, tol=tol)
        if eta:
            entry["W_eta"] = jl.box_averaged_W_eta(lat, float(eta)).value
        rows.append(entry)
    header = (["lattice", "d", "density", "W"]
              + [f"zeta_s={s:g}" for s in s_values] + ["tolerance"])
    table = []
    for r in rows:
        table.append([r["lattice"], r["d"], float(r["density"]), float(r["W"])]
                     + [float(r["zeta"].get(s, math.nan)) for s in s_values]
                     + [tol])
    paths = [write_csv(outdir / "jellium.csv", header, table)]
    if figures:
        from .figures import jellium_figure

        paths.append(jellium_figure(rows, outdir / "jellium.png"))
    return paths, {"rows": [{k: v for k, v in r.items()} for r in rows]}


def _run_diagnostics(spec, outdir, seed, figures):
    from . import diagnostics, equilibrium as eq, sampler as sam
    from .serialize import write_csv

    d = spec["dimension"]
    n = spec["n"]
    beta = float(spec.get("beta", 10.0))
    V = _build_potential(spec, d)
    mu = eq.solve_equilibrium_radial(V, d)
    n_samples = int(spec.get("samples", 400))
    rn = diagnostics.micro_radius(n, d)
    R_grid = [float(r) for r in spec.get("R_grid", (rn, 3.0 * rn))]
    lambda_grid = [float(l) for l in spec.get("lambda_grid", (0.1, 0.2, 0.5))]

    cfg0 = sam.sample_from_measure(mu, n, np.random.default_rng(seed))
    chain = sam.new_chain(cfg0, beta, V, seed=seed)
    sam.tune_proposal_scale(chain, V, sweeps=40)
    for _ in range(200):
        sam.metropolis_sweep(chain, V)
    energies = []
    for _ in range(150):
        sam.metropolis_sweep(chain, V)
        energies.append(chain.energy)
    tau = sam.integrated_autocorrelation_time(np.asarray(energies))
    stride = max(1, int(math.ceil(2.0 * tau)))
    samples = []
    while len(samples) < n_samples:
        for _ in range(stride):
            sam.metropolis_sweep(chain, V)
        samples.append(chain.config.copy())

    table = diagnostics.fluctuation_tails(samples, mu, R_grid, lambda_grid)
    rows = list(table.rows())
    header = list(rows[0].keys())
    paths = [write_csv(outdir / "fluctuation_tails.csv", header,
                       [[r[h] for h in header] for r in rows])]
    report = {"thinning_stride": stride, "autocorrelation_time": tau,
              "samples": n_samples, "beta": beta, "seed": seed}
    if spec.get("profile", True):
        prof = diagnostics.density_profile(samples, mu)
        report["l1_distance"] = prof.l1_distance
        report["weak_norm_proxy"] = prof.weak_norm_proxy
        report["dictionary_scales"] = list(prof.dictionary_scales)
        if figures:
            from .figures import density_profile_figure

            paths.append(density_profile_figure(prof, mu, outdir / "profile.png"))
    (outdir / "diagnostics.json").write_text(
        json.dumps(report, indent=2, sort_keys=True, default=float) + "\n")
    paths.append(outdir / "diagnostics.json")
    if figures:
        from .figures import tails_figure

        paths.append(tails_figure(table, outdir / "tails.png"))
    return paths, report


def _run_tile(spec, outdir, seed, figures):
    from . import equilibrium as eq, sampler as sam, splitting as sp
    from .serialize import save_configuration

    d = spec["dimension"]
    n = spec["n"]
    V = _build_potential(spec, d)
    mu = eq.solve_equilibrium_radial(V, d)
    cfg = sam.generate_tiled_configuration(mu, n,
                                           R_cell=float(spec.get("R_cell", 3.0)),
                                           seed=seed,
                                           r0=spec.get("r0"))
    paths = [save_configuration(cfg, outdir / "tiled.csv")]
    from scipy.spatial import cKDTree

    blown = cfg.points * n ** (1.0 / d)
    min_sep = float(cKDTree(blown).query(blown, k=2)[0][:, 1].min())
    report = {"n": n, "min_blown_separation": min_sep,
              "next_order": sp.next_order_energy(cfg, mu, V)}
    (outdir / "tiled.json").write_text(
        json.dumps(report, indent=2, sort_keys=True, default=float) + "\n")
    paths.append(outdir / "tiled.json")
    if figures:
        from .figures import configuration_figure

        paths.append(configuration_figure(cfg, outdir / "tiled.png",
                                          title="tiled configuration"))
    return paths, report


_RUNNERS = {
    "equilibrium": _run_equilibrium,
    "ground-state": _run_ground_state,
    "gibbs": _run_gibbs,
    "free-energy": _run_free_energy,
    "jellium": _run_jellium,
    "diagnostics": _run_diagnostics,
    "tile": _run_tile,
}


def run_spec_file(path, seed_override=None, out_override=None,
                  threads=None) -> int:
    """Execute one spec file; returns the process exit code."""
    from .serialize import RunManifest

    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        print(f"error: cannot read spec file: {exc}", file=sys.stderr)
        return 2
    try:
        spec = _load_spec_text(text, path.suffix.lower())
        spec = validate_spec(spec)
    except (SpecError, ValueError) as exc:
        print(f"error: invalid spec: {exc}", file=sys.stderr)
        return 2

    if threads is None:
        threads = int(os.environ.get("COULOMBGAS_THREADS", "0")) or None

    seed = seed_override if seed_override is not None else int(spec.get("seed", 0))
    outdir = Path(out_override or spec.get("out", "runs/" + path.stem))
    outdir.mkdir(parents=True, exist_ok=True)
    figures = bool(spec.get("figures", True))
    manifest = RunManifest(spec, text, seed)
    manifest.data["threads"] = threads
    try:
        paths, report = _RUNNERS[spec["pipeline"]](spec, outdir, seed, figures)
    except SpecError as exc:
        print(f"error: invalid spec: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # numerical failure path
        print(f"error: {spec['pipeline']} failed: {exc}", file=sys.stderr)
        return 3
    for p in paths:
        manifest.add_output(p)
    manifest.data["report"] = report
    manifest.finish(outdir / "manifest.json")
    print(f"{spec['pipeline']}: wrote {len(paths)} output file(s) to {outdir}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="coulombgas",
        description="Coulomb gas numerical laboratory (d = 2, 3): equilibrium "
                    "measures, jellium energies, Gibbs sampling, diagnostics.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a JSON/TOML run specification")
    run_p.add_argument("--spec", required=True, help="path to the spec file")
    run_p.add_argument("--seed", type=int, default=None,
                       help="override the spec seed")
    run_p.add_argument("--out", default=None, help="override the output directory")
    run_p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: COULOMBGAS_THREADS)")

    ver_p = sub.add_parser("verify", help="run the acceptance suite")
    ver_p.add_argument("suite", choices=("fast", "full"))
    ver_p.add_argument("--only", nargs="*", default=None,
                       help="restrict to named criteria")

    args = parser.parse_args(argv)
    if args.command == "run":
        return run_spec_file(args.spec, seed_override=args.seed,
                             out_override=args.out, threads=args.threads)
    from .acceptance import format_table, run_suite

    results = run_suite(args.suite, names=args.only)
    print(format_table(results))
    return 0 if all(r.passed for r in results) else 1


if __name__ == "__main__":
    sys.exit(main())
