import numpy as np
import pytest

from coulombgas import core, equilibrium as eq


def separated_config(rng, n, d, radius, min_sep):
    """Random points in a ball with pairwise separation >= min_sep."""
    pts = []
    guard = 0
    while len(pts) < n:
        guard += 1
        if guard > 200000:
            raise RuntimeError("separation sampling stuck")
        cand = rng.uniform(-radius, radius, size=d)
        if np.linalg.norm(cand) > radius:
            continue
        if all(np.linalg.norm(cand - p) >= min_sep for p in pts):
            pts.append(cand)
    return core.Configuration(d, np.array(pts))


@pytest.fixture(scope="session")
def quad_potentials():
    return {d: eq.quadratic_potential(1.0, d) for d in (2, 3)}


@pytest.fixture(scope="session")
def radial_measures(quad_potentials):
    return {d: eq.solve_equilibrium_radial(quad_potentials[d], d) for d in (2, 3)}
