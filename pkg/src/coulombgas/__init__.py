"""coulombgas: a numerical laboratory for classical Coulomb gases in d = 2, 3.

Submodules
----------
core         kernels, smeared charges, the n-body Hamiltonian
equilibrium  mean-field energy, equilibrium measures, effective potential
splitting    energy decompositions and the renormalized energy of finite configs
jellium      periodic (torus/Ewald) renormalized energies, Epstein zeta
sampler      Gibbs sampling, ground-state search, free energies, tilings
diagnostics  charge fluctuations, density profiles, crystal order parameters
cli          batch front-end (`coulombgas run`, `coulombgas verify`)
"""

__version__ = "0.1.0"

from . import core, diagnostics, equilibrium, jellium, sampler, splitting  # noqa: F401
