"""emreduce: matter-free evolution of electrodynamics four-potentials.

Library layout:
  grid       periodic lattice, stencils, elliptic solver, snapshots
  integrate  fixed-step RK4 with observers
  scalar     unitary-gauge scalar electrodynamics (oracle + field-only closure)
  spinor     Dirac-Maxwell electrodynamics (oracle, gauge transform, closure)
  fock       Carleman embedding into a truncated bosonic Fock space
  scenario   config-driven runs, snapshots, manifests, comparisons
  verify     acceptance experiments behind the `emreduce verify` command
"""

__version__ = "0.1.0"
