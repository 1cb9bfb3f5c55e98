"""Desk-scale laboratory for boundary influence in the two-dimensional
random-field Ising model: exact T=0 ground states, exact small-volume Gibbs
inference, perfect sampling, admissible couplings, percolation metrics, and
a seeded experiment harness."""

__version__ = "0.1.0"
