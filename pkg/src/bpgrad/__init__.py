"""Gradient statistics of layered Pauli-rotation circuits.

Simulation (statevector + exact product factorization), twirl analytics,
closed-form variance predictors, and a deterministic Monte Carlo estimator
with a CSV/SVG experiment CLI.
"""

__version__ = "0.1.0"
