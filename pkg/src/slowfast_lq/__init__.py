"""Singularly perturbed stochastic LQ control: full, reduced and boundary-layer Riccati solvers."""
__version__ = "0.1.0"
