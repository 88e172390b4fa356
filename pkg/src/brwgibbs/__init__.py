"""Branching random walks in the boundary case: Gibbs trajectories and their limits."""
__version__ = "0.1.0"
