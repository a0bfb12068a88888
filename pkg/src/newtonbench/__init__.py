"""Curvature-corrected training losses for algorithmic supervision.

Subpackages cover the dense linear algebra, a small manually-backpropagated
MLP, differentiable sorting operators, stochastic-smoothing estimators, a
grid shortest-path solver, the Newton-loss transformation itself, and the
benchmark CLI under ``newtonbench.bench``.
"""

__version__ = "0.1.0"
