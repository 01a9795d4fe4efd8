"""Quantum state filtering and optimal feedback control toolkit.

Implements the Belavkin filtering equation for a continuously measured
finite-dimensional quantum system, the associated optimal-control machinery
(super-Hamiltonians, Pontryagin diagnostics), a backward finite-difference
solver for the feedback Bellman PDE on the qubit Bloch ball, and a
Monte-Carlo verification harness that checks the solved value function
against achieved closed-loop costs.
"""

__version__ = "0.1.0"
