"""Safe-set computation and safe learning for uncertain discrete-time systems.

The package is organized around five robust safe-set formulations (one-step,
two-step, infinite-step, and their bounded-nonlinearity variants), the
learning algorithms that query a simulated plant through them, and
independent brute-force oracles that double-check every safety claim.
Submodules are imported explicitly, e.g. ``from safelearn import safesets``.
"""

__version__ = "0.1.0"
