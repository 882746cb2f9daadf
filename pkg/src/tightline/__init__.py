"""Search for undetectable line-limit tightening attacks on transmission grids.

The library couples a DC power-flow model and an event-driven cascade
simulator with Gaussian-process Bayesian optimization over per-line
tightening parameters, including l1-budget-constrained variants.
"""

__version__ = "0.1.0"
