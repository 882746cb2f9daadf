"""Line-limit tightening: effective limits, budget constraint, undetectability.

A tightening vector x in [0,1]^E interpolates every line's flow limit
between its rating (x=0) and the magnitude of its equilibrium flow (x=1).
Because the interpolated limit never drops below the equilibrium flow, the
optimal dispatch is unchanged and the modification is invisible to state
monitoring.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Network
from .powerflow import DispatchState, solve_equilibrium


class DimensionMismatch(ValueError):
    """A tightening vector does not match the network's line count."""


@dataclass(frozen=True)
class BudgetConstraint:
    budget: float  # upper bound on sum(x)

    def __post_init__(self) -> None:
        if self.budget <= 0:
            raise ValueError("budget must be > 0")


def check_tightening(x, num_lines: int) -> np.ndarray:
    """Validate and normalize a tightening vector (one entry per line, in [0,1])."""
    arr = np.asarray(x, dtype=float)
    if arr.shape != (num_lines,):
        raise DimensionMismatch(f"tightening vector has shape {arr.shape}, expected ({num_lines},)")
    if not np.all((arr >= 0.0) & (arr <= 1.0)):
        raise ValueError("tightening components must lie in [0, 1]")
    return arr


def tighten_limits(x, equilibrium_flows, ratings) -> np.ndarray:
    """Per-line effective limits: x*|flow| + (1-x)*rating.

    x=0 leaves the rating untouched; x=1 pulls the limit down to the
    equilibrium flow magnitude. Flow magnitudes marginally above rating
    (solver slack) are clamped so the interpolation stays ordered.
    """
    flows = np.abs(np.asarray(equilibrium_flows, dtype=float))
    ratings = np.asarray(ratings, dtype=float)
    if flows.shape != ratings.shape:
        raise DimensionMismatch(f"flow shape {flows.shape} does not match rating shape {ratings.shape}")
    arr = check_tightening(x, ratings.shape[0])
    flows = np.minimum(flows, ratings)
    return arr * flows + (1.0 - arr) * ratings


def constraint_value(x, budget: BudgetConstraint) -> float:
    """c(x) = sum(x) - budget; feasible iff <= 0 (components are nonnegative)."""
    return float(np.sum(np.asarray(x, dtype=float)) - budget.budget)


def undetectability_check(
    network: Network,
    x,
    equilibrium: DispatchState,
    cost_rtol: float = 1e-6,
    flow_atol: float = 1e-6,
) -> tuple[bool, dict]:
    """Re-solve the dispatch under tightened limits and compare with the baseline.

    Returns (undetectable, report). The attack is undetectable when the
    re-solved cost matches within cost_rtol (relative) and every line flow
    matches within flow_atol (p.u.). The report lists any deviating lines.

    The adversary is assumed to observe the equilibrium flows exactly; an
    estimation-noise hook can be added here if that assumption is relaxed.
    """
    ratings = np.array([ln.rating for ln in network.lines])
    limits = tighten_limits(x, equilibrium.flows, ratings)
    resolved = solve_equilibrium(network, limits=limits)

    scale = max(abs(equilibrium.objective_cost), 1e-12)
    cost_dev = abs(resolved.objective_cost - equilibrium.objective_cost) / scale
    flow_dev = np.abs(resolved.flows - equilibrium.flows)
    deviating = np.flatnonzero(flow_dev > flow_atol)
    ok = cost_dev <= cost_rtol and deviating.size == 0
    report = {
        "cost_relative_deviation": float(cost_dev),
        "max_flow_deviation": float(flow_dev.max()) if flow_dev.size else 0.0,
        "deviating_lines": deviating.tolist(),
    }
    return ok, report
