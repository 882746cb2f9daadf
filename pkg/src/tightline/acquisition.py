"""Acquisition maximization: over the unit box, and restricted to an l1 ball.

The box maximizer is a multistart projected quasi-Newton ascent from
scrambled low-discrepancy restarts. The budget-constrained variant wraps
the same ascent in a log-barrier outer loop whose iterates stay strictly
inside {x in (0,1)^d : sum(x) < budget}, so every proposal it returns is
feasible by construction. The penalty transform for observations lives
here too.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from . import lbfgs
from .attack import BudgetConstraint
from .gp import GpPosterior, expected_improvement


@dataclass(frozen=True)
class OptimizerSettings:
    max_iterations: int = 2000
    improvement_tolerance: float = 0.01
    num_restarts: int = 16
    barrier_initial: float = 1e-2
    barrier_decay: float = 0.1
    barrier_rounds: int = 7
    barrier_inner_tolerance: float = 1e-7
    barrier_inner_iterations: int = 200

    def __post_init__(self) -> None:
        if min(self.max_iterations, self.num_restarts, self.barrier_rounds, self.barrier_inner_iterations) < 1:
            raise ValueError("iteration, restart, and round counts must be >= 1")
        if min(self.improvement_tolerance, self.barrier_initial, self.barrier_decay, self.barrier_inner_tolerance) <= 0:
            raise ValueError("tolerances and barrier parameters must be > 0")
        if self.barrier_decay >= 1:
            raise ValueError("barrier_decay must be < 1")


@dataclass(frozen=True)
class PenaltySettings:
    rho: float

    def __post_init__(self) -> None:
        if self.rho <= 0:
            raise ValueError("rho must be > 0")


def _restart_points(dim: int, count: int, seed: int) -> np.ndarray:
    sampler = qmc.Sobol(d=dim, scramble=True, seed=seed)
    return sampler.random(count)


def maximize_acquisition_box(
    gp: GpPosterior,
    best: float,
    settings: OptimizerSettings = OptimizerSettings(),
    seed: int = 0,
) -> np.ndarray:
    """Multistart ascent of expected improvement over [0, 1]^d."""

    def objective(x):
        return expected_improvement(gp, x, best)

    best_x = None
    best_val = -np.inf
    for start in _restart_points(gp.dim, settings.num_restarts, seed):
        x, val = lbfgs.maximize(
            objective,
            start,
            0.0,
            1.0,
            max_iterations=settings.max_iterations,
            improvement_tolerance=settings.improvement_tolerance,
        )
        if val > best_val:
            best_val = val
            best_x = x
    return np.clip(best_x, 0.0, 1.0)


def _barrier_starts(dim: int, count: int, budget: float, seed: int) -> np.ndarray:
    starts = 0.02 + 0.96 * _restart_points(dim, count, seed)
    sums = starts.sum(axis=1)
    shrink = sums >= 0.95 * budget
    starts[shrink] *= (0.95 * budget / sums[shrink])[:, None]
    return starts


def maximize_acquisition_l1(
    gp: GpPosterior,
    best: float,
    budget: BudgetConstraint,
    settings: OptimizerSettings = OptimizerSettings(),
    seed: int = 0,
) -> np.ndarray:
    """Maximize expected improvement over {x in [0,1]^d : sum(x) <= budget}.

    Log-barrier outer loop with projected quasi-Newton inner solves; the
    barrier weight decays geometrically, warm-starting each round from the
    previous solution. Output is strictly interior, hence always feasible.
    """
    lam = budget.budget
    dim = gp.dim

    def barrier_objective(mu_b):
        def inner(x):
            slack = lam - float(x.sum())
            if slack <= 0.0 or np.any(x <= 0.0) or np.any(x >= 1.0):
                return -np.inf, np.zeros(dim)
            ei, grad = expected_improvement(gp, x, best)
            value = ei + mu_b * (np.log(slack) + float(np.sum(np.log(x))) + float(np.sum(np.log1p(-x))))
            grad = grad + mu_b * (-1.0 / slack + 1.0 / x - 1.0 / (1.0 - x))
            return value, grad

        return inner

    starts = _barrier_starts(dim, settings.num_restarts, lam, seed)
    # Keep the barrier a perturbation of the acquisition, whatever its scale,
    # so the first outer round does not collapse the restarts together.
    ei_scale = max(
        max(expected_improvement(gp, start, best)[0] for start in starts),
        1e-12,
    )

    best_x = None
    best_val = -np.inf
    for start in starts:
        x = start
        for round_idx in range(settings.barrier_rounds):
            mu_b = settings.barrier_initial * settings.barrier_decay**round_idx
            x, _ = lbfgs.maximize(
                barrier_objective(mu_b),
                x,
                0.0,
                1.0,
                max_iterations=min(settings.max_iterations, settings.barrier_inner_iterations),
                improvement_tolerance=settings.barrier_inner_tolerance,
                pg_tolerance=settings.barrier_inner_tolerance,
            )
        val, _ = expected_improvement(gp, x, best)
        if val > best_val:
            best_val = val
            best_x = x
    assert best_x is not None and float(best_x.sum()) <= lam + 1e-9
    return best_x


def penalize_observation(y: float, x, budget: BudgetConstraint, penalty: PenaltySettings) -> float:
    """Exact-penalty transform: y + rho * min(budget - sum(x), 0)."""
    excess = float(np.sum(np.asarray(x, dtype=float))) - budget.budget
    return float(y + penalty.rho * min(-excess, 0.0))
