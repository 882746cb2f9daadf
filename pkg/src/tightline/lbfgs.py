"""Box-constrained quasi-Newton ascent.

A compact limited-memory BFGS with gradient projection onto the box and
Armijo backtracking along the projected arc. Objectives may return -inf to
mark points outside their domain (used by the log-barrier solver); such
steps are rejected and the line search backtracks, which keeps iterates
strictly inside open domains as long as the start point is.
"""

from __future__ import annotations

from collections import deque

import numpy as np

_ARMIJO_C1 = 1e-4
_MAX_BACKTRACKS = 50
_CURVATURE_EPS = 1e-10


def _two_loop(grad: np.ndarray, history: deque) -> np.ndarray:
    """Inverse-Hessian product H @ grad from stored (s, y) pairs."""
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(history):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    if history:
        s, y, _ = history[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(history, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def maximize(
    f_and_grad,
    x0: np.ndarray,
    lower,
    upper,
    max_iterations: int = 2000,
    improvement_tolerance: float = 0.01,
    pg_tolerance: float = 1e-9,
    history_size: int = 8,
) -> tuple[np.ndarray, float]:
    """Maximize f over the box [lower, upper] starting from x0.

    Stops when the projected gradient falls below pg_tolerance, when an
    accepted step improves f by less than improvement_tolerance relative to
    its magnitude, when no improving step exists, or at max_iterations.
    Returns the best iterate and its value.
    """
    lower = np.broadcast_to(np.asarray(lower, dtype=float), np.shape(x0)).copy()
    upper = np.broadcast_to(np.asarray(upper, dtype=float), np.shape(x0)).copy()
    x = np.clip(np.asarray(x0, dtype=float).copy(), lower, upper)
    f, g = f_and_grad(x)
    if not np.isfinite(f):
        raise ValueError("starting point is outside the objective's domain")

    history: deque = deque(maxlen=history_size)
    for _ in range(max_iterations):
        projected = x - np.clip(x + g, lower, upper)  # ascent: move along +g
        if np.max(np.abs(projected)) < pg_tolerance:
            break

        d = _two_loop(g, history)
        if float(d @ g) <= 0.0:  # not an ascent direction; fall back to steepest
            d = g.copy()

        alpha = 1.0
        accepted = False
        for _ in range(_MAX_BACKTRACKS):
            x_new = np.clip(x + alpha * d, lower, upper)
            step = x_new - x
            if not step.any():
                break
            f_new, g_new = f_and_grad(x_new)
            if np.isfinite(f_new) and f_new >= f + _ARMIJO_C1 * float(g @ step):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break

        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if -sy > _CURVATURE_EPS * np.linalg.norm(s) * np.linalg.norm(y):
            # store in minimization convention: curvature of -f is positive
            history.append((s, -y, 1.0 / (-sy)))

        gain = f_new - f
        x, f, g = x_new, f_new, g_new
        if gain <= improvement_tolerance * max(abs(f), abs(f_new), 1e-30) and gain >= 0:
            break
    return x, f
