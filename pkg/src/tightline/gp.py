"""Gaussian-process surrogate with a Matern 3/2 kernel and expected improvement.

Observations are standardized to zero mean and unit variance before
fitting (the fixed noise variance is expressed in standardized units) and
posterior quantities are mapped back to raw units on output. The prior
mean is the constant mean of the observations, which is 0 after
standardization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import ndtr

_SQRT3 = np.sqrt(3.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
_MIN_STD = 1e-12
_JITTER_SCALE = 1e-8
_JITTER_RETRIES = 3


class IllConditioned(RuntimeError):
    """Covariance factorization failed even after jitter (duplicate rows with zero noise?)."""


@dataclass(frozen=True)
class KernelParams:
    signal_variance: float = 1.0
    lengthscale: float | np.ndarray = 1.0  # shared scalar or per-dimension array
    noise_variance: float = 0.5

    def __post_init__(self) -> None:
        if self.signal_variance <= 0:
            raise ValueError("signal_variance must be > 0")
        if np.any(np.asarray(self.lengthscale) <= 0):
            raise ValueError("lengthscale must be > 0")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be >= 0")


def _scaled_diff(a: np.ndarray, b: np.ndarray, lengthscale) -> np.ndarray:
    return (a - b) / np.asarray(lengthscale, dtype=float)


def matern32(a, b, params: KernelParams) -> tuple[float, np.ndarray]:
    """Matern 3/2 covariance k(a, b) and its gradient with respect to `a`.

    k = s2 * (1 + sqrt(3) r) * exp(-sqrt(3) r) with r the lengthscale-scaled
    Euclidean distance. The gradient is smooth through r = 0.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"point shapes differ: {a.shape} vs {b.shape}")
    u = _scaled_diff(a, b, params.lengthscale)
    r = float(np.sqrt(np.sum(u * u)))
    decay = np.exp(-_SQRT3 * r)
    value = params.signal_variance * (1.0 + _SQRT3 * r) * decay
    grad = -3.0 * params.signal_variance * decay * u / np.asarray(params.lengthscale, dtype=float)
    return value, grad


def _cross_cov(xq: np.ndarray, xt: np.ndarray, params: KernelParams) -> np.ndarray:
    """Covariance matrix between query rows and training rows."""
    ell = np.asarray(params.lengthscale, dtype=float)
    diff = xq[:, None, :] / ell - xt[None, :, :] / ell
    r = np.sqrt(np.sum(diff * diff, axis=-1))
    return params.signal_variance * (1.0 + _SQRT3 * r) * np.exp(-_SQRT3 * r)


@dataclass
class GpPosterior:
    """Fitted surrogate. Treat as immutable after `fit`; queries are read-only."""

    x_train: np.ndarray  # (n, d)
    y_train: np.ndarray  # (n,) raw observations
    params: KernelParams
    y_mean: float
    y_std: float
    chol: np.ndarray  # lower factor of K + noise*I (standardized units)
    weights: np.ndarray  # (K + noise*I)^-1 residuals
    clamp_events: int = 0
    _diag_extra: float = field(default=0.0, repr=False)  # jitter actually applied

    @property
    def num_points(self) -> int:
        return self.x_train.shape[0]

    @property
    def dim(self) -> int:
        return self.x_train.shape[1]

    @property
    def best_observed(self) -> float:
        if self.num_points == 0:
            raise ValueError("no observations")
        return float(np.max(self.y_train))


def empty_posterior(dim: int, params: KernelParams, prior_mean: float = 0.0) -> GpPosterior:
    """Prior-only surrogate: mean `prior_mean`, variance k(x, x) everywhere."""
    return GpPosterior(
        x_train=np.zeros((0, dim)),
        y_train=np.zeros(0),
        params=params,
        y_mean=prior_mean,
        y_std=1.0,
        chol=np.zeros((0, 0)),
        weights=np.zeros(0),
    )


def fit(x_train, y_train, params: KernelParams) -> GpPosterior:
    """Factorize K + noise*I on standardized observations.

    Retries with escalating jitter (1e-8 * mean diagonal, x100 per retry)
    when the factorization fails; raises IllConditioned after 3 retries.
    """
    x_arr = np.atleast_2d(np.asarray(x_train, dtype=float))
    y_arr = np.asarray(y_train, dtype=float).ravel()
    n = x_arr.shape[0]
    if n == 0 or y_arr.size != n:
        raise ValueError("need n >= 1 training points with matching observations")

    y_mean = float(np.mean(y_arr))
    y_std = float(np.std(y_arr))
    if y_std < _MIN_STD:
        y_std = 1.0
    residual = (y_arr - y_mean) / y_std

    cov = _cross_cov(x_arr, x_arr, params)
    base = cov + params.noise_variance * np.eye(n)
    jitter = _JITTER_SCALE * float(np.trace(cov)) / n
    extra = 0.0
    for attempt in range(_JITTER_RETRIES + 1):
        try:
            chol = np.linalg.cholesky(base + extra * np.eye(n))
            break
        except np.linalg.LinAlgError:
            extra = jitter if extra == 0.0 else extra * 100.0
            if attempt == _JITTER_RETRIES:
                raise IllConditioned(
                    "covariance factorization failed after jitter; duplicate points with zero noise?"
                ) from None
    weights = cho_solve((chol, True), residual)
    return GpPosterior(
        x_train=x_arr,
        y_train=y_arr,
        params=params,
        y_mean=y_mean,
        y_std=y_std,
        chol=chol,
        weights=weights,
        _diag_extra=extra,
    )


def posterior(gp: GpPosterior, x) -> tuple[float, float, np.ndarray, np.ndarray]:
    """Posterior (mean, variance, grad mean, grad variance) at one point, raw units."""
    x = np.asarray(x, dtype=float).ravel()
    params = gp.params
    if gp.num_points == 0:
        return gp.y_mean, params.signal_variance * gp.y_std**2, np.zeros(x.size), np.zeros(x.size)

    ell = np.asarray(params.lengthscale, dtype=float)
    u = (x[None, :] - gp.x_train) / ell
    r = np.sqrt(np.sum(u * u, axis=1))
    decay = np.exp(-_SQRT3 * r)
    k_vec = params.signal_variance * (1.0 + _SQRT3 * r) * decay
    # d k(x, x_i) / dx, one row per training point
    k_grad = -3.0 * params.signal_variance * decay[:, None] * u / ell

    mu_std = float(k_vec @ gp.weights)
    v = solve_triangular(gp.chol, k_vec, lower=True)
    var_std = params.signal_variance - float(v @ v)
    if var_std < 0.0:
        var_std = 0.0
        gp.clamp_events += 1

    dmu_std = k_grad.T @ gp.weights
    kinv_k = cho_solve((gp.chol, True), k_vec)
    dvar_std = -2.0 * (k_grad.T @ kinv_k)

    mu = gp.y_mean + gp.y_std * mu_std
    var = gp.y_std**2 * var_std
    return mu, var, gp.y_std * dmu_std, gp.y_std**2 * dvar_std


def posterior_batch(gp: GpPosterior, xq) -> tuple[np.ndarray, np.ndarray]:
    """Posterior means and variances at many points (no gradients), raw units."""
    xq = np.atleast_2d(np.asarray(xq, dtype=float))
    params = gp.params
    if gp.num_points == 0:
        prior_var = params.signal_variance * gp.y_std**2
        return np.full(xq.shape[0], gp.y_mean), np.full(xq.shape[0], prior_var)
    k_mat = _cross_cov(xq, gp.x_train, params)
    mu_std = k_mat @ gp.weights
    v = solve_triangular(gp.chol, k_mat.T, lower=True)
    var_std = params.signal_variance - np.sum(v * v, axis=0)
    clamped = var_std < 0.0
    if clamped.any():
        gp.clamp_events += int(clamped.sum())
        var_std = np.maximum(var_std, 0.0)
    return gp.y_mean + gp.y_std * mu_std, gp.y_std**2 * var_std


def _norm_pdf(z: np.ndarray | float):
    return _INV_SQRT_2PI * np.exp(-0.5 * np.square(z))


def expected_improvement(gp: GpPosterior, x, best: float) -> tuple[float, np.ndarray]:
    """EI(x) = sigma*phi(z) + (mu-best)*Phi(z) with z = (mu-best)/sigma, and its gradient.

    In the degenerate limit sigma -> 0 this returns max(mu - best, 0) with
    the subgradient convention grad = grad(mu) when mu > best else 0.
    """
    mu, var, dmu, dvar = posterior(gp, x)
    sigma = np.sqrt(var)
    gap = mu - best
    if sigma < 1e-12:
        if gap > 0.0:
            return gap, dmu
        return 0.0, np.zeros_like(dmu)
    z = gap / sigma
    cdf = float(ndtr(z))
    pdf = float(_norm_pdf(z))
    value = sigma * pdf + gap * cdf
    dsigma = dvar / (2.0 * sigma)
    grad = cdf * dmu + pdf * dsigma
    return float(value), grad


def expected_improvement_batch(gp: GpPosterior, xq, best: float) -> np.ndarray:
    """EI at many points (no gradients)."""
    mu, var = posterior_batch(gp, xq)
    sigma = np.sqrt(var)
    gap = mu - best
    out = np.maximum(gap, 0.0)
    ok = sigma >= 1e-12
    z = np.where(ok, gap / np.where(ok, sigma, 1.0), 0.0)
    ei = sigma * _norm_pdf(z) + gap * ndtr(z)
    return np.where(ok, ei, out)


def log_marginal_likelihood(x_train, y_train, params: KernelParams) -> float:
    """Log evidence of the standardized observations under the GP prior."""
    gp = fit(x_train, y_train, params)
    residual = (gp.y_train - gp.y_mean) / gp.y_std
    n = gp.num_points
    log_det = 2.0 * float(np.sum(np.log(np.diag(gp.chol))))
    return -0.5 * float(residual @ gp.weights) - 0.5 * log_det - 0.5 * n * np.log(2.0 * np.pi)


def select_lengthscale(
    x_train,
    y_train,
    noise_variance: float = 0.5,
    grid: np.ndarray | None = None,
) -> KernelParams:
    """Pick a shared lengthscale by maximizing marginal likelihood over a fixed grid.

    The 16-point log grid spans [0.05, 5] * sqrt(d), bracketing the typical
    pairwise distances of points in the unit box. Selection happens once
    per optimization campaign; ties go to the smallest candidate.
    """
    x_arr = np.atleast_2d(np.asarray(x_train, dtype=float))
    d = x_arr.shape[1]
    if grid is None:
        grid = np.geomspace(0.05 * np.sqrt(d), 5.0 * np.sqrt(d), 16)
    best_ell = float(grid[0])
    best_lml = -np.inf
    for ell in grid:
        params = KernelParams(signal_variance=1.0, lengthscale=float(ell), noise_variance=noise_variance)
        try:
            lml = log_marginal_likelihood(x_arr, y_train, params)
        except IllConditioned:
            continue
        if lml > best_lml:
            best_lml = lml
            best_ell = float(ell)
    return KernelParams(signal_variance=1.0, lengthscale=best_ell, noise_variance=noise_variance)
