"""Empirical distances to the predicted Gaussian and rate fitting.

The Wasserstein estimator couples order statistics to Gaussian quantiles at
levels (i - 1/2)/R.  Total variation and density distances go through a
Gaussian-kernel density estimate on a fixed grid; both carry an estimator
bias floor that the exact-Gaussian null test pins down, so acceptance checks
against absolute TV values are stated relative to that floor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional
import warnings

import numpy as np
from scipy.stats import norm

from .errors import RejectedInput

GRID_POINTS = 4096
GRID_HALFWIDTH_SIGMAS = 8.0
KERNEL_SUPPORT_BANDWIDTHS = 8.0


def wasserstein_p(xs, m: float, sigma: float, p: float = 1.0) -> float:
    """Order-statistics coupling against N(m, sigma^2) quantiles."""
    xs = np.sort(np.asarray(xs, dtype=float))
    if xs.size == 0:
        raise RejectedInput("empty sample", code="empty-sample")
    if p < 1:
        raise RejectedInput("p must be >= 1", code="bad-p")
    r = xs.size
    q = m + sigma * norm.ppf((np.arange(1, r + 1) - 0.5) / r)
    return float(np.mean(np.abs(xs - q) ** p) ** (1.0 / p))


def wasserstein_p_se(xs, m, sigma, p=1.0, n_boot=24, seed=0):
    """Bootstrap standard error of the Wasserstein estimate."""
    xs = np.asarray(xs, dtype=float)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(77,)))
    vals = [wasserstein_p(rng.choice(xs, size=xs.size, replace=True), m, sigma, p)
            for _ in range(n_boot)]
    return float(np.std(vals, ddof=1))


def _silverman(xs):
    sd = np.std(xs)
    iqr = np.subtract(*np.percentile(xs, [75, 25]))
    scale = min(sd, iqr / 1.34) if iqr > 0 else sd
    if scale <= 0:
        scale = max(sd, 1e-12)
    return 0.9 * scale * len(xs) ** (-0.2)


def _kde_derivative_grid(xs, grid, h, r):
    """r-th derivative of the Gaussian KDE on a uniform grid, via binning.

    Returns (values, inside_fraction).  Samples outside the grid are dropped
    from the estimate but reported through inside_fraction.
    """
    dx = grid[1] - grid[0]
    lo = grid[0] - dx / 2.0
    hi = grid[-1] + dx / 2.0
    inside = (xs >= lo) & (xs < hi)
    frac = float(np.mean(inside))
    counts, _ = np.histogram(xs[inside], bins=len(grid), range=(lo, hi))
    half = int(np.ceil(KERNEL_SUPPORT_BANDWIDTHS * h / dx))
    u = (np.arange(-half, half + 1) * dx) / h
    phi = np.exp(-0.5 * u * u) / np.sqrt(2.0 * np.pi)
    if r == 0:
        kern = phi
    else:
        herm = np.polynomial.hermite_e.hermeval(u, np.eye(r + 1)[r])
        kern = (-1.0) ** r * herm * phi
    kern = kern / (len(xs) * h ** (r + 1))
    return np.convolve(counts, kern, mode="same"), frac


def _gaussian_density_derivative(grid, m, sigma, r):
    u = (grid - m) / sigma
    phi = np.exp(-0.5 * u * u) / (np.sqrt(2.0 * np.pi) * sigma)
    if r == 0:
        return phi
    herm = np.polynomial.hermite_e.hermeval(u, np.eye(r + 1)[r])
    return (-1.0) ** r * herm * phi / sigma ** r


def tv_kde(xs, m: float, sigma: float, bandwidth: Optional[float] = None) -> float:
    """(1/2) L^1 distance between the Gaussian-kernel density estimate and the
    target normal density, on a 4096-point grid over [m - 8 sigma, m + 8 sigma].
    Mass outside the grid counts fully toward the distance."""
    xs = np.asarray(xs, dtype=float)
    if sigma <= 0:
        raise RejectedInput("sigma must be positive", code="bad-sigma")
    if xs.size < 100:
        raise RejectedInput("need at least 100 samples", code="too-few-samples")
    h = bandwidth if bandwidth is not None else _silverman(xs)
    grid = np.linspace(m - GRID_HALFWIDTH_SIGMAS * sigma, m + GRID_HALFWIDTH_SIGMAS * sigma,
                       GRID_POINTS)
    fhat, frac = _kde_derivative_grid(xs, grid, h, 0)
    phi = _gaussian_density_derivative(grid, m, sigma, 0)
    tv = 0.5 * np.trapezoid(np.abs(fhat - phi), grid)
    out_phi = 2.0 * norm.sf(GRID_HALFWIDTH_SIGMAS)
    return float(min(1.0, tv + 0.5 * (1.0 - frac) + 0.5 * out_phi))


def density_sup_distance(xs, m: float, sigma: float, r: int = 0) -> float:
    """sup |d^r/dx^r (KDE - normal density)| with the derivative-adjusted
    bandwidth h_r = Silverman x R^{1/5 - 1/(5+2r)}."""
    if r < 0 or r > 3:
        raise RejectedInput("derivative order r <= 3", code="bad-order")
    xs = np.asarray(xs, dtype=float)
    if xs.size < 1000:
        raise RejectedInput("need at least 1000 samples", code="too-few-samples")
    if np.var(xs) < 1e-12:
        warnings.warn("degenerate sample (variance < 1e-12); KDE spike dominates")
        if r >= 1:
            h0 = 1e-6
            grid = np.linspace(m - GRID_HALFWIDTH_SIGMAS * sigma,
                               m + GRID_HALFWIDTH_SIGMAS * sigma, GRID_POINTS)
            fhat, _ = _kde_derivative_grid(xs, grid, h0, r)
            phi = _gaussian_density_derivative(grid, m, sigma, r)
            return float(np.max(np.abs(fhat - phi)))
    h = _silverman(xs) * len(xs) ** (0.2 - 1.0 / (5.0 + 2.0 * r))
    grid = np.linspace(m - GRID_HALFWIDTH_SIGMAS * sigma, m + GRID_HALFWIDTH_SIGMAS * sigma,
                       GRID_POINTS)
    fhat, _ = _kde_derivative_grid(xs, grid, h, r)
    phi = _gaussian_density_derivative(grid, m, sigma, r)
    return float(np.max(np.abs(fhat - phi)))


def density_sup_distance_se(xs, m, sigma, r=0, n_boot=12, seed=0):
    xs = np.asarray(xs, dtype=float)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(78, r)))
    vals = [density_sup_distance(rng.choice(xs, size=xs.size, replace=True), m, sigma, r)
            for _ in range(n_boot)]
    return float(np.std(vals, ddof=1))


def fit_rate(n_grid, distances, stderrs=None):
    """Weighted least squares of log(distance) on log(n).

    Returns (slope, intercept, slope_stderr).
    """
    n_grid = np.asarray(n_grid, dtype=float)
    d = np.asarray(distances, dtype=float)
    if len(n_grid) < 3:
        raise RejectedInput("need at least 3 grid points", code="too-few-points")
    if np.any(d <= 0):
        raise RejectedInput("distances must be positive for a log-log fit", code="bad-distance")
    if stderrs is None:
        w = np.ones_like(d)
    else:
        se = np.asarray(stderrs, dtype=float)
        var_log = np.where(se > 0, (se / d) ** 2, np.min((se[se > 0] / d[se > 0]) ** 2)
                           if np.any(se > 0) else 1.0)
        w = 1.0 / var_log
    x = np.log(n_grid)
    y = np.log(d)
    xmat = np.column_stack([x, np.ones_like(x)])
    wm = xmat.T * w
    cov = np.linalg.inv(wm @ xmat)
    coef = cov @ (wm @ y)
    return float(coef[0]), float(coef[1]), float(np.sqrt(cov[0, 0]))


def projected_wp(samples, pred, p: float = 1.0, n_projections: int = 32, seed: int = 0) -> float:
    """Sliced estimate of the multivariate Wasserstein distance to the
    predicted Gaussian: average over random unit directions of the 1-d
    distance.  A lower-bound surrogate, labeled as such in reports."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[1] < 2:
        raise RejectedInput("samples must be (R, d) with d >= 2", code="bad-shape")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(79,)))
    acc = 0.0
    for _ in range(n_projections):
        u = rng.standard_normal(samples.shape[1])
        u /= np.linalg.norm(u)
        mu = float(u @ pred.m)
        sd = float(np.sqrt(u @ pred.C @ u))
        acc += wasserstein_p(samples @ u, mu, sd, p)
    return acc / n_projections


@dataclass(frozen=True)
class DistanceReport:
    n_grid: tuple
    distance: tuple
    stderr: tuple
    kind: str
    fitted_slope: float
    slope_stderr: float

    def __post_init__(self):
        if not (len(self.n_grid) == len(self.distance) == len(self.stderr)):
            raise RejectedInput("n_grid, distance, stderr must share length", code="bad-report")
        if any(d < 0 for d in self.distance):
            raise RejectedInput("distances must be nonnegative", code="bad-report")
