"""Predicted CLT quantities, the exact Stein decomposition, bounds, and probes.

The decomposition of a vector of linear statistics X (test functions xi_i,
inversion data psi_i = f_i') is

    X = m + L F / n + Z,        F_i = (1/beta) <f_i, nu_bar_n>,

with the primitive-level centering m_i = (1/2 - 1/beta) <f_i'', mu_V> and the
remainder Z_i = (1/2 - 1/beta) <f_i'', mu_n> - m_i - (1/2) <T_n f_i' - T_V f_i', nu_bar_n>.
The identity is exact per configuration; its residual is the package's
strongest correctness oracle.

Sign convention: Gamma[X_i, -F_j/n] is computed as -(1/beta) <xi_i' psi_j, mu_n>,
the orientation under which the T_k family yields positive variances matching
the covariance double integral.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ensemble import SampleBatch
from .equilibrium import Equilibrium, quantiles
from .errors import FreenessViolated, OutlierConfiguration, RejectedInput, ValidationError
from .master_op import InversionData, dd_table, t_v_mean
from .series import (
    ChebSeries,
    QUADRATURE_DEGREE,
    cheb_derivative,
    cheb_eval,
    refit,
    rho_nodes,
    semicircle_weights,
)

MAX_DIMENSION = 4
PREDICT_NODES = 256


def gaussian_lp_norm(p: float, d: int = 1) -> float:
    """||N||_{L^p} for a standard Gaussian vector in R^d (chi distribution moment)."""
    if p < 1:
        raise RejectedInput("p must be >= 1", code="bad-p")
    mom = 2.0 ** (p / 2.0) * math.gamma((d + p) / 2.0) / math.gamma(d / 2.0)
    return mom ** (1.0 / p)


@dataclass(frozen=True)
class Prediction:
    """Limiting mean and covariance with the Stein-bound prefactors."""

    m: np.ndarray
    C: np.ndarray
    Sigma: np.ndarray
    A_beta: float
    a_beta: float  # nan unless d = 1
    beta: float
    p: float

    @property
    def d(self):
        return len(self.m)

    @property
    def sigma(self):
        """Standard deviation in the univariate case."""
        return float(np.sqrt(self.C[0, 0]))


def _dd_vals(series, deriv, xs, ys, switch=1e-12):
    d = xs - ys
    near = np.abs(d) < switch
    safe = np.where(near, 1.0, d)
    num = cheb_eval(series, xs) - cheb_eval(series, ys)
    return np.where(near, cheb_eval(deriv, 0.5 * (xs + ys)), num / safe)


def predict(xis: Sequence[ChebSeries], eq: Equilibrium, beta: float, p: float = 1.0) -> Prediction:
    """Limiting mean and covariance by tensorized Gauss-Chebyshev quadrature.

    m_i = (1/2 - 1/beta) [ (xi(-1)+xi(1))/2 - int xi drho
                           - (1/2) int (S'/S)(x) (xi(x)-xi(y))/(x-y) rho(dy) mu_sc(dx) ]
    c_ij = (1/(2 beta)) int dd_i dd_j (1 - xy) drho drho.
    """
    if beta <= 0:
        raise RejectedInput("beta must be positive", code="bad-beta")
    d = len(xis)
    if d == 0 or d > MAX_DIMENSION:
        raise ValidationError(f"1 <= d <= {MAX_DIMENSION} test functions supported", code="bad-dimension")
    x = rho_nodes(PREDICT_NODES)
    wsc = semicircle_weights(x)
    sratio = cheb_eval(eq.s1, x) / cheb_eval(eq.s, x)
    refs = [refit(xi, max(xi.degree, 2), (-1.0, 1.0)) for xi in xis]
    dds = []
    m = np.empty(d)
    half = 0.5 - 1.0 / beta
    for i, xi in enumerate(refs):
        dxi = cheb_derivative(xi)
        dd = _dd_vals(xi, dxi, x[:, None], x[None, :])
        dds.append(dd)
        dbl = float((sratio * wsc) @ dd.mean(axis=1))
        boundary = 0.5 * (cheb_eval(xi, -1.0) + cheb_eval(xi, 1.0))
        m[i] = half * (boundary - float(xi.coeffs[0]) - 0.5 * dbl)
    one_xy = 1.0 - np.outer(x, x)
    cmat = np.empty((d, d))
    for i in range(d):
        for j in range(i, d):
            cmat[i, j] = cmat[j, i] = float(np.mean(dds[i] * dds[j] * one_xy)) / (2.0 * beta)
    evals, evecs = np.linalg.eigh(cmat)
    # absolute floor catches the all-roundoff C of near-constant inputs
    if evals.min() <= 1e-10 * max(np.trace(cmat), 1e-14):
        raise FreenessViolated()
    sigma_mat = (evecs * np.sqrt(evals)) @ evecs.T
    npn = gaussian_lp_norm(p, d)
    op = float(np.sqrt(evals.max()))
    cinv_fro = float(np.sqrt(np.sum(1.0 / evals ** 2)))
    a_big = op * cinv_fro * npn / beta + abs(half) * op
    a_small = (1.0 / beta) / cmat[0, 0] + abs(half) * math.sqrt(math.pi) / 2.0 if d == 1 else float("nan")
    return Prediction(m, cmat, sigma_mat, float(a_big), float(a_small), float(beta), float(p))


def linear_statistic(xi: ChebSeries, eq: Equilibrium, lambdas) -> float:
    """X = sum xi(lam_i) - n int xi dmu_V."""
    lam = np.asarray(lambdas, dtype=float)
    return float(np.sum(cheb_eval(xi, lam)) - lam.size * eq.mean(xi))


@dataclass(frozen=True)
class SteinTerms:
    X: np.ndarray
    F: np.ndarray
    Z: np.ndarray
    GammaXF: np.ndarray
    master_residual: float


def primitive_centering(eq: Equilibrium, inv: InversionData) -> float:
    """m_f = (1/2 - 1/beta)-free part: <f'', mu_V> (multiply by the half factor)."""
    return eq.mean(inv.psi1)


def stein_terms(xis: Sequence[ChebSeries], eq: Equilibrium, beta: float, lambdas,
                invs: Sequence[InversionData]) -> SteinTerms:
    """All measurable ingredients of the decomposition for one configuration.

    Requires every coordinate inside U; otherwise the outlier event is raised
    with the offending magnitude.
    """
    from .ensemble import apply_generator
    from .master_op import quadratic_remainder

    lam = np.asarray(lambdas, dtype=float)
    n = lam.size
    max_abs = float(np.max(np.abs(lam)))
    if max_abs >= eq.uhw:
        raise OutlierConfiguration(max_abs)
    d = len(xis)
    if len(invs) != d:
        raise ValidationError("one InversionData per test function required", code="bad-inversion")
    half = 0.5 - 1.0 / beta
    X = np.empty(d)
    F = np.empty(d)
    Z = np.empty(d)
    gamma = np.empty((d, d))
    resid = 0.0
    psi_vals = [cheb_eval(inv.psi, lam) for inv in invs]
    for i in range(d):
        X[i] = linear_statistic(xis[i], eq, lam)
        F[i] = (float(np.sum(cheb_eval(invs[i].f, lam))) - n * eq.mean(invs[i].f)) / beta
        m_f = half * eq.mean(invs[i].psi1)
        q = quadratic_remainder(eq, invs[i].psi, lam)
        Z[i] = half * float(np.mean(cheb_eval(invs[i].psi1, lam))) - m_f - 0.5 * q
        lf_over_n = apply_generator(eq.potential, invs[i].f, lam, beta, n) / (n * beta)
        resid = max(resid, abs(X[i] - m_f - lf_over_n - Z[i]))
        dxi = cheb_derivative(xis[i])
        dxi_vals = cheb_eval(dxi, lam)
        for j in range(d):
            gamma[i, j] = -(1.0 / beta) * float(np.mean(dxi_vals * psi_vals[j]))
    return SteinTerms(X, F, Z, gamma, float(resid))


@dataclass(frozen=True)
class SteinBatch:
    """Per-replicate Stein quantities over the non-outlier part of a batch."""

    X: np.ndarray            # (R, d)
    Z: np.ndarray            # (R, d)
    gamma: np.ndarray        # (R, d, d)
    master_residual: np.ndarray  # (R,)
    outliers: int
    reps_total: int


def stein_batch(xis, eq, beta, batch: SampleBatch, invs, chunk_bytes=6e7) -> SteinBatch:
    """Vectorized stein_terms over a batch; outlier replicates (max |lam| >= 1+delta)
    are counted and excluded."""
    lam_all = batch.matrix()
    n = batch.n
    keep = np.max(np.abs(lam_all), axis=1) < eq.uhw
    outliers = int((~keep).sum())
    lam_all = lam_all[keep]
    resp = lam_all.shape[0]
    d = len(xis)
    half = 0.5 - 1.0 / beta
    mquad = max(QUADRATURE_DEGREE, max(inv.psi.degree for inv in invs) // 2 + eq.s.degree + 8)
    y = rho_nodes(mquad)
    wq = semicircle_weights(y) * cheb_eval(eq.s, y)
    xi_means = np.array([eq.mean(xi) for xi in xis])
    m_f = np.array([half * eq.mean(inv.psi1) for inv in invs])
    tv_means = np.array([t_v_mean(eq, inv.psi) for inv in invs])
    psi_y = np.vstack([cheb_eval(inv.psi, y) for inv in invs])   # (d, M)
    dxis = [cheb_derivative(xi) for xi in xis]
    v1 = eq.potential.v1

    X = np.empty((resp, d))
    Z = np.empty((resp, d))
    gamma = np.empty((resp, d, d))
    resid = np.zeros(resp)

    bsz = max(1, int(chunk_bytes / (8.0 * lam_all.shape[1] * max(lam_all.shape[1], mquad, 1))))
    for lo in range(0, resp, bsz):
        lam = lam_all[lo:lo + bsz]
        b = lam.shape[0]
        dmat = lam[:, :, None] - lam[:, None, :]
        idx = np.arange(n)
        dmat[:, idx, idx] = 1.0
        v1_lam = cheb_eval(v1, lam)
        xi_vals = np.stack([cheb_eval(xi, lam) for xi in xis])        # (d, b, n)
        dxi_vals = np.stack([cheb_eval(dx, lam) for dx in dxis])
        psi_vals = np.stack([cheb_eval(inv.psi, lam) for inv in invs])
        dpsi_vals = np.stack([cheb_eval(inv.psi1, lam) for inv in invs])
        X[lo:lo + b] = (xi_vals.sum(axis=2) - n * xi_means[:, None]).T
        gamma[lo:lo + b] = -(1.0 / beta) * np.einsum('ibt,jbt->bij', dxi_vals, psi_vals) / n
        for i in range(d):
            dd = (psi_vals[i][:, :, None] - psi_vals[i][:, None, :]) / dmat
            dd[:, idx, idx] = 0.0
            pair_sum = dd.sum(axis=(1, 2))
            # T_V psi at the particles, by quadrature against mu_V
            tv_at = dd_table(psi_vals[i], psi_y[i], lam, y, invs[i].psi1) @ wq   # (b, n)
            q = pair_sum / n + dpsi_vals[i].mean(axis=1) - 2.0 * tv_at.sum(axis=1) + n * tv_means[i]
            Z[lo:lo + b, i] = half * dpsi_vals[i].mean(axis=1) - m_f[i] - 0.5 * q
            lf_over_n = (dpsi_vals[i].sum(axis=1)
                         - beta * n * (v1_lam * psi_vals[i]).sum(axis=1)
                         + 0.5 * beta * pair_sum) / (n * beta)
            resid[lo:lo + b] = np.maximum(
                resid[lo:lo + b],
                np.abs(X[lo:lo + b, i] - m_f[i] - lf_over_n - Z[lo:lo + b, i]))
    return SteinBatch(X, Z, gamma, resid, outliers, batch.reps)


def lp_norm_estimate(values: np.ndarray, p: float):
    """(E |v|^p)^{1/p} over replicates with jackknife standard error.

    values: (R,) magnitudes (already Euclidean norms for vector quantities).
    """
    u = np.abs(values) ** p
    r = len(u)
    total = u.sum()
    est = (total / r) ** (1.0 / p)
    if r < 2:
        return float(est), float("nan")
    loo = ((total - u) / (r - 1)) ** (1.0 / p)
    se = math.sqrt((r - 1) / r * np.sum((loo - loo.mean()) ** 2))
    return float(est), float(se)


def stein_bound(pred: Prediction, gamma_dev: float, z_norm: float, p: float = 1.0,
                mode: str = "wasserstein") -> float:
    """Normal-approximation bound from the measured ||C - Gamma|| and ||Z||.

    wasserstein: ||Sigma||_op ||C^-1|| ||N||_p gamma_dev + ||Sigma||_op z_norm
    tv (d = 1):  (2/sigma^2) gamma_dev + (sqrt(pi)/2) z_norm
    """
    if gamma_dev < 0 or z_norm < 0:
        raise RejectedInput("norm estimates must be nonnegative", code="bad-norm")
    if mode == "wasserstein":
        evals = np.linalg.eigvalsh(pred.C)
        op = float(np.sqrt(evals.max()))
        cinv = float(np.sqrt(np.sum(1.0 / evals ** 2)))
        return op * cinv * gaussian_lp_norm(p, pred.d) * gamma_dev + op * z_norm
    if mode == "tv":
        if pred.d != 1:
            raise RejectedInput("tv bound requires d = 1", code="bad-dimension")
        s2 = pred.C[0, 0]
        return (2.0 / s2) * gamma_dev + (math.sqrt(math.pi) / 2.0) * z_norm
    raise RejectedInput(f"unknown mode {mode!r}", code="bad-mode")


# ---------------------------------------------------------------------------
# diagnostics: rigidity, outliers, negative moments, alpha-regularity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RigidityReport:
    envelope_violation_rate: float
    outlier_rate: float
    max_abs_lambda: float


def rigidity_report(eq: Equilibrium, batch: SampleBatch, eps: float) -> RigidityReport:
    """Fraction of replicates leaving the rigidity envelope
    |lam_(j) - rho_j| <= jhat^{-1/3} n^{-2/3+eps}, and the outlier rate
    max |lam_i| >= 1 + delta."""
    lam = batch.matrix()
    n = batch.n
    rho = quantiles(eq, n)
    j = np.arange(1, n + 1)
    jhat = np.minimum(j, n - j + 1)
    env = jhat ** (-1.0 / 3.0) * n ** (-2.0 / 3.0 + eps)
    viol = np.abs(lam - rho) > env
    out = np.max(np.abs(lam), axis=1) >= eq.uhw
    return RigidityReport(float(viol.any(axis=1).mean()), float(out.mean()),
                          float(np.max(np.abs(lam))))


def negative_moment_probe(batch: SampleBatch, xi_prime: ChebSeries, eps_grid):
    """Empirical tail of Gamma[X,X]/n = <(xi')^2, mu_n> at each threshold."""
    eps_grid = np.asarray(eps_grid, dtype=float)
    if np.any(eps_grid <= 0) or np.any(np.diff(eps_grid) <= 0):
        raise RejectedInput("eps_grid must be positive increasing", code="bad-grid")
    vals = (cheb_eval(xi_prime, batch.matrix()) ** 2).mean(axis=1)
    return [(float(e), float(np.mean(vals <= e))) for e in eps_grid]


@dataclass(frozen=True)
class AlphaRegularityReport:
    points: tuple          # (eps, measure) pairs
    slope: float
    richardson_error: float


def alpha_regularity(xi_prime: ChebSeries, eps_grid, domain, grid_points=100_000) -> AlphaRegularityReport:
    """Lebesgue measure of {|xi'| <= eps} on the domain by grid counting at N
    and 2N points (Richardson consistency), plus the log-log slope."""
    eps_grid = np.asarray(eps_grid, dtype=float)
    if np.any(eps_grid <= 0):
        raise RejectedInput("eps_grid must be positive", code="bad-grid")
    lo, hi = domain
    results = []
    rich = 0.0
    for npts in (grid_points, 2 * grid_points):
        x = np.linspace(lo, hi, npts)
        vals = np.abs(cheb_eval(xi_prime, x))
        meas = [(hi - lo) * np.mean(vals <= e) for e in eps_grid]
        results.append(np.asarray(meas))
    rich = float(np.max(np.abs(results[1] - results[0])))
    meas = results[1]
    pos = meas > 0
    if pos.sum() >= 2:
        slope = float(np.polyfit(np.log(eps_grid[pos]), np.log(meas[pos]), 1)[0])
    else:
        slope = float("nan")
    pts = tuple((float(e), float(v)) for e, v in zip(eps_grid, meas))
    return AlphaRegularityReport(pts, slope, rich)
