"""Master operator: forward application, inversion, and empirical counterparts.

The operator acts at the psi = f' level:

    Theta_V psi(x) = -V'(x) psi(x) + int (psi(x) - psi(y)) / (x - y) mu_V(dy).

On the support the Euler-Lagrange equation cancels the -V' psi term, leaving
the finite Hilbert transform (airfoil) equation -H[psi mu_V] = xi + c_xi.  In
the weighted basis sqrt(1-x^2) U_k the transform is diagonal, so for
xi = sum a_j T_j the solvable data gives c_xi = -a_0 and

    psi S = -(1/2) sum_{j>=1} a_j U_{j-1}   on [-1, 1].

The off-support extension forced by the equation collapses, through the
identities z^k = T_k - sign(x) sqrt(x^2-1) U_{k-1} (z the inverse Joukowski
variable) and m_V - V' = -2 sign(x) sqrt(x^2-1) S, to the same ratio, so psi
is one global rational function on U and a single refit represents it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .equilibrium import Equilibrium
from .errors import NearCriticalEdge, NumericalError, RejectedInput
from .series import (
    ChebSeries,
    QUADRATURE_DEGREE,
    cheb_antiderivative,
    cheb_derivative,
    cheb_eval,
    cheb_fit,
    cheb_truncate,
    refit,
    rho_nodes,
    semicircle_weights,
    sup_norm,
    u_to_t,
)

INVERSION_FIT_DEGREE = 160
EXTENSION_GRID = 64  # off-support diagnostic points per side
RESIDUAL_TOL = 1e-8
# divided differences switch to the derivative below this gap
DD_SWITCH = 1e-8
# spec'd diagonal convention for the empirical operator
TN_DIAGONAL_TOL = 1e-14


@dataclass(frozen=True)
class InversionData:
    """psi = f' with Theta_V psi = xi + c_xi on U, plus derivative and primitive."""

    xi: ChebSeries
    psi: ChebSeries
    psi1: ChebSeries
    f: ChebSeries
    c_xi: float


def dd_table(vals_x, vals_y, xs, ys, deriv: ChebSeries):
    """Divided-difference table (vals_x[...,None] - vals_y)/(xs[...,None] - ys),
    with the derivative evaluated lazily on the rare near-diagonal entries."""
    d = xs[..., None] - ys
    near = np.abs(d) < DD_SWITCH
    out = (vals_x[..., None] - vals_y) / np.where(near, 1.0, d)
    if near.any():
        mids = (0.5 * (xs[..., None] + np.broadcast_to(ys, d.shape)))[near]
        out[near] = cheb_eval(deriv, mids)
    return out


def apply_theta_v(eq: Equilibrium, psi: ChebSeries, x, m=None):
    """Forward operator by quadrature against mu_V (independent of invert_theta)."""
    if m is None:
        m = max(QUADRATURE_DEGREE, psi.degree // 2 + eq.s.degree + 8)
    y = rho_nodes(m)
    w = semicircle_weights(y) * cheb_eval(eq.s, y)
    dpsi = cheb_derivative(psi)
    scalar = np.isscalar(x)
    xv = np.atleast_1d(np.asarray(x, dtype=float))
    px = cheb_eval(psi, xv)
    dd = dd_table(px, cheb_eval(psi, y), xv, y, dpsi)
    out = -cheb_eval(eq.potential.v1, xv) * px + dd @ w
    return float(out[0]) if scalar else out


def stieltjes_minus_vprime(eq: Equilibrium, x):
    """m_V(x) - V'(x) for |x| > 1, in the closed form -2 sign(x) sqrt(x^2-1) S(x)."""
    x = np.asarray(x, dtype=float)
    return -2.0 * np.sign(x) * np.sqrt(x * x - 1.0) * cheb_eval(eq.s, x)


def invert_theta(eq: Equilibrium, xi: ChebSeries, fit_degree=None) -> InversionData:
    """Solve Theta_V psi = xi + c_xi on U = (-1-delta, 1+delta).

    Stage 1 (on the support): the airfoil solve in the weighted U-basis is a
    coefficient read-off, psi S = -(1/2) sum_{j>=1} a_j U_{j-1} and c_xi = -a_0.
    Stage 2 (off support): the pointwise extension forced by the equation,

        psi(x) = (xi(x) + c_xi + int psi dmu_V / (x - .)) / (m_V(x) - V'(x)),

    with both closed forms in the inverse Joukowski variable z (|z| < 1):
    the psi-Stieltjes term is -sum_{j>=1} a_j z^j and the denominator is
    -2 sign(x) sqrt(x^2-1) S(x).  xi itself is evaluated from its own series,
    never from the [-1,1] refit, which would be unstable off-support at high
    degree.  The two stages are refit as one series on U and validated against
    the independent forward quadrature.
    """
    uhw = eq.uhw
    ref = refit(xi, max(xi.degree, 2), (-1.0, 1.0))
    a = cheb_truncate(ref).coeffs
    c_xi = -float(a[0])
    numerator = ChebSeries(u_to_t(a[1:]) if len(a) > 1 else np.zeros(1), (-1.0, 1.0))
    a_tail = a.copy()
    a_tail[0] = 0.0

    # near-critical edge check on the off-support extension grid
    t = (np.arange(EXTENSION_GRID) + 0.5) / EXTENSION_GRID
    xg = np.concatenate([-1.0 - eq.delta * t, 1.0 + eq.delta * t])
    denom = np.abs(stieltjes_minus_vprime(eq, xg))
    if denom.min() < 1e-6:
        raise NearCriticalEdge(float(denom.min()))
    sg = cheb_eval(eq.s, np.linspace(-uhw, uhw, 4 * EXTENSION_GRID))
    if sg.min() <= 0.0:
        raise NearCriticalEdge(float(2.0 * sg.min()))

    def psi_values(x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        inside = np.abs(x) <= 1.0
        xi_in = x[inside]
        out[inside] = -cheb_eval(numerator, xi_in) / (2.0 * cheb_eval(eq.s, xi_in))
        xo = x[~inside]
        if xo.size:
            z = xo - np.sign(xo) * np.sqrt(xo * xo - 1.0)
            stieltjes_psi = -np.polynomial.polynomial.polyval(z, a_tail)
            num = cheb_eval(xi, xo) + c_xi + stieltjes_psi
            out[~inside] = num / stieltjes_minus_vprime(eq, xo)
        return out

    deg = fit_degree if fit_degree is not None else max(INVERSION_FIT_DEGREE, xi.degree + 32)
    psi = cheb_fit(psi_values, deg, (-uhw, uhw))
    psi1 = cheb_derivative(psi)
    f = cheb_antiderivative(psi, 0.0)

    xs = np.linspace(-uhw, uhw, 512)
    res = apply_theta_v(eq, psi, xs) - cheb_eval(xi, xs) - c_xi
    tol = RESIDUAL_TOL * (1.0 + sup_norm(xi, (-uhw, uhw)))
    if np.max(np.abs(res)) > tol:
        raise NumericalError(f"inversion residual {np.max(np.abs(res)):.3e} exceeds {tol:.3e}")
    return InversionData(xi, psi, psi1, f, c_xi)


def apply_t_n(fp: ChebSeries, lambdas, x):
    """Empirical operator (1/n) sum_i (fp(x)-fp(lam_i))/(x-lam_i), with the
    derivative convention on the diagonal."""
    lam = np.asarray(lambdas, dtype=float)
    if lam.size == 0:
        raise RejectedInput("empty configuration", code="bad-config")
    dfp = cheb_derivative(fp)
    scalar = np.isscalar(x)
    xv = np.atleast_1d(np.asarray(x, dtype=float))
    d = xv[:, None] - lam[None, :]
    near = np.abs(d) < TN_DIAGONAL_TOL
    safe = np.where(near, 1.0, d)
    num = cheb_eval(fp, xv)[:, None] - cheb_eval(fp, lam)[None, :]
    vals = np.where(near, cheb_eval(dfp, lam)[None, :], num / safe)
    out = vals.mean(axis=1)
    return float(out[0]) if scalar else out


def t_v_apply(eq: Equilibrium, fp: ChebSeries, x, m=None):
    """T_V fp(x) = int (fp(x)-fp(y))/(x-y) mu_V(dy) by quadrature."""
    if m is None:
        m = max(QUADRATURE_DEGREE, fp.degree // 2 + eq.s.degree + 8)
    y = rho_nodes(m)
    w = semicircle_weights(y) * cheb_eval(eq.s, y)
    dfp = cheb_derivative(fp)
    scalar = np.isscalar(x)
    xv = np.atleast_1d(np.asarray(x, dtype=float))
    dd = dd_table(cheb_eval(fp, xv), cheb_eval(fp, y), xv, y, dfp)
    out = dd @ w
    return float(out[0]) if scalar else out


def t_v_mean(eq: Equilibrium, fp: ChebSeries, m=None) -> float:
    """int T_V fp dmu_V by tensor quadrature (exact for polynomial fp)."""
    if m is None:
        m = max(QUADRATURE_DEGREE, fp.degree // 2 + eq.s.degree + 8)
    y = rho_nodes(m)
    w = semicircle_weights(y) * cheb_eval(eq.s, y)
    dfp = cheb_derivative(fp)
    vy = cheb_eval(fp, y)
    dd = dd_table(vy, vy, y, y, dfp)
    return float(w @ dd @ w)


def pairwise_dd_sum(fp: ChebSeries, lambdas) -> float:
    """sum_{i != j} (fp(lam_i) - fp(lam_j)) / (lam_i - lam_j)."""
    lam = np.asarray(lambdas, dtype=float)
    v = cheb_eval(fp, lam)
    d = lam[:, None] - lam[None, :]
    np.fill_diagonal(d, 1.0)
    dd = (v[:, None] - v[None, :]) / d
    np.fill_diagonal(dd, 0.0)
    return float(dd.sum())


def quadratic_remainder(eq: Equilibrium, fp: ChebSeries, lambdas) -> float:
    """<T_n fp - T_V fp, nu_bar_n>, the quadratic term of the master equation.

    Uses the Fubini identity <T_n fp, n mu_V> = <T_V fp, nu_n> so only one
    double integral (independent of the configuration) remains.
    """
    lam = np.asarray(lambdas, dtype=float)
    n = lam.size
    dfp = cheb_derivative(fp)
    tn_sum = pairwise_dd_sum(fp, lam) / n + float(np.mean(cheb_eval(dfp, lam)))
    tv_sum = float(np.sum(t_v_apply(eq, fp, lam)))
    return tn_sum - 2.0 * tv_sum + n * t_v_mean(eq, fp)
