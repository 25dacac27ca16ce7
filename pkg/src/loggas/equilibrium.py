"""Equilibrium measure of a one-cut log-gas, normalized to support [-1, 1].

The density factor S (against the semicircle law) of a potential with
polynomial V' comes out of exact coefficient algebra: the divided difference
of T_k integrated against the arcsine measure is U_{k-1}, so

    S = (1/2) sum_k c_k U_{k-1},    V' = sum_k c_k T_k on [-1, 1].

Mass and Euler-Lagrange residual are then coefficient identities: the measure
has mass 1 iff c_1 = 2, and V'(x) - H[S mu_sc](x) == c_0 on (-1, 1).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

from .errors import (
    CriticalPotential,
    NoNormalizationFound,
    NumericalError,
    RejectedInput,
    SupportNotNormalized,
)
from .series import (
    ChebSeries,
    QUADRATURE_DEGREE,
    cheb_derivative,
    cheb_eval,
    cheb_fit,
    cheb_truncate,
    parse_function_spec,
    refit,
    rho_nodes,
    semicircle_weights,
    t_to_u,
    u_to_t,
)

MASS_TOL = 1e-8
EL_TOL = 1e-6
DEFAULT_DELTA = 0.1
WORKING_MARGIN = 0.5  # working interval = [-(1+delta+margin), 1+delta+margin]


@dataclass(frozen=True)
class Potential:
    """V with its first two derivatives on a working interval containing U."""

    v: ChebSeries
    v1: ChebSeries
    v2: ChebSeries
    semiconvexity_bound: float

    @property
    def interval(self):
        return self.v.interval


def potential_from_series(v: ChebSeries) -> Potential:
    v1 = cheb_derivative(v)
    v2 = cheb_derivative(v1)
    x = np.linspace(*v.interval, 1024)
    return Potential(v, v1, v2, float(np.min(cheb_eval(v2, x))))


def potential_from_callable(f, delta=DEFAULT_DELTA, degree=None, halfwidth=None) -> Potential:
    from .series import DEFAULT_FIT_DEGREE

    hw = halfwidth if halfwidth is not None else 1.0 + delta + WORKING_MARGIN
    deg = degree if degree is not None else DEFAULT_FIT_DEGREE
    return potential_from_series(cheb_fit(f, deg, (-hw, hw)))


def potential_from_spec(spec: str, delta=DEFAULT_DELTA, halfwidth=None) -> Potential:
    base = parse_function_spec(spec)
    hw = halfwidth if halfwidth is not None else 1.0 + delta + WORKING_MARGIN
    # polynomial: refit at its own degree is exact
    return potential_from_series(refit(base, max(base.degree, 2), (-hw, hw)))


def _vprime_ref_coeffs(p: Potential):
    """T-coefficients of V' refit on the reference interval [-1, 1]."""
    return refit(p.v1, max(p.v1.degree, 2), (-1.0, 1.0)).coeffs


def density_factor_series(p: Potential) -> ChebSeries:
    """S = (1/2) int (V'(x)-V'(y))/(x-y) rho(dy) as a T-series on [-1, 1]."""
    c = _vprime_ref_coeffs(p)
    b = 0.5 * c[1:] if len(c) > 1 else np.zeros(1)
    return cheb_truncate(ChebSeries(u_to_t(b), (-1.0, 1.0)))


@dataclass(frozen=True)
class Equilibrium:
    """Validated equilibrium data mu_V = S mu_sc for a normalized potential."""

    potential: Potential
    s: ChebSeries
    s1: ChebSeries
    delta: float
    mass_defect: float
    min_s: float

    @cached_property
    def s_ucoeffs(self):
        return t_to_u(self.s.coeffs)

    @cached_property
    def hilbert_s(self):
        """H[S mu_sc] on (-1,1) as a T-series: 2 sum_k b_k T_{k+1}."""
        b = self.s_ucoeffs
        t = np.zeros(len(b) + 1)
        t[1:] = 2.0 * b
        return ChebSeries(t, (-1.0, 1.0))

    @cached_property
    def _quad(self):
        x = rho_nodes(QUADRATURE_DEGREE)
        w = semicircle_weights(x) * cheb_eval(self.s, x)
        return x, w

    @property
    def uhw(self):
        """Half-width of the widened interval U = (-1-delta, 1+delta)."""
        return 1.0 + self.delta

    def mean(self, f, m=None):
        """int f dmu_V by Gauss-Chebyshev quadrature (exact for polynomial f
        of degree <= 2m - deg(S) - 3)."""
        if m is None:
            x, w = self._quad
        else:
            x = rho_nodes(m)
            w = semicircle_weights(x) * cheb_eval(self.s, x)
        v = f(x) if callable(f) else cheb_eval(f, x)
        return float(np.sum(w * v))

    def cdf(self, x):
        """CDF of mu_V via closed-form antiderivatives of U_k mu_sc."""
        b = self.s_ucoeffs
        theta = np.arccos(np.clip(np.asarray(x, dtype=float), -1.0, 1.0))
        acc = b[0] * 0.5 * ((np.pi - theta) + 0.5 * np.sin(2.0 * theta))
        for k in range(1, len(b)):
            if b[k] == 0.0:
                continue
            acc = acc + b[k] * 0.5 * (
                np.sin((k + 2) * theta) / (k + 2) - np.sin(k * theta) / k
            )
        out = (2.0 / np.pi) * acc
        return float(out) if np.isscalar(x) else out

    def density(self, x):
        """Lebesgue density of mu_V on (-1, 1)."""
        x = np.asarray(x, dtype=float)
        return cheb_eval(self.s, x) * (2.0 / np.pi) * np.sqrt(np.clip(1.0 - x * x, 0.0, None))


def el_residual(eq: Equilibrium, x) -> float:
    """Differentiated Euler-Lagrange residual V'(x) - H[mu_V](x), x in (-1, 1)."""
    xv = np.asarray(x, dtype=float)
    if np.any(np.abs(xv) >= 1.0):
        raise RejectedInput("el_residual requires x strictly inside (-1, 1)", code="bad-point")
    out = cheb_eval(eq.potential.v1, xv) - cheb_eval(eq.hilbert_s, xv)
    return float(out) if np.isscalar(x) else out


def build_equilibrium(p: Potential, delta: float = DEFAULT_DELTA) -> Equilibrium:
    """Construct and validate mu_V = S mu_sc; raises if the potential is not
    normalized to the one-cut support [-1, 1]."""
    if delta <= 0:
        raise RejectedInput("delta must be positive", code="bad-delta")
    lo, hi = p.interval
    if lo > -1.0 - delta or hi < 1.0 + delta:
        raise RejectedInput("potential working interval must contain U", code="domain-too-small")
    s = density_factor_series(p)
    b = t_to_u(s.coeffs)
    mass_defect = abs(b[0] - 1.0)
    if mass_defect > MASS_TOL:
        raise SupportNotNormalized(mass_defect)
    grid = np.linspace(-1.0, 1.0, 1025)
    min_s = float(np.min(cheb_eval(s, grid)))
    if min_s <= 0.0:
        raise CriticalPotential(min_s)
    eq = Equilibrium(p, s, cheb_derivative(s), float(delta), mass_defect, min_s)
    xs = np.linspace(-1.0, 1.0, 514)[1:-1]
    res = float(np.max(np.abs(el_residual(eq, xs))))
    if res > EL_TOL:
        raise NumericalError(f"Euler-Lagrange residual {res:.3e} exceeds {EL_TOL}")
    return eq


def quantiles(eq: Equilibrium, n: int):
    """rho_j solving CDF(rho_j) = j/n for j = 1..n; rho_n = 1."""
    if n < 1:
        raise RejectedInput("n must be >= 1", code="bad-n")
    out = np.empty(n)
    out[-1] = 1.0
    for j in range(1, n):
        target = j / n
        out[j - 1] = brentq(lambda x: eq.cdf(x) - target, -1.0, 1.0, xtol=1e-14)
    if np.any(np.diff(out) <= 0):
        raise NumericalError("quantiles not strictly increasing")
    return out


def normalize_support(raw: Potential, delta: float = DEFAULT_DELTA, max_iter: int = 200):
    """Find scale > 0 and center with V(x) = W(scale x + center) one-cut normalized.

    Newton iteration on the two moment conditions int V' rho = 0 (no T_0
    component in V') and unit mass (T_1 coefficient of V' equals 2), with
    damping 1/2 and residual backtracking.
    """
    wc = raw.v
    poly = np.polynomial.chebyshev.cheb2poly(wc.coeffs)
    # map to the physical variable for leading-coefficient confinement check
    lo, hi = wc.interval
    half = (hi - lo) / 2.0
    lead_idx = int(np.max(np.nonzero(np.abs(poly) > 1e-12 * np.sum(np.abs(poly))))) if np.any(poly) else 0
    if lead_idx == 0 or lead_idx % 2 == 1 or poly[lead_idx] <= 0:
        raise RejectedInput("potential is not confining (leading even coefficient must be positive)",
                            code="not-confining")
    deg = lead_idx

    def vprime_ref(scale, center):
        # T-coefficients on [-1,1] of d/dx W(scale x + center)
        fit = cheb_fit(lambda x: cheb_eval(raw.v1, scale * x + center) * scale, deg, (-1.0, 1.0))
        return fit.coeffs

    def residual(scale, center):
        c = vprime_ref(scale, center)
        c1 = c[1] if len(c) > 1 else 0.0
        return np.array([c[0], 0.5 * c1 - 1.0])

    # initial guess: center at the coarse minimizer, scale from the leading coefficient
    span = max(abs(lo), abs(hi), 8.0 * half)
    grid = np.linspace(-span, span, 4001)
    center = float(grid[np.argmin(cheb_eval(wc, grid))])
    lead = poly[lead_idx] / half ** lead_idx  # monomial coefficient in physical x
    ref = potential_from_spec("poly:" + ",".join(["0"] * deg + ["1"]), delta)
    ref_mass = 0.5 * _vprime_ref_coeffs(ref)[1]  # mass of S for the pure monomial x^deg
    scale = float((1.0 / (lead * ref_mass)) ** (1.0 / deg))

    g = residual(scale, center)
    for _ in range(max_iter):
        if np.max(np.abs(g)) < 1e-12:
            break
        hs = 1e-7 * max(scale, 1.0)
        hc = 1e-7 * max(abs(center), 1.0)
        jac = np.column_stack([
            (residual(scale + hs, center) - residual(scale - hs, center)) / (2 * hs),
            (residual(scale, center + hc) - residual(scale, center - hc)) / (2 * hc),
        ])
        try:
            step = np.linalg.solve(jac, -g)
        except np.linalg.LinAlgError:
            raise NoNormalizationFound()
        t = 0.5  # damping
        for _ in range(40):
            ns, nc = scale + t * step[0], center + t * step[1]
            if ns > 1e-8:
                ng = residual(ns, nc)
                if np.max(np.abs(ng)) < np.max(np.abs(g)):
                    scale, center, g = ns, nc, ng
                    break
            t *= 0.5
        else:
            raise NoNormalizationFound()
    else:
        raise NoNormalizationFound()

    hw = 1.0 + delta + WORKING_MARGIN
    fitdeg = max(deg + 2, 8)
    v = cheb_fit(lambda x: cheb_eval(raw.v, scale * x + center), fitdeg, (-hw, hw))
    return float(scale), float(center), potential_from_series(cheb_truncate(v))
