"""Chebyshev-T series engine.

Every function in the laboratory (potentials, test functions, densities,
inversion outputs) is carried as a finite Chebyshev-T coefficient sequence on
an interval.  Evaluation extends outside the interval by the polynomial, so a
series doubles as the polynomial it represents.

The arcsine measure rho(dx) = dx / (pi sqrt(1-x^2)) is the Chebyshev weight,
which makes every rho-integral a coefficient read-off and every semicircle
integral a two-coefficient combination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import chebyshev as _cheb
from scipy.integrate import quad

from .errors import RejectedInput

# Trailing coefficients below DROP_TOL * sum|a_k| may be truncated.
DROP_TOL = 1e-13
DEFAULT_FIT_DEGREE = 64
QUADRATURE_DEGREE = 256


@dataclass(frozen=True)
class ChebSeries:
    """Finite Chebyshev-T coefficient sequence on an interval.

    Immutable; all operations return new instances.
    """

    coeffs: np.ndarray
    interval: tuple

    def __post_init__(self):
        a = np.asarray(self.coeffs, dtype=float)
        if a.ndim != 1 or a.size == 0:
            raise RejectedInput("coefficient sequence must be non-empty 1-d", code="bad-series")
        lo, hi = self.interval
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise RejectedInput("interval must be finite with lo < hi", code="bad-interval")
        if not np.all(np.isfinite(a)):
            raise RejectedInput("non-finite coefficients", code="bad-series")
        a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "coeffs", a)
        object.__setattr__(self, "interval", (float(lo), float(hi)))

    @property
    def degree(self):
        return len(self.coeffs) - 1

    def __call__(self, x):
        return cheb_eval(self, x)


def _to_unit(x, interval):
    lo, hi = interval
    return (2.0 * np.asarray(x, dtype=float) - (lo + hi)) / (hi - lo)


def cheb_nodes(degree, interval=(-1.0, 1.0)):
    """Chebyshev-Gauss (roots) nodes, decreasing in x."""
    lo, hi = interval
    k = np.arange(degree + 1)
    t = np.cos((k + 0.5) * np.pi / (degree + 1))
    return 0.5 * (hi + lo) + 0.5 * (hi - lo) * t


def cheb_fit(evaluator, degree, interval=(-1.0, 1.0)) -> ChebSeries:
    """Interpolate at the Chebyshev-Gauss nodes; exact on polynomials of degree <= d."""
    if degree < 0:
        raise RejectedInput("degree must be >= 0", code="bad-degree")
    x = cheb_nodes(degree, interval)
    v = np.asarray(evaluator(x), dtype=float)
    if v.shape != x.shape:
        v = np.array([evaluator(xi) for xi in x], dtype=float)
    if not np.all(np.isfinite(v)):
        raise RejectedInput("evaluator produced non-finite values", code="non-finite")
    k = np.arange(degree + 1)
    t = np.cos((k + 0.5) * np.pi / (degree + 1))
    # discrete orthogonality of T_j at first-kind points
    m = np.cos(np.outer(k, np.arccos(t)))
    a = (2.0 / (degree + 1)) * m @ v
    a[0] *= 0.5
    return ChebSeries(a, tuple(interval))


def cheb_eval(s: ChebSeries, x):
    """Clenshaw-stable evaluation; x may lie outside the interval."""
    scalar = np.isscalar(x) or (isinstance(x, np.ndarray) and x.ndim == 0)
    out = _cheb.chebval(_to_unit(x, s.interval), s.coeffs)
    return float(out) if scalar else out


def cheb_derivative(s: ChebSeries) -> ChebSeries:
    lo, hi = s.interval
    d = _cheb.chebder(s.coeffs, scl=2.0 / (hi - lo))
    if len(d) == 0:
        d = np.zeros(1)
    return ChebSeries(d, s.interval)


def cheb_antiderivative(s: ChebSeries, x0=0.0) -> ChebSeries:
    """Primitive of s normalized to vanish at x0 (x0 must be representable)."""
    lo, hi = s.interval
    f = _cheb.chebint(s.coeffs, scl=(hi - lo) / 2.0)
    out = ChebSeries(f, s.interval)
    c = cheb_eval(out, x0)
    f = f.copy()
    f[0] -= c
    return ChebSeries(f, s.interval)


def cheb_truncate(s: ChebSeries) -> ChebSeries:
    tol = DROP_TOL * np.sum(np.abs(s.coeffs))
    keep = len(s.coeffs)
    while keep > 1 and abs(s.coeffs[keep - 1]) < tol:
        keep -= 1
    return ChebSeries(s.coeffs[:keep], s.interval)


def _require_reference_interval(s: ChebSeries, what):
    lo, hi = s.interval
    if abs(lo + 1.0) > 1e-12 or abs(hi - 1.0) > 1e-12:
        raise RejectedInput(f"{what} requires interval [-1, 1]", code="wrong-interval")


def integral_arcsine(s: ChebSeries) -> float:
    """Integral against rho(dx) = dx/(pi sqrt(1-x^2)): the T_0 coefficient."""
    _require_reference_interval(s, "integral_arcsine")
    return float(s.coeffs[0])


def integral_semicircle(s: ChebSeries) -> float:
    """Integral against mu_sc(dx) = (2/pi) sqrt(1-x^2) dx: a_0 - a_2/2."""
    _require_reference_interval(s, "integral_semicircle")
    a2 = s.coeffs[2] if len(s.coeffs) > 2 else 0.0
    return float(s.coeffs[0] - 0.5 * a2)


# ---------------------------------------------------------------------------
# basis conversions between T_k and U_k on a shared interval
# ---------------------------------------------------------------------------

def u_to_t(b):
    """T-coefficients of sum_k b_k U_k."""
    b = np.asarray(b, dtype=float)
    t = np.zeros(max(len(b), 1))
    for k, bk in enumerate(b):
        if bk == 0.0:
            continue
        if k % 2 == 0:
            t[0] += bk
            t[2:k + 1:2] += 2.0 * bk
        else:
            t[1:k + 1:2] += 2.0 * bk
    return t


def t_to_u(a):
    """U-coefficients of sum_j a_j T_j (uses T_k = (U_k - U_{k-2})/2)."""
    a = np.asarray(a, dtype=float)
    d = len(a)
    b = np.zeros(d)
    for k in range(d):
        nxt = a[k + 2] if k + 2 < d else 0.0
        b[k] = 0.5 * (a[k] - nxt)
    b[0] = a[0] - (0.5 * a[2] if d > 2 else 0.0)
    return b


# ---------------------------------------------------------------------------
# Gauss-Chebyshev quadrature (nodes of rho); mu_sc weights derived from them
# ---------------------------------------------------------------------------

def rho_nodes(m=QUADRATURE_DEGREE):
    """m-point Gauss-Chebyshev rule: int f drho ~ mean(f(nodes))."""
    j = np.arange(m)
    return np.cos((j + 0.5) * np.pi / m)


def semicircle_weights(nodes):
    """Weights turning rho nodes into a mu_sc rule: mu_sc = 2 (1-x^2) rho."""
    return 2.0 * (1.0 - nodes ** 2) / len(nodes)


# ---------------------------------------------------------------------------
# mollification with the standard bump kernel on (-1, 1)
# ---------------------------------------------------------------------------

def _bump_raw(y):
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    inside = np.abs(y) < 1.0
    yi = y[inside]
    out[inside] = np.exp(-1.0 / (1.0 - yi * yi))
    return out


@lru_cache(maxsize=1)
def bump_constants():
    """(normalization, first absolute moment) of the bump kernel, by adaptive quadrature."""
    z, _ = quad(lambda y: math.exp(-1.0 / (1.0 - y * y)), -1.0, 1.0, limit=200)
    m1, _ = quad(lambda y: abs(y) * math.exp(-1.0 / (1.0 - y * y)), -1.0, 1.0, limit=200)
    return z, m1 / z


def bump_abs_moment(gamma=1.0):
    """int |y|^gamma eta(y) dy for the normalized bump."""
    z, _ = bump_constants()
    m, _ = quad(lambda y: abs(y) ** gamma * math.exp(-1.0 / (1.0 - y * y)), -1.0, 1.0, limit=200)
    return m / z


@lru_cache(maxsize=8)
def _legendre_rule(order):
    y, w = np.polynomial.legendre.leggauss(order)
    return y, w


def mollify(s: ChebSeries, eps: float, quad_order: int = 200) -> ChebSeries:
    """Convolve with the scaled bump eta_eps; output lives on the eps-shrunk interval.

    Satisfies ||s - mollify(s, eps)||_inf <= ||s'||_inf * eps * int |y| eta.
    """
    if eps <= 0:
        raise RejectedInput("eps must be positive", code="bad-eps")
    lo, hi = s.interval
    if hi - lo <= 2.0 * eps + 1e-12:
        raise RejectedInput("domain too small for mollification width", code="domain-too-small")
    z, _ = bump_constants()
    y, w = _legendre_rule(quad_order)
    kern = _bump_raw(y) / z * w

    def smoothed(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        # x - eps*y stays inside [lo, hi] by the shrunk output interval
        vals = cheb_eval(s, x[:, None] - eps * y[None, :])
        return vals @ kern

    return cheb_fit(smoothed, s.degree, (lo + eps, hi - eps))


# ---------------------------------------------------------------------------
# serialization and function-spec strings
# ---------------------------------------------------------------------------

def series_to_dict(s: ChebSeries):
    return {"interval": [s.interval[0], s.interval[1]], "coeffs": list(map(float, s.coeffs))}


def series_from_dict(d) -> ChebSeries:
    try:
        return ChebSeries(np.asarray(d["coeffs"], dtype=float), tuple(d["interval"]))
    except (KeyError, TypeError) as exc:
        raise RejectedInput(f"bad series object: {exc}", code="bad-series")


def parse_function_spec(spec: str) -> ChebSeries:
    """Parse "poly:c0,c1,..." (monomials, ascending) or "cheb:a0,a1,..." into a
    series on [-1, 1]; the polynomial extension defines it everywhere."""
    if not isinstance(spec, str) or ":" not in spec:
        raise RejectedInput(f"unparseable function spec {spec!r}", code="unparseable-spec")
    kind, _, body = spec.partition(":")
    try:
        vals = np.asarray([float(tok) for tok in body.split(",") if tok.strip() != ""], dtype=float)
    except ValueError:
        raise RejectedInput(f"unparseable coefficients in {spec!r}", code="unparseable-spec")
    if vals.size == 0:
        raise RejectedInput(f"empty coefficient list in {spec!r}", code="unparseable-spec")
    if kind == "poly":
        return ChebSeries(_cheb.poly2cheb(vals), (-1.0, 1.0))
    if kind == "cheb":
        return ChebSeries(vals, (-1.0, 1.0))
    raise RejectedInput(f"unknown function spec kind {kind!r}", code="unparseable-spec")


def refit(s: ChebSeries, degree, interval) -> ChebSeries:
    """Resample a series onto another interval (polynomial extension)."""
    return cheb_fit(lambda x: cheb_eval(s, x), degree, interval)


def sup_norm(s: ChebSeries, interval=None, grid=1024) -> float:
    lo, hi = interval if interval is not None else s.interval
    x = np.linspace(lo, hi, grid)
    return float(np.max(np.abs(cheb_eval(s, x))))


def c2_norm(s: ChebSeries, interval=None, grid=1024) -> float:
    """max_{r<=2} sup |s^(r)| on the interval, by dense-grid evaluation."""
    d1 = cheb_derivative(s)
    d2 = cheb_derivative(d1)
    return max(sup_norm(g, interval, grid) for g in (s, d1, d2))
