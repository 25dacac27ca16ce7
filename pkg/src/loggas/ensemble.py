"""Sampling from the beta-ensemble and the Dyson generator machinery.

Two samplers: the exact tridiagonal beta-Hermite realization for V = x^2
(rescaled so the joint density is |Delta|^beta exp(-beta n sum V)), and a
Metropolis-adjusted Langevin chain for general potentials.  Replicates carry
deterministic per-replicate RNG streams split from a master seed, so batches
are bit-identical regardless of worker count.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal

from .equilibrium import Equilibrium, Potential, build_equilibrium, quantiles
from .errors import CollisionError, RejectedInput, ValidationError
from .series import ChebSeries, cheb_derivative, cheb_eval

MIN_GAP = 1e-12  # proposals closer than this are rejected outright
LOW_ACCEPTANCE = 0.1

BELS_MAGIC = b"BELS"
BELS_VERSION = 1


@dataclass(frozen=True)
class MalaMeta:
    steps: int
    step_size: float
    acceptance_rate: float

    @property
    def low_acceptance(self):
        return self.acceptance_rate < LOW_ACCEPTANCE


@dataclass(frozen=True)
class EnsembleSample:
    """One sorted configuration with provenance."""

    lambdas: np.ndarray
    n: int
    beta: float
    method: str  # tridiagonal | mala | unknown (loaded from file)
    seed: int
    mala_meta: Optional[MalaMeta] = None

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float)
        if lam.ndim != 1 or lam.size != self.n:
            raise ValidationError("n must equal len(lambdas)", code="bad-sample")
        if np.any(np.diff(lam) <= 0):
            raise ValidationError("lambdas must be strictly increasing", code="bad-sample")
        lam = lam.copy()
        lam.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)


@dataclass(frozen=True)
class SampleBatch:
    samples: tuple
    master_seed: int

    def __post_init__(self):
        if len(self.samples) == 0:
            raise ValidationError("empty batch", code="bad-batch")
        n0, b0, m0 = self.samples[0].n, self.samples[0].beta, self.samples[0].method
        if any(s.n != n0 or s.beta != b0 or s.method != m0 for s in self.samples):
            raise ValidationError("batch samples must share (n, beta, method)", code="bad-batch")

    @property
    def n(self):
        return self.samples[0].n

    @property
    def beta(self):
        return self.samples[0].beta

    @property
    def method(self):
        return self.samples[0].method

    @property
    def reps(self):
        return len(self.samples)

    def matrix(self):
        """(reps, n) array of sorted configurations."""
        return np.vstack([s.lambdas for s in self.samples])


def _replicate_seed(master_seed, index):
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(index,))
    return ss, int(ss.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# energy and generator
# ---------------------------------------------------------------------------

def energy(p: Potential, lambdas, n_scale: int) -> float:
    """H_n = sum_{i<j} log 1/|lam_i - lam_j| + n_scale sum V(lam_i).

    Coincident coordinates yield the distinct infinite-energy value inf.
    """
    lam = np.asarray(lambdas, dtype=float)
    iu = np.triu_indices(lam.size, 1)
    gaps = np.abs(lam[:, None] - lam[None, :])[iu]
    if gaps.size and np.any(gaps == 0.0):
        return float("inf")
    inter = -np.log(gaps).sum() if gaps.size else 0.0
    return float(inter + n_scale * np.sum(cheb_eval(p.v, lam)))


def apply_generator(p: Potential, f: ChebSeries, lambdas, beta: float, n=None) -> float:
    """Dyson generator on the linear statistic F = sum f(lam_i):

    L F = sum f''(lam_i) - beta n sum V'(lam_i) f'(lam_i)
          + (beta/2) sum_{i != j} (f'(lam_i) - f'(lam_j)) / (lam_i - lam_j).
    """
    lam = np.asarray(lambdas, dtype=float)
    if n is None:
        n = lam.size
    d = lam[:, None] - lam[None, :]
    np.fill_diagonal(d, 1.0)
    if np.any(d == 0.0):
        raise CollisionError()
    f1 = cheb_derivative(f)
    f2 = cheb_derivative(f1)
    v1 = cheb_eval(p.v1, lam)
    fp = cheb_eval(f1, lam)
    dd = (fp[:, None] - fp[None, :]) / d
    np.fill_diagonal(dd, 0.0)
    return float(np.sum(cheb_eval(f2, lam)) - beta * n * np.sum(v1 * fp)
                 + 0.5 * beta * dd.sum())


def carre_du_champ(fp: ChebSeries, gp: ChebSeries, lambdas) -> float:
    """Gamma of two linear statistics, given the derivative series."""
    lam = np.asarray(lambdas, dtype=float)
    return float(np.sum(cheb_eval(fp, lam) * cheb_eval(gp, lam)))


# ---------------------------------------------------------------------------
# exact sampler for V = x^2
# ---------------------------------------------------------------------------

def _gbe_draw(n, beta, rng):
    if n == 1:
        lam = rng.normal(0.0, np.sqrt(2.0), 1)
    else:
        diag = rng.normal(0.0, np.sqrt(2.0), n)
        off = np.sqrt(rng.chisquare(beta * np.arange(n - 1, 0, -1)))
        lam = eigvalsh_tridiagonal(diag, off)
    lam = np.sort(lam) / (2.0 * np.sqrt(beta * n))
    return lam


def sample_gbe(n: int, beta: float, seed: int) -> EnsembleSample:
    """Exact draw from the beta-ensemble with V(x) = x^2 (tridiagonal model,
    rescaled by kappa = 1/sqrt(2 beta n) at the eigenvalue-density level)."""
    if beta <= 0:
        raise RejectedInput("beta must be positive", code="bad-beta")
    ss, seed_val = _replicate_seed(seed, 0)
    lam = _gbe_draw(n, beta, np.random.default_rng(ss))
    return EnsembleSample(lam, n, beta, "tridiagonal", seed_val)


def sample_batch_gbe(n, beta, reps, master_seed, threads=1) -> SampleBatch:
    if beta <= 0:
        raise RejectedInput("beta must be positive", code="bad-beta")
    streams = [_replicate_seed(master_seed, r) for r in range(reps)]

    def work(r):
        ss, seed_val = streams[r]
        return EnsembleSample(_gbe_draw(n, beta, np.random.default_rng(ss)),
                              n, beta, "tridiagonal", seed_val)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            samples = list(ex.map(work, range(reps)))
    else:
        samples = [work(r) for r in range(reps)]
    return SampleBatch(tuple(samples), master_seed)


# ---------------------------------------------------------------------------
# MALA for general potentials
# ---------------------------------------------------------------------------

def default_step_size(beta, n):
    return 0.1 / (beta * n * n)


def _mala_core_impl(lam0, vmono, v1mono, ta, tb, beta, h, normals, unifs, min_gap):
    """One MALA segment consuming pre-drawn randomness; returns (state, accepts).

    The potential and its derivative are Horner-evaluated in the mapped
    variable t = ta*x + tb of the working interval.
    """
    n = lam0.shape[0]
    steps = normals.shape[0]
    sqrt2h = np.sqrt(2.0 * h)
    lam = lam0.copy()
    prop = np.empty(n)
    g = np.empty(n)
    gp = np.empty(n)

    def energy_drift(v, gout):
        e = 0.0
        for i in range(n):
            s = 0.0
            for j in range(n):
                if i != j:
                    d = v[i] - v[j]
                    s += 1.0 / d
                    if j > i:
                        ad = abs(d)
                        if ad <= 0.0:
                            return np.inf
                        e -= np.log(ad)
            t = ta * v[i] + tb
            pv = 0.0
            for k in range(len(vmono) - 1, -1, -1):
                pv = pv * t + vmono[k]
            pv1 = 0.0
            for k in range(len(v1mono) - 1, -1, -1):
                pv1 = pv1 * t + v1mono[k]
            e += n * pv
            gout[i] = -beta * (n * pv1 - s)
        return e

    e = energy_drift(lam, g)
    acc = 0
    for step in range(steps):
        for i in range(n):
            prop[i] = lam[i] + h * g[i] + sqrt2h * normals[step, i]
        srt = np.sort(prop)
        ok = True
        for i in range(n - 1):
            if srt[i + 1] - srt[i] < min_gap:
                ok = False
                break
        if not ok:
            continue
        ep = energy_drift(prop, gp)
        if ep == np.inf:
            continue
        fwd = 0.0
        bwd = 0.0
        for i in range(n):
            a = prop[i] - lam[i] - h * g[i]
            b = lam[i] - prop[i] - h * gp[i]
            fwd += a * a
            bwd += b * b
        logr = -beta * (ep - e) + (fwd - bwd) / (4.0 * h)
        if np.log(unifs[step]) < logr:
            for i in range(n):
                lam[i] = prop[i]
                g[i] = gp[i]
            e = ep
            acc += 1
    return lam, acc


try:
    from numba import njit as _njit

    _mala_core = _njit(cache=True)(_mala_core_impl)
except ImportError:  # pragma: no cover - numba is an optional accelerator
    _mala_core = _mala_core_impl

_MALA_SEGMENT = 4096


def _mala_steps(p, lam, beta, n, steps, h, rng):
    """Advance the chain; returns (state, accepted count)."""
    lo, hi = p.v.interval
    ta = 2.0 / (hi - lo)
    tb = -(hi + lo) / (hi - lo)
    vmono = np.polynomial.chebyshev.cheb2poly(p.v.coeffs)
    v1mono = np.polynomial.chebyshev.cheb2poly(p.v1.coeffs)
    lam = np.asarray(lam, dtype=float).copy()
    acc = 0
    done = 0
    while done < steps:
        seg = min(steps - done, _MALA_SEGMENT)
        normals = rng.standard_normal((seg, n))
        unifs = rng.random(seg)
        lam, a = _mala_core(lam, vmono, v1mono, ta, tb, beta, h, normals, unifs, MIN_GAP)
        acc += int(a)
        done += seg
    return lam, acc


def sample_mala(p: Potential, n, beta, steps, step_size, seed, init=None,
                eq: Optional[Equilibrium] = None) -> EnsembleSample:
    """Metropolis-adjusted Langevin chain targeting exp(-beta H_n); returns the
    final state.  Default initial configuration: equilibrium quantiles."""
    if steps < 1:
        raise RejectedInput("steps must be >= 1", code="bad-steps")
    if init is None:
        if eq is None:
            eq = build_equilibrium(p)
        init = quantiles(eq, n)
    lam = np.asarray(init, dtype=float)
    if np.any(np.diff(np.sort(lam)) <= 0):
        raise RejectedInput("init must have distinct coordinates", code="bad-init")
    ss, seed_val = _replicate_seed(seed, 0)
    rng = np.random.default_rng(ss)
    if step_size == 0.0:
        meta = MalaMeta(steps, 0.0, 0.0)
        return EnsembleSample(np.sort(lam), n, beta, "mala", seed_val, meta)
    lam, acc = _mala_steps(p, lam, beta, n, steps, step_size, rng)
    meta = MalaMeta(steps, step_size, acc / steps)
    return EnsembleSample(np.sort(lam), n, beta, "mala", seed_val, meta)


def sample_batch_mala(p: Potential, n, beta, reps, master_seed, step_size=None,
                      burn_in_sweeps=50, thin_sweeps=5, init=None,
                      eq: Optional[Equilibrium] = None, threads=1) -> SampleBatch:
    """One chain; burn-in of burn_in_sweeps*n steps, then a replicate snapshot
    every thin_sweeps*n steps.  threads is accepted for interface symmetry;
    the chain itself is sequential."""
    h = default_step_size(beta, n) if step_size is None else step_size
    if init is None:
        if eq is None:
            eq = build_equilibrium(p)
        init = quantiles(eq, n)
    lam = np.asarray(init, dtype=float)
    ss, _ = _replicate_seed(master_seed, 0)
    rng = np.random.default_rng(ss)
    lam, _ = _mala_steps(p, lam, beta, n, burn_in_sweeps * n, h, rng)
    thin = thin_sweeps * n
    samples = []
    for r in range(reps):
        lam, acc = _mala_steps(p, lam, beta, n, thin, h, rng)
        _, seed_val = _replicate_seed(master_seed, r)
        meta = MalaMeta(thin, h, acc / thin)
        samples.append(EnsembleSample(np.sort(lam), n, beta, "mala", seed_val, meta))
    return SampleBatch(tuple(samples), master_seed)


# ---------------------------------------------------------------------------
# integration-by-parts diagnostic  E[Gamma[F,G]] = -E[F L G]
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IbpResult:
    residual: float
    stderr: float


def ibp_check(p: Potential, f: ChebSeries, g: ChebSeries, batch: SampleBatch,
              eq: Optional[Equilibrium] = None) -> IbpResult:
    """Monte Carlo residual of the integration-by-parts identity on centered
    linear statistics; standard error by block means (robust to MALA
    autocorrelation across replicates)."""
    if eq is None:
        eq = build_equilibrium(p)
    beta = batch.beta
    n = batch.n
    f1 = cheb_derivative(f)
    g1 = cheb_derivative(g)
    g2 = cheb_derivative(g1)
    mean_f = eq.mean(f)
    lam_all = batch.matrix()
    reps = lam_all.shape[0]
    vals = np.empty(reps)
    bsz = max(1, int(4e7 / (8.0 * n * n)))
    idx = np.arange(n)
    for lo in range(0, reps, bsz):
        lam = lam_all[lo:lo + bsz]
        gamma = (cheb_eval(f1, lam) * cheb_eval(g1, lam)).sum(axis=1)
        big_f = cheb_eval(f, lam).sum(axis=1) - n * mean_f
        d = lam[:, :, None] - lam[:, None, :]
        d[:, idx, idx] = 1.0
        g1v = cheb_eval(g1, lam)
        dd = (g1v[:, :, None] - g1v[:, None, :]) / d
        dd[:, idx, idx] = 0.0
        lg = (cheb_eval(g2, lam).sum(axis=1)
              - beta * n * (cheb_eval(p.v1, lam) * g1v).sum(axis=1)
              + 0.5 * beta * dd.sum(axis=(1, 2)))
        vals[lo:lo + lam.shape[0]] = gamma + big_f * lg
    nblocks = min(32, max(2, reps // 4))
    cut = (reps // nblocks) * nblocks
    blocks = vals[:cut].reshape(nblocks, -1).mean(axis=1)
    stderr = float(np.std(blocks, ddof=1) / np.sqrt(nblocks))
    return IbpResult(float(vals.mean()), stderr)


# ---------------------------------------------------------------------------
# batch persistence: "BELS" binary format
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sIIdQI")


def save_batch(batch: SampleBatch, path):
    data = batch.matrix().astype("<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(BELS_MAGIC, BELS_VERSION, batch.n, batch.beta,
                              batch.master_seed % (1 << 64), batch.reps))
        fh.write(data.tobytes())


def load_batch(path) -> SampleBatch:
    """Read a BELS batch; sampler provenance is not stored, so the loaded
    samples carry method='unknown'."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValidationError("truncated batch header", code="bad-batch-file")
        magic, version, n, beta, master_seed, reps = _HEADER.unpack(head)
        if magic != BELS_MAGIC:
            raise ValidationError("not a BELS batch file", code="bad-batch-file")
        if version != BELS_VERSION:
            raise ValidationError(f"unsupported BELS version {version}", code="bad-batch-file")
        raw = np.frombuffer(fh.read(8 * n * reps), dtype="<f8")
        if raw.size != n * reps:
            raise ValidationError("truncated batch payload", code="bad-batch-file")
    lam = raw.reshape(reps, n)
    samples = []
    for r in range(reps):
        _, seed_val = _replicate_seed(master_seed, r)
        samples.append(EnsembleSample(lam[r], n, beta, "unknown", seed_val))
    return SampleBatch(tuple(samples), master_seed)
