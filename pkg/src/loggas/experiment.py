"""Experiment orchestration: config validation, end-to-end runs, reports.

A run walks the n-grid: sample batch -> per-replicate Stein terms ->
prediction -> distances with standard errors -> Stein bounds, then fits the
log-log rate.  Batches are cached by content hash, reports embed the config
hash and seed, and reruns with an identical config are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import cltcore, metrics
from .cltcore import Prediction, lp_norm_estimate, predict, stein_batch, stein_bound
from .ensemble import SampleBatch, load_batch, sample_batch_gbe, sample_batch_mala, save_batch
from .equilibrium import build_equilibrium, potential_from_spec
from .errors import NumericalError, ValidationError
from .master_op import invert_theta
from .metrics import fit_rate, projected_wp, tv_kde, wasserstein_p, wasserstein_p_se
from .series import parse_function_spec

FORMAT_VERSION = 1
KNOWN_METRICS = ("w1", "wp", "tv", "density_sup(0)", "density_sup(1)")


@dataclass(frozen=True)
class MalaOptions:
    step_size: Optional[float] = None
    burn_in_sweeps: int = 50
    thin_sweeps: int = 5


@dataclass(frozen=True)
class ExperimentConfig:
    potential: str
    beta: float
    xis: tuple
    n_grid: tuple
    reps: int
    sampler: str = "gbe"
    delta: float = 0.1
    mala: MalaOptions = field(default_factory=MalaOptions)
    p: float = 1.0
    seed: int = 0
    metrics: tuple = ("w1",)
    out_dir: str = "loggas-run"
    rigidity_eps: float = 0.1
    threads: int = 1

    def canonical(self):
        return {
            "format_version": FORMAT_VERSION,
            "potential": self.potential,
            "beta": self.beta,
            "xis": list(self.xis),
            "n_grid": list(self.n_grid),
            "reps": self.reps,
            "sampler": self.sampler,
            "delta": self.delta,
            "mala": {"step_size": self.mala.step_size,
                     "burn_in_sweeps": self.mala.burn_in_sweeps,
                     "thin_sweeps": self.mala.thin_sweeps},
            "p": self.p,
            "seed": self.seed,
            "metrics": list(self.metrics),
            "rigidity_eps": self.rigidity_eps,
        }

    def config_hash(self):
        blob = json.dumps(self.canonical(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def validate_config(raw_text: str) -> ExperimentConfig:
    """Parse and invariant-check a config; fits every function spec and builds
    the equilibrium so spec errors surface here with distinct codes."""
    try:
        obj = json.loads(raw_text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"unparseable config: {exc}", code="unparseable-config")
    if not isinstance(obj, dict):
        raise ValidationError("config must be a JSON object", code="unparseable-config")
    try:
        mala = MalaOptions(**obj.get("mala", {}))
        cfg = ExperimentConfig(
            potential=obj["potential"],
            beta=float(obj["beta"]),
            xis=tuple(obj["xis"]),
            n_grid=tuple(int(v) for v in obj["n_grid"]),
            reps=int(obj["reps"]),
            sampler=obj.get("sampler", "gbe"),
            delta=float(obj.get("delta", 0.1)),
            mala=mala,
            p=float(obj.get("p", 1.0)),
            seed=int(obj.get("seed", 0)),
            metrics=tuple(obj.get("metrics", ["w1"])),
            out_dir=obj.get("out_dir", "loggas-run"),
            rigidity_eps=float(obj.get("rigidity_eps", 0.1)),
            threads=int(obj.get("threads", 1)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"bad config field: {exc}", code="bad-config-field")
    if len(cfg.n_grid) == 0:
        raise ValidationError("n_grid must be non-empty", code="n-grid-empty")
    if any(b <= a for a, b in zip(cfg.n_grid, cfg.n_grid[1:])):
        raise ValidationError("n_grid not increasing", code="n-grid-not-increasing")
    if cfg.reps < 100:
        raise ValidationError("reps must be >= 100", code="too-few-reps")
    if cfg.beta <= 0:
        raise ValidationError("beta must be positive", code="bad-beta")
    if cfg.sampler not in ("gbe", "mala"):
        raise ValidationError(f"unknown sampler {cfg.sampler!r}", code="bad-sampler")
    for kind in cfg.metrics:
        if kind not in KNOWN_METRICS:
            raise ValidationError(f"unknown metric kind {kind!r}", code="bad-metric")
    _prepare(cfg)  # surfaces spec/equilibrium/freeness problems
    return cfg


def _prepare(cfg: ExperimentConfig):
    xis = [parse_function_spec(s) for s in cfg.xis]
    pot = potential_from_spec(cfg.potential, cfg.delta)
    try:
        eq = build_equilibrium(pot, cfg.delta)
    except NumericalError as exc:
        code = getattr(exc, "code", None) or type(exc).__name__.lower()
        raise ValidationError(str(exc), code="support-not-normalized"
                              if "normalized" in str(exc) else "bad-potential")
    pred = predict(xis, eq, cfg.beta, cfg.p)  # raises FreenessViolated if degenerate
    return xis, eq, pred


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, float) and (np.isnan(x) or np.isinf(x)):
        return repr(x)
    return x


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, sort_keys=True, indent=1)
        fh.write("\n")


def _sample_for(cfg: ExperimentConfig, n: int, pot, eq) -> SampleBatch:
    if cfg.sampler == "gbe":
        return sample_batch_gbe(n, cfg.beta, cfg.reps, cfg.seed, threads=cfg.threads)
    return sample_batch_mala(pot, n, cfg.beta, cfg.reps, cfg.seed,
                             step_size=cfg.mala.step_size,
                             burn_in_sweeps=cfg.mala.burn_in_sweeps,
                             thin_sweeps=cfg.mala.thin_sweeps, eq=eq)


def _batch_cache_path(cfg: ExperimentConfig, n: int):
    key = json.dumps({"potential": cfg.potential, "sampler": cfg.sampler, "n": n,
                      "beta": cfg.beta, "reps": cfg.reps, "seed": cfg.seed,
                      "mala": cfg.canonical()["mala"], "format_version": FORMAT_VERSION},
                     sort_keys=True).encode()
    return os.path.join(cfg.out_dir, f"batch_n{n}_{hashlib.sha256(key).hexdigest()[:12]}.bin")


def clt_report(xis, eq, pred: Prediction, batch: SampleBatch, invs, p=1.0,
               metric_kinds=("w1",), seed=0, rigidity_eps=0.1):
    """Assemble the prediction / empirical / stein / diagnostics blocks for one batch."""
    beta = batch.beta
    sb = stein_batch(xis, eq, beta, batch, invs)
    d = pred.d
    dev = np.linalg.norm(pred.C[None, :, :] - sb.gamma, axis=(1, 2))
    gamma_dev, gamma_dev_se = lp_norm_estimate(dev, p)
    znorm_vals = np.linalg.norm(sb.Z, axis=1)
    z_norm, z_norm_se = lp_norm_estimate(znorm_vals, p)
    bounds = {"wasserstein": stein_bound(pred, gamma_dev, z_norm, p, "wasserstein")}
    stein_block = {
        "z_norm": z_norm, "z_norm_se": z_norm_se,
        "gamma_dev": gamma_dev, "gamma_dev_se": gamma_dev_se,
        "master_residual_max": float(sb.master_residual.max()),
        "m_primitive": [float((0.5 - 1.0 / beta) * eq.mean(inv.psi1)) for inv in invs],
        "p": p,
    }
    if d == 1:
        sigma = pred.sigma
        lit_dev, lit_se = lp_norm_estimate(np.abs(sigma - sb.gamma[:, 0, 0]), 1.0)
        stein_block["gamma_dev_tv_literal"] = lit_dev
        sq_dev, sq_se = lp_norm_estimate(np.abs(sigma ** 2 - sb.gamma[:, 0, 0]), 1.0)
        bounds["tv"] = stein_bound(pred, sq_dev, z_norm, 1.0, "tv")
        bounds["tv_paper_literal"] = stein_bound(pred, lit_dev, z_norm, 1.0, "tv")
    stein_block["bounds"] = bounds
    distances = {}
    x0 = sb.X[:, 0]
    for kind in metric_kinds:
        if kind == "w1" or kind == "wp":
            pk = 1.0 if kind == "w1" else p
            if d == 1:
                val = wasserstein_p(x0, pred.m[0], pred.sigma, pk)
                se = wasserstein_p_se(x0, pred.m[0], pred.sigma, pk, seed=seed)
                distances[kind] = {"value": val, "stderr": se}
            else:
                val = projected_wp(sb.X, pred, pk, seed=seed)
                distances[kind] = {"value": val, "stderr": float("nan"),
                                   "label": "sliced, lower-bound surrogate"}
        elif kind == "tv" and d == 1:
            distances["tv"] = {"value": tv_kde(x0, pred.m[0], pred.sigma),
                               "stderr": float("nan")}
        elif kind.startswith("density_sup") and d == 1:
            r = int(kind[kind.index("(") + 1:kind.index(")")])
            distances[kind] = {"value": metrics.density_sup_distance(x0, pred.m[0], pred.sigma, r),
                               "stderr": float("nan")}
    rig = cltcore.rigidity_report(eq, batch, rigidity_eps)
    return {
        "n": batch.n,
        "reps": batch.reps,
        "beta": beta,
        "prediction": {"m": pred.m, "C": pred.C, "Sigma": pred.Sigma,
                       "A_beta": pred.A_beta, "a_beta": pred.a_beta},
        "empirical": {"mean": sb.X.mean(axis=0),
                      "mean_se": sb.X.std(axis=0, ddof=1) / np.sqrt(len(sb.X)),
                      "cov": np.cov(sb.X.T).reshape(d, d)},
        "stein": stein_block,
        "bounds": bounds,
        "distances": distances,
        "diagnostics": {"envelope_violation_rate": rig.envelope_violation_rate,
                        "outlier_rate": rig.outlier_rate,
                        "max_abs_lambda": rig.max_abs_lambda,
                        "outliers_excluded": sb.outliers},
    }


def run_experiment(cfg: ExperimentConfig):
    """Run the full pipeline over the n-grid; returns the report paths."""
    xis, eq, pred = _prepare(cfg)
    pot = eq.potential
    invs = [invert_theta(eq, xi) for xi in xis]
    os.makedirs(cfg.out_dir, exist_ok=True)
    chash = cfg.config_hash()
    paths = []
    per_kind = {k: ([], [], []) for k in cfg.metrics}
    for n in cfg.n_grid:
        bpath = _batch_cache_path(cfg, n)
        if os.path.exists(bpath):
            batch = load_batch(bpath)
        else:
            batch = _sample_for(cfg, n, pot, eq)
            save_batch(batch, bpath)
        report = clt_report(xis, eq, pred, batch, invs, cfg.p, cfg.metrics,
                            seed=cfg.seed, rigidity_eps=cfg.rigidity_eps)
        report["config_hash"] = chash
        report["seed"] = cfg.seed
        rpath = os.path.join(cfg.out_dir, f"report_n{n}.json")
        write_json(report, rpath)
        paths.append(rpath)
        for kind in cfg.metrics:
            if kind in report["distances"]:
                ns, ds, ses = per_kind[kind]
                ns.append(n)
                ds.append(report["distances"][kind]["value"])
                ses.append(report["distances"][kind]["stderr"])
    for kind, (ns, ds, ses) in per_kind.items():
        if len(ns) >= 3 and all(d > 0 for d in ds):
            se_arr = [s if np.isfinite(s) and s > 0 else None for s in ses]
            use_se = None if any(s is None for s in se_arr) else se_arr
            slope, intercept, slope_se = fit_rate(ns, ds, use_se)
            csv = os.path.join(cfg.out_dir, f"rates_{kind.replace('(', '').replace(')', '')}.csv")
            write_rates_csv(csv, ns, ds, ses, slope, slope_se)
    return paths


def write_rates_csv(path, ns, ds, ses, slope, slope_se):
    with open(path, "w") as fh:
        fh.write("n,distance,stderr,slope,slope_stderr\n")
        for n, dval, se in zip(ns, ds, ses):
            fh.write(f"{n},{dval!r},{se!r},{slope!r},{slope_se!r}\n")


def rates_from_reports(report_paths: Sequence[str], kind: str):
    """Collect one distance kind across per-n reports; refuses mixed config hashes."""
    rows = []
    hashes = set()
    for path in report_paths:
        with open(path) as fh:
            rep = json.load(fh)
        hashes.add(rep.get("config_hash"))
        if kind in rep.get("distances", {}):
            ent = rep["distances"][kind]
            se = ent.get("stderr")
            se = float("nan") if isinstance(se, str) else se
            rows.append((rep["n"], ent["value"], se))
    if len(hashes) > 1:
        raise ValidationError("mixed-version reports (different config hashes)",
                              code="mixed-reports")
    if len(rows) < 3:
        raise ValidationError("need at least 3 reports with this metric", code="too-few-points")
    rows.sort()
    ns = [r[0] for r in rows]
    ds = [r[1] for r in rows]
    ses = [r[2] for r in rows]
    good_se = all(isinstance(s, float) and np.isfinite(s) and s > 0 for s in ses)
    slope, intercept, slope_se = fit_rate(ns, ds, ses if good_se else None)
    return ns, ds, ses, slope, slope_se
