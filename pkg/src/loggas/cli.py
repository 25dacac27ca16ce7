"""Command line interface.

Subcommands: equilibrium, invert, sample, clt, rates, super, probe, run.
Exit codes: 0 success, 2 validation, 3 numerical failure, 4 I/O.
"""

from __future__ import annotations

import functools
import json
import sys

import click
import numpy as np

from . import cltcore, metrics
from .cltcore import negative_moment_probe, predict
from .ensemble import load_batch, sample_batch_gbe, sample_batch_mala, save_batch
from .equilibrium import (
    Equilibrium,
    Potential,
    build_equilibrium,
    normalize_support,
    potential_from_series,
    potential_from_spec,
)
from .errors import LoggasError, NumericalError, ValidationError
from .experiment import clt_report, rates_from_reports, run_experiment, validate_config, write_json, write_rates_csv
from .master_op import invert_theta
from .series import cheb_derivative, cheb_eval, parse_function_spec, series_from_dict, series_to_dict

EXIT_IO = 4


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValidationError as exc:
            click.echo(f"validation error [{exc.code}]: {exc}", err=True)
            sys.exit(exc.exit_code)
        except NumericalError as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            sys.exit(exc.exit_code)
        except LoggasError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.exit_code)
        except OSError as exc:
            click.echo(f"i/o error: {exc}", err=True)
            sys.exit(EXIT_IO)
    return wrapper


@click.group()
@click.option("--seed", type=int, default=None, help="Default master seed for subcommands.")
@click.option("--threads", type=int, default=None, help="Default worker count.")
@click.option("--out", "out_path", type=str, default=None, help="Default output path.")
@click.pass_context
def main(ctx, seed, threads, out_path):
    """Numerical laboratory for CLT fluctuations of one-cut beta-ensembles."""
    ctx.ensure_object(dict)
    ctx.obj.update(seed=seed, threads=threads, out=out_path)


def _default(ctx, key, value, fallback=None):
    if value is not None:
        return value
    inherited = ctx.obj.get(key) if ctx.obj else None
    return inherited if inherited is not None else fallback


def _potential_to_dict(p: Potential):
    return {"v": series_to_dict(p.v), "v1": series_to_dict(p.v1), "v2": series_to_dict(p.v2),
            "semiconvexity_bound": p.semiconvexity_bound}


def _equilibrium_to_dict(eq: Equilibrium):
    return {"potential": _potential_to_dict(eq.potential),
            "s": series_to_dict(eq.s), "s1": series_to_dict(eq.s1),
            "delta": eq.delta, "mass_defect": eq.mass_defect, "min_s": eq.min_s}


def load_equilibrium(path) -> Equilibrium:
    with open(path) as fh:
        d = json.load(fh)
    pot = potential_from_series(series_from_dict(d["potential"]["v"]))
    return build_equilibrium(pot, d["delta"])


@main.command()
@click.option("--potential", "spec", required=True, help='Function spec, e.g. "poly:0,0,1".')
@click.option("--delta", type=float, default=0.1, show_default=True)
@click.option("--normalize", is_flag=True, help="Apply normalize_support first.")
@click.option("--out", "out_path", default=None)
@click.pass_context
@handle_errors
def equilibrium(ctx, spec, delta, normalize, out_path):
    """Build and validate the equilibrium measure; emit it as JSON."""
    out_path = _default(ctx, "out", out_path, "eq.json")
    pot = potential_from_spec(spec, delta)
    doc = {}
    if normalize:
        scale, center, pot = normalize_support(pot, delta)
        doc["normalization"] = {"scale": scale, "center": center}
    eq = build_equilibrium(pot, delta)
    doc.update(_equilibrium_to_dict(eq))
    write_json(doc, out_path)
    click.echo(f"equilibrium written to {out_path} (mass defect {eq.mass_defect:.2e}, "
               f"min S {eq.min_s:.6f})")


@main.command()
@click.option("--eq", "eq_path", required=True)
@click.option("--xi", "xi_spec", required=True)
@click.option("--out", "out_path", default=None)
@click.pass_context
@handle_errors
def invert(ctx, eq_path, xi_spec, out_path):
    """Invert the master operator for a test function; emit InversionData JSON."""
    out_path = _default(ctx, "out", out_path, "inv.json")
    eq = load_equilibrium(eq_path)
    inv = invert_theta(eq, parse_function_spec(xi_spec))
    write_json({"xi": series_to_dict(inv.xi), "psi": series_to_dict(inv.psi),
                "psi1": series_to_dict(inv.psi1), "f": series_to_dict(inv.f),
                "c_xi": inv.c_xi}, out_path)
    click.echo(f"inversion written to {out_path} (c_xi = {inv.c_xi:+.6e})")


@main.command()
@click.option("--model", type=click.Choice(["gbe", "mala"]), required=True)
@click.option("--n", type=int, required=True)
@click.option("--beta", type=float, required=True)
@click.option("--reps", type=int, required=True)
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=int, default=None)
@click.option("--potential", "pot_spec", default=None, help="Required for mala.")
@click.option("--delta", type=float, default=0.1, show_default=True)
@click.option("--step-size", type=float, default=None)
@click.option("--burn-in", type=int, default=50, show_default=True, help="Burn-in sweeps.")
@click.option("--thin", type=int, default=5, show_default=True, help="Thinning sweeps.")
@click.option("--out", "out_path", default=None)
@click.pass_context
@handle_errors
def sample(ctx, model, n, beta, reps, seed, threads, pot_spec, delta, step_size,
           burn_in, thin, out_path):
    """Draw a replicate batch and write it in the BELS binary format."""
    seed = _default(ctx, "seed", seed, 42)
    threads = _default(ctx, "threads", threads, 1)
    out_path = _default(ctx, "out", out_path, "batch.bin")
    if model == "gbe":
        batch = sample_batch_gbe(n, beta, reps, seed, threads=threads)
    else:
        if pot_spec is None:
            raise ValidationError("mala sampling requires --potential", code="bad-config-field")
        pot = potential_from_spec(pot_spec, delta)
        eq = build_equilibrium(pot, delta)
        batch = sample_batch_mala(pot, n, beta, reps, seed, step_size=step_size,
                                  burn_in_sweeps=burn_in, thin_sweeps=thin, eq=eq)
        rates = [s.mala_meta.acceptance_rate for s in batch.samples]
        if np.mean(rates) < 0.1:
            click.echo(f"warning: low MALA acceptance rate {np.mean(rates):.3f}", err=True)
    save_batch(batch, out_path)
    click.echo(f"{batch.reps} replicates (n={n}, beta={beta}) written to {out_path}")


@main.command()
@click.option("--eq", "eq_path", required=True)
@click.option("--xi", "xi_specs", multiple=True, required=True)
@click.option("--beta", type=float, required=True)
@click.option("--batch", "batch_path", required=True)
@click.option("--p", type=float, default=1.0, show_default=True)
@click.option("--metric", "metric_kinds", multiple=True, default=("w1", "tv"),
              show_default=True)
@click.option("--rigidity-eps", type=float, default=0.1, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", default=None)
@click.pass_context
@handle_errors
def clt(ctx, eq_path, xi_specs, beta, batch_path, p, metric_kinds, rigidity_eps, seed, out_path):
    """Full Stein/CLT report for one batch."""
    seed = _default(ctx, "seed", seed, 0)
    out_path = _default(ctx, "out", out_path, "report.json")
    eq = load_equilibrium(eq_path)
    xis = [parse_function_spec(s) for s in xi_specs]
    pred = predict(xis, eq, beta, p)
    invs = [invert_theta(eq, xi) for xi in xis]
    batch = load_batch(batch_path)
    if abs(batch.beta - beta) > 1e-12:
        raise ValidationError(f"batch beta {batch.beta} != requested {beta}", code="beta-mismatch")
    report = clt_report(xis, eq, pred, batch, invs, p, metric_kinds, seed=seed,
                        rigidity_eps=rigidity_eps)
    report["config_hash"] = None
    report["seed"] = seed
    write_json(report, out_path)
    click.echo(f"report written to {out_path} (master residual "
               f"{report['stein']['master_residual_max']:.3e})")


@main.command()
@click.option("--reports", "report_paths", multiple=True, required=True,
              help="Report paths; globs are expanded.")
@click.option("--kind", default="w1", show_default=True)
@click.option("--out", "out_path", default=None)
@click.pass_context
@handle_errors
def rates(ctx, report_paths, kind, out_path):
    """Fit the log-log rate across per-n reports; emit CSV."""
    import glob as _glob
    out_path = _default(ctx, "out", out_path, "rates.csv")
    expanded = []
    for p in report_paths:
        hits = sorted(_glob.glob(p)) if any(ch in p for ch in "*?[") else [p]
        expanded.extend(hits)
    ns, ds, ses, slope, slope_se = rates_from_reports(expanded, kind)
    write_rates_csv(out_path, ns, ds, ses, slope, slope_se)
    click.echo(f"fitted slope {slope:+.4f} +- {slope_se:.4f}; table in {out_path}")


@main.command(name="super")
@click.option("--eq", "eq_path", required=True)
@click.option("--xi", "xi_spec", required=True)
@click.option("--beta", type=float, required=True)
@click.option("--batch", "batch_path", required=True)
@click.option("--orders", default="0,1", show_default=True)
@click.option("--out", "out_path", default=None)
@click.pass_context
@handle_errors
def super_cmd(ctx, eq_path, xi_spec, beta, batch_path, orders, out_path):
    """Density super-convergence diagnostics (KDE derivative sup-distances)."""
    out_path = _default(ctx, "out", out_path, "super.json")
    eq = load_equilibrium(eq_path)
    xi = parse_function_spec(xi_spec)
    pred = predict([xi], eq, beta)
    batch = load_batch(batch_path)
    lam = batch.matrix()
    xs = cheb_eval(xi, lam).sum(axis=1) - batch.n * eq.mean(xi)
    doc = {"n": batch.n, "reps": batch.reps,
           "prediction": {"m": pred.m, "sigma": pred.sigma}, "orders": {}}
    for r in (int(t) for t in orders.split(",")):
        doc["orders"][str(r)] = metrics.density_sup_distance(xs, pred.m[0], pred.sigma, r)
    write_json(doc, out_path)
    click.echo(f"super-convergence diagnostics written to {out_path}")


@main.command()
@click.option("--xi", "xi_spec", required=True, help="Test function; its derivative is probed.")
@click.option("--batch", "batch_path", default=None, help="Batch for the negative-moment probe.")
@click.option("--eps-grid", default="0.01,0.1,1.0", show_default=True)
@click.option("--domain", default="-1,1", show_default=True)
@click.option("--out", "out_path", default=None)
@click.pass_context
@handle_errors
def probe(ctx, xi_spec, batch_path, eps_grid, domain, out_path):
    """Negative-moment and alpha-regularity probes for a test function."""
    out_path = _default(ctx, "out", out_path, "probe.json")
    xi = parse_function_spec(xi_spec)
    xi_prime = cheb_derivative(xi)
    eps = [float(t) for t in eps_grid.split(",")]
    lo, hi = (float(t) for t in domain.split(","))
    reg = cltcore.alpha_regularity(xi_prime, eps, (lo, hi))
    doc = {"alpha_regularity": {"points": reg.points, "slope": reg.slope,
                                "richardson_error": reg.richardson_error}}
    if batch_path is not None:
        batch = load_batch(batch_path)
        doc["negative_moment"] = negative_moment_probe(batch, xi_prime, sorted(eps))
    write_json(doc, out_path)
    click.echo(f"probe written to {out_path}")


@main.command()
@click.option("--config", "config_path", required=True)
@click.pass_context
@handle_errors
def run(ctx, config_path):
    """Validate a config and run the full experiment over its n-grid."""
    with open(config_path) as fh:
        cfg = validate_config(fh.read())
    if ctx.obj.get("seed") is not None or ctx.obj.get("threads") is not None:
        from dataclasses import replace
        cfg = replace(cfg,
                      seed=_default(ctx, "seed", None, cfg.seed),
                      threads=_default(ctx, "threads", None, cfg.threads))
    paths = run_experiment(cfg)
    for p in paths:
        click.echo(p)


if __name__ == "__main__":
    main()
