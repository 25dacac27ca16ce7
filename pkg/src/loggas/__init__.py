"""loggas: a numerical laboratory for CLT fluctuations of one-cut beta-ensembles.

Equilibrium measures, master-operator inversion, the exact master-equation
decomposition of linear statistics, Gamma-Stein diagnostics and bounds,
empirical distance and rate measurement, and super-convergence probes.
"""

from .series import (
    ChebSeries,
    cheb_antiderivative,
    cheb_derivative,
    cheb_eval,
    cheb_fit,
    integral_arcsine,
    integral_semicircle,
    mollify,
    parse_function_spec,
)
from .equilibrium import (
    Equilibrium,
    Potential,
    build_equilibrium,
    el_residual,
    normalize_support,
    potential_from_callable,
    potential_from_spec,
    quantiles,
)
from .master_op import InversionData, apply_t_n, apply_theta_v, invert_theta, quadratic_remainder
from .ensemble import (
    EnsembleSample,
    SampleBatch,
    apply_generator,
    carre_du_champ,
    energy,
    ibp_check,
    load_batch,
    sample_batch_gbe,
    sample_batch_mala,
    sample_gbe,
    sample_mala,
    save_batch,
)
from .cltcore import (
    Prediction,
    SteinTerms,
    alpha_regularity,
    linear_statistic,
    negative_moment_probe,
    predict,
    rigidity_report,
    stein_batch,
    stein_bound,
    stein_terms,
)
from .metrics import (
    DistanceReport,
    density_sup_distance,
    fit_rate,
    projected_wp,
    tv_kde,
    wasserstein_p,
)
from .experiment import ExperimentConfig, run_experiment, validate_config

__version__ = "0.1.0"
