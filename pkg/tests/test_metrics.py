import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.stats import norm

from loggas.cltcore import predict
from loggas.equilibrium import build_equilibrium, potential_from_spec
from loggas.errors import RejectedInput
from loggas.metrics import (
    DistanceReport,
    density_sup_distance,
    fit_rate,
    projected_wp,
    tv_kde,
    wasserstein_p,
    wasserstein_p_se,
)
from loggas.series import ChebSeries


class TestWasserstein:
    def test_exact_quantiles_give_zero(self):
        r = 500
        xs = norm.ppf((np.arange(1, r + 1) - 0.5) / r)
        assert wasserstein_p(xs, 0.0, 1.0, 1) == pytest.approx(0.0, abs=1e-12)

    def test_point_mass_against_standard_normal(self):
        # W_1(delta_0, N(0,1)) = E|N| = sqrt(2/pi)
        xs = np.zeros(100_000)
        val = wasserstein_p(xs, 0.0, 1.0, 1)
        assert val == pytest.approx(np.sqrt(2 / np.pi), abs=0.01)

    def test_shift_equivariance_exact(self):
        rng = np.random.default_rng(0)
        xs = rng.normal(0.3, 1.2, 400)
        a = 2.7
        assert wasserstein_p(xs + a, 0.1 + a, 0.9, 1.5) == \
            pytest.approx(wasserstein_p(xs, 0.1, 0.9, 1.5), rel=1e-13)

    def test_nonnegative_and_zero_only_on_match(self):
        rng = np.random.default_rng(1)
        xs = rng.normal(0, 1, 256)
        v = wasserstein_p(xs, 0.0, 1.0, 1)
        assert v > 0

    def test_lipschitz_under_uniform_shift(self):
        rng = np.random.default_rng(2)
        xs = rng.normal(0, 1, 512)
        base = wasserstein_p(xs, 0.0, 1.0, 1)
        for a in (0.05, 0.2):
            assert wasserstein_p(xs + a, 0.0, 1.0, 1) <= base + a + 1e-12

    def test_bootstrap_se_positive(self):
        rng = np.random.default_rng(3)
        xs = rng.normal(0, 1, 2000)
        se = wasserstein_p_se(xs, 0.0, 1.0, 1, seed=5)
        assert 0 < se < 0.1

    def test_p_below_one_rejected(self):
        with pytest.raises(RejectedInput):
            wasserstein_p(np.zeros(10), 0, 1, 0.5)


class TestTvKde:
    def test_gaussian_self_distance_at_bias_floor(self):
        rng = np.random.default_rng(42)
        xs = rng.normal(1.3, 0.7, 100_000)
        assert tv_kde(xs, 1.3, 0.7) <= 0.02

    def test_far_shifted_sample_saturates(self):
        rng = np.random.default_rng(0)
        xs = rng.normal(10.0, 1.0, 10_000)
        assert tv_kde(xs, 0.0, 1.0) >= 0.99

    def test_scale_two_matches_closed_form(self):
        # TV(N(0,1), N(0,4)) by density-crossing root finding; the crossing
        # solves phi(c) = phi(c/2)/2, and quad on |phi_1 - phi_2| agrees
        f = lambda x: norm.pdf(x) - norm.pdf(x, scale=2)
        c = brentq(f, 0.5, 2.5)
        tv_exact = (norm.cdf(c) - norm.cdf(-c)) - (norm.cdf(c, scale=2) - norm.cdf(-c, scale=2))
        tv_quad, _ = quad(lambda x: abs(norm.pdf(x) - norm.pdf(x, scale=2)), -30, 30, limit=400)
        assert tv_exact == pytest.approx(tv_quad / 2, abs=1e-8)
        assert tv_exact == pytest.approx(0.3226745688, abs=1e-9)
        rng = np.random.default_rng(7)
        xs = rng.normal(0.0, 2.0, 100_000)
        assert tv_kde(xs, 0.0, 1.0) == pytest.approx(tv_exact, abs=0.03)

    def test_bounds_respected(self):
        rng = np.random.default_rng(1)
        for loc in (0.0, 3.0, 30.0):
            xs = rng.normal(loc, 1.0, 500)
            v = tv_kde(xs, 0.0, 1.0)
            assert 0.0 <= v <= 1.0

    def test_bad_sigma_rejected(self):
        with pytest.raises(RejectedInput):
            tv_kde(np.zeros(200), 0.0, 0.0)


class TestDensitySup:
    def test_gaussian_self_distance(self):
        rng = np.random.default_rng(11)
        xs = rng.normal(0.0, 1.0, 100_000)
        assert density_sup_distance(xs, 0.0, 1.0, 0) <= 0.02

    def test_scale_mismatch_matches_analytic_sup(self):
        rng = np.random.default_rng(5)
        sigma = 0.8
        xs = rng.normal(0.0, 2 * sigma, 100_000)
        grid = np.linspace(-8 * sigma, 8 * sigma, 4096)
        analytic = np.max(np.abs(norm.pdf(grid, scale=2 * sigma) - norm.pdf(grid, scale=sigma)))
        assert density_sup_distance(xs, 0.0, sigma, 0) == pytest.approx(analytic, abs=0.03)

    def test_derivative_order_one_runs(self):
        rng = np.random.default_rng(6)
        xs = rng.normal(0.0, 1.0, 50_000)
        v = density_sup_distance(xs, 0.0, 1.0, 1)
        assert 0 <= v < 0.2

    def test_degenerate_sample_flagged(self):
        xs = np.full(5000, 0.37)
        with pytest.warns(UserWarning):
            density_sup_distance(xs, 0.0, 1.0, 1)

    def test_order_cap(self):
        with pytest.raises(RejectedInput):
            density_sup_distance(np.zeros(2000), 0, 1, 4)


class TestFitRate:
    def test_exact_inverse_law(self):
        ns = np.array([16, 32, 64, 128])
        c = 3.7
        slope, intercept, se = fit_rate(ns, c / ns)
        assert slope == pytest.approx(-1.0, abs=1e-12)
        assert intercept == pytest.approx(np.log(c), abs=1e-12)

    def test_exact_sqrt_law(self):
        ns = np.array([16, 32, 64, 128])
        slope, _, _ = fit_rate(ns, 2.0 / np.sqrt(ns))
        assert slope == pytest.approx(-0.5, abs=1e-12)

    def test_noisy_recovery_within_band(self):
        rng = np.random.default_rng(99)
        ns = np.array([16, 32, 64, 128, 256, 512])
        d = (5.0 / ns) * (1 + 0.05 * rng.standard_normal(6))
        se = 0.05 * d
        slope, _, slope_se = fit_rate(ns, d, se)
        assert -1.15 <= slope <= -0.85

    def test_nonpositive_rejected(self):
        with pytest.raises(RejectedInput):
            fit_rate([8, 16, 32], [0.1, 0.0, 0.01])

    def test_needs_three_points(self):
        with pytest.raises(RejectedInput):
            fit_rate([8, 16], [0.1, 0.05])


class TestProjectedWp:
    @pytest.fixture(scope="class")
    def pred2(self):
        eq = build_equilibrium(potential_from_spec("poly:0,0,1"))
        xis = [ChebSeries([0.0, 1.0], (-1, 1)), ChebSeries([0.0, 0.0, 1.0], (-1, 1))]
        return predict(xis, eq, 2.0)

    def test_exact_gaussian_projections_small(self, pred2):
        rng = np.random.default_rng(21)
        z = rng.standard_normal((100_000, 2))
        samples = pred2.m + z @ pred2.Sigma
        assert projected_wp(samples, pred2, 1.0, n_projections=16, seed=4) <= 0.02

    def test_point_mass_closed_form(self, pred2):
        samples = np.tile(pred2.m, (5000, 1))
        # per-direction closed form sqrt(2/pi) sqrt(u' C u), same direction stream
        rng = np.random.default_rng(np.random.SeedSequence(entropy=9, spawn_key=(79,)))
        acc = 0.0
        nproj = 24
        for _ in range(nproj):
            u = rng.standard_normal(2)
            u /= np.linalg.norm(u)
            acc += np.sqrt(2 / np.pi) * np.sqrt(u @ pred2.C @ u)
        oracle = acc / nproj
        got = projected_wp(samples, pred2, 1.0, n_projections=nproj, seed=9)
        assert got == pytest.approx(oracle, rel=1e-3)

    def test_single_direction_matches_univariate(self, pred2):
        rng = np.random.default_rng(31)
        samples = rng.normal(size=(4000, 2))
        seed = 13
        dir_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(79,)))
        u = dir_rng.standard_normal(2)
        u /= np.linalg.norm(u)
        direct = wasserstein_p(samples @ u, float(u @ pred2.m),
                               float(np.sqrt(u @ pred2.C @ u)), 1.0)
        assert projected_wp(samples, pred2, 1.0, n_projections=1, seed=seed) == \
            pytest.approx(direct, rel=1e-12)

    def test_univariate_shape_rejected(self, pred2):
        with pytest.raises(RejectedInput):
            projected_wp(np.zeros((100, 1)), pred2, 1.0)


class TestDistanceReport:
    def test_length_mismatch_rejected(self):
        with pytest.raises(RejectedInput):
            DistanceReport((8, 16), (0.1,), (0.01,), "w1", -1.0, 0.1)

    def test_negative_distance_rejected(self):
        with pytest.raises(RejectedInput):
            DistanceReport((8,), (-0.1,), (0.01,), "w1", -1.0, 0.1)

    def test_valid(self):
        rep = DistanceReport((8, 16, 32), (0.4, 0.2, 0.1), (0.01, 0.01, 0.01),
                             "w1", -1.0, 0.05)
        assert rep.kind == "w1"
