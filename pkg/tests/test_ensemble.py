import numpy as np
import pytest
from scipy.integrate import dblquad

from loggas.ensemble import (
    EnsembleSample,
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
from loggas.equilibrium import build_equilibrium, potential_from_spec, quantiles
from loggas.errors import CollisionError, ValidationError
from loggas.series import ChebSeries, cheb_fit, cheb_eval, cheb_derivative


@pytest.fixture(scope="module")
def pot_gbe():
    return potential_from_spec("poly:0,0,1")


@pytest.fixture(scope="module")
def pot_quartic():
    return potential_from_spec("poly:0,0,-0.5,0,1")


@pytest.fixture(scope="module")
def eq_gbe(pot_gbe):
    return build_equilibrium(pot_gbe)


@pytest.fixture(scope="module")
def eq_quartic(pot_quartic):
    return build_equilibrium(pot_quartic)


class TestEnergy:
    def test_two_points(self, pot_gbe):
        # log 1/|0-1| + 2 (0 + 1) = 2
        assert energy(pot_gbe, np.array([0.0, 1.0]), 2) == pytest.approx(2.0, abs=1e-13)

    def test_single_point_no_interaction(self, pot_gbe):
        assert energy(pot_gbe, np.array([0.35]), 1) == pytest.approx(0.35 ** 2, abs=1e-13)

    def test_three_points_hand_value(self, pot_gbe):
        lam = np.array([-1.0, 0.0, 1.0])
        # pairwise-loop oracle
        acc = 0.0
        for i in range(3):
            for j in range(i + 1, 3):
                acc -= np.log(abs(lam[i] - lam[j]))
        acc += 3 * np.sum(lam ** 2)
        assert acc == pytest.approx(6 - np.log(2.0))
        assert energy(pot_gbe, lam, 3) == pytest.approx(acc, abs=1e-13)

    def test_collision_is_infinite(self, pot_gbe):
        assert energy(pot_gbe, np.array([0.2, 0.2, 0.5]), 3) == np.inf


class TestSampleGbe:
    def test_single_particle_variance(self):
        reps = 100_000
        for beta in (1.0, 4.0):
            batch = sample_batch_gbe(1, beta, reps, master_seed=101)
            v = batch.matrix().var()
            target = 1.0 / (2 * beta)
            se = target * np.sqrt(2.0 / reps)
            assert abs(v - target) < 3 * se

    def test_two_point_gap_matches_quadrature_oracle(self):
        # E[(l2-l1)^2] for density prop to |x-y|^2 exp(-4(x^2+y^2)) at n=2, beta=2
        dens = lambda y, x: (x - y) ** 2 * np.exp(-4 * (x * x + y * y))
        znorm, _ = dblquad(dens, -4, 4, -4, 4)
        mom, _ = dblquad(lambda y, x: (x - y) ** 2 * dens(y, x), -4, 4, -4, 4)
        target = mom / znorm
        batch = sample_batch_gbe(2, 2.0, 40_000, master_seed=7)
        gaps2 = (batch.matrix()[:, 1] - batch.matrix()[:, 0]) ** 2
        se = gaps2.std() / np.sqrt(len(gaps2))
        assert abs(gaps2.mean() - target) < 3 * se

    def test_sum_is_gaussian_quarter_variance_at_beta_two(self):
        batch = sample_batch_gbe(8, 2.0, 30_000, master_seed=3)
        tot = batch.matrix().sum(axis=1)
        assert abs(tot.mean()) < 4 * tot.std() / np.sqrt(len(tot))
        v = tot.var()
        assert abs(v - 0.25) < 3 * 0.25 * np.sqrt(2.0 / len(tot))

    def test_mean_x2_converges_to_quarter(self):
        batch = sample_batch_gbe(256, 2.0, 200, master_seed=5)
        val = (batch.matrix() ** 2).mean()
        assert abs(val - 0.25) < 0.01

    def test_determinism_across_worker_counts(self):
        b1 = sample_batch_gbe(16, 2.0, 50, master_seed=42, threads=1)
        b3 = sample_batch_gbe(16, 2.0, 50, master_seed=42, threads=3)
        assert np.array_equal(b1.matrix(), b3.matrix())
        b2 = sample_batch_gbe(16, 2.0, 50, master_seed=43)
        assert not np.array_equal(b1.matrix(), b2.matrix())

    def test_sorted_strictly(self):
        s = sample_gbe(64, 1.0, 9)
        assert np.all(np.diff(s.lambdas) > 0)


class TestSampleMala:
    def test_zero_step_size_returns_init(self, pot_gbe, eq_gbe):
        init = quantiles(eq_gbe, 8)
        out = sample_mala(pot_gbe, 8, 2.0, steps=100, step_size=0.0, seed=1, init=init)
        assert np.allclose(out.lambdas, init)

    def test_single_particle_variance(self, pot_gbe):
        beta = 2.0
        h = 0.05
        batch = sample_batch_mala(pot_gbe, 1, beta, 4000, master_seed=21,
                                  step_size=h, burn_in_sweeps=500, thin_sweeps=20,
                                  init=np.array([0.1]))
        xs = batch.matrix()[:, 0]
        target = 1.0 / (2 * beta)
        se = target * np.sqrt(2.0 / 1000)  # conservative ESS
        assert abs(xs.var() - target) < 3 * se

    def test_cross_sampler_moments(self, pot_gbe, eq_gbe):
        n, beta = 32, 2.0
        mala = sample_batch_mala(pot_gbe, n, beta, 800, master_seed=11, eq=eq_gbe)
        gbe = sample_batch_gbe(n, beta, 4000, master_seed=12)
        for stat in (lambda m: m.sum(axis=1), lambda m: (m ** 2).sum(axis=1)):
            a = stat(mala.matrix())
            b = stat(gbe.matrix())
            # block-means stderr for the chain, plain stderr for iid
            blocks = a[: (len(a) // 20) * 20].reshape(20, -1).mean(axis=1)
            se_a = blocks.std(ddof=1) / np.sqrt(len(blocks))
            se_b = b.std(ddof=1) / np.sqrt(len(b))
            assert abs(a.mean() - b.mean()) < 3 * np.hypot(se_a, se_b)

    def test_acceptance_rate_reported(self, pot_quartic, eq_quartic):
        out = sample_mala(pot_quartic, 16, 2.0, steps=200, step_size=None or 0.1 / (2 * 256),
                          seed=2, eq=eq_quartic)
        assert out.mala_meta is not None
        assert 0.0 <= out.mala_meta.acceptance_rate <= 1.0


class TestGenerator:
    def test_single_particle(self, pot_gbe):
        f = cheb_fit(lambda x: x ** 3, 4, (-1.5, 1.5))
        lam = np.array([0.4])
        beta = 1.7
        # f'' - beta V' f'
        expect = 6 * 0.4 - beta * (2 * 0.4) * (3 * 0.16)
        assert apply_generator(pot_gbe, f, lam, beta) == pytest.approx(expect, rel=1e-12)

    def test_two_particle_hand_expansion(self, pot_gbe):
        f = cheb_fit(lambda x: x ** 2, 3, (-1.5, 1.5))
        a, b, beta = 0.3, -0.5, 2.5
        got = apply_generator(pot_gbe, f, np.array([a, b]), beta)
        assert got == pytest.approx(4 - 8 * beta * (a * a + b * b) + 2 * beta, rel=1e-12)

    def test_matches_finite_difference_dirichlet_oracle(self, pot_quartic):
        # L F = sum_i [d2F/dl_i^2 - beta dH/dl_i dF/dl_i] by central differences
        rng = np.random.default_rng(8)
        lam = np.sort(rng.uniform(-0.9, 0.9, 6))
        beta, n = 1.3, 6
        f = ChebSeries(rng.normal(size=5), (-1.5, 1.5))
        big_f = lambda v: np.sum(cheb_eval(f, v))
        h = 1e-5
        acc = 0.0
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            acc += (big_f(lam + e) - 2 * big_f(lam) + big_f(lam - e)) / h ** 2
            dH = (energy(pot_quartic, lam + e, n) - energy(pot_quartic, lam - e, n)) / (2 * h)
            dF = (big_f(lam + e) - big_f(lam - e)) / (2 * h)
            acc -= beta * dH * dF
        got = apply_generator(pot_quartic, f, lam, beta)
        assert got == pytest.approx(acc, rel=1e-4)

    def test_constant_f_is_zero(self, pot_gbe):
        f = ChebSeries([5.0], (-1.5, 1.5))
        assert apply_generator(pot_gbe, f, np.array([0.1, 0.7]), 2.0) == 0.0

    def test_collision_raises(self, pot_gbe):
        f = cheb_fit(lambda x: x ** 2, 3, (-1.5, 1.5))
        with pytest.raises(CollisionError):
            apply_generator(pot_gbe, f, np.array([0.2, 0.2]), 2.0)


class TestCarreDuChamp:
    def test_identity_pair(self):
        one = ChebSeries([1.0], (-1.5, 1.5))
        lam = np.linspace(-0.5, 0.5, 16)
        assert carre_du_champ(one, one, lam) == pytest.approx(16.0)

    def test_mixed_pair(self):
        fp = ChebSeries([1.0], (-1.5, 1.5))            # phi = x
        gp = cheb_fit(lambda x: 2 * x, 2, (-1.5, 1.5))  # psi = x^2
        lam = np.array([0.1, -0.3, 0.8])
        assert carre_du_champ(fp, gp, lam) == pytest.approx(np.sum(2 * lam), rel=1e-13)

    def test_matches_finite_difference_gradients(self):
        rng = np.random.default_rng(1)
        lam = np.sort(rng.uniform(-1, 1, 16))
        phi = ChebSeries(rng.normal(size=6), (-1.5, 1.5))
        psi = ChebSeries(rng.normal(size=6), (-1.5, 1.5))
        fp, gp = cheb_derivative(phi), cheb_derivative(psi)
        got = carre_du_champ(fp, gp, lam)
        h = 1e-6
        grad_phi = (cheb_eval(phi, lam + h) - cheb_eval(phi, lam - h)) / (2 * h)
        grad_psi = (cheb_eval(psi, lam + h) - cheb_eval(psi, lam - h)) / (2 * h)
        assert got == pytest.approx(float(grad_phi @ grad_psi), rel=1e-6)


class TestIbp:
    def test_constant_pair_residual_zero(self, pot_gbe, eq_gbe):
        batch = sample_batch_gbe(8, 2.0, 200, master_seed=1)
        c = ChebSeries([2.0], (-1.5, 1.5))
        res = ibp_check(pot_gbe, c, c, batch, eq=eq_gbe)
        assert res.residual == 0.0

    def test_tridiagonal_t1_pair(self, pot_gbe, eq_gbe):
        batch = sample_batch_gbe(8, 2.0, 10_000, master_seed=2)
        t1 = ChebSeries([0.0, 1.0], (-1.5, 1.5))
        res = ibp_check(pot_gbe, t1, t1, batch, eq=eq_gbe)
        assert abs(res.residual) <= 3 * res.stderr

    def test_negative_control_mis_scaled(self, pot_gbe, eq_gbe):
        batch = sample_batch_gbe(8, 2.0, 10_000, master_seed=2)
        scaled = [EnsembleSample(2.0 * s.lambdas, s.n, s.beta, s.method, s.seed)
                  for s in batch.samples]
        from loggas.ensemble import SampleBatch
        bad = SampleBatch(tuple(scaled), batch.master_seed)
        t1 = ChebSeries([0.0, 1.0], (-1.5, 1.5))
        res = ibp_check(pot_gbe, t1, t1, bad, eq=eq_gbe)
        assert abs(res.residual) > 5 * res.stderr


class TestBatchIO:
    def test_round_trip_bit_identical(self, tmp_path):
        batch = sample_batch_gbe(12, 1.5, 64, master_seed=77)
        path = tmp_path / "b.bin"
        save_batch(batch, path)
        loaded = load_batch(path)
        assert loaded.n == 12 and loaded.beta == 1.5 and loaded.reps == 64
        assert loaded.master_seed == 77
        assert loaded.method == "unknown"
        assert np.array_equal(loaded.matrix(), batch.matrix())

    def test_header_layout(self, tmp_path):
        batch = sample_batch_gbe(3, 2.0, 2, master_seed=5)
        path = tmp_path / "b.bin"
        save_batch(batch, path)
        raw = path.read_bytes()
        assert raw[:4] == b"BELS"
        assert int.from_bytes(raw[4:8], "little") == 1
        assert int.from_bytes(raw[8:12], "little") == 3
        assert len(raw) == 32 + 8 * 3 * 2

    def test_magic_check(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\0" * 60)
        with pytest.raises(ValidationError):
            load_batch(path)


def test_sample_invariants():
    with pytest.raises(ValidationError):
        EnsembleSample(np.array([0.2, 0.1]), 2, 2.0, "tridiagonal", 0)
    with pytest.raises(ValidationError):
        EnsembleSample(np.array([0.1, 0.2]), 3, 2.0, "tridiagonal", 0)
