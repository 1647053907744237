import numpy as np
import pytest
from scipy import stats

from uwbinvert.forward import FrequencyGrid, LayerProfile, Measurement, partial_dft, reflectivity
from uwbinvert.posterior import (
    BetaPriorSpec,
    InverseProblem,
    ModelState,
    NoisePriorSpec,
    ParameterBox,
    PulsePriorSpec,
    gamma_conditional_moments,
    log_likelihood,
    log_posterior_t,
    log_prior_theta,
    sample_gamma_conditional,
    sample_noise_conditional,
)
from uwbinvert.pulse import SubspaceSpec, dps_basis


def toy_problem(n=32, m=1, l=4, seed=0, snr_scale=1e-3, kappa=50.0):
    rng = np.random.default_rng(seed)
    grid = FrequencyGrid.regular(n, q=23)
    box = ParameterBox.for_layers(m)
    a = dps_basis(SubspaceSpec(Q=23, L=l, W=l / 46.0))
    profile = LayerProfile.from_theta(box.denormalize(rng.uniform(0.3, 0.7, 3 * m)))
    gamma = rng.standard_normal(l)
    x = reflectivity(profile, grid)
    u = (partial_dft(grid) @ a) @ gamma
    y = u * x + snr_scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    prior = BetaPriorSpec(np.full(3 * m, 0.5), np.full(3 * m, kappa))
    problem = InverseProblem(
        Measurement(y=y, grid=grid), box, prior, PulsePriorSpec(10.0, a), NoisePriorSpec()
    )
    return problem, profile, gamma


class TestParameterBox:
    def test_round_trip(self):
        rng = np.random.default_rng(0)
        box = ParameterBox.for_layers(5)
        theta = box.denormalize(rng.uniform(0, 1, 15))
        np.testing.assert_allclose(box.denormalize(box.normalize(theta)), theta, rtol=1e-12)
        bar = rng.uniform(0, 1, 15)
        np.testing.assert_allclose(box.normalize(box.denormalize(bar)), bar, atol=1e-12)

    def test_contains_is_strict(self):
        box = ParameterBox([0.0], [1.0])
        assert box.contains([0.5])
        assert not box.contains([0.0])
        assert not box.contains([1.0])

    def test_rejects_bad_bounds(self):
        with pytest.raises(ValueError):
            ParameterBox([1.0], [1.0])


class TestBetaPrior:
    def test_zero_concentration_is_flat(self):
        spec = BetaPriorSpec([0.2, 0.8], [0.0, 0.0])
        v1 = spec.logpdf(np.array([0.1, 0.9]))
        v2 = spec.logpdf(np.array([0.5, 0.5]))
        np.testing.assert_allclose(v1, v2, atol=1e-12)
        np.testing.assert_allclose(spec.a, 1.0)
        np.testing.assert_allclose(spec.b, 1.0)

    def test_symmetric_mode(self):
        spec = BetaPriorSpec([0.5], [100.0])
        assert spec.a[0] == 51.0 and spec.b[0] == 51.0
        grid = np.linspace(0.01, 0.99, 99)
        vals = [spec.logpdf(np.array([g])) for g in grid]
        assert grid[int(np.argmax(vals))] == pytest.approx(0.5)

    def test_density_difference_against_scipy(self):
        """lam=0.3, kappa=100 at 0.3 vs 0.6, independent Beta-density oracle."""
        spec = BetaPriorSpec([0.3], [100.0])
        ours = spec.logpdf(np.array([0.3])) - spec.logpdf(np.array([0.6]))
        a, b = 0.3 * 100 + 1, 0.7 * 100 + 1
        oracle = stats.beta.logpdf(0.3, a, b) - stats.beta.logpdf(0.6, a, b)
        np.testing.assert_allclose(ours, oracle, atol=1e-10)

    def test_matches_scipy_everywhere(self):
        rng = np.random.default_rng(1)
        lam = rng.uniform(0.1, 0.9, 6)
        kappa = rng.uniform(0.0, 200.0, 6)
        spec = BetaPriorSpec(lam, kappa)
        theta = rng.uniform(0.05, 0.95, 6)
        oracle = stats.beta.logpdf(theta, lam * kappa + 1, (1 - lam) * kappa + 1).sum()
        np.testing.assert_allclose(spec.logpdf(theta), oracle, atol=1e-10)

    def test_out_of_box_is_minus_inf(self):
        box = ParameterBox.for_layers(1)
        spec = BetaPriorSpec(np.full(3, 0.5), np.full(3, 10.0))
        theta = box.denormalize(np.array([0.5, 0.5, 0.5]))
        assert np.isfinite(log_prior_theta(theta, box, spec))
        theta_out = theta.copy()
        theta_out[0] = box.upper[0] + 1.0
        assert log_prior_theta(theta_out, box, spec) == -np.inf

    def test_gradient_matches_fd(self):
        spec = BetaPriorSpec([0.3, 0.7], [100.0, 40.0])
        theta = np.array([0.4, 0.6])
        g = spec.grad_logpdf(theta)
        h = 1e-7
        for i in range(2):
            tp, tm = theta.copy(), theta.copy()
            tp[i] += h
            tm[i] -= h
            fd = (spec.logpdf(tp) - spec.logpdf(tm)) / (2 * h)
            np.testing.assert_allclose(g[i], fd, rtol=1e-6)


class TestLogLikelihood:
    def test_zero_residual_value(self):
        problem, profile, gamma = toy_problem()
        x = reflectivity(profile, problem.grid)
        u = problem.pulse_response(gamma)
        y = u * x
        val = log_likelihood(y, x, u, sigma_v2=0.5)
        np.testing.assert_allclose(val, -problem.N * np.log(np.pi * 0.5), rtol=1e-12)

    def test_doubling_variance_at_zero_residual(self):
        problem, profile, gamma = toy_problem()
        x = reflectivity(profile, problem.grid)
        u = problem.pulse_response(gamma)
        y = u * x
        delta = log_likelihood(y, x, u, 2.0) - log_likelihood(y, x, u, 1.0)
        np.testing.assert_allclose(delta, -problem.N * np.log(2.0), rtol=1e-12)

    def test_naive_summation_oracle(self):
        rng = np.random.default_rng(5)
        n = 16
        y = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        u = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        sv2 = 0.7
        naive = -n * np.log(np.pi * sv2)
        for i in range(n):
            naive -= abs(y[i] - u[i] * x[i]) ** 2 / sv2
        np.testing.assert_allclose(log_likelihood(y, x, u, sv2), naive, rtol=1e-10)


class TestLogPosterior:
    def test_t_equal_one_matches_sum(self):
        problem, profile, gamma = toy_problem()
        state = ModelState(profile.theta, gamma, 0.01)
        x = reflectivity(profile, problem.grid)
        u = problem.pulse_response(gamma)
        expected = (
            log_likelihood(problem.y, x, u, 0.01)
            + problem.theta_prior.logpdf(problem.box.normalize(profile.theta))
            + problem.pulse_prior.logpdf(gamma)
            + problem.noise_prior.logpdf(0.01)
        )
        np.testing.assert_allclose(log_posterior_t(problem, state, 1.0), expected, rtol=1e-12)

    def test_high_temperature_suppresses_likelihood(self):
        problem, profile, gamma = toy_problem()
        s1 = ModelState(profile.theta, gamma, 0.01)
        other = profile.theta.copy()
        other[0] *= 1.2
        s2 = ModelState(other, gamma, 0.01)
        prior_gap = (
            problem.theta_prior.logpdf(problem.box.normalize(s1.theta))
            - problem.theta_prior.logpdf(problem.box.normalize(s2.theta))
        )
        hot_gap = log_posterior_t(problem, s1, 1e9) - log_posterior_t(problem, s2, 1e9)
        np.testing.assert_allclose(hot_gap, prior_gap, atol=1e-5)

    def test_outside_support(self):
        problem, profile, gamma = toy_problem()
        bad = profile.theta.copy()
        bad[0] = problem.box.upper[0] * 2
        assert log_posterior_t(problem, ModelState(bad, gamma, 0.01), 1.0) == -np.inf
        with pytest.raises(ValueError):
            log_posterior_t(problem, ModelState(profile.theta, gamma, 0.01), 0.5)


class TestNoiseConditional:
    def test_tempered_shape_value(self):
        # N=512, T=1, alpha_v=1e-3 gives posterior shape 512.001
        prior = NoisePriorSpec(1e-3, 1e-3)
        assert prior.alpha_v + 512 / 1.0 == pytest.approx(512.001)

    def test_conjugacy_constant_log_difference(self):
        """log[lik^(1/T) * prior] - log IG(a~, b~) constant over a sigma_v2 grid."""
        prior = NoisePriorSpec(1e-3, 1e-3)
        n, t, resid2 = 64, 3.0, 2.5
        a_t = prior.alpha_v + n / t
        b_t = prior.beta_v + resid2 / t
        grid = np.linspace(0.01, 5.0, 100)
        diffs = []
        for sv2 in grid:
            loglik = -n * np.log(np.pi * sv2) - resid2 / sv2
            target = loglik / t + prior.logpdf(sv2)
            ig = stats.invgamma.logpdf(sv2, a_t, scale=b_t)
            diffs.append(target - ig)
        assert max(diffs) - min(diffs) < 1e-8

    def test_moments(self):
        prior = NoisePriorSpec(1e-3, 1e-3)
        rng = np.random.default_rng(11)
        n, t, resid2 = 512, 1.0, 3.0
        a_t = prior.alpha_v + n / t
        b_t = prior.beta_v + resid2 / t
        draws = np.array([sample_noise_conditional(resid2, n, prior, t, rng) for _ in range(10**5)])
        mean_expected = b_t / (a_t - 1)
        sd = b_t / ((a_t - 1) * np.sqrt(a_t - 2))
        se = sd / np.sqrt(draws.size)
        assert abs(draws.mean() - mean_expected) < 3 * se

    def test_extreme_temperature_is_finite(self):
        prior = NoisePriorSpec(1e-3, 1e-3)
        rng = np.random.default_rng(0)
        draws = [sample_noise_conditional(1.0, 512, prior, 1e12, rng) for _ in range(2000)]
        assert np.all(np.isfinite(draws))
        assert np.all(np.asarray(draws) > 0)


class TestGammaConditional:
    def test_prior_limit_at_high_temperature(self):
        problem, profile, gamma = toy_problem()
        x = reflectivity(profile, problem.grid)
        mean, chol = gamma_conditional_moments(
            problem.y, x, problem.B, 1.0, problem.pulse_prior.sigma_gamma2, 1e14
        )
        np.testing.assert_allclose(mean, 0.0, atol=1e-6)
        prec = chol @ chol.T  # lower triangle factor of the precision
        np.testing.assert_allclose(
            np.diag(prec), 1.0 / problem.pulse_prior.sigma_gamma2, rtol=1e-6
        )

    def test_dark_medium_returns_prior(self):
        problem, profile, gamma = toy_problem()
        x = np.zeros(problem.N, dtype=complex)
        rng = np.random.default_rng(0)
        draws = np.array([
            sample_gamma_conditional(problem.y, x, problem.B, 0.3,
                                     problem.pulse_prior.sigma_gamma2, 1.0, rng)
            for _ in range(20000)
        ])
        sig2 = problem.pulse_prior.sigma_gamma2
        np.testing.assert_allclose(draws.mean(axis=0), 0.0, atol=3 * np.sqrt(sig2 / 20000) + 0.05)
        np.testing.assert_allclose(draws.var(axis=0), sig2, rtol=0.1)

    def test_conjugacy_along_random_slices(self):
        """Tempered conditional equals the stated Gaussian up to a constant."""
        problem, profile, gamma0 = toy_problem(l=3)
        x = reflectivity(problem.profile(profile.theta), problem.grid)
        u_of = lambda g: problem.B @ g
        t, sv2 = 2.5, 0.04
        mean, chol = gamma_conditional_moments(problem.y, x, problem.B, sv2,
                                               problem.pulse_prior.sigma_gamma2, t)
        prec = np.tril(chol) @ np.tril(chol).T
        cov = np.linalg.inv(prec)
        rng = np.random.default_rng(2)
        for _ in range(5):
            g0 = rng.standard_normal(3)
            direction = rng.standard_normal(3)
            diffs = []
            for s in np.linspace(-2, 2, 25):
                g = g0 + s * direction
                loglik = log_likelihood(problem.y, x, u_of(g), sv2)
                target = loglik / t + problem.pulse_prior.logpdf(g)
                ref = stats.multivariate_normal.logpdf(g, mean, cov)
                diffs.append(target - ref)
            assert max(diffs) - min(diffs) < 1e-8

    def test_moment_matching_small_instance(self):
        problem, profile, gamma0 = toy_problem(l=3)
        x = reflectivity(problem.profile(profile.theta), problem.grid)
        t, sv2 = 1.0, 0.02
        mean, chol = gamma_conditional_moments(problem.y, x, problem.B, sv2,
                                               problem.pulse_prior.sigma_gamma2, t)
        prec = np.tril(chol) @ np.tril(chol).T
        cov = np.linalg.inv(prec)
        rng = np.random.default_rng(3)
        draws = np.array([
            sample_gamma_conditional(problem.y, x, problem.B, sv2,
                                     problem.pulse_prior.sigma_gamma2, t, rng)
            for _ in range(10**5)
        ])
        se = np.sqrt(np.diag(cov) / draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - mean) < 3 * se)
        emp_cov = np.cov(draws, rowvar=False)
        cov_se = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov**2) / draws.shape[0])
        assert np.all(np.abs(emp_cov - cov) < 4 * cov_se)


class TestPulsePriorValidation:
    def test_requires_orthonormal_columns(self):
        with pytest.raises(ValueError):
            PulsePriorSpec(1.0, np.ones((8, 2)))
        with pytest.raises(ValueError):
            PulsePriorSpec(-1.0, np.eye(8)[:, :2])
