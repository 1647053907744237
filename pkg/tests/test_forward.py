import numpy as np
import pytest

from uwbinvert.forward import (
    EPS0,
    MU0,
    FrequencyGrid,
    LayerProfile,
    intrinsic_impedance,
    layer_wave_params,
    partial_dft,
    reflectivity,
    reflectivity_gradient,
    snr_to_noise_variance,
    synthesize_measurement,
)
from uwbinvert.presets import thoracic_profile

W4GHZ = 2 * np.pi * 4e9


def small_grid(n=64, dt=1.0869565217391304e-11, q=23):
    return FrequencyGrid.regular(n, dt, q)


# fixture values computed beforehand with a 30-digit mpmath evaluation of the
# defining formulas (independent of the package implementation)
ETA_FREE_SPACE = 376.73031356432026
ETA_50_1_4GHZ = 53.117272435995975 + 2.382170300928202j
SKIN_ZETA = 1.0404760583488092
SKIN_ALPHA = 72.141384065595088
SKIN_BETA = 512.21361159469663
SKIN_R = -0.7227621494410358 + 0.033554918345315244j


class TestIntrinsicImpedance:
    def test_free_space(self):
        eta = intrinsic_impedance(1.0, 0.0, W4GHZ)
        assert abs(eta.imag) < 1e-12
        np.testing.assert_allclose(eta.real, ETA_FREE_SPACE, rtol=1e-12)

    def test_quarter_impedance_at_eps4(self):
        eta = intrinsic_impedance(4.0, 0.0, 2 * np.pi * 1e9)
        np.testing.assert_allclose(eta.real, ETA_FREE_SPACE / 2, rtol=1e-12)

    def test_lossy_fixture(self):
        eta = intrinsic_impedance(50.0, 1.0, W4GHZ)
        np.testing.assert_allclose(eta, ETA_50_1_4GHZ, rtol=1e-13)

    def test_principal_root(self):
        for eps, sig in [(5, 0.1), (80, 3.0), (2, 0.0)]:
            assert intrinsic_impedance(eps, sig, W4GHZ).real > 0

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            intrinsic_impedance(0.0, 0.0, W4GHZ)
        with pytest.raises(ValueError):
            intrinsic_impedance(1.0, 0.0, -1.0)
        with pytest.raises(ValueError):
            intrinsic_impedance(1.0, -0.5, W4GHZ)


class TestLayerWaveParams:
    def test_identical_media_zero_reflection(self):
        profile = LayerProfile([4.0, 4.0], [0.1, 0.1], [0.01, 0.01])
        assert abs(layer_wave_params(profile, 2, W4GHZ).r) < 1e-15

    def test_lossless_one_to_four(self):
        profile = LayerProfile([4.0], [0.0], [0.01])
        wp = layer_wave_params(profile, 1, W4GHZ)
        np.testing.assert_allclose(wp.r, -1.0 / 3.0, rtol=1e-12)
        assert wp.zeta == 1.0
        assert wp.alpha == 0.0
        np.testing.assert_allclose(wp.beta, W4GHZ * np.sqrt(MU0 * EPS0 * 4.0), rtol=1e-12)

    def test_skin_fixture(self):
        profile = LayerProfile([36.59], [2.34], [0.003])
        wp = layer_wave_params(profile, 1, W4GHZ)
        np.testing.assert_allclose(wp.zeta, SKIN_ZETA, rtol=1e-12)
        np.testing.assert_allclose(wp.alpha, SKIN_ALPHA, rtol=1e-12)
        np.testing.assert_allclose(wp.beta, SKIN_BETA, rtol=1e-12)
        np.testing.assert_allclose(wp.r, SKIN_R, rtol=1e-12)

    def test_reflection_sign_reciprocity(self):
        a = LayerProfile([7.0], [0.4], [0.01], eps0_medium=3.0, sigma0_medium=0.2)
        b = LayerProfile([3.0], [0.2], [0.01], eps0_medium=7.0, sigma0_medium=0.4)
        ra = layer_wave_params(a, 1, W4GHZ).r
        rb = layer_wave_params(b, 1, W4GHZ).r
        np.testing.assert_allclose(ra, -rb, rtol=1e-14)


def bounce_series(r1, r2, beta1, d1, n_terms=50):
    """Geometric multiple-bounce expansion of a lossless two-layer stack."""
    phase = np.exp(-2j * beta1 * d1)
    total = r1 + np.zeros_like(phase)
    for k in range(1, n_terms + 1):
        total = total + (1 - r1**2) * (-r1) ** (k - 1) * r2**k * phase**k
    return total


class TestReflectivity:
    def test_uniform_medium_is_dark(self):
        profile = LayerProfile([4.0, 4.0, 4.0], [0.3, 0.3, 0.3], [0.01, 0.02, 0.01],
                               eps0_medium=4.0, sigma0_medium=0.3)
        x = reflectivity(profile, small_grid())
        np.testing.assert_allclose(np.abs(x), 0.0, atol=1e-15)

    def test_single_interface_magnitude_and_phase(self):
        grid = small_grid()
        d0 = 0.01
        profile = LayerProfile([9.0], [0.0], [d0])
        x = reflectivity(profile, grid)
        np.testing.assert_allclose(np.abs(x), 0.5, rtol=1e-12)  # |(1-3)/(1+3)|
        # phase advances linearly: unwrapped angle of x/r1 = -2 beta0 d0
        slope_expected = -2 * d0 * np.sqrt(MU0 * EPS0)
        phase = np.unwrap(np.angle(x / (-0.5)))
        slopes = np.diff(phase) / np.diff(grid.freqs)
        np.testing.assert_allclose(slopes, slope_expected, rtol=1e-9)

    def test_two_layer_bounce_series_oracle(self):
        grid = small_grid(128)
        eps1, eps2 = 4.0, 25.0
        d0, d1 = 0.005, 0.013
        profile = LayerProfile([eps1, eps2], [0.0, 0.0], [d0, d1])
        x = reflectivity(profile, grid)

        w = grid.freqs
        beta0 = w * np.sqrt(MU0 * EPS0)
        beta1 = w * np.sqrt(MU0 * EPS0 * eps1)
        r1 = (1 / np.sqrt(eps1) - 1) / (1 / np.sqrt(eps1) + 1)
        r2 = (1 / np.sqrt(eps2) - 1 / np.sqrt(eps1)) / (1 / np.sqrt(eps2) + 1 / np.sqrt(eps1))
        oracle = bounce_series(r1, r2, beta1, d1) * np.exp(-2j * beta0 * d0)
        np.testing.assert_allclose(x, oracle, atol=1e-10)

    def test_passivity_sample(self):
        rng = np.random.default_rng(42)
        grid = small_grid()
        for _ in range(200):
            m = rng.integers(1, 6)
            profile = LayerProfile(
                rng.uniform(1.0, 90.0, m),
                rng.uniform(0.0, 4.0, m),
                rng.uniform(1e-4, 0.05, m),
            )
            assert np.max(np.abs(reflectivity(profile, grid))) <= 1 + 1e-9


class TestReflectivityGradient:
    def test_zero_profile_thickness_gradient(self):
        profile = LayerProfile([1.0, 1.0], [0.0, 0.0], [0.01, 0.01])
        rg = reflectivity_gradient(profile, small_grid())
        m = 2
        np.testing.assert_allclose(rg.jac[:, 2 * m :], 0.0, atol=1e-15)

    def test_single_interface_standoff_derivative(self):
        grid = small_grid()
        profile = LayerProfile([9.0], [0.0], [0.01])
        rg = reflectivity_gradient(profile, grid)
        beta0 = grid.freqs * np.sqrt(MU0 * EPS0)
        np.testing.assert_allclose(rg.jac[:, 2], -2j * beta0 * rg.x, rtol=1e-12)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_finite_difference_oracle(self, seed):
        """Central differences (relative step 1e-6) on random interior points."""
        rng = np.random.default_rng(seed)
        grid = small_grid()
        m = 5
        eps = rng.uniform(3.0, 90.0, m)
        sig = rng.uniform(0.05, 2.8, m)
        d = rng.uniform(2e-3, 2.8e-2, m)
        profile = LayerProfile(eps, sig, d)
        rg = reflectivity_gradient(profile, grid)

        theta = profile.theta
        fd = np.empty_like(rg.jac)
        for k in range(3 * m):
            h = 1e-6 * abs(theta[k])
            tp, tm = theta.copy(), theta.copy()
            tp[k] += h
            tm[k] -= h
            xp = reflectivity(LayerProfile.from_theta(tp), grid)
            xm = reflectivity(LayerProfile.from_theta(tm), grid)
            fd[:, k] = (xp - xm) / (2 * h)
        err = np.linalg.norm(rg.jac - fd) / np.linalg.norm(fd)
        assert err < 1e-6

    def test_imaginary_step_oracle(self):
        """Two-sided imaginary-axis step differentiation of the analytic recursion."""
        from uwbinvert._kernels import fallback

        grid = small_grid(32)
        profile = thoracic_profile()
        m = profile.n_layers
        rg = reflectivity_gradient(profile, grid)
        theta = profile.theta
        for k in range(3 * m):
            h = 1e-7 * abs(theta[k])
            tp = theta.astype(complex)
            tm = theta.astype(complex)
            tp[k] += 1j * h
            tm[k] -= 1j * h
            g = (
                fallback.reflectivity(tp[:m], tp[m : 2 * m], tp[2 * m :], 1.0, 0.0, grid.freqs)
                - fallback.reflectivity(tm[:m], tm[m : 2 * m], tm[2 * m :], 1.0, 0.0, grid.freqs)
            ) / (2j * h)
            scale = np.max(np.abs(rg.jac[:, k]))
            assert np.max(np.abs(g - rg.jac[:, k])) < 1e-5 * scale


class TestPartialDft:
    def test_small_omega_rows_near_one(self):
        grid = FrequencyGrid(np.array([1e-6, 2e-6]), dt=1e-11, Q=8)
        f = partial_dft(grid)
        np.testing.assert_allclose(f, 1.0, atol=1e-12)

    def test_first_column_is_one(self):
        f = partial_dft(small_grid())
        np.testing.assert_allclose(f[:, 0], 1.0, atol=0)

    def test_matches_dense_fft_oracle(self):
        """Regular grid rows are bins 1..N of a length-2N DFT."""
        grid = small_grid(64)
        rng = np.random.default_rng(3)
        h = rng.standard_normal(grid.Q)
        via_matrix = partial_dft(grid) @ h
        dense = np.fft.fft(h, 2 * grid.n)
        np.testing.assert_allclose(via_matrix, dense[1 : grid.n + 1], atol=1e-10)


class TestSynthesizeMeasurement:
    def test_zero_gamma_gives_pure_noise(self):
        grid = small_grid()
        profile = LayerProfile([9.0], [0.1], [0.01])
        a = np.linalg.qr(np.random.default_rng(0).standard_normal((grid.Q, 4)))[0]
        meas = synthesize_measurement(profile, np.zeros(4), a, grid, 1.0, 123)
        ref = synthesize_measurement(profile, np.zeros(4), a, grid, 1.0, 123)
        assert np.std(meas.y) > 0
        np.testing.assert_array_equal(meas.y, ref.y)  # seeded determinism

    def test_noise_free_uniform_medium_is_zero(self):
        grid = small_grid()
        profile = LayerProfile([1.0], [0.0], [0.01])
        a = np.linalg.qr(np.random.default_rng(0).standard_normal((grid.Q, 4)))[0]
        meas = synthesize_measurement(profile, np.ones(4), a, grid, 0.0)
        np.testing.assert_allclose(np.abs(meas.y), 0.0, atol=1e-14)

    def test_snr_convention_monte_carlo(self):
        """Average per-sample power over sigma_v2 hits 40 dB within 5%."""
        from uwbinvert.config import ExperimentConfig, build_grid, build_subspace, true_gamma

        cfg = ExperimentConfig()
        grid = build_grid(cfg)
        a = build_subspace(cfg)
        gamma = true_gamma(cfg, grid, a)
        profile = thoracic_profile()
        clean = synthesize_measurement(profile, gamma, a, grid, 0.0)
        sigma_v2 = snr_to_noise_variance(clean.y, 40.0)
        power = np.mean(np.abs(clean.y) ** 2)

        noise_power = 0.0
        n_seeds = 100
        for seed in range(n_seeds):
            noisy = synthesize_measurement(profile, gamma, a, grid, sigma_v2, seed)
            noise_power += np.mean(np.abs(noisy.y - clean.y) ** 2) / n_seeds
        empirical = power / noise_power
        assert abs(empirical - 1e4) < 0.05 * 1e4

    def test_dimension_mismatch(self):
        grid = small_grid()
        profile = LayerProfile([9.0], [0.1], [0.01])
        a = np.eye(grid.Q)[:, :4]
        with pytest.raises(ValueError):
            synthesize_measurement(profile, np.zeros(3), a, grid, 0.0)
        with pytest.raises(ValueError):
            synthesize_measurement(profile, np.zeros(4), a[:-1], grid, 0.0)


class TestProfileValidation:
    def test_rejects_bad_shapes_and_values(self):
        with pytest.raises(ValueError):
            LayerProfile([1.0, 2.0], [0.0], [0.01, 0.01])
        with pytest.raises(ValueError):
            LayerProfile([-1.0], [0.0], [0.01])
        with pytest.raises(ValueError):
            LayerProfile([1.0], [0.0], [0.0])
        with pytest.raises(ValueError):
            LayerProfile([np.nan], [0.0], [0.01])

    def test_theta_round_trip(self):
        profile = thoracic_profile()
        rebuilt = LayerProfile.from_theta(profile.theta)
        np.testing.assert_array_equal(rebuilt.eps, profile.eps)
        np.testing.assert_array_equal(rebuilt.d, profile.d)


class TestGridValidation:
    def test_rejects_dc_and_disorder(self):
        with pytest.raises(ValueError):
            FrequencyGrid(np.array([0.0, 1.0]))
        with pytest.raises(ValueError):
            FrequencyGrid(np.array([2.0, 1.0]))
        with pytest.raises(ValueError):
            FrequencyGrid(np.array([1.0]), dt=-1.0)

    def test_regular_grid_shape(self):
        grid = FrequencyGrid.regular(512)
        assert grid.n == 512
        fs = 1.0 / grid.dt
        np.testing.assert_allclose(grid.freqs[-1], 2 * np.pi * fs / 2, rtol=1e-12)
        np.testing.assert_allclose(np.diff(grid.freqs), grid.freqs[0], rtol=1e-12)
