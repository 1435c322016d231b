import numpy as np
import pytest
from numpy.testing import assert_allclose

from sdlab.exceptions import DegenerateDesignError, InvalidInputError
from sdlab.ridge import NoiseSpec, SpectralDesign, expected_error
from sdlab.tuning import (
    CurveRecord,
    default_bracket,
    error_curve_sweep,
    local_max_condition,
    minimize_reg_error,
    minimize_sd_error,
    optimal_xi,
    optimal_xi_noise_limit,
    powerlaw_design,
    reg_error,
    reg_error_deriv,
    sd_curvature,
    sd_error,
    sd_error_deriv,
    sd_local_max_sufficient,
    stationarity_sum,
    sweep_lambdas,
    two_mode_design,
)


def random_design(rng, r=None, null_mass=0.0):
    r = r or int(rng.integers(2, 7))
    return SpectralDesign(
        sigma=np.sort(rng.uniform(0.2, 3.0, r))[::-1],
        signal=rng.standard_normal(r),
        null_mass=null_mass,
        dim=r + 1,
    )


class TestOptimalXi:
    def test_single_mode_noise_free_value(self):
        sigma, lam = 1.3, 0.7
        design = SpectralDesign(sigma=np.array([sigma]), signal=np.array([0.9]))
        c = lam / sigma**2
        assert_allclose(optimal_xi(design, NoiseSpec(0.0), lam), -(1.0 + c), rtol=1e-12)

    def test_noise_free_value_agrees_with_grid_minimum(self):
        design = SpectralDesign(sigma=np.array([1.3]), signal=np.array([0.9]))
        noise = NoiseSpec(0.0)
        xi = optimal_xi(design, noise, 0.7)
        grid = np.linspace(xi - 1.0, xi + 1.0, 2001)
        values = [expected_error(design, noise, 0.7, x) for x in grid]
        assert abs(grid[int(np.argmin(values))] - xi) <= 1.5e-3

    def test_minimizes_error_locally(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            design = random_design(rng)
            noise = NoiseSpec(float(rng.uniform(0.01, 3.0)))
            lam = float(rng.uniform(0.05, 4.0))
            xi = optimal_xi(design, noise, lam)
            best = expected_error(design, noise, lam, xi)
            assert best <= expected_error(design, noise, lam, xi + 1e-4) + 1e-12
            assert best <= expected_error(design, noise, lam, xi - 1e-4) + 1e-12

    def test_heavy_noise_exceeds_one(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            design = random_design(rng)
            lam = float(rng.uniform(0.05, 4.0))
            assert optimal_xi(design, NoiseSpec(1e12), lam) > 1.0

    def test_degenerate_design_rejected(self):
        design = SpectralDesign(sigma=np.array([1.0]), signal=np.array([0.0]))
        with pytest.raises(DegenerateDesignError):
            optimal_xi(design, NoiseSpec(0.0), 1.0)

    def test_strictly_increasing_in_noise(self):
        rng = np.random.default_rng(2)
        gammas = np.geomspace(1e-3, 1e3, 20)
        for _ in range(20):
            design = random_design(rng)
            lam = float(rng.uniform(0.05, 4.0))
            values = [optimal_xi(design, NoiseSpec(g), lam) for g in gammas]
            assert np.all(np.diff(values) > 0.0)


class TestNoiseLimit:
    def test_single_mode_unit_ratio(self):
        design = SpectralDesign(sigma=np.array([1.0]), signal=np.array([1.0]))
        assert_allclose(optimal_xi_noise_limit(design, 1.0), 2.0, rtol=1e-14)

    def test_always_above_one(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            design = random_design(rng)
            lam = float(rng.uniform(0.01, 10.0))
            assert optimal_xi_noise_limit(design, lam) > 1.0

    def test_agrees_with_heavy_noise_solution(self):
        rng = np.random.default_rng(4)
        design = random_design(rng)
        lam = 0.8
        limit = optimal_xi_noise_limit(design, lam)
        assert abs(optimal_xi(design, NoiseSpec(1e14), lam) - limit) <= 1e-4


class TestErrorCurves:
    def test_reg_error_is_xi_zero_error(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            design = random_design(rng, null_mass=0.2)
            noise = NoiseSpec(float(rng.uniform(0.0, 2.0)))
            lam = float(rng.uniform(0.05, 4.0))
            assert_allclose(reg_error(design, noise, lam),
                            expected_error(design, noise, lam, 0.0), rtol=1e-12)

    def test_noise_free_small_penalty_leaves_null_mass(self):
        design = SpectralDesign(sigma=np.array([1.0, 0.5]), signal=np.array([0.7, 0.3]),
                                null_mass=0.4, dim=3)
        assert_allclose(reg_error(design, NoiseSpec(0.0), 1e-12), 0.4, atol=1e-20)

    def test_single_mode_hand_value(self):
        design = SpectralDesign(sigma=np.array([1.0]), signal=np.array([1.0]))
        assert_allclose(reg_error(design, NoiseSpec(1.0), 1.0), 0.5, rtol=1e-14)

    def test_sd_error_never_above_reg_error(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            design = random_design(rng)
            noise = NoiseSpec(float(rng.uniform(0.01, 2.0)))
            for lam in np.geomspace(1e-3, 1e3, 25):
                assert sd_error(design, noise, lam) <= reg_error(design, noise, lam) + 1e-12

    def test_sd_error_matches_optimal_xi_error(self):
        rng = np.random.default_rng(7)
        gaps = []
        for _ in range(100):
            design = random_design(rng, null_mass=float(rng.uniform(0.0, 0.5)))
            noise = NoiseSpec(float(rng.uniform(0.01, 2.0)))
            lam = float(rng.uniform(0.05, 4.0))
            xi = optimal_xi(design, noise, lam)
            gaps.append(abs(sd_error(design, noise, lam)
                            - expected_error(design, noise, lam, xi)))
        assert max(gaps) <= 1e-10

    def test_curves_touch_at_reg_optimum(self):
        rng = np.random.default_rng(8)
        for _ in range(5):
            design = random_design(rng)
            noise = NoiseSpec(float(rng.uniform(0.1, 1.0)))
            lam_star = minimize_reg_error(design, noise)
            assert_allclose(sd_error(design, noise, lam_star),
                            reg_error(design, noise, lam_star), rtol=1e-10)
            assert abs(sd_error_deriv(design, noise, lam_star)) <= 1e-8

    def test_stationarity_sum_is_half_derivative(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            design = random_design(rng)
            noise = NoiseSpec(float(rng.uniform(0.0, 2.0)))
            lam = float(rng.uniform(0.05, 4.0))
            lhs = stationarity_sum(design, noise, lam)
            rhs = 0.5 * reg_error_deriv(design, noise, lam)
            assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-300)

    def test_degenerate_flat_curve_rejected(self):
        design = SpectralDesign(sigma=np.array([1.0]), signal=np.array([0.0]))
        with pytest.raises(DegenerateDesignError):
            sd_error(design, NoiseSpec(0.0), 1.0)


class TestSdErrorDerivative:
    def test_finite_difference_agreement(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            design = random_design(rng)
            noise = NoiseSpec(float(rng.uniform(0.05, 2.0)))
            lam = float(rng.uniform(0.1, 4.0))
            step = 1e-6 * lam
            numeric = (sd_error(design, noise, lam + step)
                       - sd_error(design, noise, lam - step)) / (2.0 * step)
            analytic = sd_error_deriv(design, noise, lam)
            assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-12)

    @pytest.mark.parametrize("gamma", [0.1, 0.3, 1.0])
    def test_two_mode_sign_pattern(self, gamma):
        design = two_mode_design()
        noise = NoiseSpec(gamma**2)
        pivot = 2.0 * gamma**2
        for lam in (0.3 * pivot, 0.9 * pivot, 1.1 * pivot, 5.0 * pivot):
            assert np.sign(sd_error_deriv(design, noise, lam)) == np.sign(lam - pivot)


class TestLocalMaxCondition:
    def test_equal_signal_weights_cancel(self):
        design = SpectralDesign(sigma=np.array([2.0, 1.0, 0.5]),
                                signal=np.full(3, 0.4))
        t3, is_max = local_max_condition(design, 0.7)
        assert t3 == 0.0 and not is_max

    def test_ordered_signal_is_negative(self):
        design = SpectralDesign(sigma=np.array([2.0, 1.0, 0.5]),
                                signal=np.array([0.9, 0.6, 0.3]))
        t3, is_max = local_max_condition(design, 0.7)
        assert t3 < 0.0 and is_max

    def test_powerlaw_design_has_local_max(self):
        design = powerlaw_design()
        noise = NoiseSpec(0.25**2)
        lam_star = minimize_reg_error(design, noise)
        _, is_max = local_max_condition(design, lam_star)
        assert is_max
        # central second difference of the distilled curve is negative there
        step = 1e-4 * lam_star
        second = (sd_error(design, noise, lam_star + step)
                  - 2.0 * sd_error(design, noise, lam_star)
                  + sd_error(design, noise, lam_star - step)) / step**2
        assert second < 0.0


def normalized_ordered_design(rng, r):
    sigma = np.concatenate([[1.0], np.sort(rng.uniform(0.3, 0.95, r - 1))[::-1]])
    theta = np.sort(rng.uniform(0.1, 1.0, r))[::-1]
    signal = np.sqrt(theta / theta.sum())
    return SpectralDesign(sigma=sigma, signal=signal)


class TestSufficientCondition:
    def test_ordered_design_with_heavy_noise(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            design = normalized_ordered_design(rng, 5)
            gamma_sq = 2.0 * float(np.max(design.theta_sq))  # nu = 2 threshold
            noise = NoiseSpec(gamma_sq)
            assert sd_local_max_sufficient(design, noise, q=design.rank, nu=2.0)
            lam_star = minimize_reg_error(design, noise)
            _, is_max = local_max_condition(design, lam_star)
            assert is_max

    def test_tied_signal_fails_ordering(self):
        design = SpectralDesign(sigma=np.array([1.0, 0.5]),
                                signal=np.full(2, np.sqrt(0.5)))
        assert not sd_local_max_sufficient(design, NoiseSpec(10.0), q=2, nu=2.0)

    def test_unnormalized_design_rejected(self):
        design = SpectralDesign(sigma=np.array([2.0, 1.0]),
                                signal=np.array([1.0, 1.0]))
        with pytest.raises(InvalidInputError):
            sd_local_max_sufficient(design, NoiseSpec(1.0), q=2, nu=2.0)

    def test_noise_threshold_scales_with_margin(self):
        rng = np.random.default_rng(12)
        design = normalized_ordered_design(rng, 4)
        nu = float(design.rank)
        threshold = float(np.max(design.theta_sq)) / (nu - 1.0)
        assert sd_local_max_sufficient(design, NoiseSpec(threshold * 1.01), q=4, nu=nu)
        assert not sd_local_max_sufficient(design, NoiseSpec(threshold * 0.99), q=4, nu=nu)


class TestMinimizers:
    @pytest.mark.parametrize("gamma", [0.1, 0.3, 1.0])
    def test_two_mode_optimum_both_curves(self, gamma):
        design = two_mode_design()
        noise = NoiseSpec(gamma**2)
        assert abs(minimize_reg_error(design, noise) - 2.0 * gamma**2) <= 1e-6
        assert abs(minimize_sd_error(design, noise) - 2.0 * gamma**2) <= 1e-6

    def test_noise_free_pushes_to_lower_bracket(self):
        design = two_mode_design()
        lo, _ = default_bracket(design)
        assert minimize_reg_error(design, NoiseSpec(0.0)) == lo

    def test_fixed_point_identity_at_optimum(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            design = random_design(rng)
            noise = NoiseSpec(float(rng.uniform(0.05, 2.0)))
            lam = minimize_reg_error(design, noise)
            sig2 = design.sigma**2
            implied = (noise.gamma_sq * np.sum(sig2 / (lam + sig2) ** 3)
                       / np.sum(design.theta_sq * sig2 / (lam + sig2) ** 3))
            assert abs(lam - implied) <= 1e-8

    def test_powerlaw_optimal_sd_beats_optimal_reg(self):
        design = powerlaw_design()
        for gamma in (0.125, 0.25, 0.5):
            noise = NoiseSpec(gamma**2)
            best_reg = reg_error(design, noise, minimize_reg_error(design, noise))
            best_sd = sd_error(design, noise, minimize_sd_error(design, noise))
            assert best_sd < best_reg

    def test_sd_minimum_beats_grid(self):
        design = powerlaw_design()
        noise = NoiseSpec(0.25**2)
        lam_star = minimize_sd_error(design, noise)
        best = sd_error(design, noise, lam_star)
        lo, hi = default_bracket(design)
        for lam in np.geomspace(lo, hi, 200):
            assert best <= sd_error(design, noise, lam) + 1e-12


class TestSweep:
    def test_grid_is_ten_doublings(self):
        lams = sweep_lambdas(0.25)
        assert lams.size == 10
        assert_allclose(lams[0], 0.25**2 / 4.0, rtol=1e-15)
        assert_allclose(np.diff(np.log2(lams)), 1.0, rtol=1e-12)

    @pytest.mark.parametrize("gamma", [0.125, 0.25, 0.5])
    def test_sweep_matches_direct_evaluation(self, gamma):
        design = powerlaw_design()
        noise = NoiseSpec(gamma**2)
        records = error_curve_sweep(gamma)
        assert len(records) == 10
        for record in records:
            assert record.e_sd <= record.e_reg + 1e-12
            assert_allclose(record.e_reg, reg_error(design, noise, record.lam),
                            rtol=1e-12)
            assert_allclose(record.xi_star, optimal_xi(design, noise, record.lam),
                            rtol=1e-12)
        t3, is_max = local_max_condition(design, minimize_reg_error(design, noise))
        assert t3 < 0.0 and is_max

    def test_record_rejects_inverted_curves(self):
        with pytest.raises(Exception):
            CurveRecord(lam=1.0, e_reg=0.5, e_sd=0.6, xi_star=0.0, e_sd_prime=0.0)


def test_curvature_positive_for_nondegenerate():
    rng = np.random.default_rng(14)
    design = random_design(rng)
    assert sd_curvature(design, NoiseSpec(0.5), 1.0) > 0.0
