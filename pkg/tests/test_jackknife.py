import numpy as np
import pytest

from twostep import (ConfigurationError, CorrectionMethod, Dataset, Functional, GmmConfig, JackknifeError, MteModel,
                     PolynomialOutcome, SampleMean, bias_correct_functional, fit_least_squares, jackknife_two_step)


def square(theta):
    return float(theta[0] ** 2)


SQUARE = Functional(square, lambda theta: 2 * theta, 'square')


@pytest.fixture
def mean_data(rng):
    y = 1.5 + rng.normal(size=60)
    return Dataset(y=y, r=np.zeros(60), z=np.ones(60))


def naive_jackknife(data):
    """Refits both steps from scratch on each delete-one subsample."""
    estimates = []
    for ell in range(data.n):
        keep = np.arange(data.n) != ell
        z, t, y = data.z[keep], data.r[keep], data.y[keep, 0]
        p = z @ np.linalg.lstsq(z, t, rcond=None)[0]
        design = np.column_stack([np.ones_like(p), p, p ** 2])
        estimates.append(np.linalg.lstsq(design, y, rcond=None)[0])
    return np.array(estimates)


class TestJackknifeTwoStep:
    def test_sample_mean(self, mean_data):
        result = jackknife_two_step(SampleMean(), mean_data, None, GmmConfig())
        y = mean_data.y[:, 0]
        n = mean_data.n
        assert abs(result.bias_hat[0]) <= 1e-10
        assert result.var_hat[0, 0] == pytest.approx(y.var(ddof=1) / n, rel=1e-10)
        np.testing.assert_allclose(result.theta_loo[:, 0], (y.sum() - y) / (n - 1), rtol=1e-12)

    def test_matches_naive_refits(self, mte_sample):
        data, _ = mte_sample
        data = data.first_covariates(6)
        model = MteModel(PolynomialOutcome(2))
        fit = fit_least_squares(data)
        config = GmmConfig(theta_init=model.closed_form(data, fit.mu_hat))
        result = jackknife_two_step(model, data, fit, config)
        np.testing.assert_allclose(result.theta_loo, naive_jackknife(data), rtol=1e-7, atol=1e-9)

    def test_cached_hat_matrix_gives_same_result(self, mte_sample):
        data, _ = mte_sample
        model = MteModel(PolynomialOutcome(2))
        fit = fit_least_squares(data)
        config = GmmConfig(theta_init=model.closed_form(data, fit.mu_hat))
        plain = jackknife_two_step(model, data, fit, config)
        cached = jackknife_two_step(model, data, fit.cache_hat_matrix(), config)
        np.testing.assert_allclose(cached.bias_hat, plain.bias_hat, rtol=1e-8, atol=1e-12)

    def test_row_permutation(self, mte_sample, rng):
        data, _ = mte_sample
        perm = rng.permutation(data.n)
        permuted = Dataset(y=data.y[perm], r=data.r[perm], z=data.z[perm])
        model = MteModel(PolynomialOutcome(2))
        results = []
        for sample in (data, permuted):
            fit = fit_least_squares(sample)
            config = GmmConfig(theta_init=model.closed_form(sample, fit.mu_hat))
            results.append(jackknife_two_step(model, sample, fit, config))
        scale = np.abs(results[0].bias_hat).max()
        np.testing.assert_allclose(results[1].bias_hat, results[0].bias_hat, rtol=0, atol=1e-10 * scale)
        np.testing.assert_allclose(results[1].var_hat, results[0].var_hat, rtol=1e-9)

    def test_parallel_matches_serial(self, mean_data):
        serial = jackknife_two_step(SampleMean(), mean_data, None, GmmConfig())
        parallel = jackknife_two_step(SampleMean(), mean_data, None, GmmConfig(), workers=2)
        np.testing.assert_array_equal(parallel.theta_loo, serial.theta_loo)

    def test_too_few_observations(self):
        data = Dataset(y=[1.0, 2.0], r=[0.0, 0.0], z=[1.0, 1.0])
        with pytest.raises(ConfigurationError):
            jackknife_two_step(SampleMean(), data, None, GmmConfig())

    def test_singular_deletions_are_reported(self, rng):
        data = Dataset(y=rng.normal(size=5), r=rng.normal(size=5), z=rng.normal(size=(5, 5)))
        with pytest.raises(JackknifeError) as info:
            jackknife_two_step(SampleMean(), data, fit_least_squares(data), GmmConfig())
        assert info.value.failed_deletions == [0, 1, 2, 3, 4]


class TestBiasCorrectFunctional:
    def test_direct_matches_jackknife_of_functional(self, mean_data):
        result = jackknife_two_step(SampleMean(), mean_data, None, GmmConfig())
        estimate = bias_correct_functional(result.theta_hat, result, SQUARE, CorrectionMethod.DIRECT)
        n = mean_data.n
        values = result.theta_loo[:, 0] ** 2
        bias = (n - 1) * (values.mean() - result.theta_hat[0] ** 2)
        variance = (n - 1) / n * np.sum((values - values.mean()) ** 2)
        assert estimate.bias == pytest.approx(bias, rel=1e-8)
        assert estimate.variance == pytest.approx(variance, rel=1e-8)
        assert estimate.corrected == pytest.approx(estimate.estimate - bias, rel=1e-12)

    def test_square_of_mean_has_known_bias(self, mean_data):
        # the jackknife bias of ȳ² is exactly s²/n
        result = jackknife_two_step(SampleMean(), mean_data, None, GmmConfig())
        estimate = bias_correct_functional(result.theta_hat, result, SQUARE, 'direct')
        y = mean_data.y[:, 0]
        assert estimate.bias == pytest.approx(y.var(ddof=1) / mean_data.n, rel=1e-8)

    def test_linearized_is_delta_method(self, mean_data):
        result = jackknife_two_step(SampleMean(), mean_data, None, GmmConfig())
        estimate = bias_correct_functional(result.theta_hat, result, SQUARE, 'linearized')
        grad = 2 * result.theta_hat
        assert estimate.bias == pytest.approx(float(grad @ result.bias_hat), abs=1e-12)
        assert estimate.variance == pytest.approx(float(grad @ result.var_hat @ grad), rel=1e-12)

    def test_methods_agree_for_linear_functionals(self, mte_sample):
        data, _ = mte_sample
        model = MteModel(PolynomialOutcome(2))
        fit = fit_least_squares(data)
        config = GmmConfig(theta_init=model.closed_form(data, fit.mu_hat))
        result = jackknife_two_step(model, data, fit, config)
        phi = Functional.linear([0.0, 1.0, 1.0])
        estimates = [bias_correct_functional(result.theta_hat, result, phi, m) for m in CorrectionMethod]
        for other in estimates[1:]:
            assert other.corrected == pytest.approx(estimates[0].corrected, rel=1e-9)
        direct = estimates[-1]
        assert direct.variance == pytest.approx(estimates[1].variance, rel=1e-9)

    def test_coordinate_functional(self, mte_sample):
        data, _ = mte_sample
        model = MteModel(PolynomialOutcome(2))
        fit = fit_least_squares(data)
        result = jackknife_two_step(model, data, fit, GmmConfig(theta_init=model.closed_form(data, fit.mu_hat)))
        estimate = bias_correct_functional(result.theta_hat, result, Functional.coordinate(1))
        assert estimate.variance == pytest.approx(result.var_hat[1, 1], rel=1e-14)
        assert estimate.corrected == pytest.approx(result.theta_corrected[1], rel=1e-12)

    def test_gradient_shape_is_checked(self, mean_data):
        result = jackknife_two_step(SampleMean(), mean_data, None, GmmConfig())
        bad = Functional(square, lambda theta: np.ones(3), 'bad')
        with pytest.raises(ValueError):
            bias_correct_functional(result.theta_hat, result, bad)
