import json
import math

import numpy as np
import pytest

from twostep import (BootstrapFailureError, ConfigurationError, Dataset, EmptyDrawError, Functional, GmmConfig,
                     InferenceReport, JackknifeResult, MteModel, PolynomialOutcome, SampleMean,
                     WeightDistribution, WeightDistributionError, bootstrap_draw, bootstrap_statistic, draw_weights,
                     empirical_quantile, fit_least_squares, jackknife_two_step, loo_mu, normal_interval,
                     percentile_t_interval, solve_gmm, wild_first_step)
from twostep.bootstrap import inverse_sqrt, studentized_draws
from utils.reports import report_json
from utils.rng import StreamTag, stream


def mte_setup(data):
    model = MteModel(PolynomialOutcome(2))
    fit = fit_least_squares(data)
    config = GmmConfig(theta_init=model.closed_form(data, fit.mu_hat))
    jackknife = jackknife_two_step(model, data, fit, config)
    return model, fit, config, jackknife


def scalar_report(theta_star, bias_star=None, var_star=None):
    theta_star = np.asarray(theta_star, dtype=float).reshape(-1, 1)
    b = theta_star.shape[0]
    return InferenceReport(theta_hat=np.array([1.0]), bias_hat=np.array([0.1]), var_hat=np.array([[0.04]]),
                           theta_star=theta_star,
                           bias_star=np.zeros((b, 1)) if bias_star is None else bias_star,
                           var_star=np.ones((b, 1, 1)) if var_star is None else var_star,
                           t_draws=theta_star - 1.0, seed=0, weights='rademacher')


class TestWeightDistribution:
    @pytest.mark.parametrize('dist', [WeightDistribution.rademacher(), WeightDistribution.webb6()])
    def test_moments(self, dist):
        mean, var, third = dist.moments()
        assert mean == pytest.approx(1, abs=1e-12)
        assert var == pytest.approx(1, abs=1e-12)
        assert third == pytest.approx(0, abs=1e-12)

    def test_skewed_weights_rejected(self):
        s5 = math.sqrt(5)
        p = (s5 + 1) / (2 * s5)
        with pytest.raises(WeightDistributionError) as info:
            WeightDistribution.custom([1 - (s5 - 1) / 2, 1 + (s5 + 1) / 2], [p, 1 - p])
        assert info.value.moment == 'third central moment'

    def test_wrong_variance_named(self):
        with pytest.raises(WeightDistributionError) as info:
            WeightDistribution.custom([0.5, 1.5], [0.5, 0.5])
        assert info.value.moment == 'variance'

    def test_from_name(self):
        assert WeightDistribution.from_name('Webb').name == 'webb6'
        with pytest.raises(ConfigurationError):
            WeightDistribution.from_name('mammen')

    def test_draws_stay_on_support(self):
        omega = draw_weights(WeightDistribution.rademacher(), 1000, stream(1, StreamTag.BOOTSTRAP, 0))
        assert set(np.unique(omega)) <= {0.0, 2.0}
        assert omega.mean() == pytest.approx(1, abs=0.1)

    def test_draws_are_reproducible(self):
        dist = WeightDistribution.webb6()
        first = draw_weights(dist, 50, stream(3, StreamTag.BOOTSTRAP, 9))
        again = draw_weights(dist, 50, stream(3, StreamTag.BOOTSTRAP, 9))
        other = draw_weights(dist, 50, stream(3, StreamTag.BOOTSTRAP, 10))
        np.testing.assert_array_equal(first, again)
        assert not np.array_equal(first, other)


class TestEmpiricalQuantile:
    def test_inf_definition(self):
        assert empirical_quantile([4, 1, 3, 2], 0.5) == 2
        assert empirical_quantile([4, 1, 3, 2], 0.51) == 3
        assert empirical_quantile([4, 1, 3, 2], 1.0) == 4

    def test_exact_multiples(self):
        draws = np.arange(200, dtype=float)
        assert empirical_quantile(draws, 0.025) == 4
        assert empirical_quantile(draws, 0.975) == 194

    def test_monotone(self, rng):
        draws = rng.normal(size=101)
        levels = np.linspace(0.01, 0.99, 50)
        values = [empirical_quantile(draws, a) for a in levels]
        assert all(a <= b for a, b in zip(values, values[1:]))

    def test_empty(self):
        with pytest.raises(EmptyDrawError):
            empirical_quantile([], 0.5)


class TestWildFirstStep:
    def test_unit_weights_reproduce_fit(self, mte_sample):
        data, _ = mte_sample
        fit = fit_least_squares(data)
        r_star, mu_star = wild_first_step(fit, data.r, np.ones(data.n))
        np.testing.assert_array_equal(r_star, fit.mu_hat)
        np.testing.assert_array_equal(mu_star, fit.mu_hat)

    def test_doubled_residuals_project_out(self, mte_sample):
        data, _ = mte_sample
        fit = fit_least_squares(data)
        _, mu_star = wild_first_step(fit, data.r, np.full(data.n, 2.0))
        np.testing.assert_allclose(mu_star, fit.mu_hat, atol=1e-10)

    def test_matches_refit_on_bootstrap_response(self, mte_sample):
        data, _ = mte_sample
        fit = fit_least_squares(data)
        omega = draw_weights(WeightDistribution.webb6(), data.n, stream(5, StreamTag.BOOTSTRAP, 0))
        r_star, mu_star = wild_first_step(fit, data.r, omega)
        refit = fit_least_squares(Dataset(y=data.y, r=r_star, z=data.z))
        np.testing.assert_allclose(mu_star, refit.mu_hat, atol=1e-9)


class TestBootstrapDraw:
    def test_unit_weights_are_degenerate(self, mte_sample):
        data, _ = mte_sample
        model, fit, config, jackknife = mte_setup(data)
        draw = bootstrap_draw(model, data, fit, config, jackknife.theta_hat, np.ones(data.n))
        np.testing.assert_array_equal(draw.theta_star, jackknife.theta_hat)
        root, _ = inverse_sqrt(draw.var_star)
        np.testing.assert_allclose(draw.t_star, -root @ draw.bias_star, rtol=1e-12)

    def test_unit_weights_reproduce_jackknife(self, rng):
        data = Dataset(y=rng.normal(size=40), r=np.zeros(40), z=np.ones(40))
        jackknife = jackknife_two_step(SampleMean(), data, None, GmmConfig())
        draw = bootstrap_draw(SampleMean(), data, None, GmmConfig(), jackknife.theta_hat, np.ones(40))
        np.testing.assert_allclose(draw.var_star, jackknife.var_hat, rtol=1e-10)
        np.testing.assert_allclose(draw.bias_star, jackknife.bias_hat, atol=1e-10)

    def test_weighted_deletion_differs_from_naive(self, mte_sample):
        data, _ = mte_sample
        data = data.first_covariates(5)
        model, fit, config, jackknife = mte_setup(data)
        omega = draw_weights(WeightDistribution.rademacher(), data.n, stream(0, StreamTag.BOOTSTRAP, 0))
        draw = bootstrap_draw(model, data, fit, config, jackknife.theta_hat, omega)

        # deleting observation ℓ with its whole bootstrap weight instead of lowering it by one
        r_star, mu_star = wild_first_step(fit, data.r, omega)
        naive = np.zeros((data.n, 3))
        for ell in np.flatnonzero(omega):
            weights = omega.copy()
            weights[ell] = 0.0
            mu = loo_mu(fit, r_star, ell, mu=mu_star)
            naive[ell] = solve_gmm(model, data, mu, GmmConfig(theta_init=draw.theta_star), weights,
                                   geometry=False).theta_hat
        theta_dot = omega @ naive / data.n
        dev = naive - theta_dot
        var_naive = (data.n - 1) / data.n * ((omega[:, None] * dev).T @ dev)
        assert abs(var_naive[1, 1] / draw.var_star[1, 1] - 1) > 0.05


class TestBootstrapStatistic:
    @pytest.fixture
    def small(self, mte_sample):
        data, _ = mte_sample
        data = Dataset(y=data.y[:80], r=data.r[:80], z=data.z[:80, :4])
        return data, *mte_setup(data)

    def test_reports_are_reproducible(self, small):
        data, model, fit, config, jackknife = small
        dist = WeightDistribution.rademacher()
        first = bootstrap_statistic(model, data, fit, config, jackknife, dist, B=50, seed=42)
        again = bootstrap_statistic(model, data, fit, config, jackknife, dist, B=50, seed=42)
        assert report_json(first) == report_json(again)

    def test_worker_count_does_not_change_draws(self, small):
        data, model, fit, config, jackknife = small
        dist = WeightDistribution.webb6()
        phi = model.tau_functional(np.empty(0), 0.5)
        outputs = []
        for workers in (1, 4, 8):
            report = bootstrap_statistic(model, data, fit, config, jackknife, dist, B=50, seed=7, workers=workers)
            report.add_interval(percentile_t_interval(report, phi))
            outputs.append(report_json(report))
        assert outputs[0] == outputs[1] == outputs[2]

    def test_report_layout(self, small):
        data, model, fit, config, jackknife = small
        report = bootstrap_statistic(model, data, fit, config, jackknife, WeightDistribution.rademacher(), B=50)
        report.add_interval(percentile_t_interval(report, Functional.coordinate(0)))
        payload = json.loads(report_json(report))
        assert payload['schema_version'] == 1
        assert payload['n_draws'] == 50
        assert len(payload['t_draws']) == 50
        assert payload['weights'] == 'rademacher'
        assert set(payload['intervals']) == {'theta[0]'}
        assert set(payload['quantiles']['theta[0]']) == {'lower', 'upper', 'alpha'}

    def test_too_few_draws(self, small):
        data, model, fit, config, jackknife = small
        with pytest.raises(ConfigurationError, match='At least 50 bootstrap draws'):
            bootstrap_statistic(model, data, fit, config, jackknife, WeightDistribution.rademacher(), B=49)

    def test_failed_draws_raise(self, rng):
        n = 30
        z = np.column_stack([np.ones(n), np.eye(n)[:, 0]])
        data = Dataset(y=rng.normal(size=n), r=rng.normal(size=n), z=z)
        fit = fit_least_squares(data)
        theta = np.array([data.y.mean()])
        jackknife = JackknifeResult(theta_hat=theta, bias_hat=np.zeros(1), var_hat=np.eye(1),
                                    theta_loo=np.zeros((n, 1)), theta_dot=theta)
        with pytest.raises(BootstrapFailureError):
            bootstrap_statistic(SampleMean(), data, fit, GmmConfig(), jackknife, WeightDistribution.rademacher(),
                                B=50)


class TestIntervals:
    def test_constant_draws_give_zero_length(self):
        report = scalar_report(np.full(60, 1.0 + 1.5))
        interval = percentile_t_interval(report, Functional.coordinate(0))
        assert interval.length == pytest.approx(0, abs=1e-15)
        assert interval.lower == pytest.approx(0.9 - 1.5 * 0.2)

    def test_symmetric_draws_give_symmetric_interval(self):
        report = scalar_report(np.r_[np.full(50, 1.0 - 2.0), np.full(50, 1.0 + 2.0)])
        interval = percentile_t_interval(report, Functional.coordinate(0))
        assert interval.corrected == pytest.approx(0.9)
        assert interval.lower == pytest.approx(0.9 - 2.0 * 0.2)
        assert interval.upper == pytest.approx(0.9 + 2.0 * 0.2)
        assert interval.covers(0.9)

    def test_zero_variance_draws_are_dropped(self):
        var_star = np.ones((60, 1, 1))
        var_star[:10] = 0.0
        report = scalar_report(np.full(60, 2.0), var_star=var_star)
        assert studentized_draws(report, Functional.coordinate(0)).shape == (50,)

    def test_normal_interval(self, rng):
        data = Dataset(y=rng.normal(size=40), r=np.zeros(40), z=np.ones(40))
        jackknife = jackknife_two_step(SampleMean(), data, None, GmmConfig())
        interval = normal_interval(jackknife, Functional.coordinate(0), 0.05)
        se = math.sqrt(jackknife.var_hat[0, 0])
        assert interval.upper - interval.corrected == pytest.approx(1.959963984540054 * se, rel=1e-12)
        assert interval.method == 'normal'

    def test_bad_alpha(self):
        with pytest.raises(ConfigurationError):
            percentile_t_interval(scalar_report(np.full(60, 2.0)), Functional.coordinate(0), alpha=1.5)


class TestInverseSqrt:
    def test_inverse_square_root(self):
        matrix = np.array([[4.0, 1.0], [1.0, 3.0]])
        root, floored = inverse_sqrt(matrix)
        np.testing.assert_allclose(root @ matrix @ root, np.eye(2), atol=1e-12)
        assert not floored

    def test_floors_singular_matrices(self):
        root, floored = inverse_sqrt(np.array([[1.0, 0.0], [0.0, 0.0]]))
        assert floored
        assert np.all(np.isfinite(root))
