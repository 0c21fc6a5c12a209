from unittest import TestCase

import numpy as np

from subseasonal_forecast import exceptions
from subseasonal_forecast import linear


class OlsTest(TestCase):
    def setUp(self):
        rng = np.random.default_rng(0)
        self.X = rng.normal(size=(50, 2))
        self.y = self.X @ np.array([1.0, -2.0]) + 3.0

    def test_exact_recovery(self):
        model = linear.ols_fit(self.X, self.y)
        np.testing.assert_allclose([1.0, -2.0], model.weights)
        self.assertAlmostEqual(3.0, float(model.intercept))
        np.testing.assert_allclose(self.y, model.predict(self.X))

    def test_ridge_shrinks(self):
        plain = linear.ols_fit(self.X, self.y)
        ridge = linear.ols_fit(self.X, self.y, ridge=50.0)
        self.assertLess(np.linalg.norm(ridge.weights),
                        np.linalg.norm(plain.weights))

    def test_rank_deficient_minimum_norm(self):
        x = np.arange(10.0)
        model = linear.ols_fit(np.column_stack([x, x]), 2 * x)
        np.testing.assert_allclose([1.0, 1.0], model.weights)

    def test_invalid_inputs(self):
        self.assertRaises(ValueError, linear.ols_fit, self.X, self.y,
                          ridge=-1.0)
        X = self.X.copy()
        X[0, 0] = np.nan
        self.assertRaises(ValueError, linear.ols_fit, X, self.y)
        self.assertRaises(exceptions.ShapeError, linear.ols_fit, self.X,
                          self.y[:-1])

    def test_feature_count_checked(self):
        model = linear.ols_fit(self.X, self.y)
        self.assertRaises(exceptions.ShapeError, model.predict,
                          np.zeros((3, 3)))

    def test_non_finite_weights(self):
        self.assertRaises(exceptions.ConvergenceError, linear.LinearModel,
                          [np.inf], 0.0)


class QuantileRegressionTest(TestCase):
    def test_pinball_loss(self):
        np.testing.assert_allclose([1.8, 0.2, 0.0],
                                   linear.pinball_loss([2.0, -2.0, 0.0], 0.9))
        self.assertRaises(ValueError, linear.pinball_loss, 1.0, 1.0)

    def test_coverage(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(500, 1))
        y = 2.0 * X[:, 0] + rng.normal(size=500)
        model = linear.linear_qr_fit(X, y, 0.9)
        self.assertEqual('quantile', model.task)
        coverage = np.mean(y <= model.predict(X))
        self.assertAlmostEqual(0.9, coverage, delta=0.06)
        self.assertAlmostEqual(2.0, float(model.weights[0]), delta=0.3)

    def test_intercept_only_recovers_sample_quantile(self):
        y = np.arange(1.0, 101.0)
        model = linear.linear_qr_fit(np.zeros((100, 0)), y, 0.9)
        self.assertAlmostEqual(90.1, float(model.intercept), delta=0.5)
        np.testing.assert_allclose(90.1, model.predict(np.zeros((3, 0))),
                                   atol=0.5)

    def test_higher_level_higher_prediction(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(300, 2))
        y = X[:, 0] + rng.normal(size=300)
        low = linear.linear_qr_fit(X, y, 0.1)
        high = linear.linear_qr_fit(X, y, 0.9)
        self.assertTrue(np.mean(high.predict(X) > low.predict(X)) > 0.95)

    def test_invalid_level(self):
        self.assertRaises(ValueError, linear.linear_qr_fit, np.zeros((5, 1)),
                          np.zeros(5), 0.0)


class LogisticTest(TestCase):
    def setUp(self):
        rng = np.random.default_rng(4)
        self.X = rng.uniform(-1.5, 1.5, size=(300, 1))
        self.labels = np.where(self.X[:, 0] < -0.5, -1,
                               np.where(self.X[:, 0] > 0.5, 1, 0))

    def test_probabilities(self):
        model = linear.logistic_fit(self.X, self.labels)
        probabilities = model.predict(self.X)
        self.assertEqual((300, 3), probabilities.shape)
        np.testing.assert_allclose(1.0, probabilities.sum(axis=1))
        predicted = linear.CLASSES[np.argmax(probabilities, axis=1)]
        self.assertGreater(np.mean(predicted == self.labels), 0.7)

    def test_absent_class(self):
        labels = np.where(self.X[:, 0] > 0, 1, 0)
        self.assertRaises(exceptions.InsufficientDataError,
                          linear.logistic_fit, self.X, labels)

    def test_cross_entropy_of_uniform(self):
        probabilities = np.full((4, 3), 1.0 / 3.0)
        self.assertAlmostEqual(np.log(3.0), linear.cross_entropy(
            probabilities, [-1, 0, 1, 1]))


class PerLocationTest(TestCase):
    def test_failures_are_collected(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(30, 1))
        good = np.tile([-1, 0, 1], 10)
        bad = np.zeros(30)
        with self.assertLogs('subseasonal_forecast.linear', level='WARNING'):
            report = linear.per_location_fit({0: (X, good), 1: (X, bad)},
                                             task='tercile', threads=1)
        self.assertEqual([0], list(report.models))
        self.assertIsInstance(report.failures[1],
                              exceptions.InsufficientDataError)

    def test_regression_per_location(self):
        x = np.arange(10.0)[:, None]
        report = linear.per_location_fit(
            {3: (x, 2 * x[:, 0]), 7: (x, -x[:, 0])}, threads=1)
        self.assertEqual([3, 7], list(report.models))
        np.testing.assert_allclose([-1.0], report.models[7].weights)
        self.assertFalse(report.failures)

    def test_unknown_task(self):
        self.assertRaises(exceptions.ConfigError, linear.fit_one,
                          np.zeros((3, 1)), np.zeros(3), task='ranking')
