from unittest import TestCase

import numpy as np

from subseasonal_forecast import exceptions
from subseasonal_forecast import forest


def brute_force_weights(model, x):
    weights = np.zeros(len(model.y_train))
    for tree in model.trees:
        leaf = tree.apply(x[None, :])[0]
        members = tree.leaf_members(leaf)
        for sample in members:
            weights[sample] += 1.0 / (model.n_trees * len(members))
    return weights


def brute_force_quantile(model, x, alpha):
    weights = brute_force_weights(model, x)
    order = np.argsort(model.y_train, kind='stable')
    cumulative = np.cumsum(weights[order])
    position = np.flatnonzero(cumulative >= alpha - 1e-9)[0]
    return model.y_train[order][position]


class SplitTest(TestCase):
    def test_tie_goes_to_lower_feature(self):
        x = np.arange(4.0)
        X = np.column_stack([x, x])
        split = forest.best_split(X, np.array([0.0, 0.0, 1.0, 1.0]), [1, 0],
                                  'regression', 0)
        self.assertEqual((0, 1.5), split)

    def test_constant_features_do_not_split(self):
        X = np.ones((5, 2))
        self.assertIsNone(forest.best_split(X, np.arange(5.0), [0, 1],
                                            'regression', 0))

    def test_min_samples_leaf(self):
        X = np.arange(6.0)[:, None]
        y = np.array([5.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        feature, threshold = forest.best_split(X, y, [0], 'regression', 0,
                                               min_samples_leaf=2)
        self.assertEqual(1.5, threshold)

    def test_gini_split(self):
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        split = forest.best_split(X, np.array([0, 0, 1, 1]), [0],
                                  'classification', 2)
        self.assertEqual((0, 1.5), split)


class StepDataMixin:
    @classmethod
    def setUpClass(cls):
        rng = np.random.default_rng(0)
        cls.X = rng.normal(size=(120, 3))
        cls.y = np.where(cls.X[:, 0] > 0, 2.0, -1.0) + 0.1 * rng.normal(
            size=120)
        params = forest.ForestParams(n_trees=20, min_samples_leaf=3, seed=4)
        cls.model = forest.rf_fit(cls.X, cls.y, params, threads=1)


class RegressionForestTest(StepDataMixin, TestCase):

    def test_single_tree_without_bootstrap_interpolates(self):
        params = forest.ForestParams(n_trees=1, bootstrap=False)
        model = forest.rf_fit(self.X, self.y, params, threads=1)
        np.testing.assert_allclose(self.y, forest.rf_predict(model, self.X))

    def test_leaves_respect_min_samples(self):
        for tree in self.model.trees:
            leaves = tree.feature == forest.LEAF
            self.assertTrue(np.all(tree.n_node_samples[leaves] >= 3))

    def test_learns_step(self):
        predictions = forest.rf_predict(self.model, [[1.0, 0.0, 0.0],
                                                     [-1.0, 0.0, 0.0]])
        self.assertAlmostEqual(2.0, predictions[0], delta=0.3)
        self.assertAlmostEqual(-1.0, predictions[1], delta=0.3)

    def test_same_seed_same_forest(self):
        params = forest.ForestParams(n_trees=5, seed=9)
        a = forest.rf_fit(self.X, self.y, params, threads=1)
        b = forest.rf_fit(self.X, self.y, params, threads=1)
        np.testing.assert_array_equal(forest.rf_predict(a, self.X),
                                      forest.rf_predict(b, self.X))

    def test_oob_mse(self):
        mse = forest.oob_mse(self.model, self.X, self.y)
        self.assertGreater(mse, 0.0)
        self.assertLess(mse, 0.5)

    def test_oob_needs_bootstrap(self):
        params = forest.ForestParams(n_trees=2, bootstrap=False)
        model = forest.rf_fit(self.X, self.y, params, threads=1)
        self.assertRaises(exceptions.InsufficientDataError, forest.oob_mse,
                          model, self.X, self.y)

    def test_feature_count_checked(self):
        self.assertRaises(exceptions.ShapeError, forest.rf_predict,
                          self.model, np.zeros((2, 4)))

    def test_invalid_params(self):
        self.assertRaises(exceptions.ConfigError, forest.ForestParams,
                          n_trees=0)
        self.assertRaises(exceptions.InsufficientDataError, forest.rf_fit,
                          self.X[:1], self.y[:1])

    def test_features_per_split(self):
        params = forest.ForestParams()
        self.assertEqual(65, params.features_per_split(65, 'regression'))
        self.assertEqual(8, params.features_per_split(65, 'classification'))
        self.assertEqual(21, forest.ForestParams(
            max_features=1 / 3).features_per_split(65, 'regression'))


class QuantileForestTest(StepDataMixin, TestCase):
    def test_weights_match_brute_force(self):
        for x in self.X[:5]:
            weights = forest.qrf_weights(self.model, x)
            np.testing.assert_allclose(brute_force_weights(self.model, x),
                                       weights)
            self.assertAlmostEqual(1.0, weights.sum())

    def test_quantiles_match_brute_force(self):
        queries = np.vstack([self.X[:10], [[0.3, -2.0, 1.0]]])
        for alpha in (0.1, 0.5, 0.9):
            expected = [brute_force_quantile(self.model, x, alpha)
                        for x in queries]
            np.testing.assert_array_equal(
                expected, forest.qrf_predict(self.model, queries, alpha,
                                             chunk_size=4))

    def test_quantiles_monotone_in_level(self):
        low = forest.qrf_predict(self.model, self.X, 0.1)
        mid = forest.qrf_predict(self.model, self.X, 0.5)
        high = forest.qrf_predict(self.model, self.X, 0.9)
        self.assertTrue(np.all(low <= mid))
        self.assertTrue(np.all(mid <= high))

    def test_invalid_level(self):
        self.assertRaises(ValueError, forest.qrf_predict, self.model, self.X,
                          1.0)


class ClassificationForestTest(TestCase):
    @classmethod
    def setUpClass(cls):
        rng = np.random.default_rng(1)
        cls.X = rng.uniform(-1.5, 1.5, size=(150, 2))
        cls.labels = np.where(cls.X[:, 0] < -0.5, -1,
                              np.where(cls.X[:, 0] > 0.5, 1, 0))
        params = forest.ForestParams(n_trees=15, seed=2)
        cls.model = forest.rf_fit(cls.X, cls.labels, params,
                                  task='classification', threads=1)

    def test_probabilities(self):
        probabilities = forest.rf_predict(self.model, self.X)
        self.assertEqual((150, 3), probabilities.shape)
        np.testing.assert_allclose(1.0, probabilities.sum(axis=1))
        np.testing.assert_array_equal([-1, 0, 1], self.model.classes)

    def test_labels(self):
        labels = forest.rf_predict_labels(self.model, [[-1.2, 0.0],
                                                       [0.0, 0.0],
                                                       [1.2, 0.0]])
        np.testing.assert_array_equal([-1, 0, 1], labels)

    def test_no_quantiles(self):
        self.assertRaises(exceptions.NotFittedError, forest.qrf_predict,
                          self.model, self.X, 0.5)

    def test_unknown_task(self):
        self.assertRaises(exceptions.ConfigError, forest.rf_fit, self.X,
                          self.labels, task='ranking')


class PerLocationForestTest(TestCase):
    def test_failures_are_collected(self):
        X = np.arange(10.0)[:, None]
        with self.assertLogs('subseasonal_forecast.forest', level='WARNING'):
            report = forest.per_location_qrf_fit(
                {0: (X, X[:, 0]), 1: (X[:1], X[:1, 0])},
                forest.ForestParams(n_trees=2), threads=1)
        self.assertEqual([0], list(report.models))
        self.assertIsInstance(report.failures[1],
                              exceptions.InsufficientDataError)
