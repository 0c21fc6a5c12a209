import json
import math
import os
import shutil
import tempfile
from unittest import TestCase

import numpy as np

from subseasonal_forecast import exceptions
from subseasonal_forecast import grid
from subseasonal_forecast import metrics
from subseasonal_forecast import preprocess


def _mask():
    spec = grid.GridSpec(2, 3, lat_origin=30.0, lon_origin=250.0)
    return grid.LandMask(spec, [[True, False, True], [True, True, False]])


def _months(n):
    return np.arange(n) % 12 + 1


class AggregateTest(TestCase):
    def test_skips_undefined(self):
        summary = metrics.aggregate([1.0, 2.0, 3.0, np.nan])
        self.assertEqual(2.0, summary['mean'])
        self.assertEqual(2.0, summary['median'])
        self.assertAlmostEqual(1.0 / np.sqrt(3.0), summary['se'])
        self.assertAlmostEqual(2.8, summary['p90'])
        self.assertEqual((3, 1), (summary['count'], summary['undefined']))

    def test_all_undefined(self):
        summary = metrics.aggregate([np.nan, np.nan])
        self.assertIsNone(summary['mean'])
        self.assertEqual(2, summary['undefined'])


class RegressionMetricTest(TestCase):
    def setUp(self):
        rng = np.random.default_rng(0)
        self.months = _months(48)
        self.truth = rng.normal(size=(48, 4)) + np.arange(12.0)[
            self.months - 1][:, None]
        self.clim = preprocess.monthly_climatology(self.truth, self.months)

    def test_perfect_forecast(self):
        r2 = metrics.r2_per_location(self.truth, self.truth, self.clim,
                                     self.months)
        np.testing.assert_allclose(1.0, r2)
        grid_mse, summary = metrics.mse_report(self.truth, self.truth)
        np.testing.assert_array_equal(0.0, grid_mse)
        self.assertEqual(0.0, summary['mean'])

    def test_climatology_forecast_scores_zero(self):
        predictions = self.clim.at(self.months)
        r2 = metrics.r2_per_location(self.truth, predictions, self.clim,
                                     self.months)
        np.testing.assert_allclose(0.0, r2, atol=1e-12)

    def test_model_climatology_removes_bias(self):
        predictions = self.truth + 5.0
        model_clim = preprocess.model_climatology(predictions, self.months)
        r2 = metrics.r2_per_location(self.truth, predictions, self.clim,
                                     self.months,
                                     prediction_climatology=model_clim)
        np.testing.assert_allclose(1.0, r2)
        biased = metrics.r2_per_location(self.truth, predictions, self.clim,
                                         self.months)
        self.assertTrue(np.all(biased < 0))

    def test_literal_denominator(self):
        predictions = self.truth + 1.0
        rng = np.random.default_rng(1)
        predictions = predictions + rng.normal(size=predictions.shape)
        default = metrics.r2_per_location(self.truth, predictions, self.clim,
                                          self.months)
        literal = metrics.r2_per_location(self.truth, predictions, self.clim,
                                          self.months, literal=True)
        self.assertTrue(np.all(literal > default))

    def test_constant_truth_is_undefined(self):
        truth = np.ones((24, 2))
        truth[:, 1] = np.arange(24.0)
        clim = preprocess.Climatology(np.zeros((12, 2)))
        with self.assertLogs('subseasonal_forecast.metrics', level='WARNING'):
            r2 = metrics.r2_per_location(truth, truth, clim, _months(24))
        self.assertTrue(np.isnan(r2[0]))
        self.assertEqual(1.0, r2[1])

    def test_mse_and_quantile_loss(self):
        truth = np.ones((3, 2))
        predictions = np.zeros((3, 2))
        np.testing.assert_allclose(1.0, metrics.mse_per_location(
            truth, predictions))
        np.testing.assert_allclose(0.9, metrics.quantile_loss_per_location(
            truth, predictions, 0.9))
        np.testing.assert_allclose(0.1, metrics.quantile_loss_per_location(
            predictions, truth, 0.9))


class TercileMetricTest(TestCase):
    def test_labels_from_probabilities(self):
        probabilities = np.array([[0.4, 0.4, 0.2], [0.1, 0.2, 0.7]])
        np.testing.assert_array_equal(
            [-1, 1], metrics.labels_from_probabilities(probabilities))

    def test_accuracy_percentage(self):
        labels = np.array([[-1, 0], [1, 0], [0, 0], [1, 1]])
        predicted = np.array([[-1, 1], [1, 0], [1, 0], [1, 1]])
        grid_accuracy, summary = metrics.tercile_accuracy(labels, predicted)
        np.testing.assert_allclose([75.0, 75.0], grid_accuracy)
        self.assertEqual(75.0, summary['mean'])
        self.assertRaises(exceptions.ShapeError, metrics.tercile_accuracy,
                          labels, predicted[:2])


class SignTestTest(TestCase):
    def test_binomial_tail_is_exact(self):
        expected = sum(math.comb(10, k) for k in range(8, 11)) / 2.0 ** 10
        self.assertAlmostEqual(expected, float(metrics.binomial_tail(8, 10)),
                               places=12)
        self.assertEqual(1.0, float(metrics.binomial_tail(0, 10)))
        self.assertEqual(1.0, float(metrics.binomial_tail(0, 0)))

    def test_bonferroni(self):
        self.assertAlmostEqual(1.527e-5, metrics.bonferroni_threshold(3274),
                               places=8)

    def test_ties_dropped(self):
        a = np.array([[0.1, 1.0], [0.5, 1.0], [2.0, 1.0], [0.0, 1.0]])
        b = np.array([[0.2, 1.0], [0.5, 1.0], [1.0, 1.0], [1.0, -1.0]])
        with self.assertLogs('subseasonal_forecast.metrics', level='WARNING'):
            result = metrics.sign_test(a, b)
        np.testing.assert_array_equal([2, 0], result.wins)
        np.testing.assert_array_equal([3, 0], result.n)
        self.assertEqual(1.0, result.p_values[1])
        np.testing.assert_array_equal([False, True], result.undefined)
        self.assertAlmostEqual(0.5, result.p_values[0])

    def test_global_rejection(self):
        a = np.zeros((20, 2))
        b = np.ones((20, 2))
        b[:, 1] = 0.0
        result = metrics.sign_test(a, b)
        self.assertAlmostEqual(2.0 ** -20, result.p_values[0])
        self.assertEqual(0.025, result.threshold)
        self.assertTrue(result.reject)
        document = result.to_document()
        self.assertTrue(document['reject'])
        self.assertEqual([1], list(document['undefined_locations']))

    def test_misaligned(self):
        self.assertRaises(exceptions.ShapeError, metrics.sign_test,
                          np.zeros((3, 2)), np.zeros((4, 2)))


class ReportTest(TestCase):
    def setUp(self):
        self.directory = tempfile.mkdtemp()
        self.mask = _mask()

    def tearDown(self):
        shutil.rmtree(self.directory)

    def test_document(self):
        report = metrics.EvalReport('rf-conditional-regression', 'test',
                                    self.mask, {'seed': 3})
        report.add('r2', [0.1, np.nan, 0.3, 0.5])
        document = report.to_document()
        self.assertEqual([0.1, None, 0.3, 0.5], document['grids']['r2'])
        self.assertEqual(3, document['aggregates']['r2']['count'])
        self.assertEqual(metrics.SE_CAVEAT, document['footer'])
        path = os.path.join(self.directory, 'report.json')
        report.save(path)
        with open(path) as f:
            self.assertEqual('test', json.load(f)['split'])

    def test_grid_shape_checked(self):
        report = metrics.EvalReport('m', 'test', self.mask)
        self.assertRaises(exceptions.ShapeError, report.add, 'mse',
                          np.zeros(6))

    def test_regions(self):
        report = metrics.EvalReport('m', 'test', self.mask)
        report.add('mse', [1.0, 2.0, 3.0, 4.0])
        region = metrics.rectangle_region(self.mask.grid, 30.0, 30.0, 249.0,
                                          253.0) & self.mask.is_land
        np.testing.assert_array_equal([0, 1], metrics.region_positions(
            self.mask, region))
        self.assertEqual(1.5, metrics.region_metrics(report, region)['mse'][
            'mean'])

    def test_region_errors(self):
        sea = ~self.mask.is_land
        self.assertRaises(exceptions.InvalidMaskError,
                          metrics.region_positions, self.mask, sea)
        self.assertRaises(exceptions.EmptyRegionError,
                          metrics.region_positions, self.mask,
                          np.zeros((2, 3), dtype=bool))

    def test_heatmap_files(self):
        path = os.path.join(self.directory, 'mse.csv')
        metrics.export_heatmap([0.0, 1.0, 2.0, 3.0], self.mask, path)
        with open(path) as f:
            self.assertEqual(['0,NA,1', '2,3,NA'], f.read().splitlines())
        restored = metrics.read_heatmap(path, self.mask.grid)
        np.testing.assert_array_equal(metrics.land_grid(
            [0.0, 1.0, 2.0, 3.0], self.mask), restored)
        with open(os.path.join(self.directory, 'mse.pgm'), 'rb') as f:
            data = f.read()
        header = b'P5\n3 2\n255\n'
        self.assertTrue(data.startswith(header))
        self.assertEqual(bytes([170, 255, 0, 1, 0, 86]), data[len(header):])
