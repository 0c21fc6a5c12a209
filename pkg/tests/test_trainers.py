from unittest import TestCase

import numpy as np

from subseasonal_forecast import convnet
from subseasonal_forecast import exceptions
from subseasonal_forecast import forest
from subseasonal_forecast import trainers

from tests import fixtures


def tiny_spec(model, task='regression', **changes):
    paradigm = changes.pop('paradigm', None) or trainers.default_paradigm(
        model)
    params = dict(
        model=model, task=task, paradigm=paradigm,
        features=trainers.default_features(model, paradigm,
                                           fixtures.tiny_features()),
        forest=forest.ForestParams(n_trees=3, min_samples_leaf=5),
        convnet=convnet.TrainParams(epochs=1, batch=16),
        base_channels=2, threads=1)
    params.update(changes)
    return trainers.ModelSpec(**params)


class ModelSpecTest(TestCase):
    def test_defaults(self):
        spec = trainers.ModelSpec(model='lr')
        self.assertEqual('independent', spec.paradigm)
        self.assertEqual('none', spec.features.location_mode)
        self.assertFalse(spec.features.use_lags)
        self.assertEqual('lr-independent-regression', spec.model_id)
        self.assertEqual('conditional', trainers.ModelSpec().paradigm)

    def test_unsupported_combinations(self):
        self.assertRaises(exceptions.ConfigError, trainers.ModelSpec,
                          model='gbm')
        self.assertRaises(exceptions.ConfigError, trainers.ModelSpec,
                          model='linqr', task='regression')
        self.assertRaises(exceptions.ConfigError, trainers.ModelSpec,
                          model='qrf', task='quantile', alpha=1.5)
        self.assertRaises(exceptions.ParadigmError, trainers.ModelSpec,
                          model='lr', paradigm='spatial')
        self.assertRaises(exceptions.ParadigmError, trainers.ModelSpec,
                          model='rf', task='tercile', paradigm='independent')

    def test_location_features_rejected_per_location(self):
        with self.assertRaises(exceptions.ParadigmError):
            trainers.ModelSpec(model='rf', paradigm='independent',
                               features=fixtures.tiny_features())
        self.assertTrue(issubclass(exceptions.ParadigmError,
                                   exceptions.ConfigError))

    def test_stack_bases(self):
        spec = trainers.ModelSpec(model='stack', task='quantile')
        self.assertEqual(('linqr', 'qrf', 'convnet'), spec.stack_bases)
        base = spec.for_base('qrf')
        self.assertEqual('qrf-conditional-quantile', base.model_id)
        self.assertRaises(exceptions.ConfigError, spec.for_base, 'stack')
        self.assertRaises(exceptions.ConfigError, trainers.ModelSpec,
                          model='stack', stack_bases=('rf',))

    def test_dict_round_trip(self):
        spec = tiny_spec('stack', stack_bases=('hist', 'ensmean'))
        self.assertEqual(spec, trainers.ModelSpec.from_dict(spec.to_dict()))


class PredictorTest(TestCase):
    @classmethod
    def setUpClass(cls):
        cls.train, cls.val, cls.test = fixtures.tiny_views()
        cls.n_land = cls.train.mask.n_land

    def fit(self, spec):
        predictor = trainers.Trainer(spec).fit(self.train)
        self.assertEqual(trainers.expected_catalog_hash(spec, self.train),
                         predictor.catalog_hash())
        return predictor

    def round_trip(self, predictor):
        restored = trainers.predictor_from_state(predictor.get_state())
        a, b = predictor.predict(self.val), restored.predict(self.val)
        np.testing.assert_array_equal(a.times, b.times)
        np.testing.assert_allclose(a.values, b.values)

    def test_historical(self):
        predictor = self.fit(tiny_spec('hist'))
        prediction = predictor.predict(self.val)
        np.testing.assert_array_equal(self.val.indices, prediction.times)
        self.assertEqual((10, self.n_land), prediction.values.shape)
        truth = trainers.land_truth(self.train, self.train.indices)
        same_month = self.train.months() == self.val.months()[0]
        np.testing.assert_allclose(truth[same_month].mean(axis=0),
                                   prediction.values[0])
        self.round_trip(predictor)

    def test_historical_terciles_are_one_hot(self):
        predictor = self.fit(tiny_spec('hist', task='tercile'))
        values = predictor.predict(self.val).values
        self.assertEqual((10, self.n_land, 3), values.shape)
        np.testing.assert_array_equal(1.0, values.sum(axis=-1))
        self.round_trip(predictor)

    def test_ensemble_average(self):
        predictor = self.fit(tiny_spec('ensmean'))
        prediction = predictor.predict(self.val)
        members = self.val.ensemble(self.val.indices)[
            :, :, self.val.mask.is_land]
        np.testing.assert_allclose(members.mean(axis=1), prediction.values)
        self.assertEqual('model', predictor.prediction_climatology.source)
        self.round_trip(predictor)

    def test_linear_regression(self):
        predictor = self.fit(tiny_spec('lr'))
        prediction = predictor.predict(self.val)
        self.assertEqual((10, self.n_land), prediction.values.shape)
        self.assertFalse(predictor.failures)
        self.round_trip(predictor)

    def test_linear_quantile_and_logistic(self):
        quantile = self.fit(tiny_spec('linqr', task='quantile'))
        self.assertEqual((10, self.n_land),
                         quantile.predict(self.val).values.shape)
        logistic = self.fit(tiny_spec('logistic', task='tercile'))
        probabilities = logistic.predict(self.val).values
        self.assertEqual((10, self.n_land, 3), probabilities.shape)
        np.testing.assert_allclose(1.0, probabilities.sum(axis=-1))
        self.round_trip(logistic)

    def test_pooled_forest(self):
        predictor = self.fit(tiny_spec('rf'))
        prediction = predictor.predict(self.val)
        self.assertEqual((10, self.n_land), prediction.values.shape)
        self.assertEqual(['pooled'], list(predictor.forests))
        self.round_trip(predictor)

    def test_pooled_forest_terciles(self):
        predictor = self.fit(tiny_spec('rf', task='tercile'))
        probabilities = predictor.predict(self.val).values
        self.assertEqual((10, self.n_land, 3), probabilities.shape)
        np.testing.assert_allclose(1.0, probabilities.sum(axis=-1))

    def test_per_location_quantile_forest(self):
        features = trainers.default_features(
            'qrf', 'independent', fixtures.tiny_features())
        predictor = self.fit(tiny_spec('qrf', task='quantile',
                                       paradigm='independent',
                                       features=features))
        self.assertEqual(self.n_land, len(predictor.forests))
        values = predictor.predict(self.val).values
        self.assertEqual((10, self.n_land), values.shape)
        self.round_trip(predictor)

    def test_convnet(self):
        predictor = self.fit(tiny_spec('convnet'))
        prediction = predictor.predict(self.val)
        self.assertEqual((10, self.n_land), prediction.values.shape)
        self.round_trip(predictor)

    def test_stack(self):
        spec = tiny_spec('stack', stack_bases=('hist', 'ensmean'), hidden=4)
        predictor = self.fit(spec)
        self.assertEqual(['hist', 'ensmean'], list(predictor.stacked.bases))
        prediction = predictor.predict(self.val)
        self.assertEqual((10, self.n_land), prediction.values.shape)
        self.round_trip(predictor)

    def test_stacked_terciles_over_default_bases(self):
        spec = tiny_spec('stack', task='tercile', hidden=4)
        self.assertEqual(('logistic', 'rf', 'convnet'), spec.stack_bases)
        predictor = self.fit(spec)
        probabilities = predictor.predict(self.val).values
        self.assertEqual((10, self.n_land, 3), probabilities.shape)
        np.testing.assert_allclose(1.0, probabilities.sum(axis=-1))
        self.assertTrue(np.all(probabilities >= 0))

    def test_training_view_cannot_forecast_later_months(self):
        self.assertRaises(exceptions.LeakageError, self.train.sub_view,
                          [40, 45], horizon=100)
