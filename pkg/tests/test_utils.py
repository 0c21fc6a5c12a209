import json
import logging
import os
import tempfile
import threading
import time
from unittest import TestCase
from unittest import mock

import numpy as np

from subseasonal_forecast import utils


class HashTest(TestCase):
    def test_dict_hash_ignores_key_order(self):
        self.assertEqual(utils.hash_dict({'a': 1, 'b': [1, 2]}),
                         utils.hash_dict({'b': [1, 2], 'a': 1}))
        self.assertNotEqual(utils.hash_dict({'a': 1}),
                            utils.hash_dict({'a': 2}))

    def test_dict_hash_accepts_numpy_values(self):
        self.assertEqual(utils.hash_dict({'x': 3, 'y': [1.5]}),
                         utils.hash_dict({'x': np.int64(3),
                                          'y': np.array([1.5])}))

    def test_array_hash_sees_dtype_and_shape(self):
        values = np.arange(6)
        self.assertNotEqual(utils.hash_arrays(values),
                            utils.hash_arrays(values.astype(np.float64)))
        self.assertNotEqual(utils.hash_arrays(values),
                            utils.hash_arrays(values.reshape(2, 3)))
        self.assertEqual(utils.hash_arrays(values.reshape(2, 3).T.copy()),
                         utils.hash_arrays(values.reshape(2, 3).T))


class JsonTest(TestCase):
    def test_default(self):
        self.assertEqual(2, utils.json_default(np.int32(2)))
        self.assertEqual([1, 2], utils.json_default(np.array([1, 2])))
        self.assertEqual(['a', 'b'], utils.json_default({'b', 'a'}))
        self.assertRaises(TypeError, utils.json_default, object())

    def test_dump(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'doc.json')
            utils.dump_json({'b': np.float64(0.5), 'a': np.arange(2)}, path)
            with open(path) as f:
                self.assertEqual({'a': [0, 1], 'b': 0.5}, json.load(f))


class SeedTest(TestCase):
    def test_stable_and_distinct(self):
        self.assertEqual(utils.derive_seed(4, 'rf', 2),
                         utils.derive_seed(4, 'rf', 2))
        seeds = {utils.derive_seed(4, 'rf', k) for k in range(10)}
        self.assertEqual(10, len(seeds))
        self.assertNotEqual(utils.derive_seed(4, 1), utils.derive_seed(5, 1))


class ParallelMapTest(TestCase):
    def test_preserves_order_with_threads(self):
        def slow_square(x):
            time.sleep(0.001 * (5 - x))
            return x * x

        with utils.logger_level_to_error('subseasonal_forecast.utils'):
            result = utils.parallel_map(slow_square, range(5), threads=3)
        self.assertEqual([0, 1, 4, 9, 16], result)

    @mock.patch.dict('subseasonal_forecast.utils.configuration',
                     {'threads': 1})
    def test_single_thread_runs_inline(self):
        threads = utils.parallel_map(lambda _: threading.get_ident(), [1, 2])
        self.assertEqual([threading.get_ident()] * 2, threads)

    @mock.patch.dict('subseasonal_forecast.utils.configuration',
                     {'threads': 4})
    def test_configured_threads_warn(self):
        with self.assertLogs('subseasonal_forecast.utils',
                             level=logging.WARNING):
            self.assertEqual(4, utils.resolve_threads())
        self.assertEqual(1, utils.resolve_threads(0))


class LoggerLevelTest(TestCase):
    def test_restores_level(self):
        logger = logging.getLogger('subseasonal_forecast.test')
        logger.setLevel(logging.INFO)
        with utils.logger_level_to_error('subseasonal_forecast.test'):
            self.assertEqual(logging.ERROR, logger.level)
        self.assertEqual(logging.INFO, logger.level)
