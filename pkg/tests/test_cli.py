import json
import os
import shutil
import tempfile
from unittest import TestCase
from unittest import mock

from subseasonal_forecast import cli
from subseasonal_forecast import configuration

TINY_DATA = ['--n-lat', '4', '--n-lon', '8', '--months', '72',
             '--n-members', '4', '--n-sst-points', '8',
             '--correlation-length', '1.0']


def _load(path):
    with open(path) as f:
        return json.load(f)


@mock.patch.dict('subseasonal_forecast.cli.configuration', {'threads': 1,
                                                            'debug': False})
class CommandTest(TestCase):
    @classmethod
    def setUpClass(cls):
        cls.directory = tempfile.mkdtemp()
        cls.data = os.path.join(cls.directory, 'data')
        with mock.patch.dict(configuration, {'threads': 1}):
            cli.main(['gen-data', '--output-dir', cls.data] + TINY_DATA)

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.directory)

    def path(self, *parts):
        return os.path.join(self.directory, *parts)

    def train(self, name, *options):
        output = self.path(name)
        self.assertEqual(0, cli.main(['train', '--dataset', self.data,
                                      '--output-dir', output, '--threads',
                                      '1'] + list(options)))
        return os.path.join(output, 'model.npz')

    def test_gen_data_writes_dataset(self):
        manifest = _load(os.path.join(self.data, 'manifest.json'))
        self.assertEqual(72, manifest['time']['length'])
        self.assertEqual(7, manifest['synth']['seed'])

    def test_train_and_evaluate(self):
        model = self.train('hist', '--model', 'hist')
        training = _load(self.path('hist', 'training.json'))
        self.assertEqual('hist-independent-regression', training['model'])
        self.assertEqual(40, len(training['checkpoint_hash']))
        manifest = _load(self.path('hist', 'manifest.json'))
        self.assertEqual('train', manifest['command'])
        self.assertEqual('hist', manifest['arguments']['model'])

        output = self.path('hist-eval')
        cli.main(['evaluate', '--dataset', self.data, '--checkpoint', model,
                  '--output-dir', output, '--region', 'all=25,28,235,242'])
        directory = os.path.join(output, 'hist-independent-regression')
        report = _load(os.path.join(directory, 'report.json'))
        self.assertEqual('val', report['split'])
        self.assertFalse(report['metadata']['split_seen_in_training'])
        for name in ('r2.csv', 'r2.pgm', 'mse.csv', 'mse.pgm'):
            self.assertTrue(os.path.exists(os.path.join(directory, name)))
        regions = _load(os.path.join(output, 'regions.json'))
        self.assertIn('hist-independent-regression/val', regions['all'])

    def test_same_arguments_same_checkpoint(self):
        self.train('rf-a', '--model', 'rf', '--n-trees', '2', '--seed', '5')
        self.train('rf-b', '--model', 'rf', '--n-trees', '2', '--seed', '5')
        first = _load(self.path('rf-a', 'training.json'))
        second = _load(self.path('rf-b', 'training.json'))
        self.assertEqual(first['checkpoint_hash'], second['checkpoint_hash'])
        self.assertIn('oob_mse', first)

    def test_train_on_validation_months(self):
        model = self.train('ensmean-tv', '--model', 'ensmean', '--fit-split',
                           'train+val')
        output = self.path('ensmean-tv-eval')
        cli.main(['evaluate', '--dataset', self.data, '--checkpoint', model,
                  '--output-dir', output, '--no-images'])
        report = _load(os.path.join(
            output, 'ensmean-independent-regression', 'report.json'))
        self.assertTrue(report['metadata']['split_seen_in_training'])
        self.assertFalse(os.path.exists(os.path.join(
            output, 'ensmean-independent-regression', 'r2.pgm')))

    def test_signtest(self):
        hist = self.train('st-hist', '--model', 'hist')
        ensmean = self.train('st-ensmean', '--model', 'ensmean')
        output = self.path('signtest')
        cli.main(['signtest', '--dataset', self.data, '--checkpoint', hist,
                  ensmean, '--output-dir', output])
        document = _load(os.path.join(output, 'signtest.json'))
        self.assertEqual('hist-independent-regression', document['model_a'])
        self.assertEqual('test', document['split'])
        self.assertEqual(len(document['wins']), len(document['p_values']))

    def test_bootstrap(self):
        output = self.path('bootstrap')
        cli.main(['bootstrap', '--dataset', self.data, '--models', 'hist',
                  'ensmean', '--runs', '2', '--sample-size', '30',
                  '--output-dir', output, '--threads', '1'])
        with open(os.path.join(output, 'bootstrap.csv')) as f:
            lines = f.read().splitlines()
        self.assertEqual('run,model,mse', lines[0])
        self.assertEqual(5, len(lines))
        self.assertEqual('mse', _load(os.path.join(
            output, 'bootstrap.json'))['metric'])

    @mock.patch('sys.stderr')
    def test_rejected_configuration_exits_2(self, stderr):
        output = self.path('bad-config')
        with self.assertRaises(SystemExit) as context:
            cli.main(['train', '--dataset', self.data, '--model', 'lr',
                      '--location-mode', 'pe', '--output-dir', output])
        self.assertEqual(2, context.exception.code)
        error = _load(os.path.join(output, 'error.json'))
        self.assertEqual('ParadigmError', error['error'])
        self.assertEqual('train', error['command'])
        self.assertFalse(os.path.exists(os.path.join(output, 'model.npz')))

    @mock.patch('sys.stderr')
    def test_grid_search_needs_convnet(self, stderr):
        with self.assertRaises(SystemExit) as context:
            cli.main(['train', '--dataset', self.data, '--model', 'rf',
                      '--grid-search', '--output-dir', self.path('gs')])
        self.assertEqual(2, context.exception.code)

    @mock.patch('sys.stderr')
    def test_missing_dataset_exits_1(self, stderr):
        output = self.path('missing')
        with self.assertRaises(SystemExit) as context:
            cli.main(['evaluate', '--dataset', self.path('nowhere'),
                      '--checkpoint', 'model.npz', '--output-dir', output])
        self.assertEqual(1, context.exception.code)
        self.assertEqual('TruncatedFileError',
                         _load(os.path.join(output, 'error.json'))['error'])

    @mock.patch('sys.stderr')
    def test_os_error_exits_1(self, stderr):
        output = self.path('disk-full')
        failure = OSError(28, 'No space left on device')
        with mock.patch('subseasonal_forecast.cli.run_gen_data',
                        side_effect=failure):
            with self.assertRaises(SystemExit) as context:
                cli.main(['gen-data', '--output-dir', output])
        self.assertEqual(1, context.exception.code)
        document = _load(os.path.join(output, 'error.json'))
        self.assertEqual('RunError', document['error'])
        self.assertIn('No space left on device', document['message'])

    @mock.patch('sys.stderr')
    def test_bad_region(self, stderr):
        model = self.train('region-hist', '--model', 'hist')
        with self.assertRaises(SystemExit) as context:
            cli.main(['evaluate', '--dataset', self.data, '--checkpoint',
                      model, '--output-dir', self.path('region'),
                      '--region', 'west'])
        self.assertEqual(2, context.exception.code)
