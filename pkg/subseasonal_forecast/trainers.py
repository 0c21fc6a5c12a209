"""Uniform fit/predict adapters over every model family, paradigm and task.

A Trainer fits on a training SplitView and returns a predictor whose
predict(view) gives a Prediction: the forecast months and a (T, L) array of
values, or (T, L, 3) class probabilities in (-1, 0, +1) order for terciles.
"""
import collections
import logging

import numpy as np

from subseasonal_forecast import baselines
from subseasonal_forecast import convnet
from subseasonal_forecast import exceptions
from subseasonal_forecast import features
from subseasonal_forecast import forest
from subseasonal_forecast import linear
from subseasonal_forecast import preprocess
from subseasonal_forecast import stacking
from subseasonal_forecast import utils

logger = logging.getLogger(__name__)

MODELS = ('hist', 'ensmean', 'lr', 'linqr', 'logistic', 'rf', 'qrf',
          'convnet', 'stack')
TASKS = ('regression', 'quantile', 'tercile')

SUPPORTED_TASKS = {
    'hist': TASKS,
    'ensmean': TASKS,
    'lr': ('regression', 'tercile'),
    'linqr': ('quantile',),
    'logistic': ('tercile',),
    'rf': ('regression', 'tercile'),
    'qrf': ('quantile',),
    'convnet': TASKS,
    'stack': TASKS,
}
SUPPORTED_PARADIGMS = {
    'lr': ('independent',),
    'linqr': ('independent',),
    'logistic': ('independent',),
    'rf': ('conditional', 'independent'),
    'qrf': ('conditional', 'independent'),
    'convnet': ('spatial',),
}
DEFAULT_PARADIGM = {'lr': 'independent', 'linqr': 'independent',
                    'logistic': 'independent', 'rf': 'conditional',
                    'qrf': 'conditional', 'convnet': 'spatial',
                    'stack': 'conditional'}
STACK_BASES = {
    'regression': ('lr', 'rf', 'convnet'),
    'quantile': ('linqr', 'qrf', 'convnet'),
    'tercile': ('logistic', 'rf', 'convnet'),
}
ENSEMBLE_ONLY = ('lr', 'linqr', 'logistic')

Prediction = collections.namedtuple('Prediction', ['times', 'values'])


def default_paradigm(model):
    return DEFAULT_PARADIGM.get(model, 'independent')


def default_features(model, paradigm=None, base=None):
    """Linear families see ensemble members only; per-location models never
    get location columns."""
    config = base or features.FeatureConfig()
    paradigm = paradigm or default_paradigm(model)
    if model in ENSEMBLE_ONLY:
        config = config.replace(use_lags=False, use_covariates=False,
                                use_sst=False)
    if paradigm == 'independent':
        config = config.replace(location_mode='none')
    return config


class ModelSpec(collections.namedtuple('ModelSpec', [
        'model', 'task', 'paradigm', 'alpha', 'features', 'forest', 'convnet',
        'base_channels', 'depth', 'stack_bases', 'hidden', 'seed',
        'threads'], defaults=('rf', 'regression', None, 0.9, None, None, None,
                              16, 2, None, stacking.DEFAULT_HIDDEN, 0,
                              None))):
    def __new__(cls, *args, **kwargs):
        self = super().__new__(cls, *args, **kwargs)
        if self.model not in MODELS:
            raise exceptions.ConfigError('unknown model {!r}'.format(
                self.model))
        if self.task not in TASKS:
            raise exceptions.ConfigError('unknown task {!r}'.format(self.task))
        if self.task not in SUPPORTED_TASKS[self.model]:
            raise exceptions.ConfigError(
                'model {} does not support the {} task'.format(self.model,
                                                               self.task))
        if self.task == 'quantile' and not 0 < self.alpha < 1:
            raise exceptions.ConfigError('alpha must lie in (0, 1)')
        paradigm = self.paradigm or default_paradigm(self.model)
        if paradigm not in features.PARADIGMS:
            raise exceptions.ConfigError('unknown paradigm {!r}'.format(
                paradigm))
        allowed = SUPPORTED_PARADIGMS.get(self.model, features.PARADIGMS)
        if paradigm not in allowed:
            raise exceptions.ParadigmError(
                'model {} runs under the {} paradigm, not {}'.format(
                    self.model, ' or '.join(allowed), paradigm))
        if self.model == 'rf' and self.task == 'tercile' \
                and paradigm != 'conditional':
            raise exceptions.ParadigmError(
                'forest classification is pooled over locations')
        config = self.features or default_features(self.model, paradigm)
        if paradigm == 'independent' and config.location_mode != 'none':
            raise exceptions.ParadigmError(
                'location features ({}) are meaningless when every location '
                'has its own model'.format(config.location_mode))
        bases = self.stack_bases
        if self.model == 'stack':
            bases = tuple(bases or STACK_BASES[self.task])
            if len(bases) < 2:
                raise exceptions.ConfigError(
                    'stacking needs at least 2 base models')
        # _replace builds through tuple.__new__ and skips these checks
        self = self._replace(
            paradigm=paradigm, features=config,
            forest=self.forest or forest.ForestParams(seed=self.seed),
            convnet=self.convnet or convnet.TrainParams(seed=self.seed),
            stack_bases=bases)
        for name in bases if self.model == 'stack' else ():
            self.for_base(name)
        return self

    @property
    def model_id(self):
        return '{}-{}-{}'.format(self.model, self.paradigm, self.task)

    def for_base(self, name):
        if name == 'stack':
            raise exceptions.ConfigError('a stack cannot contain a stack')
        paradigm = default_paradigm(name)
        return ModelSpec(
            model=name, task=self.task, paradigm=paradigm, alpha=self.alpha,
            features=default_features(name, paradigm, self.features),
            forest=self.forest, convnet=self.convnet,
            base_channels=self.base_channels, depth=self.depth,
            seed=self.seed, threads=self.threads)

    def to_dict(self):
        document = dict(self._asdict())
        document['features'] = self.features.to_dict()
        document['forest'] = self.forest.to_dict()
        document['convnet'] = self.convnet.to_dict()
        document['stack_bases'] = (list(self.stack_bases)
                                   if self.stack_bases else None)
        return document

    @classmethod
    def from_dict(cls, document):
        document = dict(document)
        document['features'] = features.FeatureConfig.from_dict(
            document['features'])
        document['forest'] = forest.ForestParams(**document['forest'])
        document['convnet'] = convnet.TrainParams(**document['convnet'])
        if document.get('stack_bases'):
            document['stack_bases'] = tuple(document['stack_bases'])
        return cls(**document)


def expected_catalog_hash(spec, view):
    """Catalog hash a model of `spec` fitted on data shaped like `view` has."""
    if spec.model == 'stack':
        return utils.hash_dict([expected_catalog_hash(spec.for_base(name),
                                                      view)
                                for name in spec.stack_bases])
    if spec.model in ('hist', 'ensmean'):
        return utils.hash_dict({'catalog': []})
    catalog = features.build_catalog(spec.features, view.n_members,
                                     view.covariate_names, view.has_sst)
    if spec.paradigm == 'independent':
        catalog = catalog.without('location')
    return catalog.hash()


def training_terciles(view):
    return preprocess.tercile_thresholds(
        view.target(view.indices)[:, view.mask.is_land], view.months())


def land_truth(view, times):
    return view.target(times)[:, view.mask.is_land]


def one_hot(labels):
    return (np.asarray(labels)[..., None]
            == linear.CLASSES).astype(np.float64)


class Predictor:
    """Base class: `task`, `catalog_hash` and `predict(view)`."""

    kind = None

    def __init__(self, task, alpha=None, thresholds=None):
        self.task = task
        self.alpha = alpha
        self.thresholds = thresholds
        self.failures = {}

    prediction_climatology = None

    def catalog_hash(self):
        return utils.hash_dict({'catalog': []})

    def predict(self, view):
        raise NotImplementedError

    def _as_task(self, values, view, times):
        """Threshold scalar predictions into one-hot terciles if needed."""
        if self.task != 'tercile' or values.ndim == 3:
            return values
        return one_hot(preprocess.tercile_label(values, self.thresholds,
                                                view.months(times)))

    def get_state(self):
        state = {'kind': self.kind, 'task': self.task, 'alpha': self.alpha}
        if self.thresholds is not None:
            state['thresholds'] = self.thresholds._asdict()
        return state

    @staticmethod
    def _thresholds(state):
        if state.get('thresholds') is None:
            return None
        return preprocess.TercileThresholds(**state['thresholds'])


class HistoricalPredictor(Predictor):
    """Observed climatology; the q90 table for quantiles."""

    kind = 'hist'

    def __init__(self, task, table, alpha=None, thresholds=None):
        super().__init__(task, alpha, thresholds)
        self.table = np.asarray(table, dtype=np.float64)

    @classmethod
    def fit(cls, view, task, alpha, thresholds):
        truth = land_truth(view, view.indices)
        if task == 'quantile':
            table = baselines.historical_quantile_table(truth, view.months(),
                                                        alpha)
        else:
            table = preprocess.monthly_climatology(truth,
                                                   view.months()).values
        return cls(task, table, alpha, thresholds)

    def baseline(self):
        if self.task == 'quantile':
            return baselines.BaselinePredictor('historical-q90', self.table,
                                               self.alpha)
        return baselines.BaselinePredictor(
            'historical-average', preprocess.Climatology(self.table), None)

    def predict(self, view):
        times = view.indices
        values = self.baseline().predict(view.months(times))
        return Prediction(times, self._as_task(values, view, times))

    def get_state(self):
        return dict(super().get_state(), table=self.table)

    @classmethod
    def from_state(cls, state):
        return cls(state['task'], state['table'], state['alpha'],
                   cls._thresholds(state))


class EnsembleAveragePredictor(Predictor):
    """Raw member mean (or member alpha-quantile); no learned correction.

    Terciles threshold the mean with the terciles of its own training-period
    values, since raw members carry model bias.
    """

    kind = 'ensmean'

    def __init__(self, task, climatology, alpha=None, thresholds=None):
        super().__init__(task, alpha, thresholds)
        self.climatology = np.asarray(climatology, dtype=np.float64)

    @property
    def prediction_climatology(self):
        return preprocess.Climatology(self.climatology, source='model')

    @classmethod
    def fit(cls, view, task, alpha, thresholds=None):
        ensemble = view.ensemble(view.indices)[:, :, view.mask.is_land]
        mean = baselines.predict_ensemble_mean(ensemble)
        climatology = preprocess.model_climatology(mean, view.months())
        if task == 'tercile':
            thresholds = preprocess.tercile_thresholds(mean, view.months())
        return cls(task, climatology.values, alpha, thresholds)

    def raw(self, view, times):
        ensemble = view.ensemble(times)[:, :, view.mask.is_land]
        kind = 'ensemble-q90' if self.task == 'quantile' else 'ensemble-average'
        return baselines.BaselinePredictor(kind, None, self.alpha).predict(
            ensemble=ensemble)

    def predict(self, view):
        times = view.indices
        return Prediction(times, self._as_task(self.raw(view, times), view,
                                               times))

    def get_state(self):
        return dict(super().get_state(), climatology=self.climatology)

    @classmethod
    def from_state(cls, state):
        return cls(state['task'], state['climatology'], state['alpha'],
                   cls._thresholds(state))


class LinearPredictor(Predictor):
    """One linear model per land location.

    Locations whose fit failed predict their training mean (or the training
    class frequencies) and are listed in `failures`.
    """

    kind = 'linear'

    def __init__(self, task, pipeline, models, fallback, alpha=None,
                 thresholds=None, failures=None):
        super().__init__(task, alpha, thresholds)
        self.pipeline = pipeline
        self.models = models
        self.fallback = np.asarray(fallback, dtype=np.float64)
        self.failures = dict(failures or {})

    def catalog_hash(self):
        return self.pipeline.catalog.without('location').hash()

    @classmethod
    def fit(cls, spec, view, thresholds=None):
        pipeline = features.FeaturePipeline(spec.features).fit(view)
        cube = pipeline.transform(view)
        matrices = features.assemble('independent', view, pipeline, cube)
        target = cube.land_target()
        if spec.model == 'logistic':
            target = preprocess.tercile_label(target, thresholds,
                                              view.months(cube.times))
            matrices = collections.OrderedDict(
                (l, m._replace(y=target[:, l])) for l, m in matrices.items())
            fallback = np.stack([one_hot(target[:, l]).mean(axis=0)
                                 for l in matrices])
            task = 'tercile'
        elif spec.model == 'linqr':
            fallback = np.quantile(target, spec.alpha, axis=0)
            task = 'quantile'
        else:
            fallback = target.mean(axis=0)
            task = 'regression'
        report = linear.per_location_fit(matrices, task=task,
                                         threads=spec.threads,
                                         alpha=spec.alpha)
        if not report.models:
            raise exceptions.ModelFitError(report.failures)
        failures = {l: str(e) for l, e in report.failures.items()}
        return cls(spec.task, pipeline, report.models, fallback, spec.alpha,
                   thresholds, failures)

    def predict(self, view):
        cube = self.pipeline.transform(view)
        matrices = features.assemble('independent', view, self.pipeline, cube)
        columns = []
        for l, matrix in matrices.items():
            model = self.models.get(l)
            if model is None:
                columns.append(np.broadcast_to(
                    self.fallback[l], (len(cube.times),)
                    + self.fallback.shape[1:]))
            else:
                columns.append(model.predict(matrix.X))
        values = np.stack(columns, axis=1)
        return Prediction(cube.times, self._as_task(values, view, cube.times))

    def get_state(self):
        return dict(super().get_state(), pipeline=self.pipeline.get_state(),
                    models={str(l): m._asdict()
                            for l, m in self.models.items()},
                    fallback=self.fallback, failures={
                        str(l): e for l, e in self.failures.items()})

    @classmethod
    def from_state(cls, state):
        models = {int(l): linear.LinearModel(**m)
                  for l, m in state['models'].items()}
        return cls(state['task'], features.FeaturePipeline.from_state(
                   state['pipeline']), models, state['fallback'],
                   state['alpha'], cls._thresholds(state),
                   {int(l): e for l, e in state['failures'].items()})


def _forest_state(model):
    state = {'params': model.params.to_dict(), 'task': model.task,
             'n_features': model.n_features, 'classes': model.classes,
             'y_train': model.y_train,
             'trees': [tree._asdict() for tree in model.trees]}
    return state


def _forest_from_state(state):
    return forest.Forest(
        tuple(forest.Tree(**tree) for tree in state['trees']),
        forest.ForestParams(**state['params']), state['task'],
        state['n_features'], state['classes'], state['y_train'])


class ForestPredictor(Predictor):
    """A pooled forest (conditional paradigm) or one forest per location."""

    kind = 'forest'

    def __init__(self, task, pipeline, paradigm, forests, alpha=None,
                 thresholds=None):
        super().__init__(task, alpha, thresholds)
        self.pipeline = pipeline
        self.paradigm = paradigm
        self.forests = forests

    def catalog_hash(self):
        catalog = self.pipeline.catalog
        if self.paradigm == 'independent':
            catalog = catalog.without('location')
        return catalog.hash()

    @classmethod
    def fit(cls, spec, view, thresholds=None):
        pipeline = features.FeaturePipeline(spec.features).fit(view)
        cube = pipeline.transform(view)
        if spec.paradigm == 'conditional':
            matrix = features.assemble('conditional', view, pipeline, cube)
            y = matrix.y
            rf_task = 'regression'
            if spec.task == 'tercile':
                months = view.months(cube.times)
                y = preprocess.tercile_label(cube.land_target(), thresholds,
                                             months).reshape(-1)
                rf_task = 'classification'
            forests = {'pooled': forest.rf_fit(matrix.X, y, spec.forest,
                                               rf_task, spec.threads)}
        else:
            matrices = features.assemble('independent', view, pipeline, cube)
            report = forest.per_location_qrf_fit(matrices, spec.forest,
                                                 spec.threads)
            if report.failures:
                raise exceptions.ModelFitError(report.failures)
            forests = report.models
        return cls(spec.task, pipeline, spec.paradigm, forests, spec.alpha,
                   thresholds)

    def _predict_rows(self, model, X):
        if self.task == 'quantile':
            return forest.qrf_predict(model, X, self.alpha)
        if self.task == 'tercile':
            probabilities = forest.rf_predict(model, X)
            full = np.zeros((len(X), len(linear.CLASSES)))
            full[:, np.searchsorted(linear.CLASSES, model.classes)] = \
                probabilities
            return full
        return forest.rf_predict(model, X)

    def predict(self, view):
        cube = self.pipeline.transform(view)
        if self.paradigm == 'conditional':
            matrix = features.assemble('conditional', view, self.pipeline,
                                       cube)
            rows = self._predict_rows(self.forests['pooled'], matrix.X)
            values = rows.reshape((len(cube.times), view.mask.n_land)
                                  + rows.shape[1:])
        else:
            matrices = features.assemble('independent', view, self.pipeline,
                                         cube)
            values = np.stack([self._predict_rows(self.forests[l], m.X)
                               for l, m in matrices.items()], axis=1)
        return Prediction(cube.times, values)

    def get_state(self):
        return dict(super().get_state(), pipeline=self.pipeline.get_state(),
                    paradigm=self.paradigm,
                    forests={str(k): _forest_state(f)
                             for k, f in self.forests.items()})

    @classmethod
    def from_state(cls, state):
        forests = {(k if k == 'pooled' else int(k)): _forest_from_state(f)
                   for k, f in state['forests'].items()}
        return cls(state['task'], features.FeaturePipeline.from_state(
                   state['pipeline']), state['paradigm'], forests,
                   state['alpha'], cls._thresholds(state))


class ConvNetPredictor(Predictor):
    kind = 'convnet'

    def __init__(self, task, pipeline, model, alpha=None, thresholds=None):
        super().__init__(task, alpha, thresholds)
        self.pipeline = pipeline
        self.model = model

    def catalog_hash(self):
        return self.pipeline.catalog.hash()

    @classmethod
    def fit(cls, spec, view, thresholds=None):
        pipeline = features.FeaturePipeline(spec.features).fit(view)
        stack = features.assemble('spatial', view, pipeline)
        if spec.task == 'tercile':
            labels = np.zeros(stack.y.shape, dtype=np.int64)
            labels[:, view.mask.is_land] = preprocess.tercile_label(
                stack.y[:, view.mask.is_land], thresholds,
                view.months(stack.times))
            model = convnet.train_tercile(stack, labels, spec.convnet,
                                          base=spec.base_channels,
                                          depth=spec.depth)
        else:
            model = convnet.train_regression(stack, view.target_name,
                                             spec.convnet,
                                             base=spec.base_channels,
                                             depth=spec.depth)
            if spec.task == 'quantile':
                model = convnet.train_quantile(model, stack, spec.alpha,
                                               spec.convnet)
        return cls(spec.task, pipeline, model, spec.alpha, thresholds)

    def predict(self, view):
        stack = features.assemble('spatial', view, self.pipeline)
        maps = self.model.predict(stack.X)
        if self.task == 'tercile':
            values = np.moveaxis(maps[:, :, view.mask.is_land], 1, 2)
        else:
            values = maps[:, view.mask.is_land]
        return Prediction(stack.times, values)

    def get_state(self):
        return dict(super().get_state(), pipeline=self.pipeline.get_state(),
                    document=self.model.to_document(),
                    arrays=dict(self.model.to_arrays()))

    @classmethod
    def from_state(cls, state):
        model = convnet.ConvNetModel.from_arrays(state['document'],
                                                 state['arrays'])
        return cls(state['task'], features.FeaturePipeline.from_state(
                   state['pipeline']), model, state['alpha'],
                   cls._thresholds(state))


class StackPredictor(Predictor):
    kind = 'stack'

    def __init__(self, task, stacked, alpha=None, thresholds=None):
        super().__init__(task, alpha, thresholds)
        self.stacked = stacked

    def catalog_hash(self):
        return utils.hash_dict([base.catalog_hash()
                                for base in self.stacked.bases.values()])

    def predict(self, view):
        return self.stacked.predict(view)

    def get_state(self):
        stacker = self.stacked.stacker
        return dict(super().get_state(),
                    bases=collections.OrderedDict(
                        (name, base.get_state())
                        for name, base in self.stacked.bases.items()),
                    base_order=list(self.stacked.bases),
                    stacker={'document': stacker.to_document(),
                             'arrays': dict(stacker.to_arrays())})

    @classmethod
    def from_state(cls, state):
        bases = collections.OrderedDict(
            (name, predictor_from_state(state['bases'][name]))
            for name in state['base_order'])
        stacker = stacking.Stacker.from_arrays(state['stacker']['document'],
                                               state['stacker']['arrays'])
        return cls(state['task'], stacking.StackedPredictor(
            bases, stacker, state['task']), state['alpha'],
                   cls._thresholds(state))


PREDICTORS = {cls.kind: cls for cls in (
    HistoricalPredictor, EnsembleAveragePredictor, LinearPredictor,
    ForestPredictor, ConvNetPredictor, StackPredictor)}


def predictor_from_state(state):
    return PREDICTORS[state['kind']].from_state(state)


class Trainer:
    """Fits the model described by a ModelSpec on a training view."""

    def __init__(self, spec):
        self.spec = spec

    def __repr__(self):
        return 'Trainer({})'.format(self.spec.model_id)

    def fit(self, view):
        spec = self.spec
        logger.info('fitting %s on %d %s months', spec.model_id, len(view),
                    view.name)
        thresholds = training_terciles(view) if spec.task == 'tercile' \
            else None
        if spec.model == 'hist':
            return HistoricalPredictor.fit(view, spec.task, spec.alpha,
                                           thresholds)
        if spec.model == 'ensmean':
            return EnsembleAveragePredictor.fit(view, spec.task, spec.alpha)
        if spec.model in ('lr', 'linqr', 'logistic'):
            return LinearPredictor.fit(spec, view, thresholds)
        if spec.model in ('rf', 'qrf'):
            return ForestPredictor.fit(spec, view, thresholds)
        if spec.model == 'convnet':
            return ConvNetPredictor.fit(spec, view, thresholds)
        return self._fit_stack(view, thresholds)

    def _fit_stack(self, view, thresholds):
        spec = self.spec
        bases = collections.OrderedDict(
            (name, Trainer(spec.for_base(name))) for name in spec.stack_bases)

        def truth(split_view, times):
            values = land_truth(split_view, times)
            if spec.task == 'tercile':
                return preprocess.tercile_label(values, thresholds,
                                                split_view.months(times))
            return values

        stacked = stacking.stack_train(bases, view, truth, spec.task,
                                       spec.alpha, spec.hidden, spec.seed,
                                       spec.threads)
        return StackPredictor(spec.task, stacked, spec.alpha, thresholds)
