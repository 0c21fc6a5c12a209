"""Evaluation runs: reports, bootstrap stability, ablations, grouped feature
importance, region tables and paired sign tests."""
import collections
import logging

import numpy as np

from subseasonal_forecast import baselines
from subseasonal_forecast import exceptions
from subseasonal_forecast import metrics
from subseasonal_forecast import preprocess
from subseasonal_forecast import trainers
from subseasonal_forecast import utils

logger = logging.getLogger(__name__)

VARIANTS = collections.OrderedDict([
    ('full-ensemble', {'ensemble_mode': 'full'}),
    ('ensemble-mean-only', {'ensemble_mode': 'mean'}),
    ('sorted-ensemble', {'ensemble_mode': 'sorted'}),
    ('pe', {'location_mode': 'pe'}),
    ('latlon', {'location_mode': 'latlon'}),
    ('no-location', {'location_mode': 'none'}),
])
FEATURE_GROUPS = ('ensemble', 'lags', 'covariates', 'sst')
PRIMARY_METRIC = {'regression': 'mse', 'quantile': 'pinball',
                  'tercile': 'accuracy'}


def evaluate_predictor(predictor, view, train_view, model_id, metadata=None,
                       oracle_debias=False):
    """Metric grids of `predictor` on `view`.

    Observed climatology and tercile thresholds come from `train_view`.
    `oracle_debias` removes the per-(month, location) mean error measured on
    `view` itself before scoring; it is a diagnostic only.
    """
    prediction = predictor.predict(view)
    times = prediction.times
    truth = trainers.land_truth(view, times)
    months = view.months(times)
    if oracle_debias:
        if predictor.task != 'regression':
            raise exceptions.ConfigError(
                'oracle debiasing applies to regression predictions only')
        prediction = prediction._replace(values=baselines.oracle_debias(
            prediction.values, truth, months))
    report = metrics.EvalReport(model_id, view.name, view.mask, dict(
        metadata or {}, catalog_hash=predictor.catalog_hash(),
        months=len(times), first_month=view.time.label(int(times[0])),
        last_month=view.time.label(int(times[-1])),
        trained_on=train_view.name))
    if oracle_debias:
        report.metadata['oracle_debiased'] = True
    task = predictor.task
    if task == 'regression':
        climatology = preprocess.monthly_climatology(
            trainers.land_truth(train_view, train_view.indices),
            train_view.months())
        report.add('r2', metrics.r2_per_location(
            truth, prediction.values, climatology, months,
            predictor.prediction_climatology))
        report.add('mse', metrics.mse_per_location(truth, prediction.values))
    elif task == 'quantile':
        report.add('pinball', metrics.quantile_loss_per_location(
            truth, prediction.values, predictor.alpha))
        report.metadata['alpha'] = predictor.alpha
    else:
        labels = preprocess.tercile_label(
            truth, trainers.training_terciles(train_view), months)
        predicted = metrics.labels_from_probabilities(prediction.values)
        report.add('accuracy', metrics.tercile_accuracy(labels, predicted)[0])
    if predictor.failures:
        report.metadata['failed_locations'] = sorted(
            int(l) for l in predictor.failures)
    return report


def primary_score(report, task):
    return report.aggregates()[PRIMARY_METRIC[task]]['mean']


def bootstrap_experiment(specs, train_view, test_view, n_boot=50,
                         sample_size=200, seed=0):
    """Retrain every spec on bootstrap resamples of the training months.

    Each run draws `sample_size` months with replacement. Returns
    {model id: [test score or None for a failed run]}.
    """
    if not len(train_view):
        raise exceptions.InsufficientDataError('empty training split')
    scores = collections.OrderedDict((spec.model_id, []) for spec in specs)
    for run in range(n_boot):
        rng = np.random.default_rng(utils.derive_seed(seed, run))
        sample = np.sort(rng.choice(train_view.indices, sample_size,
                                    replace=True))
        view = train_view.sub_view(sample, name='bootstrap-{}'.format(run),
                                   horizon=train_view.horizon)
        for spec in specs:
            try:
                predictor = trainers.Trainer(spec).fit(view)
                report = evaluate_predictor(predictor, test_view, train_view,
                                            spec.model_id)
                score = primary_score(report, spec.task)
            except (exceptions.SubseasonalForecastError, ValueError) as e:
                logger.warning('bootstrap run %d of %s failed: %s', run,
                               spec.model_id, e)
                score = None
            scores[spec.model_id].append(score)
        logger.info('bootstrap run %d/%d done', run + 1, n_boot)
    return scores


def variant_spec(spec, variant):
    if variant not in VARIANTS:
        raise exceptions.ConfigError('unknown ablation variant {!r}'.format(
            variant))
    changes = VARIANTS[variant]
    if (spec.paradigm == 'independent'
            and changes.get('location_mode', 'none') != 'none'):
        raise exceptions.ParadigmError(
            'variant {} adds location features, which the independent '
            'paradigm cannot use'.format(variant))
    return trainers.ModelSpec.from_dict(dict(
        spec.to_dict(), features=spec.features.replace(**changes).to_dict()))


def ablation_run(variant, spec, train_view, eval_view):
    """Retrain `spec` with one feature variant and report on `eval_view`."""
    spec = variant_spec(spec, variant)
    predictor = trainers.Trainer(spec).fit(train_view)
    return evaluate_predictor(predictor, eval_view, train_view,
                              spec.model_id, {'variant': variant})


def group_config(config, groups, n_zero_features=0):
    return config.replace(
        use_ensemble='ensemble' in groups, use_lags='lags' in groups,
        use_covariates='covariates' in groups, use_sst='sst' in groups,
        n_zero_features=n_zero_features if 'zeros' in groups else 0)


def grouped_feature_importance(spec, train_view, val_view,
                               groups=FEATURE_GROUPS, n_zero_features=4):
    """One validation report per cumulative prefix of `groups`."""
    reports = []
    for size in range(1, len(groups) + 1):
        included = tuple(groups[:size])
        config = group_config(spec.features, included, n_zero_features)
        group_spec = trainers.ModelSpec.from_dict(dict(
            spec.to_dict(), features=config.to_dict()))
        predictor = trainers.Trainer(group_spec).fit(train_view)
        catalog = []
        if hasattr(predictor, 'pipeline'):
            catalog = predictor.pipeline.catalog.names()
        reports.append(evaluate_predictor(
            predictor, val_view, train_view, spec.model_id,
            {'groups': list(included), 'catalog': catalog}))
    return reports


def region_table(reports, regions):
    """{region: {model: aggregates}} for named (H, W) region masks."""
    table = collections.OrderedDict()
    for name, region in regions.items():
        table[name] = collections.OrderedDict(
            ('{}/{}'.format(report.model_id, report.split),
             metrics.region_metrics(report, region)) for report in reports)
    return table


def compare_models(prediction_a, prediction_b, view):
    """Sign test of model A against model B on their common months."""
    times = np.intersect1d(prediction_a.times, prediction_b.times)
    truth = trainers.land_truth(view, times)
    errors_a = _align(prediction_a, times) - truth
    errors_b = _align(prediction_b, times) - truth
    return metrics.sign_test(errors_a, errors_b)


def _align(prediction, times):
    return prediction.values[np.searchsorted(prediction.times, times)]
