"""Non-learned reference predictors.

The linear-regression-on-members baseline is `linear.per_location_fit`
with an ensemble-only feature catalog.
"""
import collections
import logging

import numpy as np

from subseasonal_forecast import preprocess

logger = logging.getLogger(__name__)

KINDS = ('historical-average', 'ensemble-average', 'historical-q90',
         'ensemble-q90')


class BaselinePredictor(collections.namedtuple(
        'BaselinePredictor', ['kind', 'table', 'alpha'])):
    """`table` is a (12, L) climatology or quantile table for historical kinds."""

    def predict(self, months=None, ensemble=None):
        if self.kind == 'historical-average':
            return predict_historical(self.table, months)
        if self.kind == 'historical-q90':
            return self.table[np.asarray(months) - 1]
        if self.kind == 'ensemble-average':
            return predict_ensemble_mean(ensemble)
        if self.kind == 'ensemble-q90':
            return predict_ensemble_quantile(ensemble, self.alpha)
        raise ValueError('unknown baseline kind {!r}'.format(self.kind))


def predict_historical(clim, months):
    """Climatology of each month's calendar month: (T,) months -> (T, L)."""
    return clim.at(months)


def predict_ensemble_mean(ensemble):
    """Mean over members; `ensemble` is (..., K, L) with members on axis -2."""
    return np.mean(ensemble, axis=-2)


def predict_ensemble_quantile(ensemble, alpha=0.9):
    return np.percentile(ensemble, 100.0 * alpha, axis=-2)


def predict_ensemble_q90(ensemble):
    return predict_ensemble_quantile(ensemble, 0.9)


def historical_quantile_table(series, months, alpha=0.9):
    """R-7 percentile of each (month, location) reference sample: (12, L)."""
    return preprocess.monthly_reduce(
        series, months, lambda x: np.percentile(x, 100.0 * alpha, axis=0))


def predict_historical_q90(reference, reference_months, months, alpha=0.9):
    table = historical_quantile_table(reference, reference_months, alpha)
    return table[np.asarray(months) - 1]


def oracle_debias(predictions, truth, months):
    """Remove the per-(month, location) mean test error. Uses test truth.

    This is a diagnostic upper bound, not an operational method. Calendar
    months absent from `months` pass through unchanged.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    errors = predictions - np.asarray(truth, dtype=np.float64)
    months = np.asarray(months)
    debiased = predictions.copy()
    absent = []
    for m in preprocess.MONTHS:
        rows = months == m
        if not rows.any():
            absent.append(int(m))
            continue
        debiased[rows] -= errors[rows].mean(axis=0)
    if absent:
        logger.warning('oracle debias: month(s) %s absent from the evaluation '
                       'period, passed through unchanged',
                       ', '.join(str(m) for m in absent))
    return debiased
