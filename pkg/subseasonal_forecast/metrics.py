"""Verification metrics, significance tests, reports and heatmaps.

Per-location arrays are (L,) in land_locations order. Aggregates skip
locations flagged undefined.
"""
import collections
import logging
import os

import numpy as np
from scipy import stats

from subseasonal_forecast import dataio
from subseasonal_forecast import exceptions
from subseasonal_forecast import linear
from subseasonal_forecast import preprocess
from subseasonal_forecast import utils

logger = logging.getLogger(__name__)

SE_CAVEAT = ('Standard errors treat locations as independent and should be '
             'used with caution since there are significant spatial '
             'correlations between locations.')
SIGNIFICANCE = 0.05


def aggregate(values):
    """mean, median, SE (stdev / sqrt(L)) and 90th percentile over defined
    locations."""
    values = np.asarray(values, dtype=np.float64)
    defined = values[np.isfinite(values)]
    if not len(defined):
        return {'mean': None, 'median': None, 'se': None, 'p90': None,
                'count': 0, 'undefined': int(values.size)}
    se = (float(np.std(defined, ddof=1) / np.sqrt(len(defined)))
          if len(defined) > 1 else 0.0)
    return {'mean': float(np.mean(defined)),
            'median': float(np.median(defined)),
            'se': se,
            'p90': float(np.percentile(defined, 90)),
            'count': int(len(defined)),
            'undefined': int(values.size - len(defined))}


def r2_per_location(truth, predictions, climatology, months,
                    prediction_climatology=None, literal=False):
    """R^2 of detrended predictions against detrended truth.

    Truth is detrended with `climatology`; predictions with
    `prediction_climatology` when given (model climatology for the raw
    ensemble average). The denominator centres detrended truth on its own
    mean; `literal=True` centres it on the detrended predictions' mean
    instead. Locations with a zero denominator are NaN.
    """
    truth_det = preprocess.detrend(truth, climatology, months)
    if prediction_climatology is None:
        prediction_climatology = climatology
    prediction_det = preprocess.detrend(predictions, prediction_climatology,
                                        months)
    centre = prediction_det.mean(axis=0) if literal else truth_det.mean(axis=0)
    numerator = np.sum((truth_det - prediction_det) ** 2, axis=0)
    denominator = np.sum((truth_det - centre) ** 2, axis=0)
    undefined = denominator <= 0
    if undefined.any():
        logger.warning('R2 undefined at %d location(s) with constant truth',
                       int(undefined.sum()))
    with np.errstate(divide='ignore', invalid='ignore'):
        return np.where(undefined, np.nan, 1.0 - numerator / denominator)


def mse_per_location(truth, predictions):
    return np.mean((np.asarray(predictions, dtype=np.float64)
                    - np.asarray(truth, dtype=np.float64)) ** 2, axis=0)


def mse_report(truth, predictions):
    grid = mse_per_location(truth, predictions)
    return grid, aggregate(grid)


def quantile_loss_per_location(truth, predictions, alpha):
    residual = (np.asarray(truth, dtype=np.float64)
                - np.asarray(predictions, dtype=np.float64))
    return linear.pinball_loss(residual, alpha).mean(axis=0)


def quantile_loss_report(truth, predictions, alpha):
    grid = quantile_loss_per_location(truth, predictions, alpha)
    return grid, aggregate(grid)


def labels_from_probabilities(probabilities):
    """Most probable class; ties go to the lower class."""
    return linear.CLASSES[np.argmax(probabilities, axis=-1)]


def tercile_accuracy(labels, predicted):
    """Per-location percentage of correctly classified months."""
    labels = np.asarray(labels)
    predicted = np.asarray(predicted)
    if labels.shape != predicted.shape:
        raise exceptions.ShapeError(
            'tercile_accuracy', 'label shapes {} and {} differ'.format(
                labels.shape, predicted.shape))
    grid = 100.0 * np.mean(labels == predicted, axis=0)
    return grid, aggregate(grid)


def binomial_tail(wins, n):
    """P(Bin(n, 1/2) >= wins), exact."""
    wins = np.asarray(wins)
    n = np.asarray(n)
    return np.where(n > 0, stats.binom.sf(wins - 1, n, 0.5), 1.0)


def bonferroni_threshold(n_tests, significance=SIGNIFICANCE):
    return significance / n_tests


class SignTestResult(collections.namedtuple('SignTestResult', [
        'wins', 'n', 'p_values', 'threshold', 'reject', 'undefined'])):
    """Model A beats model B at a location when |err_A| < |err_B|."""

    def to_document(self):
        return {'wins': self.wins, 'n': self.n, 'p_values': self.p_values,
                'threshold': self.threshold, 'reject': bool(self.reject),
                'min_p_value': float(np.min(self.p_values)),
                'undefined_locations': np.flatnonzero(self.undefined)}


def sign_test(errors_a, errors_b, significance=SIGNIFICANCE):
    """One-sided per-location sign test with a Bonferroni global verdict.

    Ties are dropped. Locations without untied months get p = 1 and are
    flagged.
    """
    a = np.abs(np.asarray(errors_a, dtype=np.float64))
    b = np.abs(np.asarray(errors_b, dtype=np.float64))
    if a.shape != b.shape:
        raise exceptions.ShapeError('sign_test', 'error series misaligned')
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    wins = np.sum(a < b, axis=0)
    n = np.sum(a != b, axis=0)
    p_values = binomial_tail(wins, n)
    threshold = bonferroni_threshold(a.shape[1], significance)
    undefined = n == 0
    if undefined.any():
        logger.warning('sign test: %d location(s) have only ties',
                       int(undefined.sum()))
    return SignTestResult(wins, n, p_values, threshold,
                          bool(np.min(p_values) < threshold), undefined)


class EvalReport:
    """Per-location metric grids for one model on one split."""

    def __init__(self, model_id, split, mask, metadata=None):
        self.model_id = model_id
        self.split = split
        self.mask = mask
        self.metadata = dict(metadata or {})
        self.grids = collections.OrderedDict()

    def add(self, name, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self.mask.n_land,):
            raise exceptions.ShapeError(
                'EvalReport', '{} grid has shape {}, expected ({},)'.format(
                    name, values.shape, self.mask.n_land))
        self.grids[name] = values
        return self

    def aggregates(self):
        return collections.OrderedDict(
            (name, aggregate(values)) for name, values in self.grids.items())

    def to_document(self):
        return {'model': self.model_id, 'split': self.split,
                'metadata': self.metadata,
                'aggregates': self.aggregates(),
                'grids': {name: [None if not np.isfinite(v) else float(v)
                                 for v in values]
                          for name, values in self.grids.items()},
                'footer': SE_CAVEAT}

    def save(self, path):
        utils.dump_json(self.to_document(), path)
        logger.info('wrote %s report for %s to %s', self.split,
                    self.model_id, path)


def rectangle_region(grid, lat_min, lat_max, lon_min, lon_max):
    """(H, W) mask of cells whose centres fall inside the box."""
    lat = grid.latitudes()[:, None]
    lon = grid.longitudes()[None, :]
    return ((lat >= lat_min) & (lat <= lat_max)
            & (lon >= np.mod(lon_min, 360.0)) & (lon <= np.mod(lon_max, 360.0)))


def region_positions(mask, region):
    region = np.asarray(region, dtype=bool)
    if region.shape != mask.grid.shape:
        raise exceptions.ShapeError('region', 'mask shape differs from grid')
    if np.any(region & ~mask.is_land):
        raise exceptions.InvalidMaskError('region includes sea cells')
    positions = np.flatnonzero(region[mask.is_land])
    if not len(positions):
        raise exceptions.EmptyRegionError('region has no land cells')
    return positions


def region_metrics(report, region):
    """Aggregates of every grid in `report` restricted to `region`."""
    positions = region_positions(report.mask, region)
    return collections.OrderedDict(
        (name, aggregate(values[positions]))
        for name, values in report.grids.items())


def export_heatmap(values, mask, path, image=True, value_range=None):
    """Write an n_lat x n_lon CSV grid (sea and undefined cells NA).

    With `image`, also write a binary 8-bit PGM next to it: NA cells are 0,
    defined values map linearly from value_range (default: the data's min
    and max) onto intensities 1..255.
    """
    maps = np.full(mask.grid.shape, np.nan)
    maps[mask.is_land] = values
    missing = ~np.isfinite(maps)
    dataio.write_grid(path, np.where(missing, 0.0, maps), missing)
    if image:
        root, _ = os.path.splitext(path)
        write_pgm(root + '.pgm', maps, value_range)
    return maps


def write_pgm(path, maps, value_range=None):
    defined = np.isfinite(maps)
    if value_range is None:
        value_range = ((float(maps[defined].min()), float(maps[defined].max()))
                       if defined.any() else (0.0, 1.0))
    low, high = value_range
    span = high - low if high > low else 1.0
    scaled = np.clip((np.where(defined, maps, low) - low) / span, 0.0, 1.0)
    pixels = np.where(defined, 1 + np.round(scaled * 254), 0).astype(np.uint8)
    height, width = pixels.shape
    with open(path, 'wb') as f:
        f.write('P5\n{} {}\n255\n'.format(width, height).encode('ascii'))
        # row 0 is the southernmost latitude; images run north to south
        f.write(pixels[::-1].tobytes())


def read_heatmap(path, grid):
    values, missing = dataio.read_grid(path, grid.shape)
    return np.where(missing, np.nan, values)


def land_grid(values, mask):
    """(L,) -> (H, W) with NaN over the sea."""
    maps = np.full(mask.grid.shape, np.nan)
    maps[mask.is_land] = values
    return maps
