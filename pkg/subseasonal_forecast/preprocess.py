"""Statistics and transforms fitted on the training split.

Location-indexed arrays are (T, L) in land_locations order unless noted.
Percentiles use the linear-interpolation definition (R-7, numpy's default).
"""
import collections
import logging

import numpy as np
from scipy.spatial import distance

from subseasonal_forecast import exceptions
from subseasonal_forecast import grid as grid_module

logger = logging.getLogger(__name__)

MONTHS = np.arange(1, 13)
DEFAULT_LAGS = (2, 3, 4, 12, 24)
TERCILE_PERCENTILES = (33.0, 66.0)
CONSTANT_TOLERANCE = 1e-12


class Climatology(collections.namedtuple('Climatology',
                                         ['values', 'source'])):
    """Mean per calendar month and location as a (12, L) array; row m-1 holds
    calendar month m."""

    def __new__(cls, values, source='observed'):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != 12:
            raise exceptions.ShapeError('Climatology',
                                        'values must be (12, L)')
        if not np.all(np.isfinite(values)):
            raise exceptions.InsufficientDataError(
                'climatology undefined for some (month, location)')
        if source not in ('observed', 'model'):
            raise ValueError('unknown climatology source {!r}'.format(source))
        return super().__new__(cls, values, source)

    def at(self, months):
        months = np.asarray(months)
        if months.size and (months.min() < 1 or months.max() > 12):
            raise exceptions.InsufficientDataError(
                'months outside 1..12: {}'.format(
                    sorted(set(months[(months < 1) | (months > 12)]))))
        return self.values[months - 1]


def monthly_reduce(series, months, reducer, min_samples=1):
    series = np.asarray(series, dtype=np.float64)
    months = np.asarray(months)
    counts = np.array([np.sum(months == m) for m in MONTHS])
    short = [int(m) for m, c in zip(MONTHS, counts) if c < min_samples]
    if short:
        raise exceptions.InsufficientDataError(
            'fewer than {} reference sample(s) for month(s) {}'.format(
                min_samples, ', '.join(str(m) for m in short)))
    return np.stack([reducer(series[months == m]) for m in MONTHS])


def monthly_climatology(series, months):
    """Mean of `series` (T, L) over all occurrences of each calendar month."""
    return Climatology(monthly_reduce(series, months,
                                       lambda x: x.mean(axis=0)))


def model_climatology(predictions, months):
    """Climatology of a model's own training-period predictions."""
    return Climatology(monthly_reduce(predictions, months,
                                       lambda x: x.mean(axis=0)),
                       source='model')


def detrend(values, clim, months):
    return np.asarray(values, dtype=np.float64) - clim.at(months)


def add_back(anomalies, clim, months):
    return np.asarray(anomalies, dtype=np.float64) + clim.at(months)


class TercileThresholds(collections.namedtuple('TercileThresholds',
                                               ['q33', 'q66'])):
    """Per (month, location) thresholds, each (12, L)."""


def tercile_thresholds(series, months):
    q33, q66 = (monthly_reduce(
        series, months, lambda x, q=q: np.percentile(x, q, axis=0),
        min_samples=3) for q in TERCILE_PERCENTILES)
    return TercileThresholds(q33, q66)


def tercile_label(values, thresholds, months):
    """-1 below q33, +1 above q66, 0 otherwise (boundaries are class 0)."""
    values = np.asarray(values, dtype=np.float64)
    q33 = thresholds.q33[np.asarray(months) - 1]
    q66 = thresholds.q66[np.asarray(months) - 1]
    labels = np.zeros(values.shape, dtype=np.int64)
    labels[values < q33] = -1
    labels[values > q66] = 1
    return labels


class PcaModel(collections.namedtuple(
        'PcaModel', ['mean', 'components', 'explained_variance'])):
    @property
    def n_components(self):
        return self.components.shape[0]


def pca_fit(matrix, n_components=8):
    """Top right singular vectors of the column-centred training matrix."""
    matrix = np.asarray(matrix, dtype=np.float64)
    n_rows, n_cols = matrix.shape
    if n_rows < n_components:
        raise exceptions.InsufficientDataError(
            'PCA needs at least {} months, got {}'.format(n_components,
                                                          n_rows))
    if n_components > min(n_rows, n_cols):
        raise exceptions.RankError(
            'cannot extract {} components from a {}x{} matrix'.format(
                n_components, n_rows, n_cols))
    mean = matrix.mean(axis=0)
    _, singular, vt = np.linalg.svd(matrix - mean, full_matrices=False)
    components = vt[:n_components]
    # deterministic sign: largest loading of each component positive
    signs = np.sign(components[np.arange(n_components),
                               np.argmax(np.abs(components), axis=1)])
    components = components * np.where(signs == 0, 1.0, signs)[:, None]
    explained = singular[:n_components] ** 2 / max(n_rows - 1, 1)
    return PcaModel(mean, components, explained)


def pca_transform(model, rows):
    rows = np.asarray(rows, dtype=np.float64)
    return (rows - model.mean) @ model.components.T


def pca_inverse(model, scores):
    return np.asarray(scores) @ model.components + model.mean


class NormalizationState(collections.namedtuple(
        'NormalizationState', ['mode', 'offset', 'scale', 'constant'])):
    """Per-feature affine map fitted on the training split.

    min-max: (x - min) / (max - min); standardize: (x - mean) / std.
    Constant features map to 0. Values outside the training range are not
    clipped.
    """

    def transform(self, values):
        values = np.asarray(values, dtype=np.float64)
        out = (values - self.offset) / self.scale
        return np.where(self.constant, 0.0, out)

    def inverse(self, values):
        return np.asarray(values, dtype=np.float64) * self.scale + self.offset


def fit_normalization(values, mode='minmax', axis=0):
    """Fit over `axis` of `values`; remaining axes index features."""
    values = np.asarray(values, dtype=np.float64)
    if mode == 'minmax':
        offset = values.min(axis=axis)
        scale = values.max(axis=axis) - offset
    elif mode == 'standardize':
        offset = values.mean(axis=axis)
        scale = values.std(axis=axis)
    else:
        raise ValueError('unknown normalization mode {!r}'.format(mode))
    constant = np.asarray(scale <= CONSTANT_TOLERANCE)
    scale = np.where(constant, 1.0, scale)
    return NormalizationState(mode, offset, scale, constant)


def target_normalization_mode(target_name):
    return 'standardize' if target_name == 'tmp2m' else 'minmax'


def nearest_index(missing, sources=None):
    """Flat id of the nearest source cell for every cell of a (H, W) grid.

    Sources default to the non-missing cells. Distance is Euclidean in cell
    coordinates; ties go to the smaller flat id.
    """
    missing = np.asarray(missing, dtype=bool)
    if sources is None:
        sources = ~missing
    source_ids = np.flatnonzero(np.asarray(sources, dtype=bool))
    if not len(source_ids):
        raise exceptions.InsufficientDataError(
            'cannot fill a field with no valid cells')
    n_lon = missing.shape[1]
    index = np.arange(missing.size)
    gaps = np.flatnonzero(missing.ravel() | ~np.asarray(sources).ravel())
    if len(gaps):
        points = np.column_stack(np.divmod(gaps, n_lon))
        candidates = np.column_stack(np.divmod(source_ids, n_lon))
        # argmin returns the first minimum, i.e. the smallest flat id
        nearest = np.argmin(distance.cdist(points, candidates), axis=1)
        index[gaps] = source_ids[nearest]
    return index.reshape(missing.shape)


def nearest_fill(field, mask=None):
    """Copy of `field` with every missing cell set from its nearest valid cell.

    With a mask, only non-missing land cells act as sources.
    """
    sources = ~field.missing
    if mask is not None:
        sources = sources & mask.is_land
    index = nearest_index(field.missing, sources)
    values = field.values.ravel()[index.ravel()].reshape(field.values.shape)
    return grid_module.SpatialField(field.grid, values,
                                    np.zeros(field.grid.shape, dtype=bool))


def fill_stack(values, missing, sources=None):
    """nearest_fill over a (..., H, W) stack sharing one fill map per field."""
    values = np.array(values, dtype=np.float64)
    missing = np.asarray(missing, dtype=bool)
    flat_values = values.reshape((-1,) + values.shape[-2:])
    flat_missing = np.broadcast_to(missing, values.shape).reshape(
        flat_values.shape)
    cache = {}
    for n, (field, gaps) in enumerate(zip(flat_values, flat_missing)):
        if not gaps.any() and sources is None:
            continue
        key = gaps.tobytes()
        if key not in cache:
            field_sources = ~gaps if sources is None else ~gaps & sources
            cache[key] = nearest_index(gaps, field_sources).ravel()
        flat_values[n] = field.ravel()[cache[key]].reshape(field.shape)
    return flat_values.reshape(values.shape)


def positional_encoding(coord, d=12):
    """Interleaved sin/cos encoding of one coordinate in degrees."""
    if d < 2 or d % 2:
        raise ValueError('positional encoding size must be even and >= 2, '
                         'got {}'.format(d))
    coord = np.asarray(coord, dtype=np.float64)
    frequencies = 10000.0 ** (-2.0 * np.arange(d // 2) / d)
    angles = coord[..., None] * frequencies
    encoding = np.empty(coord.shape + (d,))
    encoding[..., 0::2] = np.sin(angles)
    encoding[..., 1::2] = np.cos(angles)
    return encoding


def location_encoding(lat, lon, d=12):
    """pe(lon) ++ pe(lat), 2d values; longitude wrapped into [0, 360)."""
    return np.concatenate([positional_encoding(np.mod(lon, 360.0), d),
                           positional_encoding(lat, d)], axis=-1)


def lag_features(history, t, lags=DEFAULT_LAGS):
    """Target value `lag` months before t for every lag, or None when history
    is too short."""
    if t - max(lags) < 0:
        return None
    history = np.asarray(history)
    return np.stack([history[t - lag] for lag in lags])


def lag_support(lags=DEFAULT_LAGS):
    return max(lags) if lags else 0
