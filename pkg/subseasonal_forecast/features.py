"""Feature catalogs and assembly for the three spatial paradigms.

Features are first built as a cube (T, F, H, W) on the full grid. The
paradigms are views of that cube:

* independent: one (T, F') matrix per land location, location columns
  dropped;
* conditional: one pooled (T*L, F) matrix, rows t-major then location;
* spatial: the cube itself, one channel stack per month.
"""
import collections
import logging

import numpy as np

from subseasonal_forecast import exceptions
from subseasonal_forecast import grid as grid_module
from subseasonal_forecast import preprocess
from subseasonal_forecast import synth
from subseasonal_forecast import utils

logger = logging.getLogger(__name__)

PARADIGMS = ('independent', 'conditional', 'spatial')
ENSEMBLE_MODES = ('full', 'mean', 'sorted')
LOCATION_MODES = ('pe', 'latlon', 'none')
GROUP_ORDER = ('ensemble', 'lags', 'covariates', 'sst', 'zeros', 'location')


class FeatureColumn(collections.namedtuple('FeatureColumn',
                                           ['name', 'source', 'group'])):
    pass


class FeatureCatalog(tuple):
    """Ordered feature columns; ensemble members are contiguous."""

    def names(self):
        return [column.name for column in self]

    def group_indices(self, *groups):
        return [i for i, column in enumerate(self) if column.group in groups]

    def without(self, *groups):
        return FeatureCatalog(c for c in self if c.group not in groups)

    def to_document(self):
        return [{'name': c.name, 'source': c.source, 'group': c.group,
                 'column': i} for i, c in enumerate(self)]

    def hash(self):
        return utils.hash_dict({'catalog': self.to_document()})


class FeatureConfig(collections.namedtuple('FeatureConfig', [
        'ensemble_mode', 'location_mode', 'use_ensemble', 'use_lags',
        'use_covariates', 'use_sst', 'lags', 'pe_dim', 'n_sst_components',
        'n_zero_features', 'availability_lag'],
        defaults=('full', 'pe', True, True, True, True,
                  preprocess.DEFAULT_LAGS, 12, 8, 0,
                  synth.AVAILABILITY_LAG))):
    def __new__(cls, *args, **kwargs):
        self = super().__new__(cls, *args, **kwargs)
        if self.ensemble_mode not in ENSEMBLE_MODES:
            raise exceptions.ConfigError(
                'unknown ensemble mode {!r}'.format(self.ensemble_mode))
        if self.location_mode not in LOCATION_MODES:
            raise exceptions.ConfigError(
                'unknown location mode {!r}'.format(self.location_mode))
        if self.pe_dim < 2 or self.pe_dim % 2:
            raise exceptions.ConfigError('pe_dim must be even and >= 2')
        return self

    def lookback(self):
        """Months of history a sample needs; earlier months are skipped."""
        lookback = 0
        if self.use_lags and self.lags:
            lookback = max(self.lags)
        if self.use_covariates or self.use_sst:
            lookback = max(lookback, self.availability_lag)
        return lookback

    def to_dict(self):
        document = dict(self._asdict())
        document['lags'] = list(self.lags)
        return document

    @classmethod
    def from_dict(cls, document):
        document = dict(document)
        document['lags'] = tuple(document.get('lags', ()))
        return cls(**document)

    def replace(self, **changes):
        return type(self)(**dict(self._asdict(), **changes))


def build_catalog(config, n_members, covariate_names, has_sst=True):
    columns = []
    if config.use_ensemble:
        if config.ensemble_mode == 'mean':
            columns.append(FeatureColumn('ens_mean', 'ensemble', 'ensemble'))
        else:
            prefix = 'ens' if config.ensemble_mode == 'full' else 'ens_sorted'
            columns.extend(FeatureColumn('{}{:02d}'.format(prefix, k + 1),
                                         'ensemble', 'ensemble')
                           for k in range(n_members))
    if config.use_lags:
        columns.extend(FeatureColumn('lag{}'.format(lag), 'target', 'lags')
                       for lag in config.lags)
    if config.use_covariates:
        columns.extend(FeatureColumn(name, 'covariate', 'covariates')
                       for name in covariate_names)
    if config.use_sst and has_sst:
        columns.extend(FeatureColumn('sst_pc{}'.format(i + 1), 'sst', 'sst')
                       for i in range(config.n_sst_components))
    columns.extend(FeatureColumn('zero{}'.format(i + 1), 'control', 'zeros')
                   for i in range(config.n_zero_features))
    if config.location_mode == 'pe':
        for axis in ('lon', 'lat'):
            columns.extend(FeatureColumn('pe_{}{}'.format(axis, i), axis,
                                         'location')
                           for i in range(config.pe_dim))
    elif config.location_mode == 'latlon':
        columns.extend([FeatureColumn('lon', 'lon', 'location'),
                        FeatureColumn('lat', 'lat', 'location')])
    return FeatureCatalog(columns)


class FeatureMatrix(collections.namedtuple(
        'FeatureMatrix', ['X', 'y', 'times', 'locations', 'catalog'])):
    """Tabular samples; `locations` are positions in land_locations order."""


class FeatureStack(collections.namedtuple(
        'FeatureStack', ['X', 'y', 'times', 'catalog', 'mask'])):
    """Per-month channel stacks: X (T, C, H, W), y (T, H, W)."""


class FeatureCube(collections.namedtuple(
        'FeatureCube', ['values', 'target', 'times', 'catalog', 'mask'])):
    """values (T, F, H, W); target (T, H, W) raw, sea cells filled."""

    def land_values(self):
        """(T, L, F) in land_locations order."""
        return np.moveaxis(self.values[:, :, self.mask.is_land], 1, 2)

    def land_target(self):
        return self.target[:, self.mask.is_land]


class FeaturePipeline:
    """Feature transforms fitted on a training view only."""

    def __init__(self, config=None):
        self.config = config or FeatureConfig()
        self.catalog = None
        self.pca = None
        self.normalization = None

    @property
    def fitted(self):
        return self.normalization is not None

    def fit(self, train_view):
        config = self.config
        self.catalog = build_catalog(config, train_view.n_members,
                                     train_view.covariate_names,
                                     train_view.has_sst)
        if config.use_sst and train_view.has_sst:
            rows = train_view.sst(train_view.indices)
            self.pca = preprocess.pca_fit(rows, config.n_sst_components)
        raw = self._raw_cube(train_view)
        if not len(raw.times):
            raise exceptions.InsufficientDataError(
                'no training month has {} months of history'.format(
                    config.lookback()))
        land = raw.values[:, :, raw.mask.is_land]
        self.normalization = preprocess.fit_normalization(
            np.moveaxis(land, 1, 2).reshape(-1, len(self.catalog)),
            'minmax')
        logger.info('fitted feature pipeline: %d features, %d training '
                    'months', len(self.catalog), len(raw.times))
        return self

    def valid_times(self, view):
        return view.indices[view.indices >= self.config.lookback()]

    def transform(self, view, normalize=True):
        if not self.fitted:
            raise exceptions.NotFittedError(
                'feature pipeline must be fitted on the training split '
                'before assembly')
        cube = self._raw_cube(view)
        if normalize:
            values = self.normalization.transform(
                np.moveaxis(cube.values, 1, -1))
            cube = cube._replace(values=np.moveaxis(values, -1, 1))
        return cube

    def _raw_cube(self, view):
        config = self.config
        times = self.valid_times(view)
        grid, mask = view.grid, view.mask
        shape = (len(times),) + grid.shape
        blocks = []
        if config.use_ensemble:
            ensemble = view.ensemble(times)
            if config.ensemble_mode == 'mean':
                ensemble = ensemble.mean(axis=1, keepdims=True)
            elif config.ensemble_mode == 'sorted':
                ensemble = np.sort(ensemble, axis=1)
            blocks.append(ensemble)
        if config.use_lags:
            lagged = np.stack([view.target(times - lag)
                               for lag in config.lags], axis=1)
            blocks.append(preprocess.fill_stack(
                lagged, ~mask.is_land, sources=mask.is_land))
        if config.use_covariates:
            available = times - config.availability_lag
            blocks.append(np.stack([
                preprocess.fill_stack(view.covariate(name, available),
                                      view.covariate_missing(name, available))
                for name in view.covariate_names], axis=1))
        if config.use_sst and view.has_sst:
            scores = preprocess.pca_transform(
                self.pca, view.sst(times - config.availability_lag))
            blocks.append(np.broadcast_to(
                scores[:, :, None, None], scores.shape + grid.shape))
        if config.n_zero_features:
            blocks.append(np.zeros((len(times), config.n_zero_features)
                                   + grid.shape))
        location = location_channels(grid, config)
        if location is not None:
            blocks.append(np.broadcast_to(location[None],
                                          (len(times),) + location.shape))
        values = (np.concatenate(blocks, axis=1) if blocks
                  else np.zeros((len(times), 0) + grid.shape))
        target = preprocess.fill_stack(view.target(times), ~mask.is_land,
                                       sources=mask.is_land)
        if values.shape[1] != len(self.catalog):
            raise exceptions.CatalogMismatchError(
                'assembled {} features for a {}-column catalog'.format(
                    values.shape[1], len(self.catalog)))
        return FeatureCube(np.ascontiguousarray(values), target, times,
                           self.catalog, mask)

    def to_document(self):
        return {'config': self.config.to_dict(),
                'catalog': self.catalog.to_document(),
                'catalog_hash': self.catalog.hash()}

    def get_state(self):
        state = self.to_document()
        state['pca'] = self.pca._asdict() if self.pca is not None else None
        state['normalization'] = self.normalization._asdict()
        return state

    @classmethod
    def from_state(cls, state):
        pipeline = cls(FeatureConfig.from_dict(state['config']))
        pipeline.catalog = FeatureCatalog(
            FeatureColumn(c['name'], c['source'], c['group'])
            for c in state['catalog'])
        if state.get('pca') is not None:
            pipeline.pca = preprocess.PcaModel(**state['pca'])
        pipeline.normalization = preprocess.NormalizationState(
            **state['normalization'])
        return pipeline


def location_channels(grid, config):
    """(C_loc, H, W) channels varying with each cell's lon/lat, or None."""
    lat = np.broadcast_to(grid.latitudes()[:, None], grid.shape)
    lon = np.broadcast_to(grid.longitudes()[None, :], grid.shape)
    if config.location_mode == 'pe':
        encoding = preprocess.location_encoding(lat, lon, config.pe_dim)
        return np.moveaxis(encoding, -1, 0)
    if config.location_mode == 'latlon':
        return np.stack([lon, lat])
    return None


def assemble(paradigm, view, pipeline, cube=None):
    """Features of `view` laid out for `paradigm`.

    independent -> {location position: FeatureMatrix} without location
    columns; conditional -> pooled FeatureMatrix; spatial -> FeatureStack.
    """
    if paradigm not in PARADIGMS:
        raise exceptions.ConfigError('unknown paradigm {!r}'.format(paradigm))
    if cube is None:
        cube = pipeline.transform(view)
    if paradigm == 'spatial':
        return FeatureStack(cube.values, cube.target, cube.times,
                            cube.catalog, cube.mask)
    land_values = cube.land_values()
    land_target = cube.land_target()
    n_times, n_land, n_features = land_values.shape
    if paradigm == 'conditional':
        return FeatureMatrix(
            land_values.reshape(n_times * n_land, n_features),
            land_target.reshape(-1), np.repeat(cube.times, n_land),
            np.tile(np.arange(n_land), n_times), cube.catalog)
    keep = cube.catalog.group_indices(*[g for g in GROUP_ORDER
                                        if g != 'location'])
    catalog = FeatureCatalog(cube.catalog[i] for i in keep)
    return collections.OrderedDict(
        (l, FeatureMatrix(land_values[:, l, keep], land_target[:, l],
                          cube.times, np.full(n_times, l), catalog))
        for l in range(n_land))


def stack_to_land(values, mask):
    """(T, H, W) maps -> (T, L)."""
    return np.asarray(values)[:, mask.is_land]


def land_to_maps(values, mask, fill=np.nan):
    """(T, L) -> (T, H, W) with `fill` over the sea."""
    values = np.asarray(values)
    maps = np.full((values.shape[0],) + mask.grid.shape + values.shape[2:],
                   fill, dtype=np.float64)
    maps[:, mask.is_land] = values
    return maps


def land_coordinates(mask):
    lat_idx, lon_idx = grid_module.land_cells(mask)
    return (mask.grid.latitudes()[lat_idx],
            mask.grid.longitudes()[lon_idx])
