"""Grid geometry, land masks and the spatio-temporal containers.

Every flat location id in the package is row-major: lat index outer, lon
index inner. Containers are immutable; arrays are stored read-only.
"""
import collections

import numpy as np

from subseasonal_forecast import exceptions


def _frozen(array, dtype=None):
    array = np.array(array, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


class GridSpec(collections.namedtuple(
        'GridSpec', ['n_lat', 'n_lon', 'lat_origin', 'lon_origin', 'step'])):
    def __new__(cls, n_lat, n_lon, lat_origin=0.0, lon_origin=0.0, step=1.0):
        if int(n_lat) < 1 or int(n_lon) < 1:
            raise exceptions.InvalidMaskError(
                'grid needs n_lat >= 1 and n_lon >= 1, got {}x{}'.format(
                    n_lat, n_lon))
        if not step > 0:
            raise exceptions.InvalidMaskError(
                'grid step must be positive, got {}'.format(step))
        return super().__new__(cls, int(n_lat), int(n_lon), float(lat_origin),
                               float(lon_origin), float(step))

    @property
    def shape(self):
        return self.n_lat, self.n_lon

    @property
    def size(self):
        return self.n_lat * self.n_lon

    def latitudes(self):
        return self.lat_origin + np.arange(self.n_lat) * self.step

    def longitudes(self):
        """Cell longitudes wrapped into [0, 360)."""
        return np.mod(self.lon_origin + np.arange(self.n_lon) * self.step,
                      360.0)

    def coordinates(self, location):
        i, j = cell_coordinates(self, location)
        return self.latitudes()[i], self.longitudes()[j]

    def to_dict(self):
        return dict(self._asdict())


def cell_index(grid, lat_idx, lon_idx):
    if not 0 <= lat_idx < grid.n_lat:
        raise exceptions.GridIndexError('lat', lat_idx, grid.n_lat)
    if not 0 <= lon_idx < grid.n_lon:
        raise exceptions.GridIndexError('lon', lon_idx, grid.n_lon)
    return int(lat_idx) * grid.n_lon + int(lon_idx)


def cell_coordinates(grid, location):
    if not 0 <= location < grid.size:
        raise exceptions.GridIndexError('flat', location, grid.size)
    return divmod(int(location), grid.n_lon)


class LandMask(collections.namedtuple('LandMask', ['grid', 'is_land'])):
    def __new__(cls, grid, is_land):
        is_land = np.asarray(is_land, dtype=bool)
        if is_land.shape != grid.shape:
            raise exceptions.InvalidMaskError(
                'mask shape {} does not match grid {}'.format(
                    is_land.shape, grid.shape))
        if not is_land.any():
            raise exceptions.InvalidMaskError('mask has no land cells')
        return super().__new__(cls, grid, _frozen(is_land))

    @property
    def n_land(self):
        return int(self.is_land.sum())

    def subset(self, region):
        """Mask of land cells that are also in `region` (same grid)."""
        region = np.asarray(region, dtype=bool)
        return LandMask(self.grid, self.is_land & region)


def land_locations(mask):
    return np.flatnonzero(mask.is_land.ravel())


def land_cells(mask):
    """(lat indices, lon indices) of land cells in land_locations order."""
    return np.nonzero(mask.is_land)


class TimeIndex(collections.namedtuple(
        'TimeIndex', ['years', 'months', 'train_end', 'val_end'])):
    def __new__(cls, years, months, train_end, val_end):
        years = _frozen(years, dtype=np.int64)
        months = _frozen(months, dtype=np.int64)
        if years.shape != months.shape or years.ndim != 1 or not len(years):
            raise exceptions.SplitError('time index needs aligned, nonempty '
                                        'years and months')
        if months.min() < 1 or months.max() > 12:
            raise exceptions.SplitError('months must lie in 1..12')
        serial = years * 12 + months - 1
        if len(serial) > 1 and np.any(np.diff(serial) != 1):
            raise exceptions.SplitError(
                'time entries must be consecutive months')
        if not 0 < train_end < val_end <= len(years):
            raise exceptions.SplitError(
                'need 0 < train_end < val_end <= {}, got ({}, {})'.format(
                    len(years), train_end, val_end))
        return super().__new__(cls, years, months, int(train_end),
                               int(val_end))

    @classmethod
    def monthly(cls, start_year, start_month, length, train_end, val_end):
        serial = start_year * 12 + start_month - 1 + np.arange(length)
        return cls(serial // 12, serial % 12 + 1, train_end, val_end)

    def __len__(self):
        return len(self.years)

    def month_of(self, t):
        return self.months[t]

    def label(self, t):
        return '{:04d}-{:02d}'.format(self.years[t], self.months[t])

    def to_dict(self):
        return {
            'start': self.label(0), 'length': len(self),
            'train_end': self.train_end, 'val_end': self.val_end,
        }


class SpatialField(collections.namedtuple(
        'SpatialField', ['grid', 'values', 'missing'])):
    def __new__(cls, grid, values, missing=None):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != grid.shape:
            raise exceptions.ShapeError(
                'SpatialField', 'values shape {} != grid {}'.format(
                    values.shape, grid.shape))
        if missing is None:
            missing = ~np.isfinite(values)
        missing = np.asarray(missing, dtype=bool)
        if not np.all(np.isfinite(values[~missing])):
            raise exceptions.InvalidMaskError(
                'non-finite values outside the missing flag')
        values = np.where(missing, 0.0, values)
        return super().__new__(cls, grid, _frozen(values), _frozen(missing))


class EnsembleField(collections.namedtuple('EnsembleField', ['members'])):
    """K forecasts for one month, in member initialization order."""

    def __new__(cls, members):
        members = tuple(members)
        if not members:
            raise exceptions.InvalidMaskError('ensemble needs K >= 1')
        grid = members[0].grid
        if any(member.grid != grid for member in members):
            raise exceptions.InvalidMaskError(
                'ensemble members must share one grid')
        return super().__new__(cls, members)

    @property
    def grid(self):
        return self.members[0].grid

    def __len__(self):
        return len(self.members)

    def values(self):
        return np.stack([member.values for member in self.members])


class GriddedVariable(collections.namedtuple(
        'GriddedVariable', ['values', 'missing', 'units'])):
    """Time-indexed field stack; leading axis is time, trailing (lat, lon)."""

    def __new__(cls, values, missing=None, units=''):
        values = np.asarray(values, dtype=np.float64)
        if missing is None:
            missing = ~np.isfinite(values)
        missing = np.asarray(missing, dtype=bool)
        if missing.shape != values.shape:
            raise exceptions.ShapeError(
                'GriddedVariable', 'missing flags do not match values')
        values = np.where(missing, 0.0, values)
        return super().__new__(cls, _frozen(values), _frozen(missing),
                               str(units))

    def masked(self):
        """Values with missing cells as NaN, for nan-aware statistics."""
        return np.where(self.missing, np.nan, self.values)


class Dataset(collections.namedtuple('Dataset', [
        'grid', 'mask', 'time', 'target_name', 'target', 'ensemble',
        'covariates', 'sst', 'lead_days', 'seed'])):
    """Target y (T,H,W), ensemble u (T,K,H,W), covariates v (T,H,W) each."""

    def __new__(cls, grid, mask, time, target_name, target, ensemble,
                covariates, sst=None, lead_days=14, seed=None):
        n = len(time)
        if mask.grid != grid:
            raise exceptions.InvalidMaskError('mask grid differs from grid')
        if target.values.shape != (n,) + grid.shape:
            raise exceptions.ShapeError('Dataset', 'target must be (T,H,W)')
        if (ensemble.values.ndim != 4 or ensemble.values.shape[0] != n
                or ensemble.values.shape[2:] != grid.shape):
            raise exceptions.ShapeError('Dataset', 'ensemble must be '
                                                   '(T,K,H,W)')
        covariates = collections.OrderedDict(covariates)
        for name, variable in covariates.items():
            if variable.values.shape != (n,) + grid.shape:
                raise exceptions.ShapeError(
                    'Dataset', 'covariate {!r} must be (T,H,W)'.format(name))
        if sst is not None:
            sst = np.asarray(sst, dtype=np.float64)
            if sst.ndim != 2 or sst.shape[0] != n:
                raise exceptions.ShapeError('Dataset', 'sst must be (T,P)')
            sst = _frozen(sst)
        if target.missing[:, mask.is_land].any():
            raise exceptions.InvalidMaskError(
                'target has missing values on land cells')
        return super().__new__(cls, grid, mask, time, target_name, target,
                               ensemble, covariates, sst, int(lead_days),
                               seed)

    @property
    def n_members(self):
        return self.ensemble.values.shape[1]

    def target_field(self, t):
        return SpatialField(self.grid, self.target.values[t],
                            self.target.missing[t])

    def ensemble_field(self, t):
        return EnsembleField(
            SpatialField(self.grid, values, missing) for values, missing in
            zip(self.ensemble.values[t], self.ensemble.missing[t]))

    def land_target(self):
        """Target as (T, L) in land_locations order."""
        return self.target.values[:, self.mask.is_land]

    def land_ensemble(self):
        """Ensemble as (T, K, L)."""
        return self.ensemble.values[:, :, self.mask.is_land]
