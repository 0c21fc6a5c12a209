"""Dataset directories, chronological splits and split views.

A dataset directory holds ``manifest.json``, ``land_mask.csv`` and one CSV
grid per (variable, month) under ``<variable>/<YYYY-MM>.csv``. Values are
written with 17 significant digits; missing cells are the token ``NA``.
"""
import collections
import json
import logging
import os

import numpy as np

from subseasonal_forecast import exceptions
from subseasonal_forecast import grid as grid_module
from subseasonal_forecast import utils

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MISSING_TOKEN = 'NA'
ROLES = ('target', 'ensemble-member', 'covariate', 'sst')


def save_dataset(ds, path, synth_config=None):
    os.makedirs(path, exist_ok=True)
    catalog = [{'name': ds.target_name, 'units': ds.target.units,
                'role': 'target'}]
    for k in range(ds.n_members):
        catalog.append({'name': member_name(k), 'units': ds.ensemble.units,
                        'role': 'ensemble-member', 'member': k})
    for name, variable in ds.covariates.items():
        catalog.append({'name': name, 'units': variable.units,
                        'role': 'covariate'})
    if ds.sst is not None:
        catalog.append({'name': 'sst', 'units': 'degC', 'role': 'sst',
                        'points': ds.sst.shape[1]})
    manifest = {
        'format_version': FORMAT_VERSION,
        'grid': ds.grid.to_dict(),
        'time': ds.time.to_dict(),
        'variables': catalog,
        'lead_days': ds.lead_days,
        'seed': ds.seed,
        'synth': synth_config,
    }
    write_grid(os.path.join(path, 'land_mask.csv'),
                ds.mask.is_land.astype(np.float64), None, fmt='%d')
    for t in range(len(ds.time)):
        label = ds.time.label(t)
        write_grid(_grid_path(path, ds.target_name, label),
                    ds.target.values[t], ds.target.missing[t])
        for k in range(ds.n_members):
            write_grid(_grid_path(path, member_name(k), label),
                        ds.ensemble.values[t, k], ds.ensemble.missing[t, k])
        for name, variable in ds.covariates.items():
            write_grid(_grid_path(path, name, label), variable.values[t],
                        variable.missing[t])
        if ds.sst is not None:
            write_grid(_grid_path(path, 'sst', label), ds.sst[t][None, :],
                        None)
    manifest['hash'] = utils.hash_dict(manifest)
    utils.dump_json(manifest, os.path.join(path, 'manifest.json'))
    logger.info('saved dataset (%d months, %d members) to %s',
                len(ds.time), ds.n_members, path)


def load_dataset(path):
    manifest = read_manifest(path)
    grid = grid_module.GridSpec(**manifest['grid'])
    time_doc = manifest['time']
    year, month = (int(part) for part in time_doc['start'].split('-'))
    time = grid_module.TimeIndex.monthly(
        year, month, time_doc['length'], time_doc['train_end'],
        time_doc['val_end'])
    is_land, _ = read_grid(os.path.join(path, 'land_mask.csv'), grid.shape)
    mask = grid_module.LandMask(grid, is_land.astype(bool))
    labels = [time.label(t) for t in range(len(time))]

    def read_variable(name, shape=grid.shape):
        fields = [read_grid(_grid_path(path, name, label), shape)
                  for label in labels]
        return (np.stack([values for values, _ in fields]),
                np.stack([missing for _, missing in fields]))

    catalog = manifest['variables']
    target_entry = next(e for e in catalog if e['role'] == 'target')
    target = grid_module.GriddedVariable(
        *read_variable(target_entry['name']), units=target_entry['units'])
    members = sorted((e for e in catalog if e['role'] == 'ensemble-member'),
                     key=lambda e: e['member'])
    member_fields = [read_variable(e['name']) for e in members]
    ensemble = grid_module.GriddedVariable(
        np.stack([values for values, _ in member_fields], axis=1),
        np.stack([missing for _, missing in member_fields], axis=1),
        units=members[0]['units'] if members else '')
    covariates = collections.OrderedDict()
    for entry in catalog:
        if entry['role'] == 'covariate':
            covariates[entry['name']] = grid_module.GriddedVariable(
                *read_variable(entry['name']), units=entry['units'])
    sst = None
    sst_entry = next((e for e in catalog if e['role'] == 'sst'), None)
    if sst_entry is not None:
        sst, _ = read_variable('sst', (1, sst_entry['points']))
        sst = sst[:, 0, :]
    logger.info('loaded dataset %s (%d months, %d land cells)', path,
                len(time), mask.n_land)
    return grid_module.Dataset(
        grid, mask, time, target_entry['name'], target, ensemble, covariates,
        sst=sst, lead_days=manifest['lead_days'], seed=manifest['seed'])


def read_manifest(path):
    manifest_path = os.path.join(path, 'manifest.json')
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except FileNotFoundError:
        raise exceptions.TruncatedFileError(
            'missing manifest: {}'.format(manifest_path))
    except ValueError as e:
        raise exceptions.TruncatedFileError(
            'unreadable manifest {}: {}'.format(manifest_path, e))
    version = manifest.get('format_version')
    if version != FORMAT_VERSION:
        raise exceptions.ManifestVersionError(
            'unsupported format version {!r} (expected {})'.format(
                version, FORMAT_VERSION))
    validate_catalog(manifest.get('variables', []))
    return manifest


def validate_catalog(catalog):
    names = [entry['name'] for entry in catalog]
    duplicates = sorted(n for n, c in collections.Counter(names).items()
                        if c > 1)
    if duplicates:
        raise exceptions.CatalogError(
            'duplicate variable names: {}'.format(', '.join(duplicates)))
    unknown = [e['name'] for e in catalog if e.get('role') not in ROLES]
    if unknown:
        raise exceptions.CatalogError(
            'variables with unknown role: {}'.format(', '.join(unknown)))
    targets = [e['name'] for e in catalog if e['role'] == 'target']
    if len(targets) != 1:
        raise exceptions.CatalogError(
            'exactly one target variable required, found {}'.format(
                len(targets)))
    members = sorted(e.get('member', -1) for e in catalog
                     if e['role'] == 'ensemble-member')
    if members != list(range(len(members))):
        raise exceptions.CatalogError(
            'ensemble members must be numbered 0..K-1 without gaps')


def member_name(k):
    return 'member{:02d}'.format(k + 1)


def _grid_path(path, name, label):
    return os.path.join(path, name, '{}.csv'.format(label))


def write_grid(path, values, missing, fmt='%.17g'):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    values = np.atleast_2d(values)
    with open(path, 'w') as f:
        for i, row in enumerate(values):
            cells = [fmt % value for value in row]
            if missing is not None:
                cells = [MISSING_TOKEN if missing[i, j] else cell
                         for j, cell in enumerate(cells)]
            f.write(','.join(cells))
            f.write('\n')


def read_grid(path, shape):
    if not os.path.exists(path):
        raise exceptions.TruncatedFileError('missing grid file: ' + path)
    try:
        values = np.genfromtxt(path, delimiter=',', dtype=np.float64,
                               missing_values=MISSING_TOKEN,
                               filling_values=np.nan, ndmin=2)
    except ValueError as e:
        raise exceptions.TruncatedFileError('{}: {}'.format(path, e))
    if values.size == np.prod(shape) and 1 in shape:
        values = values.reshape(shape)
    if values.shape != tuple(shape):
        raise exceptions.TruncatedFileError(
            '{}: expected {} cells, found {}'.format(path, shape,
                                                     values.shape))
    missing = np.isnan(values)
    return np.where(missing, 0.0, values), missing


class SplitView:
    """Read access to a dataset restricted to times before `horizon`.

    `indices` are the months the view forecasts; feature lags may reach back
    to any earlier month, but nothing at or after `horizon` is readable.
    """

    def __init__(self, dataset, name, indices, horizon):
        self._dataset = dataset
        self.name = name
        self.indices = np.asarray(indices, dtype=np.int64)
        self.horizon = int(horizon)
        if len(self.indices) and self.indices.max() >= self.horizon:
            raise exceptions.LeakageError(
                '{} view forecasts months beyond its horizon'.format(name))

    def __len__(self):
        return len(self.indices)

    def __repr__(self):
        return 'SplitView({!r}, {} months, horizon={})'.format(
            self.name, len(self), self.horizon)

    @property
    def grid(self):
        return self._dataset.grid

    @property
    def mask(self):
        return self._dataset.mask

    @property
    def time(self):
        return self._dataset.time

    @property
    def target_name(self):
        return self._dataset.target_name

    @property
    def n_members(self):
        return self._dataset.n_members

    @property
    def covariate_names(self):
        return list(self._dataset.covariates)

    @property
    def has_sst(self):
        return self._dataset.sst is not None

    def _check(self, t):
        t = np.asarray(t, dtype=np.int64)
        if t.size and (t.max() >= self.horizon or t.min() < 0):
            raise exceptions.LeakageError(
                '{} view read month index {} outside [0, {})'.format(
                    self.name, int(t.max() if t.max() >= self.horizon
                                   else t.min()), self.horizon))
        return t

    def target(self, t):
        return self._dataset.target.values[self._check(t)]

    def target_missing(self, t):
        return self._dataset.target.missing[self._check(t)]

    def ensemble(self, t):
        return self._dataset.ensemble.values[self._check(t)]

    def covariate(self, name, t):
        return self._dataset.covariates[name].values[self._check(t)]

    def covariate_missing(self, name, t):
        return self._dataset.covariates[name].missing[self._check(t)]

    def sst(self, t):
        return self._dataset.sst[self._check(t)]

    def months(self, t=None):
        return self._dataset.time.months[self.indices if t is None else t]

    def sub_view(self, indices, name=None, horizon=None):
        """View over `indices`; horizon defaults to max(indices) + 1."""
        indices = np.asarray(indices, dtype=np.int64)
        if horizon is None:
            horizon = int(indices.max()) + 1 if len(indices) else 0
        return SplitView(self._dataset, name or self.name, indices,
                         min(int(horizon), self.horizon))

    def head(self, n, name=None):
        return self.sub_view(self.indices[:n], name=name)

    def tail(self, n, name=None):
        return self.sub_view(self.indices[-n:], name=name)


def split_dataset(ds):
    train_end, val_end = ds.time.train_end, ds.time.val_end
    n = len(ds.time)
    if not 0 < train_end < val_end < n:
        raise exceptions.SplitError(
            'degenerate split ({}, {}) on {} months'.format(train_end,
                                                            val_end, n))
    return (SplitView(ds, 'train', np.arange(0, train_end), train_end),
            SplitView(ds, 'val', np.arange(train_end, val_end), val_end),
            SplitView(ds, 'test', np.arange(val_end, n), n))


def with_split(ds, train_end, val_end):
    """Copy of `ds` with new split boundaries."""
    time = grid_module.TimeIndex(ds.time.years, ds.time.months, train_end,
                                 val_end)
    return ds._replace(time=time)
