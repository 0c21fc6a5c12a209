"""Synthetic gridded hindcast/forecast data.

Truth is a seasonal cycle plus a slowly evolving latent anomaly and a small
trend. Covariates and SSTs are noisy views of the latent state, ensemble
members are truth plus a fixed per-member bias pattern plus noise. During the
test period every member is shifted by ``drift``.
"""
import collections
import logging

import numpy as np
from scipy import ndimage

from subseasonal_forecast import exceptions
from subseasonal_forecast import grid as grid_module

logger = logging.getLogger(__name__)

AVAILABILITY_LAG = 2

TARGETS = {
    # name: (units, base level, other covariate)
    'precip': ('mm', 2.5, 'tmp2m'),
    'tmp2m': ('degC', 12.0, 'precip'),
}
COVARIATE_UNITS = {'rhum': '%', 'slp': 'Pa', 'hgt500': 'm', 'tmp2m': 'degC',
                   'precip': 'mm'}
COVARIATE_LEVELS = {'rhum': 70.0, 'slp': 101325.0, 'hgt500': 5600.0,
                    'tmp2m': 12.0, 'precip': 2.5}
COVARIATE_SCALES = {'rhum': 5.0, 'slp': 300.0, 'hgt500': 40.0, 'tmp2m': 2.0,
                    'precip': 0.8}


SYNTH_DEFAULTS = collections.OrderedDict([
    ('n_lat', 16),
    ('n_lon', 32),
    ('lat_origin', 25.0),
    ('lon_origin', 235.0),
    ('step', 1.0),
    ('land_fraction', 0.6),
    ('months', 432),
    ('start_year', 1985),
    ('start_month', 1),
    ('train_end', None),
    ('val_end', None),
    ('target', 'precip'),
    ('n_members', 24),
    # per-member bias amplitudes; None spreads bias_amplitude over members
    ('member_biases', None),
    ('bias_amplitude', 1.5),
    ('bias_spatial', 0.5),
    # scalar, or one noise scale per member
    ('member_noise', 0.6),
    ('seasonal_amplitude', 1.5),
    ('anomaly_scale', 1.0),
    ('persistence', 0.8),
    ('trend', 0.02),
    ('covariate_noise', 0.3),
    ('n_sst_points', 64),
    ('correlation_length', 2.0),
    ('drift', 0.0),
    ('lead_days', 14),
    ('seed', 7),
])


class SynthConfig(collections.namedtuple('SynthConfig', list(SYNTH_DEFAULTS),
                                         defaults=SYNTH_DEFAULTS.values())):
    def __new__(cls, *args, **kwargs):
        self = super().__new__(cls, *args, **kwargs)
        if self.target not in TARGETS:
            raise exceptions.ConfigError(
                'unknown target {!r}; expected one of {}'.format(
                    self.target, ', '.join(sorted(TARGETS))))
        if self.n_members < 1:
            raise exceptions.ConfigError('need at least one ensemble member')
        if (self.member_biases is not None
                and len(self.member_biases) != self.n_members):
            raise exceptions.ConfigError(
                'member_biases needs {} entries, got {}'.format(
                    self.n_members, len(self.member_biases)))
        if (not np.isscalar(self.member_noise)
                and len(self.member_noise) != self.n_members):
            raise exceptions.ConfigError(
                'member_noise needs 1 or {} entries, got {}'.format(
                    self.n_members, len(self.member_noise)))
        if not 0 < self.land_fraction <= 1:
            raise exceptions.ConfigError('land_fraction must be in (0, 1]')
        return self

    def split(self):
        """(train_end, val_end); defaults keep the 249/63/120 proportions."""
        train_end, val_end = self.train_end, self.val_end
        if train_end is None:
            train_end = max(1, int(round(self.months * 249 / 432)))
        if val_end is None:
            val_end = max(train_end + 1,
                          int(round(self.months * 312 / 432)))
        val_end = min(val_end, self.months - 1)
        return min(train_end, val_end - 1), val_end

    def biases(self):
        if self.member_biases is not None:
            return np.asarray(self.member_biases, dtype=np.float64)
        if self.n_members == 1:
            return np.zeros(1)
        # zero-sum amplitudes in an order unrelated to their rank
        levels = np.linspace(-1.0, 1.0, self.n_members) * self.bias_amplitude
        order = np.random.default_rng(self.seed).permutation(self.n_members)
        return levels[order]

    def noise_scales(self):
        return np.broadcast_to(np.asarray(self.member_noise, dtype=np.float64),
                               (self.n_members,))

    def to_dict(self):
        document = dict(self._asdict())
        if document['member_biases'] is not None:
            document['member_biases'] = list(document['member_biases'])
        if not np.isscalar(self.member_noise):
            document['member_noise'] = list(self.member_noise)
        return document

    @classmethod
    def from_dict(cls, document):
        document = dict(document)
        if document.get('member_biases') is not None:
            document['member_biases'] = tuple(document['member_biases'])
        if isinstance(document.get('member_noise'), list):
            document['member_noise'] = tuple(document['member_noise'])
        return cls(**document)


def gaussian_kernel(correlation_length):
    radius = max(1, int(np.ceil(3 * correlation_length)))
    offsets = np.arange(-radius, radius + 1)
    kernel_1d = np.exp(-0.5 * (offsets / max(correlation_length, 1e-6)) ** 2)
    kernel = np.outer(kernel_1d, kernel_1d)
    return kernel / np.sqrt(np.sum(kernel ** 2))


def smooth_noise(rng, shape, correlation_length):
    """Unit-variance random fields; the last two axes are (lat, lon)."""
    white = rng.standard_normal(shape)
    if correlation_length <= 0:
        return white
    kernel = gaussian_kernel(correlation_length)
    kernel = kernel.reshape((1,) * (len(shape) - 2) + kernel.shape)
    return ndimage.convolve(white, kernel, mode='reflect')


def synth_mask(rng, grid, land_fraction, correlation_length):
    field = smooth_noise(rng, grid.shape, correlation_length)
    threshold = np.quantile(field, 1.0 - land_fraction)
    is_land = field >= threshold
    if not is_land.any():
        is_land.flat[np.argmax(field)] = True
    return grid_module.LandMask(grid, is_land)


def synth_generate(cfg):
    if cfg.months < AVAILABILITY_LAG + 1:
        raise exceptions.InsufficientDataError(
            'need at least {} months to honour the {}-month availability '
            'lag, got {}'.format(AVAILABILITY_LAG + 1, AVAILABILITY_LAG,
                                 cfg.months))
    streams = [np.random.default_rng(s) for s in
               np.random.SeedSequence(cfg.seed).spawn(8)]
    (mask_rng, clim_rng, latent_rng, cov_rng, sst_rng, bias_rng,
     member_rng, target_rng) = streams

    grid = grid_module.GridSpec(cfg.n_lat, cfg.n_lon, cfg.lat_origin,
                                cfg.lon_origin, cfg.step)
    mask = synth_mask(mask_rng, grid, cfg.land_fraction,
                      cfg.correlation_length * 2)
    train_end, val_end = cfg.split()
    time = grid_module.TimeIndex.monthly(cfg.start_year, cfg.start_month,
                                         cfg.months, train_end, val_end)
    shape = (cfg.months,) + grid.shape
    length = cfg.correlation_length

    units, base, other = TARGETS[cfg.target]
    phase = 2 * np.pi * (time.months - 1) / 12.0
    cos_map, sin_map = smooth_noise(clim_rng, (2,) + grid.shape, length)
    level_map = base + 0.5 * smooth_noise(clim_rng, grid.shape, length)
    seasonal = cfg.seasonal_amplitude * (
        np.cos(phase)[:, None, None] * (1.0 + 0.3 * cos_map)
        + np.sin(phase)[:, None, None] * 0.3 * sin_map)

    # AR(1) latent anomaly; covariates at t - lag see the state driving t
    innovations = smooth_noise(latent_rng, shape, length)
    latent = np.empty(shape)
    latent[0] = innovations[0]
    scale = np.sqrt(1.0 - cfg.persistence ** 2)
    for t in range(1, cfg.months):
        latent[t] = cfg.persistence * latent[t - 1] + scale * innovations[t]

    trend = cfg.trend * (np.arange(cfg.months) / 12.0)
    truth = (level_map[None] + seasonal + cfg.anomaly_scale * latent
             + trend[:, None, None])
    truth = truth + 0.1 * cfg.anomaly_scale * target_rng.standard_normal(
        shape)
    if cfg.target == 'precip':
        truth = np.maximum(truth, 0.0)
    target_missing = np.broadcast_to(~mask.is_land, shape)
    target = grid_module.GriddedVariable(truth, target_missing, units=units)

    covariates = collections.OrderedDict()
    for p, name in enumerate(['rhum', 'slp', 'hgt500', other]):
        loading = (-1.0) ** p * (1.0 - 0.15 * p)
        signal = _lead(latent, AVAILABILITY_LAG) * loading
        noise = cfg.covariate_noise * smooth_noise(cov_rng, shape, length)
        covariates[name] = grid_module.GriddedVariable(
            COVARIATE_LEVELS[name] + COVARIATE_SCALES[name] * (signal
                                                               + noise),
            units=COVARIATE_UNITS[name])

    projection = sst_rng.standard_normal((cfg.n_sst_points, grid.size))
    projection /= np.sqrt(grid.size)
    sst = (_lead(latent, AVAILABILITY_LAG).reshape(cfg.months, -1)
           @ projection.T)
    sst = 15.0 + 2.0 * np.cos(phase)[:, None] + sst + 0.1 * (
        sst_rng.standard_normal(sst.shape))

    bias_pattern = 1.0 + cfg.bias_spatial * np.tanh(
        smooth_noise(bias_rng, grid.shape, length))
    biases = cfg.biases()[:, None, None] * bias_pattern[None]
    noise = cfg.noise_scales()[None, :, None, None] * smooth_noise(
        member_rng, (cfg.months, cfg.n_members) + grid.shape, length)
    members = truth[:, None] + biases[None] + noise
    if cfg.drift:
        members[val_end:] += cfg.drift
    ensemble = grid_module.GriddedVariable(members, units=units)

    logger.info('generated synthetic %s dataset: %dx%d grid, %d land cells, '
                '%d months, K=%d, drift=%g', cfg.target, cfg.n_lat,
                cfg.n_lon, mask.n_land, cfg.months, cfg.n_members, cfg.drift)
    return grid_module.Dataset(grid, mask, time, cfg.target, target,
                               ensemble, covariates, sst=sst,
                               lead_days=cfg.lead_days, seed=cfg.seed)


def _lead(series, lag):
    """series[t + lag] at position t, edge-padded at the end.

    A covariate observed at month t - lag then reflects the state at t.
    """
    out = np.empty_like(series)
    out[:-lag] = series[lag:]
    out[-lag:] = series[-1]
    return out
