"""Small synthetic datasets shared by the tests."""
import numpy as np

from subseasonal_forecast import dataio
from subseasonal_forecast import features
from subseasonal_forecast import grid
from subseasonal_forecast import synth


def tiny_config(**changes):
    params = dict(n_lat=4, n_lon=8, months=72, n_members=4, n_sst_points=8,
                  correlation_length=1.0, seed=7)
    params.update(changes)
    return synth.SynthConfig(**params)


def tiny_dataset(**changes):
    return synth.synth_generate(tiny_config(**changes))


def tiny_views(**changes):
    return dataio.split_dataset(tiny_dataset(**changes))


def tiny_features(**changes):
    params = dict(lags=(2, 3), n_sst_components=2, pe_dim=4)
    params.update(changes)
    return features.FeatureConfig(**params)


def full_mask(n_lat, n_lon):
    spec = grid.GridSpec(n_lat, n_lon)
    return grid.LandMask(spec, np.ones(spec.shape, dtype=bool))
