"""Model checkpoints: one ``.npz`` of named arrays plus a JSON document.

Nested predictor state is flattened: arrays are stored under their path
(``forests/pooled/trees/0/feature``) and replaced in the JSON document by
``{"__array__": path}``.
"""
import json
import logging

import numpy as np

from subseasonal_forecast import exceptions
from subseasonal_forecast import trainers
from subseasonal_forecast import utils

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
META_KEY = '__meta__'
ARRAY_MARKER = '__array__'


def _flatten(state, path, arrays):
    if isinstance(state, np.ndarray):
        arrays[path] = state
        return {ARRAY_MARKER: path}
    if isinstance(state, dict):
        return {str(key): _flatten(value, '{}/{}'.format(path, key), arrays)
                for key, value in state.items()}
    if isinstance(state, (list, tuple)):
        return [_flatten(value, '{}/{}'.format(path, i), arrays)
                for i, value in enumerate(state)]
    if isinstance(state, np.generic):
        return state.item()
    return state


def _unflatten(document, arrays):
    if isinstance(document, dict):
        if set(document) == {ARRAY_MARKER}:
            return arrays[document[ARRAY_MARKER]]
        return {key: _unflatten(value, arrays)
                for key, value in document.items()}
    if isinstance(document, list):
        return [_unflatten(value, arrays) for value in document]
    return document


def save_checkpoint(path, predictor, spec, metadata=None):
    """Write `predictor` and the spec it was trained from; returns the
    content hash of the checkpoint."""
    arrays = {}
    state = _flatten(predictor.get_state(), 'state', arrays)
    document = {
        'format_version': FORMAT_VERSION,
        'spec': spec.to_dict(),
        'catalog_hash': predictor.catalog_hash(),
        'config_hash': utils.hash_dict(spec.to_dict()),
        'seed': spec.seed,
        'failures': {str(k): v for k, v in predictor.failures.items()},
        'metadata': metadata or {},
        'state': state,
    }
    content_hash = utils.hash_dict({
        'document': document,
        'arrays': {name: utils.hash_arrays(value)
                   for name, value in arrays.items()}})
    document['hash'] = content_hash
    meta = json.dumps(document, sort_keys=True, default=utils.json_default)
    with open(path, 'wb') as f:
        np.savez(f, **{META_KEY: np.array(meta)}, **arrays)
    logger.info('saved %s checkpoint to %s', spec.model_id, path)
    return content_hash


def load_checkpoint(path):
    """(predictor, spec, document) from a checkpoint file."""
    try:
        with np.load(path, allow_pickle=False) as archive:
            arrays = {name: archive[name] for name in archive.files}
    except (OSError, ValueError) as e:
        raise exceptions.TruncatedFileError(
            'unreadable checkpoint {}: {}'.format(path, e))
    if META_KEY not in arrays:
        raise exceptions.TruncatedFileError(
            'checkpoint {} has no metadata'.format(path))
    document = json.loads(str(arrays.pop(META_KEY)))
    if document.get('format_version') != FORMAT_VERSION:
        raise exceptions.ManifestVersionError(
            'unsupported checkpoint version {!r}'.format(
                document.get('format_version')))
    spec = trainers.ModelSpec.from_dict(document['spec'])
    predictor = trainers.predictor_from_state(
        _unflatten(document['state'], arrays))
    return predictor, spec, document


def check_catalog(document, spec, view):
    """Refuse a checkpoint whose features differ from what `view` yields."""
    expected = trainers.expected_catalog_hash(spec, view)
    if document['catalog_hash'] != expected:
        raise exceptions.CatalogMismatchError(
            'checkpoint feature catalog {} does not match the dataset '
            'catalog {}'.format(document['catalog_hash'][:12], expected[:12]))
