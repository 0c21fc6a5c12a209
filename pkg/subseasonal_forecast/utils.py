import contextlib
import hashlib
import json
import logging

import joblib
import numpy as np

from subseasonal_forecast import configuration

logger = logging.getLogger(__name__)


def hash_dict(dictionary):
    message_json = json.dumps(
        dictionary, indent=None, ensure_ascii=True, separators=(', ', ': '),
        sort_keys=True, default=json_default)
    sha1 = hashlib.sha1()
    sha1.update(message_json.encode('ascii'))
    return sha1.hexdigest()


def hash_arrays(*arrays):
    sha1 = hashlib.sha1()
    for array in arrays:
        array = np.ascontiguousarray(array)
        sha1.update(str(array.dtype).encode('ascii'))
        sha1.update(str(array.shape).encode('ascii'))
        sha1.update(array.tobytes())
    return sha1.hexdigest()


def json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    raise TypeError('not JSON serializable: {!r}'.format(type(value)))


def dump_json(document, path):
    with open(path, 'w') as f:
        json.dump(document, f, indent=2, sort_keys=True,
                  default=json_default)
        f.write('\n')


def derive_seed(seed, *keys):
    """Stable child seed for (seed, keys); independent of thread scheduling."""
    entropy = [int(seed)] + [int(k) if isinstance(k, (int, np.integer))
                             else int(hash_dict(k)[:8], 16) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def resolve_threads(threads=None):
    if threads is None:
        threads = configuration['threads']
    threads = max(1, int(threads))
    if threads > 1:
        logger.warning('running with %d threads; results are not guaranteed '
                       'to be bit-reproducible', threads)
    return threads


def parallel_map(function, items, threads=None):
    """Apply `function` to every item, preserving input order."""
    items = list(items)
    threads = resolve_threads(threads)
    if threads == 1 or len(items) < 2:
        return [function(item) for item in items]
    return joblib.Parallel(n_jobs=threads, prefer='threads')(
        joblib.delayed(function)(item) for item in items)


@contextlib.contextmanager
def logger_level_to_error(logger_name):
    logger = logging.getLogger(logger_name)
    level = logger.level
    logger.setLevel(logging.ERROR)
    try:
        yield
    finally:
        logger.setLevel(level)
