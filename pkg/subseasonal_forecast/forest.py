"""CART random forests and quantile regression forests.

Trees are flat node arrays. A sample goes left when x[feature] <= threshold.
Every regression tree keeps the in-bag training ids of each leaf (with
bootstrap multiplicity), so any regression forest answers quantile queries.
"""
import collections
import logging

import numpy as np

from subseasonal_forecast import exceptions
from subseasonal_forecast import linear
from subseasonal_forecast import utils

logger = logging.getLogger(__name__)

LEAF = -1
QUANTILE_TOLERANCE = 1e-9


class ForestParams(collections.namedtuple('ForestParams', [
        'n_trees', 'max_features', 'min_samples_split', 'min_samples_leaf',
        'max_depth', 'bootstrap', 'seed'],
        defaults=(100, None, 2, 1, None, True, 0))):
    def __new__(cls, *args, **kwargs):
        self = super().__new__(cls, *args, **kwargs)
        if self.n_trees < 1:
            raise exceptions.ConfigError('a forest needs n_trees >= 1')
        if self.min_samples_split < 2:
            raise exceptions.ConfigError('min_samples_split must be >= 2')
        return self

    def features_per_split(self, n_features, task):
        rule = self.max_features
        if rule is None:
            rule = 'all' if task == 'regression' else 'sqrt'
        if rule == 'all':
            return n_features
        if rule == 'sqrt':
            return max(1, int(np.floor(np.sqrt(n_features))))
        if isinstance(rule, float):
            return max(1, int(np.floor(rule * n_features)))
        return max(1, min(int(rule), n_features))

    def to_dict(self):
        return dict(self._asdict())


class Tree(collections.namedtuple('Tree', [
        'feature', 'threshold', 'left', 'right', 'value', 'n_node_samples',
        'leaf_ptr', 'leaf_samples', 'in_bag'])):
    """`value` is (nodes,) for regression, (nodes, classes) frequencies.

    Samples of leaf node k are leaf_samples[leaf_ptr[k]:leaf_ptr[k + 1]].
    """

    @property
    def n_nodes(self):
        return len(self.feature)

    def apply(self, X):
        nodes = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[nodes] != LEAF)
        while len(active):
            current = nodes[active]
            go_left = (X[active, self.feature[current]]
                       <= self.threshold[current])
            nodes[active] = np.where(go_left, self.left[current],
                                     self.right[current])
            active = active[self.feature[nodes[active]] != LEAF]
        return nodes

    def leaf_members(self, node):
        return self.leaf_samples[self.leaf_ptr[node]:self.leaf_ptr[node + 1]]


class Forest(collections.namedtuple('Forest', [
        'trees', 'params', 'task', 'n_features', 'classes', 'y_train'])):
    @property
    def n_trees(self):
        return len(self.trees)

    def check(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise exceptions.ShapeError(
                'Forest', 'expected {} features, got {}'.format(
                    self.n_features, X.shape[1]))
        return X


def _split_scores(ys, task, n_classes):
    """Child impurity for every split position; ys sorted (n, m)."""
    n = len(ys)
    left_n = np.arange(1, n, dtype=np.float64)[:, None]
    right_n = n - left_n
    if task == 'regression':
        ys = ys - ys.mean(axis=0)
        csum = np.cumsum(ys, axis=0)[:-1]
        csq = np.cumsum(ys ** 2, axis=0)[:-1]
        total, total_sq = ys.sum(axis=0), (ys ** 2).sum(axis=0)
        left = csq - csum ** 2 / left_n
        right = (total_sq - csq) - (total - csum) ** 2 / right_n
        return left + right
    onehot = np.eye(n_classes)[ys]
    counts = np.cumsum(onehot, axis=0)[:-1]
    totals = onehot.sum(axis=0)
    left = left_n * (1.0 - np.sum((counts / left_n[..., None]) ** 2,
                                  axis=-1))
    right_counts = totals - counts
    right = right_n * (1.0 - np.sum(
        (right_counts / right_n[..., None]) ** 2, axis=-1))
    return left + right


def best_split(X, y, features, task, n_classes, min_samples_leaf=1):
    """(feature, threshold) minimising child impurity, or None.

    Ties go to the lower feature index, then the lower threshold.
    """
    features = np.sort(np.asarray(features))
    columns = X[:, features]
    order = np.argsort(columns, axis=0, kind='stable')
    xs = np.take_along_axis(columns, order, axis=0)
    ys = y[order]
    scores = _split_scores(ys, task, n_classes)
    valid = xs[:-1] < xs[1:]
    if min_samples_leaf > 1:
        position = np.arange(1, len(y))[:, None]
        valid &= ((position >= min_samples_leaf)
                  & (len(y) - position >= min_samples_leaf))
    if not valid.any():
        return None
    scores = np.where(valid, scores, np.inf)
    # feature-major flattening makes argmin honour the tie rule
    flat = np.argmin(scores.T)
    f, i = divmod(int(flat), scores.shape[0])
    low, high = xs[i, f], xs[i + 1, f]
    threshold = low + (high - low) / 2.0
    if not low <= threshold < high:
        threshold = low
    return int(features[f]), float(threshold)


def grow_tree(X, y, params, task, n_classes, seed):
    rng = np.random.default_rng(seed)
    n, p = X.shape
    if params.bootstrap:
        in_bag = rng.integers(0, n, n)
    else:
        in_bag = np.arange(n)
    n_split_features = params.features_per_split(p, task)

    feature, threshold, left, right, n_node, depth = [], [], [], [], [], []
    values, members = [], []

    def new_node(rows, node_depth):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        n_node.append(len(rows))
        depth.append(node_depth)
        members.append(rows)
        return len(feature) - 1

    stack = [new_node(in_bag, 0)]
    while stack:
        node = stack.pop()
        rows = members[node]
        targets = y[rows]
        pure = np.all(targets == targets[0])
        if (pure or len(rows) < params.min_samples_split
                or (params.max_depth is not None
                    and depth[node] >= params.max_depth)):
            continue
        if n_split_features < p:
            candidates = rng.choice(p, n_split_features, replace=False)
        else:
            candidates = np.arange(p)
        split = best_split(X[rows], targets, candidates, task, n_classes,
                           params.min_samples_leaf)
        if split is None:
            continue
        f, t = split
        go_left = X[rows, f] <= t
        feature[node], threshold[node] = f, t
        left[node] = new_node(rows[go_left], depth[node] + 1)
        right[node] = new_node(rows[~go_left], depth[node] + 1)
        members[node] = None
        # right pushed first so the left subtree is numbered first
        stack.append(right[node])
        stack.append(left[node])

    n_nodes = len(feature)
    leaf_ptr = np.zeros(n_nodes + 1, dtype=np.int64)
    leaf_rows = []
    for node in range(n_nodes):
        rows = members[node] if members[node] is not None else in_bag[:0]
        leaf_rows.append(rows)
        leaf_ptr[node + 1] = leaf_ptr[node] + len(rows)
    if task == 'regression':
        for node in range(n_nodes):
            values.append(np.mean(y[leaf_rows[node]]) if len(leaf_rows[node])
                          else 0.0)
        value = np.array(values)
    else:
        value = np.zeros((n_nodes, n_classes))
        for node in range(n_nodes):
            if len(leaf_rows[node]):
                value[node] = np.bincount(y[leaf_rows[node]],
                                          minlength=n_classes)
                value[node] /= len(leaf_rows[node])
    return Tree(np.array(feature, dtype=np.int64),
                np.array(threshold, dtype=np.float64),
                np.array(left, dtype=np.int64),
                np.array(right, dtype=np.int64), value,
                np.array(n_node, dtype=np.int64), leaf_ptr,
                np.concatenate(leaf_rows).astype(np.int64), in_bag)


def rf_fit(X, y, params=None, task='regression', threads=None):
    params = params or ForestParams()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) != len(y):
        raise exceptions.ShapeError('Forest', 'need X (n, p) and y (n,)')
    if len(y) < 2:
        raise exceptions.InsufficientDataError(
            'a forest needs at least 2 training rows')
    if not np.all(np.isfinite(X)):
        raise ValueError('forest inputs must be finite')
    if task == 'regression':
        classes = None
        encoded = y.astype(np.float64)
        n_classes = 0
    elif task == 'classification':
        classes = np.unique(y)
        encoded = np.searchsorted(classes, y)
        n_classes = len(classes)
    else:
        raise exceptions.ConfigError('unknown forest task {!r}'.format(task))

    def grow(index):
        return grow_tree(X, encoded, params, task, n_classes,
                         params.seed + index)

    trees = utils.parallel_map(grow, range(params.n_trees), threads)
    logger.debug('grew %d %s trees, mean %d nodes', len(trees), task,
                 np.mean([tree.n_nodes for tree in trees]))
    return Forest(tuple(trees), params, task, X.shape[1], classes,
                  encoded if task == 'regression' else None)


def rf_predict(forest, X):
    """Mean tree value (regression) or mean leaf class frequencies."""
    X = forest.check(X)
    total = None
    for tree in forest.trees:
        leaf_values = tree.value[tree.apply(X)]
        total = leaf_values if total is None else total + leaf_values
    return total / forest.n_trees


def rf_predict_labels(forest, X):
    """Most probable class; ties go to the smaller class id."""
    probabilities = rf_predict(forest, X)
    return forest.classes[np.argmax(probabilities, axis=1)]


def oob_mse(forest, X, y):
    """Out-of-bag mean squared error of a regression forest."""
    X = forest.check(X)
    y = np.asarray(y, dtype=np.float64)
    total = np.zeros(len(y))
    count = np.zeros(len(y))
    for tree in forest.trees:
        out_of_bag = np.ones(len(y), dtype=bool)
        out_of_bag[tree.in_bag] = False
        rows = np.flatnonzero(out_of_bag)
        total[rows] += tree.value[tree.apply(X[rows])]
        count[rows] += 1
    scored = count > 0
    if not scored.any():
        raise exceptions.InsufficientDataError('no out-of-bag samples')
    return float(np.mean((total[scored] / count[scored] - y[scored]) ** 2))


def _leaf_triplets(forest, X):
    """(query, training id, weight) for every leaf co-resident."""
    queries, samples, weights = [], [], []
    for tree in forest.trees:
        leaves = tree.apply(X)
        starts = tree.leaf_ptr[leaves]
        sizes = tree.leaf_ptr[leaves + 1] - starts
        total = int(sizes.sum())
        query = np.repeat(np.arange(len(X)), sizes)
        offsets = np.arange(total) - np.repeat(np.cumsum(sizes) - sizes,
                                               sizes)
        queries.append(query)
        samples.append(tree.leaf_samples[np.repeat(starts, sizes) + offsets])
        weights.append(np.repeat(1.0 / (forest.n_trees * sizes), sizes))
    return (np.concatenate(queries), np.concatenate(samples),
            np.concatenate(weights))


def qrf_weights(forest, x):
    """Weight of every training sample for one query; sums to 1."""
    _require_targets(forest)
    X = forest.check(x)[:1]
    _, samples, weights = _leaf_triplets(forest, X)
    return np.bincount(samples, weights=weights,
                       minlength=len(forest.y_train))


def qrf_predict(forest, X, alpha, chunk_size=512):
    """Weighted alpha-quantile of the training targets for every row of X.

    Returns the smallest y_i whose cumulative weight (samples sorted by y)
    reaches alpha.
    """
    if not 0 < alpha < 1:
        raise ValueError('quantile level must lie in (0, 1), got {}'.format(
            alpha))
    _require_targets(forest)
    X = forest.check(X)
    out = np.empty(len(X))
    for start in range(0, len(X), chunk_size):
        chunk = X[start:start + chunk_size]
        query, sample, weight = _leaf_triplets(forest, chunk)
        values = forest.y_train[sample]
        order = np.lexsort((values, query))
        query, values, weight = query[order], values[order], weight[order]
        boundaries = np.flatnonzero(np.diff(query)) + 1
        for q, (lo, hi) in enumerate(zip(np.r_[0, boundaries],
                                         np.r_[boundaries, len(query)])):
            cumulative = np.cumsum(weight[lo:hi])
            position = np.searchsorted(cumulative,
                                       alpha - QUANTILE_TOLERANCE)
            out[start + q] = values[lo + min(position, hi - lo - 1)]
    return out


def _require_targets(forest):
    if forest.task != 'regression' or forest.y_train is None:
        raise exceptions.NotFittedError(
            'quantile prediction needs a regression forest with stored '
            'training targets')


def per_location_qrf_fit(matrices, params=None, threads=None):
    """One regression forest (with leaf targets) per location."""
    params = params or ForestParams()
    locations = list(matrices)

    def fit(location):
        X, y = matrices[location][:2]
        try:
            return rf_fit(X, y, params, task='regression', threads=1)
        except (exceptions.SubseasonalForecastError, ValueError) as e:
            return e

    results = utils.parallel_map(fit, locations, threads)
    models = collections.OrderedDict()
    failures = collections.OrderedDict()
    for location, result in zip(locations, results):
        if isinstance(result, Exception):
            failures[location] = result
            logger.warning('forest fit failed at location %s: %s', location,
                           result)
        else:
            models[location] = result
    return linear.FitReport(models, failures)
