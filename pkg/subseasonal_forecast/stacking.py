"""Stacking: a one-hidden-layer network over base model predictions.

Bases are trained on the first half of the training months and predict the
second half; the stacker learns from those predictions, then the bases are
retrained on all training months.
"""
import collections
import logging

import numpy as np

from subseasonal_forecast import exceptions
from subseasonal_forecast import layers
from subseasonal_forecast import linear
from subseasonal_forecast import preprocess
from subseasonal_forecast import utils

logger = logging.getLogger(__name__)

DEFAULT_HIDDEN = 100
HIDDEN_WIDTHS = (50, 75, 100, 120)


def _outputs(task):
    return 3 if task == 'tercile' else 1


def init_weights(n_inputs, hidden, n_outputs, seed=0):
    rng = np.random.default_rng(seed)
    return collections.OrderedDict([
        ('W1', rng.normal(0.0, 1.0 / np.sqrt(n_inputs), (n_inputs, hidden))),
        ('b1', np.zeros(hidden)),
        ('W2', rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, n_outputs))),
        ('b2', np.zeros(n_outputs)),
    ])


def loss_and_grad(weights, X, y, task='regression', alpha=None):
    """Mean loss of the network on normalized inputs and its gradients."""
    hidden = layers.sigmoid(X @ weights['W1'] + weights['b1'])
    out = hidden @ weights['W2'] + weights['b2']
    n = len(X)
    if task == 'tercile':
        probabilities = linear.softmax(out)
        onehot = (np.asarray(y)[:, None] == linear.CLASSES[None, :])
        loss = linear.cross_entropy(probabilities, y)
        dout = (probabilities - onehot) / n
    elif task == 'quantile':
        residual = y - out[:, 0]
        loss = linear.pinball_loss(residual, alpha).mean()
        psi = np.where(residual > 0, alpha,
                       np.where(residual < 0, alpha - 1.0, 0.0))
        dout = (-psi / n)[:, None]
    else:
        diff = out[:, 0] - y
        loss = np.mean(diff ** 2)
        dout = (2.0 * diff / n)[:, None]
    dhidden = dout @ weights['W2'].T * hidden * (1.0 - hidden)
    grads = {'W1': X.T @ dhidden, 'b1': dhidden.sum(axis=0),
             'W2': hidden.T @ dout, 'b2': dout.sum(axis=0)}
    return loss, grads


class Stacker(collections.namedtuple('Stacker', [
        'weights', 'task', 'alpha', 'input_state', 'target_state'])):

    @property
    def n_inputs(self):
        return self.weights['W1'].shape[0]

    @property
    def hidden(self):
        return self.weights['W1'].shape[1]

    def predict(self, P):
        P = np.asarray(P, dtype=np.float64)
        if P.ndim != 2 or P.shape[1] != self.n_inputs:
            raise exceptions.ShapeError(
                'Stacker', 'expected {} input columns, got {}'.format(
                    self.n_inputs, P.shape[-1]))
        X = self.input_state.transform(P)
        hidden = layers.sigmoid(X @ self.weights['W1'] + self.weights['b1'])
        out = hidden @ self.weights['W2'] + self.weights['b2']
        if self.task == 'tercile':
            return linear.softmax(out)
        return self.target_state.inverse(out[:, 0])

    def to_arrays(self):
        arrays = collections.OrderedDict(
            ('param/' + name, value) for name, value in self.weights.items())
        arrays['input/offset'] = self.input_state.offset
        arrays['input/scale'] = self.input_state.scale
        arrays['input/constant'] = self.input_state.constant
        if self.target_state is not None:
            arrays['target/offset'] = np.asarray(self.target_state.offset)
            arrays['target/scale'] = np.asarray(self.target_state.scale)
        return arrays

    def to_document(self):
        return {'task': self.task, 'alpha': self.alpha,
                'hidden': self.hidden, 'n_inputs': self.n_inputs}

    @classmethod
    def from_arrays(cls, document, arrays):
        weights = collections.OrderedDict(
            (name, np.asarray(arrays['param/' + name]))
            for name in ('W1', 'b1', 'W2', 'b2'))
        input_state = preprocess.NormalizationState(
            'minmax', np.asarray(arrays['input/offset']),
            np.asarray(arrays['input/scale']),
            np.asarray(arrays['input/constant']))
        target_state = None
        if 'target/offset' in arrays:
            offset = np.asarray(arrays['target/offset'])
            target_state = preprocess.NormalizationState(
                'minmax', offset, np.asarray(arrays['target/scale']),
                np.zeros(offset.shape, dtype=bool))
        return cls(weights, document['task'], document.get('alpha'),
                   input_state, target_state)


def _check_inputs(P, task):
    P = np.asarray(P, dtype=np.float64)
    per_base = 3 if task == 'tercile' else 1
    if P.ndim != 2 or P.shape[1] // per_base < 2 or P.shape[1] % per_base:
        raise exceptions.ConfigError(
            'stacking needs predictions from at least 2 base models')
    return P


def stacker_fit(P, y, task='regression', alpha=0.9, hidden=DEFAULT_HIDDEN,
                lr=1e-2, max_epochs=5000, patience=50, val_fraction=0.2,
                seed=0):
    """Fit the stacker by full-batch Adam.

    Inputs and targets are min-max normalized on the fitting rows. The last
    `val_fraction` of rows (chronological order assumed) drive early
    stopping; the best weights on that tail are kept.
    """
    P = _check_inputs(P, task)
    y = np.asarray(y, dtype=np.int64 if task == 'tercile' else np.float64)
    if len(P) != len(y):
        raise exceptions.ShapeError('Stacker', 'P and y lengths differ')
    input_state = preprocess.fit_normalization(P, 'minmax')
    X = input_state.transform(P)
    target_state = None
    target = y
    if task != 'tercile':
        target_state = preprocess.fit_normalization(y, 'minmax')
        target = target_state.transform(y)
    n_val = int(len(X) * val_fraction) if len(X) >= 5 else 0
    fit_rows = slice(0, len(X) - n_val)
    val_rows = slice(len(X) - n_val, len(X)) if n_val else fit_rows

    weights = init_weights(X.shape[1], hidden, _outputs(task), seed)
    if task == 'regression':
        weights['b2'][:] = target[fit_rows].mean()
    elif task == 'quantile':
        weights['b2'][:] = np.quantile(target[fit_rows], alpha)
    state = None
    best_loss, best, stale = np.inf, weights, 0
    for epoch in range(1, max_epochs + 1):
        loss, grads = loss_and_grad(weights, X[fit_rows], target[fit_rows],
                                    task, alpha)
        if not np.isfinite(loss):
            raise exceptions.ConvergenceError(
                'non-finite stacker loss at epoch {}'.format(epoch))
        weights, state = layers.adam_step(weights, grads, state, lr)
        val_loss = loss_and_grad(weights, X[val_rows], target[val_rows], task,
                                 alpha)[0]
        if val_loss < best_loss - 1e-12:
            best_loss, best, stale = val_loss, weights, 0
        else:
            stale += 1
            if stale >= patience:
                break
    logger.debug('stacker %s H=%d stopped at epoch %d, validation loss %.6g',
                 task, hidden, epoch, best_loss)
    return Stacker(best, task, alpha if task == 'quantile' else None,
                   input_state, target_state)


def select_hidden_width(P, y, task='regression', alpha=0.9,
                        widths=HIDDEN_WIDTHS, val_fraction=0.2, seed=0):
    """Hidden width with the lowest loss on the chronological tail."""
    P = _check_inputs(P, task)
    y = np.asarray(y)
    n_val = max(1, int(len(P) * val_fraction))
    scores = collections.OrderedDict()
    for width in widths:
        stacker = stacker_fit(P[:-n_val], y[:-n_val], task, alpha,
                              hidden=width, seed=seed)
        predictions = stacker.predict(P[-n_val:])
        if task == 'tercile':
            scores[width] = linear.cross_entropy(predictions, y[-n_val:])
        elif task == 'quantile':
            scores[width] = float(linear.pinball_loss(
                y[-n_val:] - predictions, alpha).mean())
        else:
            scores[width] = float(np.mean((y[-n_val:] - predictions) ** 2))
        logger.info('stacker width %d: tail loss %.6g', width, scores[width])
    return min(scores, key=scores.get), scores


def predictions_to_rows(predictions, task):
    """Join aligned base predictions into a (rows, bases[*3]) matrix.

    Every prediction is (T, L) or (T, L, 3); rows run t-major.
    """
    columns = []
    for values in predictions:
        values = np.asarray(values, dtype=np.float64)
        if task == 'tercile':
            columns.append(values.reshape(-1, 3))
        else:
            columns.append(values.reshape(-1, 1))
    return np.concatenate(columns, axis=1)


def common_times(predictions):
    times = None
    for prediction in predictions:
        times = (prediction.times if times is None
                 else np.intersect1d(times, prediction.times))
    return times


def align(prediction, times):
    rows = np.searchsorted(prediction.times, times)
    return prediction.values[rows]


class StackedPredictor:
    """Retrained bases feeding a fitted Stacker."""

    def __init__(self, bases, stacker, task):
        self.bases = bases
        self.stacker = stacker
        self.task = task

    def predict_bases(self, view):
        return collections.OrderedDict(
            (name, predictor.predict(view))
            for name, predictor in self.bases.items())

    def combine(self, base_predictions):
        times = common_times(base_predictions.values())
        P = predictions_to_rows([align(p, times)
                                 for p in base_predictions.values()],
                                self.task)
        out = self.stacker.predict(P)
        first = next(iter(base_predictions.values()))
        n_land = first.values.shape[1]
        shape = (len(times), n_land) + ((3,) if self.task == 'tercile' else ())
        return first._replace(times=times, values=out.reshape(shape))

    def predict(self, view):
        return self.combine(self.predict_bases(view))


def _fit_bases(bases, view, threads):
    def fit(item):
        name, trainer = item
        try:
            return trainer.fit(view)
        except (exceptions.SubseasonalForecastError, ValueError,
                np.linalg.LinAlgError) as e:
            raise exceptions.BaseModelError(name, e)

    fitted = utils.parallel_map(fit, list(bases.items()), threads)
    return collections.OrderedDict(zip(bases, fitted))


def stack_train(bases, train_view, truth, task='regression', alpha=0.9,
                hidden=DEFAULT_HIDDEN, seed=0, threads=None):
    """Half-split stacking over `bases` (name -> trainer with fit(view)).

    `truth(view, times)` returns the (T, L) targets or tercile labels the
    stacker learns from. Returns a StackedPredictor over bases retrained on
    the whole training view.
    """
    if len(bases) < 2:
        raise exceptions.ConfigError(
            'stacking needs at least 2 base models, got {}'.format(len(bases)))
    if len(train_view) < 4:
        raise exceptions.InsufficientDataError(
            'stacking needs at least 4 training months')
    half = len(train_view) // 2
    first = train_view.head(half, name='train-first-half')
    second = train_view.sub_view(train_view.indices[half:],
                                 name='train-second-half')
    logger.info('stacking %d bases on %d + %d months', len(bases), half,
                len(second))
    half_fitted = _fit_bases(bases, first, threads)
    held_out = collections.OrderedDict()
    for name, predictor in half_fitted.items():
        try:
            held_out[name] = predictor.predict(second)
        except (exceptions.SubseasonalForecastError, ValueError) as e:
            raise exceptions.BaseModelError(name, e)
    times = common_times(held_out.values())
    if not len(times):
        raise exceptions.InsufficientDataError(
            'no second-half month is predicted by every base')
    P = predictions_to_rows([align(p, times) for p in held_out.values()],
                            task)
    y = np.asarray(truth(second, times)).reshape(-1)
    stacker = stacker_fit(P, y, task, alpha, hidden=hidden, seed=seed)
    retrained = _fit_bases(bases, train_view, threads)
    return StackedPredictor(retrained, stacker, task)
