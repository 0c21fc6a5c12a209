"""Per-location linear models: OLS, linear quantile regression, logistic."""
import collections
import logging

import numpy as np
from scipy import linalg

from subseasonal_forecast import exceptions
from subseasonal_forecast import utils

logger = logging.getLogger(__name__)

TASKS = ('regression', 'quantile', 'tercile')
CLASSES = np.array([-1, 0, 1])


class LinearModel(collections.namedtuple(
        'LinearModel', ['weights', 'intercept', 'task', 'alpha'])):
    """weights (F,) and scalar intercept, or (F, 3) and (3,) for terciles."""

    def __new__(cls, weights, intercept, task='regression', alpha=None):
        weights = np.asarray(weights, dtype=np.float64)
        intercept = np.asarray(intercept, dtype=np.float64)
        if not (np.all(np.isfinite(weights))
                and np.all(np.isfinite(intercept))):
            raise exceptions.ConvergenceError('non-finite linear weights')
        return super().__new__(cls, weights, intercept, task, alpha)

    @property
    def n_features(self):
        return self.weights.shape[0]

    def decision(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.n_features:
            raise exceptions.ShapeError(
                'LinearModel', 'expected {} features, got {}'.format(
                    self.n_features, X.shape[-1]))
        return X @ self.weights + self.intercept

    def predict(self, X):
        if self.task == 'tercile':
            return logistic_predict(self, X)
        return self.decision(X)


def _check_finite(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y) or not len(y):
        raise exceptions.ShapeError(
            'linear', 'need X (n, p) and y (n,) with n >= 1')
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError('linear fit inputs must be finite')
    return X, y


def ols_fit(X, y, ridge=0.0):
    """Minimise sum (y - X theta - theta0)^2 + ridge * |theta|^2."""
    X, y = _check_finite(X, y)
    if ridge < 0:
        raise ValueError('ridge penalty must be >= 0')
    x_mean, y_mean = X.mean(axis=0), y.mean()
    Xc, yc = X - x_mean, y - y_mean
    gram = Xc.T @ Xc + ridge * np.eye(X.shape[1])
    rhs = Xc.T @ yc
    theta = None
    if ridge > 0 or np.linalg.matrix_rank(Xc) == X.shape[1]:
        try:
            theta = linalg.cho_solve(linalg.cho_factor(gram), rhs)
        except linalg.LinAlgError:
            theta = None
    if theta is None:
        # minimum-norm solution of the (possibly rank-deficient) system
        if ridge > 0:
            Xc = np.vstack([Xc, np.sqrt(ridge) * np.eye(X.shape[1])])
            yc = np.concatenate([yc, np.zeros(X.shape[1])])
        theta = np.linalg.lstsq(Xc, yc, rcond=None)[0]
    return LinearModel(theta, y_mean - x_mean @ theta)


def pinball_loss(z, alpha):
    if not 0 < alpha < 1:
        raise ValueError('quantile level must lie in (0, 1), got {}'.format(
            alpha))
    z = np.asarray(z, dtype=np.float64)
    return np.where(z >= 0, alpha * z, (alpha - 1) * z)


def _scaling(X):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    return mean, np.where(scale > 0, scale, 1.0)


def linear_qr_fit(X, y, alpha, step=0.5, max_epochs=5000, patience=50,
                  tol=1e-8, min_epochs=500):
    """Averaged subgradient descent on the mean pinball loss.

    Iterates are averaged over a window that restarts at every power of
    two, so the reported solution is a suffix average. Stops when the
    averaged loss has not improved by more than `tol` for `patience` epochs,
    but never before `min_epochs`.
    """
    X, y = _check_finite(X, y)
    pinball_loss(0.0, alpha)
    x_mean, x_scale = _scaling(X)
    y_mean, y_scale = y.mean(), y.std() or 1.0
    Xs = (X - x_mean) / x_scale
    ys = (y - y_mean) / y_scale

    theta = np.zeros(X.shape[1])
    bias = np.quantile(ys, alpha)
    avg_theta, avg_bias, n_avg = theta.copy(), bias, 0
    best_loss, best = np.inf, (theta.copy(), bias)
    stale = 0
    for epoch in range(1, max_epochs + 1):
        residual = ys - Xs @ theta - bias
        psi = np.where(residual > 0, alpha,
                       np.where(residual < 0, alpha - 1.0, 0.0))
        eta = step / np.sqrt(epoch)
        theta = theta + eta * (Xs.T @ psi) / len(ys)
        bias = bias + eta * psi.mean()
        if epoch & (epoch - 1) == 0:
            n_avg = 0
        n_avg += 1
        avg_theta = avg_theta + (theta - avg_theta) / n_avg
        avg_bias = avg_bias + (bias - avg_bias) / n_avg
        loss = pinball_loss(ys - Xs @ avg_theta - avg_bias, alpha).mean()
        if not np.isfinite(loss):
            raise exceptions.ConvergenceError(
                'quantile regression diverged at epoch {} with step size '
                '{}'.format(epoch, step))
        if loss < best_loss - tol:
            best_loss, best, stale = loss, (avg_theta.copy(), avg_bias), 0
        else:
            stale += 1
            if stale >= patience and epoch >= min_epochs:
                break
    theta, bias = best
    weights = theta / x_scale * y_scale
    intercept = y_mean + bias * y_scale - x_mean @ weights
    logger.debug('linear QR alpha=%g stopped after %d epochs, loss %.6g',
                 alpha, epoch, best_loss * y_scale)
    return LinearModel(weights, intercept, task='quantile', alpha=alpha)


def softmax(scores):
    scores = scores - scores.max(axis=-1, keepdims=True)
    exp = np.exp(scores)
    return exp / exp.sum(axis=-1, keepdims=True)


def logistic_fit(X, labels, l2=1e-4, max_iter=2000, tol=1e-7):
    """Multinomial logistic regression by full-batch gradient descent.

    Classes are ordered (-1, 0, +1). The step size is 1/L for the smoothness
    bound L of the mean cross-entropy on standardised inputs.
    """
    X, labels = _check_finite(X, labels)
    labels = labels.astype(np.int64)
    present = set(np.unique(labels).tolist())
    missing = [int(c) for c in CLASSES if c not in present]
    if missing:
        raise exceptions.InsufficientDataError(
            'tercile class(es) {} absent from training labels'.format(
                missing))
    x_mean, x_scale = _scaling(X)
    Xs = (X - x_mean) / x_scale
    onehot = (labels[:, None] == CLASSES[None, :]).astype(np.float64)
    frequencies = onehot.mean(axis=0)
    weights = np.zeros((X.shape[1], len(CLASSES)))
    bias = np.log(frequencies) - np.log(frequencies).mean()
    lipschitz = 0.5 * (1.0 + np.max(np.sum(Xs ** 2, axis=1))) + l2
    step = 1.0 / lipschitz
    for iteration in range(max_iter):
        error = softmax(Xs @ weights + bias) - onehot
        grad_w = Xs.T @ error / len(Xs) + l2 * weights
        grad_b = error.mean(axis=0)
        weights -= step * grad_w
        bias -= step * grad_b
        if max(np.abs(grad_w).max(initial=0.0), np.abs(grad_b).max()) < tol:
            break
    scaled = weights / x_scale[:, None]
    return LinearModel(scaled, bias - x_mean @ scaled, task='tercile')


def logistic_predict(model, X):
    """Class probabilities (n, 3) in (-1, 0, +1) order."""
    return softmax(model.decision(X))


def cross_entropy(probabilities, labels):
    labels = np.asarray(labels, dtype=np.int64)
    picked = probabilities[np.arange(len(labels)), labels + 1]
    return -np.mean(np.log(np.clip(picked, 1e-300, None)))


FitReport = collections.namedtuple('FitReport', ['models', 'failures'])


def fit_one(X, y, task='regression', alpha=0.9, ridge=0.0):
    if task == 'regression':
        return ols_fit(X, y, ridge=ridge)
    if task == 'quantile':
        return linear_qr_fit(X, y, alpha)
    if task == 'tercile':
        return logistic_fit(X, y)
    raise exceptions.ConfigError('unknown task {!r}'.format(task))


def per_location_fit(matrices, task='regression', threads=None, **params):
    """Fit one model per location; failures are collected, not raised.

    `matrices` maps location -> (X, y) pairs or FeatureMatrix records.
    """
    locations = list(matrices)

    def fit(location):
        X, y = matrices[location][:2]
        try:
            return fit_one(X, y, task=task, **params)
        except exceptions.SubseasonalForecastError as e:
            return e
        except (ValueError, np.linalg.LinAlgError) as e:
            return e

    results = utils.parallel_map(fit, locations, threads)
    models = collections.OrderedDict()
    failures = collections.OrderedDict()
    for location, result in zip(locations, results):
        if isinstance(result, Exception):
            failures[location] = result
            logger.warning('linear %s fit failed at location %s: %s', task,
                           location, result)
        else:
            models[location] = result
    return FitReport(models, failures)
