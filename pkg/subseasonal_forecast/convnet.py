"""U-Net style encoder-decoder predicting the whole map at once.

Levels pair exactly: the encoder convolves and max-pools, the decoder
upsamples (nearest neighbour + 3x3 conv), joins the matching encoder output
along channels and convolves again. Losses only count land cells.
"""
import collections
import csv
import itertools
import logging

import numpy as np

from subseasonal_forecast import configuration
from subseasonal_forecast import exceptions
from subseasonal_forecast import grid as grid_module
from subseasonal_forecast import layers
from subseasonal_forecast import linear
from subseasonal_forecast import preprocess
from subseasonal_forecast import utils

logger = logging.getLogger(__name__)

ACTIVATIONS = ('sigmoid', 'identity', 'softmax')
LOSSES = ('mse', 'pinball', 'cross_entropy')

DESK_SEARCH_GRID = collections.OrderedDict([
    ('lr', (1e-3, 3e-3)),
    ('batch', (8,)),
    ('epochs', (30,)),
    ('weight_decay', (0.0, 1e-4)),
])
FULL_SEARCH_GRID = collections.OrderedDict([
    ('lr', (1e-4, 1e-3, 1e-2)),
    ('batch', (8, 16, 32)),
    ('epochs', (50, 100, 200)),
    ('weight_decay', (0.0, 1e-5, 1e-4)),
])


class TrainParams(collections.namedtuple('TrainParams', [
        'epochs', 'batch', 'lr', 'weight_decay', 'seed', 'patience',
        'log_every'], defaults=(100, 8, 1e-3, 0.0, 0, None, 10))):
    def __new__(cls, *args, **kwargs):
        self = super().__new__(cls, *args, **kwargs)
        if self.epochs < 1 or self.batch < 1 or self.lr <= 0:
            raise exceptions.ConfigError(
                'convnet training needs epochs >= 1, batch >= 1 and lr > 0')
        return self

    def to_dict(self):
        return dict(self._asdict())

    def replace(self, **changes):
        return type(self)(**dict(self._asdict(), **changes))


class UNet:
    """Architecture only; weights live in a name -> array dict."""

    def __init__(self, in_channels, base=16, depth=2, n_out=1,
                 activation='sigmoid', debug=None):
        if activation not in ACTIVATIONS:
            raise exceptions.ConfigError(
                'unknown output activation {!r}'.format(activation))
        if depth < 1 or base < 1 or in_channels < 1:
            raise exceptions.ConfigError(
                'U-Net needs depth, base and in_channels >= 1')
        self.in_channels = in_channels
        self.base = base
        self.depth = depth
        self.n_out = n_out
        self.activation = activation
        self.debug = configuration['debug'] if debug is None else debug

    def channels(self, level):
        return self.base * 2 ** level

    def shapes(self):
        shapes = collections.OrderedDict()
        shapes['stem'] = (self.base, self.in_channels, 3, 3)
        for i in range(self.depth):
            shapes['enc{}'.format(i)] = (self.channels(i),
                                         self.channels(max(i - 1, 0)), 3, 3)
        shapes['mid'] = (self.channels(self.depth),
                         self.channels(self.depth - 1), 3, 3)
        for i in reversed(range(self.depth)):
            shapes['up{}'.format(i)] = (self.channels(i),
                                        self.channels(i + 1), 3, 3)
            shapes['dec{}'.format(i)] = (self.channels(i),
                                         2 * self.channels(i), 3, 3)
        shapes['head'] = (self.n_out, self.base, 1, 1)
        return shapes

    def init_params(self, seed=0):
        rng = np.random.default_rng(seed)
        params = collections.OrderedDict()
        for name, shape in self.shapes().items():
            params[name + '.w'] = layers.he_init(rng, shape)
            params[name + '.b'] = np.zeros(shape[0])
        return params

    def to_dict(self):
        return {'in_channels': self.in_channels, 'base': self.base,
                'depth': self.depth, 'n_out': self.n_out,
                'activation': self.activation}

    def _conv_relu(self, name, params, x, caches):
        z, conv_cache = layers.conv2d_forward(x, params[name + '.w'],
                                              params[name + '.b'])
        out, active = layers.relu_forward(z)
        if self.debug and not np.all(np.isfinite(out)):
            raise exceptions.ConvergenceError(
                'non-finite activations after layer {}'.format(name))
        caches[name] = (conv_cache, active)
        return out

    def _conv_relu_backward(self, name, dout, caches, grads):
        conv_cache, active = caches[name]
        dx, grads[name + '.w'], grads[name + '.b'] = layers.conv2d_backward(
            layers.relu_backward(dout, active), conv_cache)
        return dx

    def forward(self, params, x):
        """Pre-activation outputs (N, n_out, H, W) and the backward cache."""
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise exceptions.ShapeError(
                'UNet', 'expected (N, {}, H, W) input, got {}'.format(
                    self.in_channels, x.shape))
        multiple = 2 ** self.depth
        if x.shape[2] % multiple or x.shape[3] % multiple:
            raise exceptions.ShapeError(
                'UNet', 'spatial dims {} not divisible by {}'.format(
                    x.shape[2:], multiple))
        caches = {}
        h = self._conv_relu('stem', params, x, caches)
        skips = []
        for i in range(self.depth):
            h = self._conv_relu('enc{}'.format(i), params, h, caches)
            skips.append(h)
            h, caches['pool{}'.format(i)] = layers.maxpool2_forward(h)
        h = self._conv_relu('mid', params, h, caches)
        for i in reversed(range(self.depth)):
            h = self._conv_relu('up{}'.format(i), params,
                                layers.upsample_nearest(h), caches)
            h, caches['cat{}'.format(i)] = layers.concat_channels(h, skips[i])
            h = self._conv_relu('dec{}'.format(i), params, h, caches)
        logits, caches['head'] = layers.conv2d_forward(
            h, params['head.w'], params['head.b'])
        return logits, caches

    def backward(self, caches, dlogits):
        grads = {}
        dh, grads['head.w'], grads['head.b'] = layers.conv2d_backward(
            dlogits, caches['head'])
        dskips = {}
        for i in range(self.depth):
            dh = self._conv_relu_backward('dec{}'.format(i), dh, caches, grads)
            dh, dskips[i] = layers.concat_backward(dh, caches['cat{}'.format(i)])
            dh = self._conv_relu_backward('up{}'.format(i), dh, caches, grads)
            dh = layers.upsample_backward(dh)
        dh = self._conv_relu_backward('mid', dh, caches, grads)
        for i in reversed(range(self.depth)):
            dh = layers.maxpool2_backward(dh, caches['pool{}'.format(i)])
            dh = self._conv_relu_backward('enc{}'.format(i), dh + dskips[i],
                                          caches, grads)
        dx = self._conv_relu_backward('stem', dh, caches, grads)
        return grads, dx

    def activate(self, logits):
        if self.activation == 'sigmoid':
            return layers.sigmoid(logits)
        if self.activation == 'softmax':
            return layers.softmax_channels(logits)
        return logits

    def pattern(self, caches):
        """Fingerprint of every ReLU gate and pooling winner."""
        return utils.hash_arrays(*(
            caches[name][1] for name in sorted(caches)
            if name != 'head' and not name.startswith('cat')))


def masked_loss(net, logits, target, mask, kind='mse', alpha=None):
    """Mean loss over land cells and its gradient w.r.t. the logits.

    Sea cells contribute exactly nothing, whatever their target values.
    """
    n = logits.shape[0]
    land = np.broadcast_to(mask, target.shape[:1] + mask.shape)
    count = n * int(mask.sum())
    dlogits = np.zeros_like(logits)
    if kind == 'cross_entropy':
        labels = np.where(land, target, 0).astype(np.int64) + 1
        probabilities = layers.softmax_channels(logits)
        onehot = np.moveaxis(np.eye(logits.shape[1])[labels], -1, 1)
        picked = np.sum(probabilities * onehot, axis=1)
        loss = -np.sum(np.where(land, np.log(np.clip(picked, 1e-300, None)),
                                0.0)) / count
        dlogits = (probabilities - onehot) * land[:, None] / count
        return loss, dlogits
    prediction = net.activate(logits)[:, 0]
    if kind == 'mse':
        diff = np.where(land, prediction - np.where(land, target, 0.0), 0.0)
        loss = np.sum(diff ** 2) / count
        dprediction = 2.0 * diff / count
    elif kind == 'pinball':
        residual = np.where(land, np.where(land, target, 0.0) - prediction,
                            0.0)
        loss = np.sum(linear.pinball_loss(residual, alpha)) / count
        psi = np.where(residual > 0, alpha,
                       np.where(residual < 0, alpha - 1.0, 0.0))
        dprediction = -psi / count
    else:
        raise exceptions.ConfigError('unknown loss {!r}'.format(kind))
    if net.activation == 'sigmoid':
        dprediction = dprediction * prediction * (1.0 - prediction)
    dlogits[:, 0] = dprediction
    return loss, dlogits


def pad_spatial(values, multiple, mode='edge'):
    """Pad the last two axes up to a multiple, replicating edge cells."""
    h, w = values.shape[-2:]
    pad_h, pad_w = -h % multiple, -w % multiple
    if not pad_h and not pad_w:
        return values
    widths = [(0, 0)] * (values.ndim - 2) + [(0, pad_h), (0, pad_w)]
    if mode == 'constant':
        return np.pad(values, widths)
    return np.pad(values, widths, mode=mode)


class ConvNetModel:
    """A trained network plus the target normalization it predicts in."""

    def __init__(self, net, params, task='regression', target_state=None,
                 alpha=None, history=(), train_params=None):
        self.net = net
        self.params = params
        self.task = task
        self.target_state = target_state
        self.alpha = alpha
        self.history = list(history)
        self.train_params = train_params

    def _prepare(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 3:
            X = X[None]
        return pad_spatial(X, 2 ** self.net.depth)

    def logits(self, X, batch=32):
        X_padded = self._prepare(X)
        h, w = np.asarray(X).shape[-2:]
        out = [self.net.forward(self.params, X_padded[i:i + batch])[0]
               for i in range(0, len(X_padded), batch)]
        return np.concatenate(out)[..., :h, :w]

    def predict_normalized(self, X):
        outputs = self.net.activate(self.logits(X))
        return outputs if self.task == 'tercile' else outputs[:, 0]

    def predict(self, X):
        """(T, H, W) in target units, or (T, 3, H, W) class probabilities."""
        outputs = self.predict_normalized(X)
        if self.task == 'tercile' or self.target_state is None:
            return outputs
        return self.target_state.inverse(outputs)

    def to_arrays(self):
        arrays = collections.OrderedDict(
            ('param/' + name, value) for name, value in self.params.items())
        if self.target_state is not None:
            arrays['target/offset'] = np.asarray(self.target_state.offset)
            arrays['target/scale'] = np.asarray(self.target_state.scale)
        return arrays

    def to_document(self):
        return {'net': self.net.to_dict(), 'task': self.task,
                'alpha': self.alpha,
                'target_mode': (self.target_state.mode
                                if self.target_state is not None else None),
                'train_params': (self.train_params.to_dict()
                                 if self.train_params is not None else None)}

    @classmethod
    def from_arrays(cls, document, arrays):
        net = UNet(**document['net'])
        params = collections.OrderedDict(
            (name[len('param/'):], np.asarray(arrays[name]))
            for name in arrays if name.startswith('param/'))
        target_state = None
        if document.get('target_mode'):
            offset = np.asarray(arrays['target/offset'])
            scale = np.asarray(arrays['target/scale'])
            target_state = preprocess.NormalizationState(
                document['target_mode'], offset, scale,
                np.zeros(offset.shape, dtype=bool))
        train_params = (TrainParams(**document['train_params'])
                        if document.get('train_params') else None)
        return cls(net, params, document['task'], target_state,
                   document.get('alpha'), train_params=train_params)


def evaluate_loss(net, params, X, target, mask, kind, alpha=None, batch=32):
    total, count = 0.0, 0
    for start in range(0, len(X), batch):
        logits, _ = net.forward(params, X[start:start + batch])
        loss, _ = masked_loss(net, logits, target[start:start + batch], mask,
                              kind, alpha)
        total += loss * len(logits)
        count += len(logits)
    return total / count


def fit(net, params, X, target, mask, kind, train_params, alpha=None,
        val=None):
    """Adam on the masked loss; returns (best weights, history).

    The best weights minimise validation loss when `val` = (X, target) is
    given, training loss otherwise. The starting weights are a candidate.
    """
    multiple = 2 ** net.depth
    X = pad_spatial(np.asarray(X, dtype=np.float64), multiple)
    target = pad_spatial(np.asarray(target, dtype=np.float64), multiple)
    mask = pad_spatial(np.asarray(mask, dtype=bool), multiple, 'constant')
    if val is not None:
        val = (pad_spatial(np.asarray(val[0], dtype=np.float64), multiple),
               pad_spatial(np.asarray(val[1], dtype=np.float64), multiple))

    def score(weights):
        train_loss = evaluate_loss(net, weights, X, target, mask, kind, alpha)
        val_loss = (evaluate_loss(net, weights, val[0], val[1], mask, kind,
                                  alpha) if val is not None else None)
        return train_loss, val_loss

    rng = np.random.default_rng(train_params.seed)
    state = None
    train_loss, val_loss = score(params)
    history = [(0, train_loss, val_loss)]
    best_loss = val_loss if val is not None else train_loss
    best, stale = params, 0
    for epoch in range(1, train_params.epochs + 1):
        order = rng.permutation(len(X))
        for batch, start in enumerate(range(0, len(X), train_params.batch)):
            rows = order[start:start + train_params.batch]
            logits, caches = net.forward(params, X[rows])
            loss, dlogits = masked_loss(net, logits, target[rows], mask, kind,
                                        alpha)
            if not np.isfinite(loss):
                raise exceptions.ConvergenceError(
                    'non-finite {} loss at epoch {} batch {}'.format(
                        kind, epoch, batch))
            grads, _ = net.backward(caches, dlogits)
            params, state = layers.adam_step(
                params, grads, state, train_params.lr,
                weight_decay=train_params.weight_decay)
        train_loss, val_loss = score(params)
        history.append((epoch, train_loss, val_loss))
        if epoch % train_params.log_every == 0:
            logger.info('convnet %s epoch %d: train %.6g val %s', kind, epoch,
                        train_loss,
                        '-' if val_loss is None else '{:.6g}'.format(val_loss))
        current = val_loss if val is not None else train_loss
        if current < best_loss:
            best_loss, best, stale = current, params, 0
        else:
            stale += 1
            if train_params.patience and stale >= train_params.patience:
                logger.info('convnet %s stopped early at epoch %d', kind,
                            epoch)
                break
    return best, history


def _land_mask(stack):
    return stack.mask.is_land


def target_normalization(stack, target_name):
    mode = preprocess.target_normalization_mode(target_name)
    land = stack.y[:, _land_mask(stack)]
    return preprocess.fit_normalization(land.ravel(), mode, axis=0)


def train_regression(stack, target_name, train_params=None, val_stack=None,
                     base=16, depth=2):
    """Squared loss on land; sigmoid head for min-max targets."""
    train_params = train_params or TrainParams()
    state = target_normalization(stack, target_name)
    activation = 'sigmoid' if state.mode == 'minmax' else 'identity'
    net = UNet(stack.X.shape[1], base, depth, 1, activation)
    val = None
    if val_stack is not None:
        val = (val_stack.X, state.transform(val_stack.y))
    params, history = fit(net, net.init_params(train_params.seed), stack.X,
                          state.transform(stack.y), _land_mask(stack), 'mse',
                          train_params, val=val)
    logger.info('trained convnet regression: %d months, final train loss '
                '%.6g', len(stack.X), history[-1][1])
    return ConvNetModel(net, params, 'regression', state, history=history,
                        train_params=train_params)


def train_quantile(model, stack, alpha=0.9, train_params=None,
                   val_stack=None):
    """Fine-tune regression weights on the pinball loss.

    The head becomes an identity output. A sigmoid head is replaced by a
    constant one predicting the training alpha-quantile.
    """
    if model.task != 'regression':
        raise exceptions.ConfigError(
            'quantile fine-tuning starts from a regression model')
    linear.pinball_loss(0.0, alpha)
    train_params = train_params or model.train_params or TrainParams()
    state = model.target_state
    net = UNet(model.net.in_channels, model.net.base, model.net.depth, 1,
               'identity', model.net.debug)
    params = collections.OrderedDict(
        (name, value.copy()) for name, value in model.params.items())
    target = state.transform(stack.y)
    if model.net.activation == 'sigmoid':
        params['head.w'] = np.zeros_like(params['head.w'])
        params['head.b'] = np.full_like(
            params['head.b'],
            np.quantile(target[:, _land_mask(stack)], alpha))
    val = None
    if val_stack is not None:
        val = (val_stack.X, state.transform(val_stack.y))
    params, history = fit(net, params, stack.X, target, _land_mask(stack),
                          'pinball', train_params, alpha=alpha, val=val)
    return ConvNetModel(net, params, 'quantile', state, alpha, history,
                        train_params)


def train_tercile(stack, labels, train_params=None, val_stack=None,
                  val_labels=None, base=16, depth=2):
    """Per-cell softmax over (-1, 0, +1) with masked cross-entropy."""
    train_params = train_params or TrainParams()
    net = UNet(stack.X.shape[1], base, depth, 3, 'softmax')
    val = (val_stack.X, val_labels) if val_stack is not None else None
    params, history = fit(net, net.init_params(train_params.seed), stack.X,
                          labels, _land_mask(stack), 'cross_entropy',
                          train_params, val=val)
    return ConvNetModel(net, params, 'tercile', history=history,
                        train_params=train_params)


def predict_map(model, X, mask):
    """One month's prediction as a SpatialField with sea cells missing."""
    if model.task == 'tercile':
        raise exceptions.ConfigError(
            'predict_map returns scalar fields; use predict for terciles')
    values = model.predict(X)
    if values.ndim == 3:
        values = values[0]
    return grid_module.SpatialField(mask.grid, values, ~mask.is_land)


def chronological_folds(n, folds):
    if folds < 2 or folds > n:
        raise exceptions.ConfigError(
            'cannot cut {} months into {} folds'.format(n, folds))
    return np.array_split(np.arange(n), folds)


def grid_search(stack, target_name, search_grid=None, folds=10, seed=0,
                base=16, depth=2):
    """Pick (lr, batch, epochs, weight_decay) by blocked chronological CV.

    Each fold holds out one contiguous block of months and trains on the
    rest. Returns (best TrainParams, table of mean validation losses).
    """
    search_grid = search_grid or DESK_SEARCH_GRID
    blocks = chronological_folds(len(stack.X), folds)
    state = target_normalization(stack, target_name)
    activation = 'sigmoid' if state.mode == 'minmax' else 'identity'
    net = UNet(stack.X.shape[1], base, depth, 1, activation)
    target = state.transform(stack.y)
    mask = _land_mask(stack)
    table = []
    keys = list(search_grid)
    for values in itertools.product(*(search_grid[k] for k in keys)):
        params = TrainParams(seed=seed, **dict(zip(keys, values)))
        losses = []
        for held_out in blocks:
            rows = np.setdiff1d(np.arange(len(stack.X)), held_out)
            weights, _ = fit(net, net.init_params(seed), stack.X[rows],
                             target[rows], mask, 'mse', params)
            X_val = pad_spatial(stack.X[held_out], 2 ** depth)
            y_val = pad_spatial(target[held_out], 2 ** depth)
            losses.append(evaluate_loss(
                net, weights, X_val, y_val,
                pad_spatial(mask, 2 ** depth, 'constant'), 'mse'))
        table.append(dict(params.to_dict(), cv_loss=float(np.mean(losses))))
        logger.info('grid search %s: cv loss %.6g',
                    dict(zip(keys, values)), table[-1]['cv_loss'])
    best = min(table, key=lambda row: row['cv_loss'])
    return TrainParams(**{k: v for k, v in best.items() if k != 'cv_loss'}), \
        table


GradientCheck = collections.namedtuple(
    'GradientCheck', ['max_error', 'n_checked', 'n_skipped'])


def gradient_check(net, params, X, target, mask, kind='mse', alpha=None,
                   eps=1e-4):
    """Max relative error of analytic gradients against central differences.

    Entries whose perturbation flips a ReLU gate or a pooling winner sit on a
    kink and are skipped.
    """
    logits, caches = net.forward(params, X)
    _, dlogits = masked_loss(net, logits, target, mask, kind, alpha)
    grads, _ = net.backward(caches, dlogits)
    base_pattern = net.pattern(caches)

    def loss_and_pattern(weights):
        out, out_caches = net.forward(weights, X)
        return (masked_loss(net, out, target, mask, kind, alpha)[0],
                net.pattern(out_caches))

    worst, checked, skipped = 0.0, 0, 0
    for name, value in params.items():
        for index in np.ndindex(value.shape):
            weights = dict(params)
            plus, minus = value.copy(), value.copy()
            plus[index] += eps
            minus[index] -= eps
            weights[name] = plus
            loss_plus, pattern_plus = loss_and_pattern(weights)
            weights[name] = minus
            loss_minus, pattern_minus = loss_and_pattern(weights)
            if pattern_plus != base_pattern or pattern_minus != base_pattern:
                skipped += 1
                continue
            numeric = (loss_plus - loss_minus) / (2 * eps)
            analytic = grads[name][index]
            error = abs(analytic - numeric) / max(abs(analytic),
                                                  abs(numeric), 1e-6)
            worst = max(worst, error)
            checked += 1
    return GradientCheck(worst, checked, skipped)


def write_training_log(history, path):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['epoch', 'train_loss', 'val_loss'])
        for epoch, train_loss, val_loss in history:
            writer.writerow([epoch, repr(float(train_loss)),
                             '' if val_loss is None else repr(float(val_loss))])
