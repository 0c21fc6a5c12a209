"""Convolutional building blocks with exact backward passes, and Adam.

Tensors are float64 (batch, channels, height, width). Every forward returns
(output, cache); the matching backward takes the cache and the upstream
gradient.
"""
import collections

import numpy as np
from numpy.lib import stride_tricks

from subseasonal_forecast import exceptions


def _check4(name, x):
    if x.ndim != 4:
        raise exceptions.ShapeError(
            name, 'expected a (batch, channels, height, width) tensor, got '
                  'shape {}'.format(x.shape))


def conv2d_forward(x, weight, bias, padding=None):
    """Cross-correlation with zero padding; weight (out, in, kh, kw)."""
    _check4('conv2d', x)
    n_out, n_in, kh, kw = weight.shape
    if x.shape[1] != n_in:
        raise exceptions.ShapeError(
            'conv2d', 'input has {} channels, kernel expects {}'.format(
                x.shape[1], n_in))
    if padding is None:
        padding = kh // 2
    padded = np.pad(x, ((0, 0), (0, 0), (padding, padding),
                        (padding, padding)))
    windows = stride_tricks.sliding_window_view(padded, (kh, kw), axis=(2, 3))
    out = np.tensordot(windows, weight, axes=([1, 4, 5], [1, 2, 3]))
    out = np.moveaxis(out, -1, 1) + bias[None, :, None, None]
    return out, (x.shape, windows, weight, padding)


def conv2d_backward(dout, cache):
    x_shape, windows, weight, padding = cache
    _, _, kh, kw = weight.shape
    dweight = np.tensordot(dout, windows, axes=([0, 2, 3], [0, 2, 3]))
    dbias = dout.sum(axis=(0, 2, 3))
    n, c, h, w = x_shape
    height, width = dout.shape[2:]
    dpadded = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    for i in range(kh):
        for j in range(kw):
            dpadded[:, :, i:i + height, j:j + width] += np.einsum(
                'nohw,oc->nchw', dout, weight[:, :, i, j], optimize=True)
    dx = dpadded[:, :, padding:padding + h, padding:padding + w]
    return dx, dweight, dbias


def relu_forward(x):
    active = x > 0
    return np.where(active, x, 0.0), active


def relu_backward(dout, active):
    return np.where(active, dout, 0.0)


def maxpool2_forward(x):
    _check4('maxpool2', x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise exceptions.ShapeError(
            'maxpool2', 'spatial dims {}x{} are not even'.format(h, w))
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
    winner = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, winner[..., None], axis=-1)[..., 0]
    return out, (x.shape, winner)


def maxpool2_backward(dout, cache):
    (n, c, h, w), winner = cache
    routed = np.zeros(dout.shape + (4,))
    np.put_along_axis(routed, winner[..., None], dout[..., None], axis=-1)
    routed = routed.reshape(n, c, h // 2, w // 2, 2, 2).transpose(
        0, 1, 2, 4, 3, 5)
    return routed.reshape(n, c, h, w)


def upsample_nearest(x):
    _check4('upsample', x)
    return x.repeat(2, axis=2).repeat(2, axis=3)


def upsample_backward(dout):
    n, c, h, w = dout.shape
    return dout.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def concat_channels(a, b):
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise exceptions.ShapeError(
            'concat', 'cannot join {} and {} along channels'.format(
                a.shape, b.shape))
    return np.concatenate([a, b], axis=1), a.shape[1]


def concat_backward(dout, split):
    return dout[:, :split], dout[:, split:]


def sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def softmax_channels(x):
    shifted = x - x.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def he_init(rng, shape):
    fan_in = int(np.prod(shape[1:]))
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class AdamState(collections.namedtuple('AdamState', ['step', 'm', 'v'])):
    @classmethod
    def zeros_like(cls, weights):
        return cls(0, {k: np.zeros_like(w) for k, w in weights.items()},
                   {k: np.zeros_like(w) for k, w in weights.items()})


def adam_step(weights, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8,
              weight_decay=0.0):
    """One Adam update with bias correction and decoupled weight decay.

    Returns new (weights, state); inputs are not modified.
    """
    if state is None:
        state = AdamState.zeros_like(weights)
    step = state.step + 1
    new_weights, m, v = {}, {}, {}
    for name, w in weights.items():
        g = grads[name]
        if g.shape != w.shape:
            raise exceptions.ShapeError(
                'adam', 'gradient for {} has shape {}, weight {}'.format(
                    name, g.shape, w.shape))
        m[name] = beta1 * state.m[name] + (1 - beta1) * g
        v[name] = beta2 * state.v[name] + (1 - beta2) * g * g
        m_hat = m[name] / (1 - beta1 ** step)
        v_hat = v[name] / (1 - beta2 ** step)
        new_weights[name] = (w - lr * m_hat / (np.sqrt(v_hat) + eps)
                             - lr * weight_decay * w)
    return new_weights, AdamState(step, m, v)
