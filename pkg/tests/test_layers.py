from unittest import TestCase

import numpy as np

from subseasonal_forecast import exceptions
from subseasonal_forecast import layers


def naive_conv(x, weight, bias):
    n, c, h, w = x.shape
    n_out, _, kh, kw = weight.shape
    pad = kh // 2
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((n, n_out, h, w))
    for b in range(n):
        for o in range(n_out):
            for i in range(h):
                for j in range(w):
                    out[b, o, i, j] = np.sum(
                        padded[b, :, i:i + kh, j:j + kw] * weight[o]) + bias[o]
    return out


class ConvTest(TestCase):
    def setUp(self):
        rng = np.random.default_rng(0)
        self.x = rng.normal(size=(2, 3, 5, 4))
        self.weight = rng.normal(size=(2, 3, 3, 3))
        self.bias = rng.normal(size=2)

    def test_forward_matches_loops(self):
        out, _ = layers.conv2d_forward(self.x, self.weight, self.bias)
        np.testing.assert_allclose(naive_conv(self.x, self.weight, self.bias),
                                   out)

    def test_backward_is_adjoint(self):
        out, cache = layers.conv2d_forward(self.x, self.weight, self.bias)
        dout = np.random.default_rng(1).normal(size=out.shape)
        dx, dweight, dbias = layers.conv2d_backward(dout, cache)
        eps = 1e-6
        for index in [(0, 0, 0, 0), (1, 2, 4, 3), (0, 1, 2, 1)]:
            shifted = self.x.copy()
            shifted[index] += eps
            moved, _ = layers.conv2d_forward(shifted, self.weight, self.bias)
            self.assertAlmostEqual(np.sum((moved - out) * dout) / eps,
                                   dx[index], places=5)
        for index in [(0, 0, 0, 0), (1, 2, 1, 2)]:
            shifted = self.weight.copy()
            shifted[index] += eps
            moved, _ = layers.conv2d_forward(self.x, shifted, self.bias)
            self.assertAlmostEqual(np.sum((moved - out) * dout) / eps,
                                   dweight[index], places=5)
        np.testing.assert_allclose(dout.sum(axis=(0, 2, 3)), dbias)

    def test_channel_mismatch(self):
        self.assertRaises(exceptions.ShapeError, layers.conv2d_forward,
                          self.x[:, :2], self.weight, self.bias)
        self.assertRaises(exceptions.ShapeError, layers.conv2d_forward,
                          self.x[0], self.weight, self.bias)


class PoolTest(TestCase):
    def test_forward_and_routing(self):
        x = np.array([[[[1.0, 5.0, 0.0, 0.0],
                        [2.0, 3.0, 0.0, 7.0],
                        [4.0, 4.0, 1.0, 1.0],
                        [0.0, 0.0, 1.0, 2.0]]]])
        out, cache = layers.maxpool2_forward(x)
        np.testing.assert_array_equal([[[[5.0, 7.0], [4.0, 2.0]]]], out)
        dx = layers.maxpool2_backward(np.ones_like(out), cache)
        expected = np.zeros_like(x)
        for index in [(0, 1), (1, 3), (2, 0), (3, 3)]:
            expected[(0, 0) + index] = 1.0
        np.testing.assert_array_equal(expected, dx)

    def test_odd_dims(self):
        self.assertRaises(exceptions.ShapeError, layers.maxpool2_forward,
                          np.zeros((1, 1, 3, 4)))

    def test_upsample(self):
        x = np.arange(4.0).reshape(1, 1, 2, 2)
        up = layers.upsample_nearest(x)
        self.assertEqual((1, 1, 4, 4), up.shape)
        self.assertEqual(3.0, up[0, 0, 3, 2])
        np.testing.assert_array_equal(4.0 * np.ones((1, 1, 2, 2)),
                                      layers.upsample_backward(
                                          np.ones_like(up)))


class ConcatTest(TestCase):
    def test_round_trip(self):
        a, b = np.zeros((2, 1, 4, 4)), np.ones((2, 3, 4, 4))
        joined, split = layers.concat_channels(a, b)
        self.assertEqual((2, 4, 4, 4), joined.shape)
        da, db = layers.concat_backward(joined, split)
        np.testing.assert_array_equal(a, da)
        np.testing.assert_array_equal(b, db)

    def test_mismatch(self):
        self.assertRaises(exceptions.ShapeError, layers.concat_channels,
                          np.zeros((2, 1, 4, 4)), np.zeros((2, 1, 2, 2)))


class ActivationTest(TestCase):
    def test_sigmoid_is_stable(self):
        with np.errstate(over='raise'):
            values = layers.sigmoid(np.array([-1000.0, 0.0, 1000.0]))
        np.testing.assert_allclose([0.0, 0.5, 1.0], values)

    def test_softmax_channels(self):
        x = np.random.default_rng(2).normal(size=(2, 3, 4, 4)) * 50
        np.testing.assert_allclose(1.0, layers.softmax_channels(x).sum(axis=1))


class AdamTest(TestCase):
    def test_first_step_moves_by_lr(self):
        weights = {'w': np.array([1.0, -2.0, 0.5])}
        grads = {'w': np.array([0.3, -4.0, 1e-3])}
        new, state = layers.adam_step(weights, grads, None, lr=0.01)
        np.testing.assert_allclose([0.99, -1.99, 0.49], new['w'], rtol=1e-6)
        self.assertEqual(1, state.step)
        np.testing.assert_array_equal([1.0, -2.0, 0.5], weights['w'])

    def test_decoupled_weight_decay(self):
        weights = {'w': np.array([2.0])}
        grads = {'w': np.array([0.0])}
        new, _ = layers.adam_step(weights, grads, None, lr=0.1,
                                  weight_decay=0.5)
        np.testing.assert_allclose([1.9], new['w'])

    def test_zero_gradient_leaves_weights(self):
        weights = {'w': np.array([1.0, -2.0, 0.5])}
        state = None
        for _ in range(5):
            weights, state = layers.adam_step(
                weights, {'w': np.zeros(3)}, state, lr=0.1)
        np.testing.assert_array_equal([1.0, -2.0, 0.5], weights['w'])

    def test_constant_gradient_steps_by_lr(self):
        weights = {'w': np.zeros(3)}
        grads = {'w': np.array([0.2, -3.0, 50.0])}
        state = None
        for _ in range(200):
            previous = weights['w']
            weights, state = layers.adam_step(weights, grads, state, lr=0.01)
        np.testing.assert_allclose([-0.01, 0.01, -0.01],
                                   weights['w'] - previous, rtol=0.01)

    def test_gradient_shape(self):
        self.assertRaises(exceptions.ShapeError, layers.adam_step,
                          {'w': np.zeros(2)}, {'w': np.zeros(3)}, None, 0.1)
