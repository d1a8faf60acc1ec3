import numpy as np
import pytest

from plrefine.mlp import Adam, Mlp, clip_gradients

from oracles import finite_difference_gradients


def rel_error(a, n):
    return np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), 1e-4)


class TestForward:
    def test_zero_parameters_give_zero_output(self):
        net = Mlp.zeros((4, 8, 3))
        assert np.array_equal(net.forward(np.ones(4)), np.zeros(3))

    def test_single_linear_identity_layer(self):
        net = Mlp(weights=[np.eye(3)], biases=[np.zeros(3)])
        x = np.array([0.5, -2.0, 7.0])
        assert np.array_equal(net.forward(x), x)

    def test_fixed_two_layer_matches_hand_arithmetic(self):
        W1 = np.array([[1.0, 2.0], [0.0, -1.0]])
        b1 = np.array([0.5, -0.5])
        W2 = np.array([[1.0, 1.0]])
        b2 = np.array([0.25])
        net = Mlp(weights=[W1, W2], biases=[b1, b2])
        x = np.array([1.0, -1.0])
        # hand computation: z1 = (1 - 2 + 0.5, 1 - 0.5) = (-0.5, 0.5)
        # leaky(z1) = (-0.005, 0.5); y = -0.005 + 0.5 + 0.25 = 0.745
        assert np.allclose(net.forward(x), [0.745])

    def test_batch_matches_single(self):
        rng = np.random.default_rng(61)
        net = Mlp.initialized((5, 16, 2), rng, scale=1.0)
        xs = rng.normal(size=(10, 5))
        batch = net.forward(xs)
        for i, x in enumerate(xs):
            assert np.allclose(batch[i], net.forward(x))

    def test_dimension_mismatch_rejected(self):
        net = Mlp.zeros((4, 3))
        with pytest.raises(ValueError):
            net.forward(np.ones(5))


class TestBackward:
    def test_zero_upstream_gives_zero_gradients(self):
        rng = np.random.default_rng(62)
        net = Mlp.initialized((4, 8, 2), rng, scale=1.0)
        y, cache = net.forward_cached(rng.normal(size=4))
        dws, dbs, dx = net.backward(cache, np.zeros(2))
        assert all(not dw.any() for dw in dws)
        assert all(not db.any() for db in dbs)
        assert not dx.any()

    def test_linear_layer_weight_gradient_is_outer_product(self):
        net = Mlp(weights=[np.zeros((2, 3))], biases=[np.zeros(2)])
        x = np.array([1.0, 2.0, 3.0])
        dy = np.array([0.5, -1.0])
        _, cache = net.forward_cached(x)
        dws, dbs, _ = net.backward(cache, dy)
        assert np.array_equal(dws[0], np.outer(dy, x))
        assert np.array_equal(dbs[0], dy)

    @pytest.mark.parametrize("sizes", [(3, 5, 2), (6, 16, 16, 1), (18, 64, 64, 2)])
    def test_gradients_match_finite_differences(self, sizes):
        rng = np.random.default_rng(63)
        net = Mlp.initialized(sizes, rng, scale=1.0)
        x = rng.normal(size=sizes[0])
        target = rng.normal(size=sizes[-1])

        def loss():
            y = net.forward(x)
            return 0.5 * float(np.sum((y - target) ** 2))

        y, cache = net.forward_cached(x)
        dws, dbs, _ = net.backward(cache, y - target)
        analytic = []
        for dw, db in zip(dws, dbs):
            analytic.extend([dw, db])
        numeric = finite_difference_gradients(loss, net.parameters(), h=1e-5)
        for a, n in zip(analytic, numeric):
            assert rel_error(a, n).max() < 1e-4

    def test_input_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(64)
        net = Mlp.initialized((4, 12, 3), rng, scale=1.0)
        x = rng.normal(size=4)
        target = rng.normal(size=3)
        y, cache = net.forward_cached(x)
        _, _, dx = net.backward(cache, y - target)
        h = 1e-6
        num = np.zeros(4)
        for i in range(4):
            xp = x.copy(); xp[i] += h
            xm = x.copy(); xm[i] -= h
            up = 0.5 * np.sum((net.forward(xp) - target) ** 2)
            dn = 0.5 * np.sum((net.forward(xm) - target) ** 2)
            num[i] = (up - dn) / (2 * h)
        assert rel_error(dx, num).max() < 1e-4


class TestOptimizerAndClipping:
    def test_adam_zero_learning_rate_is_noop(self):
        rng = np.random.default_rng(65)
        net = Mlp.initialized((3, 6, 1), rng, scale=1.0)
        before = [p.copy() for p in net.parameters()]
        opt = Adam(lr=0.0)
        grads = [np.ones_like(p) for p in net.parameters()]
        opt.step(net.parameters(), grads)
        for b, p in zip(before, net.parameters()):
            assert np.array_equal(b, p)

    def test_adam_descends_a_quadratic(self):
        p = [np.array([4.0])]
        opt = Adam(lr=0.1)
        for _ in range(500):
            opt.step(p, [2.0 * p[0]])
        assert abs(p[0][0]) < 1e-3

    def test_clip_gradients_scales_to_max_norm(self):
        grads = [np.array([3.0, 0.0]), np.array([4.0])]
        clipped = clip_gradients(grads, 1.0)
        total = np.sqrt(sum(np.sum(g * g) for g in clipped))
        assert np.isclose(total, 1.0)

    def test_clip_gradients_leaves_small_untouched(self):
        grads = [np.array([0.1, 0.2])]
        assert clip_gradients(grads, 10.0) is grads
