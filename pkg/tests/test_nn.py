"""Network forward/backward/optimizer checks against independent oracles."""

import numpy as np
import pytest

from fedaudit.nn import (
    DenseLayer,
    DenseNet,
    ParamVector,
    SgdState,
    forward,
    loss_and_grad,
    per_sample_losses,
    sgd_step,
)


def _fixed_232_net():
    w1 = np.array(
        [
            [-2.221253875745377, 0.025999652649581352],
            [-0.5389690203529267, -1.1291927754818196],
            [-2.441866645632954, 0.7653914031615243],
        ]
    )
    b1 = np.array([-0.7597093453832795, 0.2669961949272511, 0.7017808518851028])
    w2 = np.array(
        [
            [0.2921213158190323, -0.19809308384188445, 0.6587712633582326],
            [0.5199574310030347, 0.5990114185671891, -1.6515809534097465],
        ]
    )
    b2 = np.array([-0.3924406993260177, -0.6773169588205007])
    return DenseNet([DenseLayer(w1, b1, "relu"), DenseLayer(w2, b2, "identity")])


FIXED_BATCH = np.array(
    [
        [2.936010765698419, -0.6646272262326735],
        [1.2574634446471256, -1.6811072148716157],
        [-0.3995734603257533, -1.4327367537731586],
        [0.19294244931920737, 1.8133575161831403],
    ]
)

# Frozen output of the scalar-by-scalar oracle below on the fixed net/batch.
FIXED_LOGITS = np.array(
    [
        [-0.3924406993260177, -0.6773169588205007],
        [-0.6871153490219666, 0.21374635599492597],
        [-0.3993412468945579, -0.3315470787022262],
        [0.673826292089841, -3.35051530887409],
    ]
)


def scalar_forward(net: DenseNet, batch: np.ndarray) -> np.ndarray:
    """Plain-Python forward pass, one multiply at a time."""
    out = []
    for row in batch:
        a = list(row)
        for layer in net.layers:
            z = []
            for i in range(layer.weights.shape[0]):
                s = float(layer.bias[i])
                for j in range(layer.weights.shape[1]):
                    s += float(layer.weights[i, j]) * a[j]
                z.append(max(s, 0.0) if layer.activation == "relu" else s)
            a = z
        out.append(a)
    return np.array(out)


def finite_difference_grad(net: DenseNet, batch, labels, step=1e-5) -> np.ndarray:
    theta = net.to_vector().values.copy()
    probe = DenseNet.from_vector(net.to_vector())
    grad = np.empty_like(theta)
    for i in range(theta.size):
        for sign, slot in ((1.0, 0), (-1.0, 1)):
            bumped = theta.copy()
            bumped[i] += sign * step
            probe.set_vector(ParamVector(bumped, net.shapes))
            loss, _ = loss_and_grad(probe, batch, labels)
            if slot == 0:
                hi = loss
            else:
                lo = loss
        grad[i] = (hi - lo) / (2 * step)
    return grad


class TestForward:
    def test_zero_weights_give_zero_logits(self):
        net = DenseNet(
            [DenseLayer(np.zeros((3, 2)), np.zeros(3), "relu"),
             DenseLayer(np.zeros((2, 3)), np.zeros(2), "identity")]
        )
        out = forward(net, np.array([[1.0, -2.0], [0.5, 3.0]]))
        assert np.array_equal(out, np.zeros((2, 2)))

    def test_identity_single_layer(self):
        net = DenseNet([DenseLayer(np.eye(2), np.zeros(2), "identity")])
        out = forward(net, np.array([[1.0, 0.0]]))
        assert np.array_equal(out, np.array([[1.0, 0.0]]))

    def test_fixed_net_matches_scalar_oracle(self):
        net = _fixed_232_net()
        got = forward(net, FIXED_BATCH)
        assert np.allclose(got, scalar_forward(net, FIXED_BATCH), atol=1e-12)
        assert np.allclose(got, FIXED_LOGITS, atol=1e-12)

    def test_dimension_mismatch_raises(self):
        net = _fixed_232_net()
        with pytest.raises(ValueError):
            forward(net, np.zeros((4, 3)))


class TestLossAndGrad:
    def test_uniform_logits_loss_is_ln2(self):
        net = DenseNet([DenseLayer(np.zeros((2, 5)), np.zeros(2), "identity")])
        loss, _ = loss_and_grad(net, np.ones((7, 5)), np.array([0, 1, 0, 1, 1, 0, 1]))
        assert loss == pytest.approx(np.log(2.0), abs=1e-12)

    def test_gradient_matches_central_differences(self):
        net = _fixed_232_net()
        labels = np.array([0, 1, 1, 0])
        _, grad = loss_and_grad(net, FIXED_BATCH, labels)
        fd = finite_difference_grad(net, FIXED_BATCH, labels)
        err = np.abs(grad.values - fd) / (1.0 + np.abs(fd))
        assert err.max() <= 1e-6

    def test_duplicating_batch_preserves_loss_and_grad(self):
        net = _fixed_232_net()
        labels = np.array([0, 1, 1, 0])
        loss1, grad1 = loss_and_grad(net, FIXED_BATCH, labels)
        doubled = np.vstack([FIXED_BATCH, FIXED_BATCH])
        loss2, grad2 = loss_and_grad(net, doubled, np.concatenate([labels, labels]))
        assert loss1 == pytest.approx(loss2, abs=1e-12)
        assert np.allclose(grad1.values, grad2.values, atol=1e-12)

    def test_empty_batch_rejected(self):
        net = _fixed_232_net()
        with pytest.raises(ValueError):
            loss_and_grad(net, np.zeros((0, 2)), np.zeros(0, dtype=int))

    def test_per_sample_losses_mean_equals_loss(self):
        net = _fixed_232_net()
        labels = np.array([0, 1, 1, 0])
        loss, _ = loss_and_grad(net, FIXED_BATCH, labels)
        per = per_sample_losses(net, FIXED_BATCH, labels)
        assert per.mean() == pytest.approx(loss, abs=1e-12)

    def test_backprop_on_random_nets(self):
        # Spec-level property: 1e-5 relative agreement with central differences.
        rng = np.random.default_rng(7)
        for _ in range(20):
            sizes = [int(rng.integers(2, 5)), int(rng.integers(2, 6)), int(rng.integers(2, 4))]
            net = DenseNet.create(sizes, rng)
            batch = rng.normal(size=(int(rng.integers(1, 6)), sizes[0]))
            labels = rng.integers(0, sizes[-1], size=batch.shape[0])
            _, grad = loss_and_grad(net, batch, labels)
            fd = finite_difference_grad(net, batch, labels)
            err = np.abs(grad.values - fd) / (1.0 + np.abs(fd))
            assert err.max() <= 1e-5


class TestSgdStep:
    def test_zero_learning_rate_is_identity(self):
        net = _fixed_232_net()
        before = net.to_vector()
        grad = ParamVector(np.ones(before.values.size), net.shapes)
        sgd_step(net, grad, SgdState(0.0, 0.9, 1e-5))
        assert np.array_equal(net.to_vector().values, before.values)

    def test_vanilla_step(self):
        net = _fixed_232_net()
        before = net.to_vector()
        grad = ParamVector(np.linspace(-1, 1, before.values.size), net.shapes)
        sgd_step(net, grad, SgdState(1.0, 0.0, 0.0))
        assert np.allclose(net.to_vector().values, before.values - grad.values, atol=1e-15)

    def test_two_momentum_steps_match_expansion(self):
        # v1 = g1, theta1 = theta0 - lr*v1
        # v2 = mu*v1 + g2, theta2 = theta0 - lr*(g1 + mu*g1 + g2)
        net = _fixed_232_net()
        theta0 = net.to_vector().values.copy()
        rng = np.random.default_rng(3)
        g1 = rng.normal(size=theta0.size)
        g2 = rng.normal(size=theta0.size)
        opt = SgdState(0.05, 0.9, 0.0)
        sgd_step(net, ParamVector(g1, net.shapes), opt)
        sgd_step(net, ParamVector(g2, net.shapes), opt)
        expected = theta0 - 0.05 * (g1 + 0.9 * g1 + g2)
        assert np.allclose(net.to_vector().values, expected, atol=1e-12)

    def test_weight_decay_couples_into_velocity(self):
        net = _fixed_232_net()
        theta0 = net.to_vector().values.copy()
        opt = SgdState(0.1, 0.0, 0.01)
        sgd_step(net, ParamVector(np.zeros(theta0.size), net.shapes), opt)
        assert np.allclose(net.to_vector().values, theta0 - 0.1 * 0.01 * theta0, atol=1e-15)

    def test_shape_mismatch_raises(self):
        net = _fixed_232_net()
        bad = ParamVector(np.zeros(4), ((2, 1, True),))
        with pytest.raises(ValueError):
            sgd_step(net, bad, SgdState(0.1))


class TestParamVector:
    def test_flat_round_trip_is_identity(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            sizes = [int(rng.integers(2, 6)) for _ in range(int(rng.integers(2, 4)))]
            net = DenseNet.create(sizes, rng)
            pv = net.to_vector()
            rebuilt = DenseNet.from_vector(pv)
            assert np.array_equal(rebuilt.to_vector().values, pv.values)
            assert rebuilt.to_vector().shapes == pv.shapes

    def test_length_validation(self):
        with pytest.raises(ValueError):
            ParamVector(np.zeros(5), ((2, 2, True),))

    def test_arithmetic_requires_matching_shapes(self):
        a = ParamVector(np.zeros(6), ((2, 2, True),))
        b = ParamVector(np.zeros(6), ((1, 5, True),))
        with pytest.raises(ValueError):
            _ = a + b

    def test_determinism_of_training(self):
        # Identical seed and config give bit-identical parameter trajectories.
        def train(seed):
            rng = np.random.default_rng(seed)
            net = DenseNet.create([4, 8, 3], np.random.default_rng(0))
            opt = SgdState(0.05, 0.9, 1e-5)
            for _ in range(20):
                batch = rng.normal(size=(16, 4))
                labels = rng.integers(0, 3, size=16)
                _, grad = loss_and_grad(net, batch, labels)
                sgd_step(net, grad, opt)
            return net.to_vector().values

        assert np.array_equal(train(42), train(42))
