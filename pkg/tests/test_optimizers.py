import numpy as np
import pytest

from lerac import tensor as T
from lerac.errors import ValidationError
from lerac.network import Dense, Network, init_weights, mlp
from lerac.optimizers import OptimizerState, resolve_rates, step
from lerac.schedulers import LeRaCConfig, assign_initial_rates

from gradcheck import loss_and_grads


def scalar_net(values):
    """One 1x1 dense layer per value, weights set to the value."""
    layers = []
    for v in values:
        d = Dense(1, 1)
        d.weights = np.array([[v]])
        d.bias = np.zeros(1)
        layers.append(d)
    return Network(layers, dtype="float64")


def grads_of(net, value):
    return {j: (np.full_like(w, value), np.full_like(b, value)) for j, w, b in net.parameters()}


def snapshot(net):
    return [(w.copy(), b.copy()) for _, w, b in net.parameters()]


class TestSGD:
    def test_single_step(self):
        net = scalar_net([1.0])
        step(net, grads_of(net, 0.5), OptimizerState.for_network(net), [0.1])
        assert net.layer(1).weights.item() == pytest.approx(0.95, abs=1e-15)

    def test_zero_gradient_is_identity(self):
        net = init_weights(mlp(3, 2), 0)
        before = snapshot(net)
        for kind in ("sgd", "adam"):
            step(net, grads_of(net, 0.0), OptimizerState.for_network(net, kind), [0.1] * 3)
            for (w0, b0), (_, w, b) in zip(before, net.parameters()):
                assert np.array_equal(w0, w) and np.array_equal(b0, b)

    def test_layer_rates_scale_updates(self):
        net = scalar_net([0.0, 0.0])
        step(net, grads_of(net, 1.0), OptimizerState.for_network(net), {1: 1e-1, 2: 1e-8})
        d1 = abs(net.layer(1).weights.item())
        d2 = abs(net.layer(2).weights.item())
        assert d1 / d2 == pytest.approx(1e7, rel=1e-9)

    def test_linear_in_gradient(self, rng):
        net_a = init_weights(mlp(3, 2, hidden=(4,), dtype="float64"), 1)
        net_b = init_weights(mlp(3, 2, hidden=(4,), dtype="float64"), 1)
        g1 = {j: (rng.standard_normal(w.shape), rng.standard_normal(b.shape))
              for j, w, b in net_a.parameters()}
        g2 = {j: (rng.standard_normal(w.shape), rng.standard_normal(b.shape))
              for j, w, b in net_a.parameters()}
        state_a = OptimizerState.for_network(net_a)
        step(net_a, g1, state_a, [0.05, 0.05])
        step(net_a, g2, state_a, [0.05, 0.05])
        summed = {j: (g1[j][0] + g2[j][0], g1[j][1] + g2[j][1]) for j in g1}
        step(net_b, summed, OptimizerState.for_network(net_b), [0.05, 0.05])
        for (_, wa, ba), (_, wb, bb) in zip(net_a.parameters(), net_b.parameters()):
            np.testing.assert_allclose(wa, wb, rtol=1e-13, atol=1e-15)
            np.testing.assert_allclose(ba, bb, rtol=1e-13, atol=1e-15)

    def test_rate_scaling_scales_delta(self, rng):
        base = init_weights(mlp(3, 2, hidden=(4,), dtype="float64"), 2)
        g = {j: (rng.standard_normal(w.shape), rng.standard_normal(b.shape))
             for j, w, b in base.parameters()}
        start = snapshot(base)
        deltas = []
        for s in (1.0, 0.25):   # power-of-two factor keeps the scaling exact
            net = init_weights(mlp(3, 2, hidden=(4,), dtype="float64"), 2)
            step(net, g, OptimizerState.for_network(net), [0.1 * s, 0.02 * s])
            deltas.append([w - w0 for (w0, _), (_, w, _) in zip(start, net.parameters())])
        for d_full, d_scaled in zip(*deltas):
            np.testing.assert_allclose(d_scaled, 0.25 * d_full, rtol=1e-12)

    def test_momentum_buffers_hold_raw_gradients(self):
        net = scalar_net([0.0])
        state = OptimizerState.for_network(net, "sgd", momentum=0.9)
        step(net, grads_of(net, 1.0), state, [1e-3])
        step(net, grads_of(net, 1.0), state, [1e-3])
        assert state.buffers[1][0].item() == pytest.approx(1.9)
        assert net.layer(1).weights.item() == pytest.approx(-1e-3 * (1 + 1.9))


class TestAdam:
    def test_first_step_moves_by_rate(self):
        net = scalar_net([1.0])
        step(net, grads_of(net, 0.3), OptimizerState.for_network(net, "adam"), [0.01])
        # bias-corrected first step is rate * g/|g| up to eps
        assert net.layer(1).weights.item() == pytest.approx(0.99, rel=1e-7)

    def test_rate_multiplies_direction(self):
        a, b = scalar_net([0.0]), scalar_net([0.0])
        sa = OptimizerState.for_network(a, "adam")
        sb = OptimizerState.for_network(b, "adam")
        for g in (0.3, -0.1, 0.7):
            step(a, grads_of(a, g), sa, [1e-2])
            step(b, grads_of(b, g), sb, [1e-6])
        assert np.array_equal(sa.buffers[1][0], sb.buffers[1][0])
        assert a.layer(1).weights.item() / b.layer(1).weights.item() == pytest.approx(1e4, rel=1e-9)


class TestValidation:
    def test_missing_gradient(self):
        net = scalar_net([1.0, 2.0])
        with pytest.raises(ValidationError):
            step(net, {1: grads_of(net, 1.0)[1]}, OptimizerState.for_network(net), [0.1, 0.1])

    def test_missing_rate(self):
        net = scalar_net([1.0, 2.0])
        with pytest.raises(ValidationError):
            step(net, grads_of(net, 1.0), OptimizerState.for_network(net), {1: 0.1})
        with pytest.raises(ValidationError):
            step(net, grads_of(net, 1.0), OptimizerState.for_network(net), [0.1])

    def test_unknown_kind(self):
        with pytest.raises(ValidationError):
            OptimizerState(kind="rmsprop")


class TestResolveRates:
    sched = assign_initial_rates(4, LeRaCConfig(eta_base=0.1, eta_last=1e-7, k=3))

    def test_after_horizon(self):
        assert list(resolve_rates(self.sched, 3, 1.0).values()) == [0.1] * 4

    def test_plateau_scale(self):
        for r in resolve_rates(self.sched, 7, 0.1).values():
            assert r == pytest.approx(0.01, rel=1e-15)

    def test_epoch_zero_verbatim(self):
        assert list(resolve_rates(self.sched, 0, 1.0).values()) == self.sched.initial_rates

    def test_bad_scale(self):
        with pytest.raises(ValidationError):
            resolve_rates(self.sched, 0, 0.0)
        with pytest.raises(ValidationError):
            resolve_rates(self.sched, 0, 1.5)


def test_degenerate_schedule_matches_single_global_rate(rng):
    """Per-layer engine with equal rates vs a plain global-rate momentum SGD loop."""
    x = rng.standard_normal((32, 2)).astype(np.float32)
    y = rng.integers(0, 3, 32)
    lr, mu = 0.05, 0.9
    engine = init_weights(mlp(2, 3), 5)
    reference = init_weights(mlp(2, 3), 5)
    sched = assign_initial_rates(engine.n, LeRaCConfig.conventional(lr, k=5))
    state = OptimizerState.for_network(engine, "sgd", momentum=mu)
    velocity = {j: [np.zeros_like(w), np.zeros_like(b)] for j, w, b in reference.parameters()}
    for epoch in range(8):
        for start in range(0, 32, 8):
            xb, yb = x[start:start + 8], y[start:start + 8]
            _, g = loss_and_grads(engine, xb, yb)
            step(engine, g, state, resolve_rates(sched, epoch))
            _, g = loss_and_grads(reference, xb, yb)
            for layer in reference.trainable_layers:
                v = velocity[layer.depth_index]
                for i, gi in enumerate(g[layer.depth_index]):
                    v[i] *= mu
                    v[i] += gi
                layer.weights -= lr * v[0]
                layer.bias -= lr * v[1]
    for (_, we, be), (_, wr, br) in zip(engine.parameters(), reference.parameters()):
        assert we.tobytes() == wr.tobytes() and be.tobytes() == br.tobytes()
    assert T.softmax_xent(engine.forward(x), y)[0] == T.softmax_xent(reference.forward(x), y)[0]
