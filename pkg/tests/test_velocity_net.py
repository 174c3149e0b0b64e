import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rpflow.errors import DimensionMismatch, InvalidParam
from rpflow.velocity_net import (
    MLP,
    AdamState,
    EmaState,
    adam_step,
    ema_update,
    init_mlp,
    init_velocity_net,
    mlp_forward,
    mlp_loss_and_grad,
    time_embed,
)


def test_time_embedding():
    te = time_embed(0.25, 2)
    np.testing.assert_allclose(te, [[0.25, 0.0, -1.0, 1.0, 0.0]], atol=1e-15)
    assert time_embed([0.1, 0.2], 0).shape == (2, 1)


def test_init_ranges_and_zero_bias():
    net = init_mlp(0, [16, 8, 3])
    assert np.all(np.abs(net.weights[0]) <= 0.25)
    assert all(np.all(b == 0) for b in net.biases)
    assert net.dims == [16, 8, 3]
    assert net.n_params() == 16 * 8 + 8 + 8 * 3 + 3


def test_forward_by_hand():
    net = MLP([np.array([[1.0, -1.0]]), np.array([[2.0], [3.0]])], [np.array([0.0, 0.5]), np.array([0.1])])
    # x = 2: hidden relu([2, -1.5]) = [2, 0]; out = 4.1
    np.testing.assert_allclose(mlp_forward(net, np.array([[2.0]])), [[4.1]])


def _fd_check(net, a, y, probes, rng):
    loss, grads = mlp_loss_and_grad(net, a, y)
    h = 1e-5
    worst = 0.0
    params = net.params()
    for _ in range(probes):
        pi = rng.integers(len(params))
        p = params[pi]
        idx = tuple(rng.integers(s) for s in p.shape)
        old = p[idx]
        p[idx] = old + h
        lp = mlp_loss_and_grad(net, a, y)[0]
        p[idx] = old - h
        lm = mlp_loss_and_grad(net, a, y)[0]
        p[idx] = old
        fd = (lp - lm) / (2 * h)
        an = grads[pi][idx]
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-6))
    return worst


@pytest.mark.parametrize("output", ["identity", "sigmoid"])
@pytest.mark.parametrize("layers", [1, 2, 4])
def test_gradients_match_finite_differences(layers, output):
    rng = np.random.default_rng(layers)
    dims = [5] + [7] * (layers - 1) + [2]
    net = init_mlp(layers, dims, output)
    a = rng.standard_normal((9, 5))
    y = rng.random((9, 2))
    assert _fd_check(net, a, y, 25, rng) < 1e-4


def test_velocity_cached_matches_forward():
    net = init_velocity_net(3, 6, 2, [16, 16])
    rng = np.random.default_rng(0)
    g = rng.standard_normal((10, 6))
    z = rng.standard_normal((10, 2))
    pos = net.position_term(g)
    np.testing.assert_allclose(net.velocity_cached(pos, 0.3, z), net.forward(g, 0.3, z), atol=1e-13)


def test_velocity_net_shapes_and_errors():
    net = init_velocity_net(0, 4, 3, [8])
    assert net.input_dim == 4 + 17 + 3
    with pytest.raises(DimensionMismatch):
        net.forward(np.zeros((2, 5)), 0.1, np.zeros((2, 3)))
    with pytest.raises(InvalidParam):
        init_velocity_net(0, 4, 3, [])
    with pytest.raises(InvalidParam):
        init_mlp(0, [3, 2], "tanh")


def test_first_adam_step_is_signed_lr():
    p = [np.array([1.0, -2.0, 3.0])]
    g = [np.array([0.5, -4.0, 0.0])]
    st_ = AdamState(lr=0.1)
    adam_step(p, g, st_)
    # bias-corrected m/sqrt(v) equals sign(g) on the first step
    np.testing.assert_allclose(p[0], [0.9, -1.9, 3.0], atol=1e-7)
    assert st_.step == 1


@given(st.floats(0.0, 0.999), st.floats(-5, 5), st.floats(-5, 5))
@settings(max_examples=30, deadline=None)
def test_ema_is_convex_combination(decay, a, b):
    ema = EmaState.of([np.array([a])], decay)
    ema_update([np.array([b])], ema)
    assert ema.shadow[0][0] == pytest.approx(decay * a + (1 - decay) * b)


def test_ema_decay_range():
    with pytest.raises(InvalidParam):
        EmaState.of([np.zeros(1)], 1.0)
