import numpy as np
import pytest

from rpflow import cfm_train
from rpflow.cfm_train import (
    FieldObservations,
    TrainConfig,
    lr_at,
    make_training_batch,
    train,
)
from rpflow.errors import DimensionMismatch, DivergedError, InvalidParam
from rpflow.numerics import Rng
from rpflow.rff import make_basis
from rpflow.velocity_net import init_velocity_net


@pytest.fixture
def toy():
    X = np.linspace(0, 1, 32)[:, None]
    obs = FieldObservations(X, np.sin(2 * np.pi * X))
    basis = make_basis(0, 16, 1, 5.0)
    net = init_velocity_net(1, basis.dim, 1, [32, 32])
    return obs, basis, net


def test_observation_validation():
    with pytest.raises(DimensionMismatch):
        FieldObservations(np.zeros((3, 1)), np.zeros((2, 1)))
    with pytest.raises(InvalidParam):
        FieldObservations(np.zeros((1, 1)), np.array([[np.nan]]))
    obs = FieldObservations(np.array([0.1, 0.1]), np.array([1.0, 2.0]))
    assert (obs.n, obs.d, obs.m) == (2, 1, 1)
    with pytest.raises(InvalidParam):
        obs.check_distinct()


def test_config_validation():
    for bad in ({"iterations": -1}, {"batch_size": 0}, {"sigma_noise": -0.1}, {"warmup_steps": -1}):
        with pytest.raises(InvalidParam):
            TrainConfig(**bad)


def test_batch_is_linear_interpolant(toy):
    obs, basis, _ = toy
    cfg = TrainConfig(batch_size=64, sigma_noise=0.1)
    b = make_training_batch(Rng(0), obs, basis, cfg)
    w = b.t[:, None]
    np.testing.assert_allclose(b.z_t, w * b.z1 + (1 - w) * b.z0, atol=1e-15)
    np.testing.assert_allclose(b.target, b.z1 - b.z0, atol=1e-15)
    np.testing.assert_allclose(b.gamma, basis.embed(obs.positions[b.index]))
    assert 0 < np.std(b.z1 - obs.values[b.index]) < 0.2


def test_forced_time_keeps_stream_aligned(toy):
    obs, basis, _ = toy
    cfg = TrainConfig(batch_size=8)
    free = make_training_batch(Rng(4), obs, basis, cfg)
    forced = make_training_batch(Rng(4), obs, basis, cfg, t=0.0)
    np.testing.assert_array_equal(forced.z0, free.z0)
    np.testing.assert_allclose(forced.z_t, forced.z0)


def test_lr_warmup():
    cfg = TrainConfig(lr=1.0, warmup_steps=4)
    assert [lr_at(s, cfg) for s in range(6)] == [0.25, 0.5, 0.75, 1.0, 1.0, 1.0]


def test_training_is_deterministic_and_learns(toy):
    obs, basis, net = toy
    cfg = TrainConfig(iterations=400, batch_size=64, lr=2e-3, seed=5)
    a = train(obs, basis, net, cfg)
    b = train(obs, basis, net, cfg)
    np.testing.assert_array_equal(a.losses, b.losses)
    np.testing.assert_array_equal(a.net.mlp.flat(), b.net.mlp.flat())
    assert a.losses[-50:].mean() < 0.6 * a.losses[:50].mean()


def test_zero_iterations_returns_initialization(toy):
    obs, basis, net = toy
    res = train(obs, basis, net, TrainConfig(iterations=0))
    np.testing.assert_array_equal(res.net.mlp.flat(), net.mlp.flat())
    assert res.net is not net


def test_ema_weights_differ_from_raw(toy):
    obs, basis, net = toy
    res = train(obs, basis, net, TrainConfig(iterations=50, ema_decay=0.9))
    assert res.ema is not None
    assert not np.array_equal(res.net.mlp.flat(), res.raw_net.mlp.flat())


def test_divergence_detected(toy, monkeypatch):
    obs, basis, net = toy
    monkeypatch.setattr(cfm_train, "EXPLODE_FACTOR", 1e-9)
    with pytest.raises(DivergedError):
        train(obs, basis, net, TrainConfig(iterations=5))


def test_shape_checks(toy):
    obs, basis, _ = toy
    with pytest.raises(DimensionMismatch):
        train(obs, basis, init_velocity_net(0, basis.dim, 2, [8]), TrainConfig(iterations=1))
    with pytest.raises(DimensionMismatch):
        train(obs, basis, init_velocity_net(0, 3, 1, [8]), TrainConfig(iterations=1))
