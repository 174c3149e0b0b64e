"""Comparison methods: RFF regression network, target-space GPR, and the
positional-conditioning ablations of the flow model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gp
from .cfm_train import FieldObservations, TrainConfig, train
from .errors import DivergedError, InvalidParam
from .numerics import DEFAULT_JITTER, Rng
from .rff import KernelSpec, RffBasis, _as_positions
from .velocity_net import (
    MLP,
    AdamState,
    adam_step,
    init_mlp,
    init_velocity_net,
    mlp_forward,
    mlp_loss_and_grad,
)

KINDS = ("rff_net", "gpr_noiseless", "gpr_calibrated", "rpflow_no_pos", "rpflow_posenc")


class NoPosition:
    """Drops the position entirely: the flow sees only (t, z)."""

    dim = 0

    def embed(self, X) -> np.ndarray:
        return np.zeros((_as_positions(X).shape[0], 0))


@dataclass(frozen=True)
class PosEnc:
    """Deterministic sinusoidal encoding at frequencies 2^j * pi, j < n_freqs, per coordinate.

    Scaled by 1/sqrt(n_freqs * d) so every row has unit norm, like the RFF embedding.
    """

    n_freqs: int = 8
    d: int = 2

    @property
    def dim(self) -> int:
        return 2 * self.n_freqs * self.d

    def embed(self, X) -> np.ndarray:
        X = _as_positions(X)
        freqs = np.pi * 2.0 ** np.arange(self.n_freqs)
        ang = (X[:, :, None] * freqs[None, None, :]).reshape(X.shape[0], -1)
        return np.concatenate([np.cos(ang), np.sin(ang)], axis=1) / np.sqrt(self.n_freqs * self.d)


# -- RFF regression network ------------------------------------------------

@dataclass
class RffNetResult:
    mlp: MLP
    basis: RffBasis
    losses: np.ndarray

    def predict(self, X) -> np.ndarray:
        return mlp_forward(self.mlp, self.basis.embed(X))


def train_rff_net(obs: FieldObservations, basis: RffBasis, cfg: TrainConfig,
                  hidden=(256, 256, 256, 256)) -> RffNetResult:
    """MSE regression x -> Z(x) with a sigmoid output; targets must lie in [0, 1]."""
    if obs.values.min() < 0 or obs.values.max() > 1:
        raise InvalidParam("RFF network targets must lie in [0, 1]")
    rng = Rng(cfg.seed)
    mlp = init_mlp(rng.spawn(0), [basis.dim, *hidden, obs.m], output="sigmoid")
    params = mlp.params()
    adam = AdamState(lr=cfg.lr)
    g_all = basis.embed(obs.positions)
    losses = np.empty(cfg.iterations)
    for step in range(cfg.iterations):
        idx = rng.integers(obs.n, cfg.batch_size)
        loss, grads = mlp_loss_and_grad(mlp, g_all[idx], obs.values[idx])
        if not np.isfinite(loss):
            raise DivergedError(f"loss {loss} at step {step}")
        losses[step] = loss
        adam_step(params, grads, adam)
    return RffNetResult(mlp, basis, losses)


# -- target-space GP regression --------------------------------------------

def gpr_predict(obs: FieldObservations, spec: KernelSpec, Xs, jitter: float = DEFAULT_JITTER):
    """Per-channel GPR posterior mean and latent variance, both (N*, m).

    noiseless: spec.noise_var = 0; calibrated: spec.noise_var > 0 tuned by sweep.
    The variance is that of the latent field (observation noise not added).
    """
    post = gp.fit_posterior(spec, obs.positions, obs.values, jitter)
    mean, var = gp.posterior_mean_cov(post, Xs, full_cov=False)
    var = np.maximum(var, 0.0)[:, None]
    return mean, np.repeat(var, mean.shape[1], axis=1)


# -- flow ablations ---------------------------------------------------------

def ablation_embedder(kind: str, d: int, n_freqs: int = 8):
    if kind == "rpflow_no_pos":
        return NoPosition()
    if kind == "rpflow_posenc":
        return PosEnc(n_freqs, d)
    raise InvalidParam(f"unknown ablation {kind!r}")


def rpflow_ablation(kind: str, obs: FieldObservations, cfg: TrainConfig, hidden=(256, 256, 256, 256),
                    n_freqs: int = 8, init_seed: int | None = None):
    """Train the flow with the position features removed or replaced by PosEnc.

    Returns (embedder, TrainResult).
    """
    emb = ablation_embedder(kind, obs.d, n_freqs)
    seed = cfg.seed if init_seed is None else init_seed
    net = init_velocity_net(Rng(seed).spawn(1), emb.dim, obs.m, list(hidden))
    return emb, train(obs, emb, net, cfg)
