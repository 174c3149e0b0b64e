"""Conditional flow matching on a single sparsely observed field.

Each training sample picks an observed position x, a time t ~ U[0, 1], a
source draw z0 ~ N(0, I_m) and a noisy target z1 = Z(x) + eps with
eps ~ N(0, sigma^2 I_m). The network regresses the straight-line velocity
z1 - z0 at z_t = t z1 + (1 - t) z0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, DivergedError, InvalidParam
from .numerics import Rng
from .velocity_net import AdamState, EmaState, VelocityNet, adam_step, ema_update

log = logging.getLogger(__name__)

# loss above this multiple of the first-step loss counts as divergence
EXPLODE_FACTOR = 1e6


@dataclass
class FieldObservations:
    """One realization observed at N positions. Positions live in [0, 1]^d."""

    positions: np.ndarray  # (N, d)
    values: np.ndarray  # (N, m)
    value_range: tuple[float, float] | None = None  # original range mapped to the stored values

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim == 1:
            self.positions = self.positions[:, None]
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.positions.shape[0] != self.values.shape[0]:
            raise DimensionMismatch(
                f"{self.positions.shape[0]} positions but {self.values.shape[0]} value rows")
        if not np.all(np.isfinite(self.values)):
            raise InvalidParam("observation values must be finite")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def check_distinct(self) -> None:
        uniq = np.unique(self.positions, axis=0)
        if uniq.shape[0] != self.n:
            raise InvalidParam("observation positions contain duplicates")


@dataclass
class TrainConfig:
    iterations: int = 10000
    batch_size: int = 256
    lr: float = 1e-3
    sigma_noise: float = 0.0
    warmup_steps: int = 0
    ema_decay: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise InvalidParam("iterations must be >= 0")
        if self.batch_size < 1:
            raise InvalidParam("batch_size must be >= 1")
        if self.sigma_noise < 0:
            raise InvalidParam("sigma_noise must be >= 0")
        if self.warmup_steps < 0:
            raise InvalidParam("warmup_steps must be >= 0")


@dataclass
class Batch:
    gamma: np.ndarray
    t: np.ndarray
    z_t: np.ndarray
    target: np.ndarray
    index: np.ndarray
    z0: np.ndarray
    z1: np.ndarray


def make_training_batch(rng: Rng, obs: FieldObservations, embedder, cfg: TrainConfig,
                        gamma_all: np.ndarray | None = None, t: float | None = None) -> Batch:
    """Draw one batch. Draw order is fixed: positions, times, z0, noise.

    ``t`` forces every element's time (the time draw is still consumed so the
    stream stays aligned with the unforced case).
    """
    B, m = cfg.batch_size, obs.m
    idx = rng.integers(obs.n, B)
    tt = rng.uniform(B)
    if t is not None:
        tt = np.full(B, float(t))
    z0 = rng.standard_normal(B, m)
    eps = rng.standard_normal(B, m)
    z1 = obs.values[idx] + cfg.sigma_noise * eps
    w = tt[:, None]
    z_t = w * z1 + (1.0 - w) * z0
    if gamma_all is None:
        gamma = embedder.embed(obs.positions[idx])
    else:
        gamma = gamma_all[idx]
    return Batch(gamma, tt, z_t, z1 - z0, idx, z0, z1)


@dataclass
class TrainResult:
    net: VelocityNet  # EMA weights when EMA is on, else the raw weights
    raw_net: VelocityNet
    losses: np.ndarray
    adam: AdamState
    ema: EmaState | None = None
    config: TrainConfig = field(default_factory=TrainConfig)


def lr_at(step: int, cfg: TrainConfig) -> float:
    if cfg.warmup_steps and step < cfg.warmup_steps:
        return cfg.lr * (step + 1) / cfg.warmup_steps
    return cfg.lr


def train(obs: FieldObservations, embedder, net: VelocityNet, cfg: TrainConfig,
          adam: AdamState | None = None) -> TrainResult:
    """Run cfg.iterations Adam steps on the flow matching loss. ``net`` is not modified."""
    if net.m != obs.m:
        raise DimensionMismatch(f"net outputs m={net.m}, observations have m={obs.m}")
    if net.embed_dim != embedder.dim:
        raise DimensionMismatch(f"net expects embed_dim={net.embed_dim}, embedder gives {embedder.dim}")
    net = net.copy()
    params = net.mlp.params()
    adam = AdamState(lr=cfg.lr) if adam is None else adam.copy()
    ema = EmaState.of(params, cfg.ema_decay) if cfg.ema_decay is not None else None
    rng = Rng(cfg.seed)
    gamma_all = embedder.embed(obs.positions)
    losses = np.empty(cfg.iterations)
    ref = None
    for step in range(cfg.iterations):
        b = make_training_batch(rng, obs, embedder, cfg, gamma_all=gamma_all)
        loss, grads = net.loss_and_grad(b.gamma, b.t, b.z_t, b.target)
        if ref is None:
            ref = max(loss, 1e-12)
        if not np.isfinite(loss) or loss > EXPLODE_FACTOR * ref:
            raise DivergedError(f"loss {loss:g} at step {step} (first-step loss {ref:g}); lower the lr")
        losses[step] = loss
        adam_step(params, grads, adam, lr_at(step, cfg))
        if ema is not None:
            ema_update(params, ema)
        if step % 1000 == 0:
            log.debug("step %d loss %.5f", step, loss)
    out = net
    if ema is not None:
        out = net.copy()
        for p, s in zip(out.mlp.params(), ema.shadow):
            p[...] = s
    return TrainResult(out, net, losses, adam, ema, cfg)
