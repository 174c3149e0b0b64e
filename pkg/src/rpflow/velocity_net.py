"""ReLU MLP with hand-written backprop, Adam and EMA.

The velocity network v(z, x, t) is an MLP over the concatenated input
[pos_embed(x) | time_embed(t) | z]. Everything is float64.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InvalidParam
from .numerics import Rng, as_rng

DEFAULT_TIME_FREQS = 8


def time_embed(t, n_freqs: int = DEFAULT_TIME_FREQS) -> np.ndarray:
    """[t, cos(2 pi k t), sin(2 pi k t)] for k = 1..n_freqs, shape (B, 1 + 2 n_freqs)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64)).reshape(-1, 1)
    if n_freqs == 0:
        return t.copy()
    ang = 2.0 * np.pi * t * np.arange(1, n_freqs + 1)[None, :]
    return np.concatenate([t, np.cos(ang), np.sin(ang)], axis=1)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class MLP:
    """Affine layers with ReLU between them. weights[i] has shape (fan_in, fan_out)."""

    weights: list
    biases: list
    output: str = "identity"  # or "sigmoid"

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def copy(self) -> MLP:
        return MLP([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.output)

    def forward(self, a: np.ndarray) -> np.ndarray:
        return mlp_forward(self, a)

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, vec: np.ndarray) -> None:
        i = 0
        for p in self.params():
            p[...] = vec[i:i + p.size].reshape(p.shape)
            i += p.size


def init_mlp(rng: Rng | int, dims, output: str = "identity") -> MLP:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    dims = [int(d) for d in dims]
    if len(dims) < 2 or min(dims) < 1:
        raise InvalidParam(f"need at least input and output dims, got {dims}")
    if output not in ("identity", "sigmoid"):
        raise InvalidParam(f"unknown output activation {output!r}")
    rng = as_rng(rng)
    ws, bs = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        lim = 1.0 / np.sqrt(fan_in)
        ws.append(lim * (2.0 * rng.uniform((fan_in, fan_out)) - 1.0))
        bs.append(np.zeros(fan_out))
    return MLP(ws, bs, output)


def mlp_forward(net: MLP, a: np.ndarray, keep: list | None = None) -> np.ndarray:
    """Forward pass. When ``keep`` is a list, layer inputs are appended to it for backprop."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != net.weights[0].shape[0]:
        raise DimensionMismatch(f"input has shape {a.shape}, net expects {net.weights[0].shape[0]} columns")
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        if keep is not None:
            keep.append(a)
        h = a @ w
        h += b
        if i < last:
            a = np.maximum(h, 0.0)
        else:
            a = _sigmoid(h) if net.output == "sigmoid" else h
    return a


def mlp_loss_and_grad(net: MLP, a: np.ndarray, y: np.ndarray):
    """Mean squared error over batch and outputs, and its exact gradient.

    Returns (loss, grads) with grads ordered like ``net.params()``.
    """
    y = np.asarray(y, dtype=np.float64)
    acts: list = []
    out = mlp_forward(net, a, keep=acts)
    if out.shape != y.shape:
        raise DimensionMismatch(f"prediction {out.shape} vs target {y.shape}")
    diff = out - y
    loss = float(np.mean(diff * diff))
    g = (2.0 / diff.size) * diff
    if net.output == "sigmoid":
        g = g * out * (1.0 - out)
    grads = [None] * (2 * len(net.weights))
    for i in range(len(net.weights) - 1, -1, -1):
        inp = acts[i]
        grads[2 * i] = inp.T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        if i > 0:
            g = (g @ net.weights[i].T) * (inp > 0)
    return loss, grads


@dataclass
class VelocityNet:
    """v(z, x, t): MLP over [pos_embed(x) | time_embed(t) | z] -> R^m."""

    mlp: MLP
    embed_dim: int
    n_time_freqs: int
    m: int

    @property
    def time_dim(self) -> int:
        return 1 + 2 * self.n_time_freqs

    @property
    def input_dim(self) -> int:
        return self.embed_dim + self.time_dim + self.m

    def copy(self) -> VelocityNet:
        return VelocityNet(self.mlp.copy(), self.embed_dim, self.n_time_freqs, self.m)

    def assemble(self, gamma, t, z) -> np.ndarray:
        gamma = np.asarray(gamma, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 1:
            z = z[:, None]
        te = time_embed(t, self.n_time_freqs)
        n = z.shape[0]
        if te.shape[0] == 1 and n > 1:
            te = np.broadcast_to(te, (n, te.shape[1]))
        if gamma.shape != (n, self.embed_dim) or te.shape[0] != n or z.shape[1] != self.m:
            raise DimensionMismatch(
                f"gamma {gamma.shape}, t {te.shape[0]} rows, z {z.shape}; "
                f"expected embed_dim={self.embed_dim}, m={self.m}")
        return np.concatenate([gamma, te, z], axis=1)

    def forward(self, gamma, t, z) -> np.ndarray:
        return mlp_forward(self.mlp, self.assemble(gamma, t, z))

    def loss_and_grad(self, gamma, t, z, target):
        return mlp_loss_and_grad(self.mlp, self.assemble(gamma, t, z), target)

    # Transport evaluates v for many time steps at fixed positions, so the
    # position part of the first affine layer is computed once.
    def position_term(self, gamma) -> np.ndarray:
        w0 = self.mlp.weights[0]
        return np.asarray(gamma, dtype=np.float64) @ w0[:self.embed_dim] + self.mlp.biases[0]

    def velocity_cached(self, pos_term: np.ndarray, t: float, z: np.ndarray) -> np.ndarray:
        """Same as forward(gamma, t, z) given pos_term = position_term(gamma)."""
        w0 = self.mlp.weights[0]
        e = self.embed_dim
        te = time_embed(t, self.n_time_freqs)[0]
        h = pos_term + (te @ w0[e:e + self.time_dim]) + z @ w0[e + self.time_dim:]
        ws, bs = self.mlp.weights, self.mlp.biases
        if len(ws) == 1:
            return _sigmoid(h) if self.mlp.output == "sigmoid" else h
        a = np.maximum(h, 0.0)
        for i in range(1, len(ws)):
            h = a @ ws[i]
            h += bs[i]
            a = np.maximum(h, 0.0) if i < len(ws) - 1 else h
        return _sigmoid(a) if self.mlp.output == "sigmoid" else a


def init_velocity_net(rng: Rng | int, embed_dim: int, m: int, hidden: list[int],
                      n_time_freqs: int = DEFAULT_TIME_FREQS) -> VelocityNet:
    if not hidden:
        raise InvalidParam("velocity net needs at least one hidden layer")
    if embed_dim < 0 or m < 1:
        raise InvalidParam("embed_dim must be >= 0 and m >= 1")
    in_dim = embed_dim + 1 + 2 * n_time_freqs + m
    mlp = init_mlp(rng, [in_dim, *hidden, m])
    return VelocityNet(mlp, embed_dim, n_time_freqs, m)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def copy(self) -> AdamState:
        return copy.deepcopy(self)


def adam_step(params: list, grads: list, state: AdamState, lr: float | None = None) -> None:
    """One in-place Adam update with bias correction."""
    if len(params) != len(grads):
        raise DimensionMismatch("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    lr = state.lr if lr is None else lr
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    step_size = lr / c1
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= step_size * m / (np.sqrt(v / c2) + state.eps)


@dataclass
class EmaState:
    shadow: list
    decay: float = 0.999

    @classmethod
    def of(cls, params: list, decay: float) -> EmaState:
        if not 0.0 <= decay < 1.0:
            raise InvalidParam(f"EMA decay must be in [0, 1), got {decay}")
        return cls([p.copy() for p in params], decay)


def ema_update(params: list, ema: EmaState) -> None:
    d = ema.decay
    for s, p in zip(ema.shadow, params):
        s *= d
        s += (1.0 - d) * p
