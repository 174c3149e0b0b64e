"""Prior and posterior ensembles of the learned target process.

Posterior sampling:
  1. integrate the observations backward to the source space,
  2. condition a noiseless GP on those source values,
  3. draw joint GP samples at the query positions,
  4. integrate every draw forward to the target space.
Each source variable gets its own GP (shared kernel, shared factor).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gp
from .cfm_train import FieldObservations
from .errors import InsufficientSamples, InvalidParam
from .numerics import Rng, as_rng
from .rff import KernelSpec, RffBasis, _as_positions
from .transport import integrate
from .velocity_net import VelocityNet

DEFAULT_QUANTILES = (0.025, 0.05, 0.25, 0.5, 0.75, 0.95, 0.975)


@dataclass
class Ensemble:
    samples: np.ndarray  # (S, N, m)
    positions: np.ndarray  # (N, d)
    provenance: str  # "prior" | "posterior"
    seeds: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim == 2:
            self.samples = self.samples[:, :, None]
        if self.samples.shape[0] < 1:
            raise InvalidParam("ensemble needs at least one sample")
        if self.samples.shape[1] != self.positions.shape[0]:
            raise InvalidParam("samples and positions disagree on N")

    @property
    def S(self) -> int:
        return self.samples.shape[0]

    @property
    def n(self) -> int:
        return self.samples.shape[1]

    @property
    def m(self) -> int:
        return self.samples.shape[2]

    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)


@dataclass
class PosteriorConfig:
    lengthscale: float = 0.008
    k_backward: int = 100
    k_forward: int = 100
    S: int = 64
    seed: int = 0
    cap: int = gp.EXACT_CAP

    def __post_init__(self):
        if not self.lengthscale > 0:
            raise InvalidParam("posterior lengthscale must be > 0")
        if self.S < 1:
            raise InvalidParam("S must be >= 1")


def draw_source(rng: Rng, embedder, X, S: int, m: int, source: str = "auto",
                lengthscale: float | None = None, cap: int = gp.EXACT_CAP) -> np.ndarray:
    """S independent source-GP realizations at X, shape (S, N, m).

    source="rff" draws phi(X) W with W ~ N(0, I), where phi is the embedder's
    ``source_features`` (any N); "exact" factorizes the squared-exponential
    kernel (N <= cap); "auto" picks rff whenever the embedder offers source features.
    """
    X = _as_positions(X)
    feats = getattr(embedder, "source_features", None)
    if source == "auto":
        source = "rff" if feats is not None else "exact"
    out = np.empty((S, X.shape[0], m))
    if source == "rff":
        if feats is None:
            raise InvalidParam("rff source sampling needs an embedder with source features")
        g = feats(X)
        for s in range(S):
            out[s] = g @ rng.standard_normal(g.shape[1], m)
    elif source == "exact":
        if lengthscale is None:
            if not isinstance(embedder, RffBasis):
                raise InvalidParam("exact source sampling needs a lengthscale")
            lengthscale = embedder.lengthscale
        spec = KernelSpec(lengthscale)
        for s in range(S):
            out[s] = gp.sample_prior_exact(rng, spec, X, m, cap=cap).values
    else:
        raise InvalidParam(f"unknown source mode {source!r}")
    return out


def sample_prior(net: VelocityNet, embedder, X, S: int, rng: Rng | int, steps: int = 100,
                 source: str = "auto", lengthscale: float | None = None,
                 source_samples: np.ndarray | None = None) -> Ensemble:
    """Transport S source realizations forward. ``source_samples`` overrides the GP draw."""
    rng = as_rng(rng)
    X = _as_positions(X)
    if source_samples is None:
        source_samples = draw_source(rng, embedder, X, S, net.m, source, lengthscale)
    target = integrate(net, embedder, X, source_samples, steps, "forward")
    return Ensemble(target, X, "prior", (rng.seed,), {"source": source, "steps": steps})


def sample_posterior(net: VelocityNet, embedder, obs: FieldObservations, X, cfg: PosteriorConfig,
                     rng: Rng | int | None = None, include_train: bool = False) -> Ensemble:
    """Posterior ensemble at X (and at the training positions too when ``include_train``).

    With include_train the returned positions are X stacked above obs.positions.
    """
    rng = as_rng(cfg.seed if rng is None else rng)
    X = _as_positions(X)
    xi_obs = integrate(net, embedder, obs.positions, obs.values, cfg.k_backward, "backward")
    post = gp.fit_posterior(KernelSpec(cfg.lengthscale), obs.positions, xi_obs)
    Xq = np.vstack([X, obs.positions]) if include_train else X
    src = gp.sample_posterior(rng, post, Xq, cfg.S, cap=cfg.cap)
    target = integrate(net, embedder, Xq, src, cfg.k_forward, "forward")
    meta = {
        "lengthscale": cfg.lengthscale,
        "k_backward": cfg.k_backward,
        "k_forward": cfg.k_forward,
        "blocked": Xq.shape[0] > cfg.cap,
        "n_query": X.shape[0],
        "source_obs": xi_obs,
    }
    return Ensemble(target, Xq, "posterior", (rng.seed,), meta)


@dataclass
class Summary:
    mean: np.ndarray
    std: np.ndarray
    quantiles: dict  # level -> (N, m)


def summarize(e: Ensemble, levels=DEFAULT_QUANTILES) -> Summary:
    if e.S < 2:
        raise InsufficientSamples("need at least 2 samples for a spread estimate")
    s = e.samples
    qs = np.quantile(s, levels, axis=0, method="linear")
    return Summary(s.mean(axis=0), s.std(axis=0, ddof=1), {float(l): q for l, q in zip(levels, qs)})
