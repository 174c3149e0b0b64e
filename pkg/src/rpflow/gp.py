"""Gaussian-process prior/posterior sampling and lengthscale selection.

All variables (columns) share one kernel and are independent, so a single
Cholesky factor of K(X, X) + noise I serves every column.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    AllCandidatesFailed,
    DimensionMismatch,
    InvalidParam,
    NotPositiveDefinite,
)
from .numerics import (
    DEFAULT_JITTER,
    CholeskyFactor,
    Rng,
    as_rng,
    forward_substitute,
    robust_cholesky,
    solve_with_factor,
)
from .rff import KernelSpec, RffBasis, _as_positions, embed, kernel_matrix

EXACT_CAP = 4096


@dataclass
class GpSample:
    positions: np.ndarray
    values: np.ndarray  # (N, m)
    mode: str  # "exact-cholesky" or "rff-approx"
    seed: int


def sample_prior_exact(rng: Rng | int, spec: KernelSpec, X, m: int = 1,
                       cap: int = EXACT_CAP, jitter: float = DEFAULT_JITTER) -> GpSample:
    rng = as_rng(rng)
    X = _as_positions(X)
    if X.shape[0] > cap:
        raise InvalidParam(f"{X.shape[0]} positions exceed the exact-sampling cap {cap}; use sample_prior_rff")
    f = robust_cholesky(kernel_matrix(spec, X), jitter)
    E = rng.standard_normal(X.shape[0], m)
    return GpSample(X, f.L @ E, "exact-cholesky", rng.seed)


def sample_prior_rff(rng: Rng | int, basis: RffBasis, X, m: int = 1) -> GpSample:
    """gamma(X) W with W ~ N(0, I): a GP whose covariance is exactly gamma(x).gamma(x')."""
    rng = as_rng(rng)
    X = _as_positions(X)
    W = rng.standard_normal(basis.dim, m)
    return GpSample(X, embed(basis, X) @ W, "rff-approx", rng.seed)


@dataclass
class GpPosterior:
    positions: np.ndarray
    values: np.ndarray
    spec: KernelSpec
    factor: CholeskyFactor  # of K(X, X) + noise_var I (+ jitter)
    alpha: np.ndarray  # factor^{-1} values, one column per variable

    @property
    def m(self) -> int:
        return self.values.shape[1]


def fit_posterior(spec: KernelSpec, X, values, jitter: float = DEFAULT_JITTER) -> GpPosterior:
    """Condition the zero-mean GP on (X, values).

    Duplicate positions with zero noise make K singular; jitter escalation
    usually rescues the factorization, otherwise NotPositiveDefinite is raised.
    """
    X = _as_positions(X)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] != X.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} positions but {values.shape[0]} value rows")
    K = kernel_matrix(spec, X)
    if spec.noise_var:
        K[np.diag_indices_from(K)] += spec.noise_var
    f = robust_cholesky(K, jitter)
    return GpPosterior(X, values, spec, f, solve_with_factor(f, values))


def posterior_mean_cov(post: GpPosterior, Xs, full_cov: bool = True):
    """Posterior mean (N*, m) and covariance (N*, N*), or the variance diagonal when full_cov=False."""
    Xs = _as_positions(Xs)
    if Xs.shape[1] != post.positions.shape[1]:
        raise DimensionMismatch(f"query d={Xs.shape[1]} vs training d={post.positions.shape[1]}")
    Ks = kernel_matrix(post.spec, Xs, post.positions)
    mean = Ks @ post.alpha
    V = forward_substitute(post.factor, Ks.T)
    if not full_cov:
        return mean, 1.0 - np.sum(V * V, axis=0)
    cov = kernel_matrix(post.spec, Xs) - V.T @ V
    return mean, 0.5 * (cov + cov.T)


def sample_posterior(rng: Rng | int, post: GpPosterior, Xs, S: int,
                     cap: int = EXACT_CAP, jitter: float = DEFAULT_JITTER) -> np.ndarray:
    """S joint posterior draws at Xs, shape (S, N*, m).

    When N* > cap the queries are split into blocks of at most ``cap``
    positions; each block is exact jointly and conditioned on the training
    data, but blocks are sampled independently of each other.
    """
    rng = as_rng(rng)
    Xs = _as_positions(Xs)
    n = Xs.shape[0]
    m = post.m
    if S < 1:
        raise InvalidParam("S must be >= 1")
    out = np.empty((S, n, m))
    for start in range(0, n, cap):
        sl = slice(start, min(n, start + cap))
        mean, cov = posterior_mean_cov(post, Xs[sl])
        f = robust_cholesky(cov, jitter)
        nb = mean.shape[0]
        E = rng.standard_normal(S * nb, m).reshape(S, nb, m)
        LE = f.L @ E.transpose(1, 0, 2).reshape(nb, S * m)
        out[:, sl] = mean[None] + LE.reshape(nb, S, m).transpose(1, 0, 2)
    return out


def log_likelihood(spec: KernelSpec | float, X, values, jitter: float = DEFAULT_JITTER) -> float:
    """Zero-mean GP log marginal likelihood, summed over columns.

    A KernelSpec's noise_var is added to the diagonal; a bare float is a noiseless lengthscale.
    """
    spec = spec if isinstance(spec, KernelSpec) else KernelSpec(float(spec))
    X = _as_positions(X)
    z = np.asarray(values, dtype=np.float64)
    if z.ndim == 1:
        z = z[:, None]
    K = kernel_matrix(spec, X)
    if spec.noise_var:
        K[np.diag_indices_from(K)] += spec.noise_var
    f = robust_cholesky(K, jitter)
    w = forward_substitute(f, z)
    n = X.shape[0]
    cols = z.shape[1]
    return float(-0.5 * np.sum(w * w) - 0.5 * cols * f.logdet() - 0.5 * cols * n * np.log(2 * np.pi))


def default_candidates(lo: float = 1e-3, hi: float = 1.0, per_decade: int = 32) -> np.ndarray:
    decades = np.log10(hi) - np.log10(lo)
    return np.logspace(np.log10(lo), np.log10(hi), int(round(decades * per_decade)) + 1)


def lengthscale_mle(X, values, candidates=None, jitter: float = DEFAULT_JITTER, nugget: float = 0.0):
    """Grid-search maximum-likelihood lengthscale; ties go to the smaller candidate.

    ``nugget`` is a white-noise variance added to the unit-variance kernel. Fields
    produced by ReLU networks are only piecewise smooth, and without a nugget the
    squared-exponential likelihood is dominated by those kinks.

    Returns (best lengthscale, log-likelihood per candidate; -inf where factorization failed).
    """
    X = _as_positions(X)
    if X.shape[0] < 8:
        raise InvalidParam("need at least 8 points for lengthscale selection")
    cands = default_candidates() if candidates is None else np.sort(np.asarray(candidates, dtype=np.float64))
    if np.any(cands <= 0):
        raise InvalidParam("candidate lengthscales must be > 0")
    ll = np.full(cands.shape, -np.inf)
    for i, c in enumerate(cands):
        try:
            ll[i] = log_likelihood(KernelSpec(c, nugget), X, values, jitter)
        except NotPositiveDefinite:
            pass
    if not np.any(np.isfinite(ll)):
        raise AllCandidatesFailed("no candidate lengthscale gave a factorizable kernel")
    return float(cands[int(np.argmax(ll))]), ll
