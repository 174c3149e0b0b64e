"""Random Fourier Feature embedding and the squared-exponential kernel it approximates.

With frequencies b_j ~ N(0, sigma_rff^2 I) and

    gamma(x) = [cos(B x), sin(B x)] / sqrt(F),

the dot product gamma(x) . gamma(x') is an unbiased estimate of
exp(-|x - x'|^2 / (2 l^2)) with l = 1 / sigma_rff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DimensionMismatch, InvalidParam
from .numerics import Rng, as_rng


@dataclass(frozen=True)
class KernelSpec:
    lengthscale: float
    noise_var: float = 0.0

    def __post_init__(self):
        if not self.lengthscale > 0:
            raise InvalidParam(f"lengthscale must be > 0, got {self.lengthscale}")
        if self.noise_var < 0:
            raise InvalidParam(f"noise variance must be >= 0, got {self.noise_var}")


@dataclass(frozen=True)
class RffBasis:
    B: np.ndarray  # (F, d)
    sigma_rff: float
    seed: int

    @property
    def n_freq(self) -> int:
        return self.B.shape[0]

    @property
    def d(self) -> int:
        return self.B.shape[1]

    @property
    def dim(self) -> int:
        return 2 * self.B.shape[0]

    @property
    def lengthscale(self) -> float:
        return 1.0 / self.sigma_rff

    def embed(self, X: np.ndarray) -> np.ndarray:
        return embed(self, X)

    # features whose dot products define the source covariance (used for prior sampling)
    def source_features(self, X: np.ndarray) -> np.ndarray:
        return embed(self, X)


def make_basis(rng: Rng | int, F: int, d: int, sigma_rff: float) -> RffBasis:
    if not sigma_rff > 0:
        raise InvalidParam(f"sigma_rff must be > 0, got {sigma_rff}")
    if F < 1 or d < 1:
        raise InvalidParam("F and d must be >= 1")
    rng = as_rng(rng)
    B = sigma_rff * rng.standard_normal(F, d)
    return RffBasis(B, float(sigma_rff), rng.seed)


def _as_positions(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return X


def embed(basis: RffBasis, X) -> np.ndarray:
    X = _as_positions(X)
    if X.shape[1] != basis.d:
        raise DimensionMismatch(f"positions have d={X.shape[1]}, basis expects d={basis.d}")
    proj = X @ basis.B.T
    scale = 1.0 / np.sqrt(basis.n_freq)
    return np.concatenate([np.cos(proj), np.sin(proj)], axis=1) * scale


def sq_distances(X, X2) -> np.ndarray:
    X = _as_positions(X)
    X2 = _as_positions(X2)
    if X.shape[1] != X2.shape[1]:
        raise DimensionMismatch(f"dimension mismatch: {X.shape[1]} vs {X2.shape[1]}")
    return cdist(X, X2, "sqeuclidean")


def kernel_matrix(spec: KernelSpec | float, X, X2=None) -> np.ndarray:
    """exp(-|x_i - x'_j|^2 / (2 l^2)). The noise variance is *not* added here."""
    ell = spec.lengthscale if isinstance(spec, KernelSpec) else float(spec)
    same = X2 is None or X2 is X
    X2 = X if same else X2
    K = np.exp(-0.5 * sq_distances(X, X2) / ell**2)
    if same:
        K = 0.5 * (K + K.T)
        np.fill_diagonal(K, 1.0)
    return K
