"""Reconstruction, sample-quality and calibration metrics, plus the moment checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.stats import norm, wasserstein_distance

from .errors import DimensionMismatch, ImageTooSmall, InsufficientSamples, SizeMismatch

EXACT_W1_MAX = 1024


def psnr(pred, truth, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); +inf when the arrays are identical."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionMismatch(f"psnr shapes differ: {pred.shape} vs {truth.shape}")
    if peak <= 0:
        raise ValueError("peak must be > 0")
    mse = float(np.mean((pred - truth) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak**2 / mse)


def _gauss_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (r / sigma) ** 2)
    return g / g.sum()


def ssim(pred, truth, peak: float = 1.0, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM with a Gaussian window, over valid (un-padded) positions and channels.

    Images are (H, W) or (H, W, C).
    """
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(truth, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionMismatch(f"ssim shapes differ: {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    if x.shape[0] < window or x.shape[1] < window:
        raise ImageTooSmall(f"image {x.shape[:2]} smaller than the {window}x{window} window")
    g = _gauss_window(window, sigma)
    r = window // 2

    def filt(a):
        a = correlate1d(a, g, axis=0, mode="constant")
        a = correlate1d(a, g, axis=1, mode="constant")
        return a[r:a.shape[0] - r, r:a.shape[1] - r]

    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    smap = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return float(np.mean(smap))


def wasserstein1(A, B, mode: str = "exact") -> float:
    """W1 between two empirical sample sets (rows are samples).

    exact: optimal assignment with Euclidean ground cost (equal sizes, <= 1024).
    pooled1d: 1D W1 between all scalar entries of A and of B.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None]
    if B.ndim == 1:
        B = B[:, None]
    if A.size == 0 or B.size == 0:
        raise SizeMismatch("sample sets must be nonempty")
    if mode == "exact":
        if A.shape != B.shape:
            raise SizeMismatch(f"exact W1 needs equal set shapes, got {A.shape} vs {B.shape}")
        if A.shape[0] > EXACT_W1_MAX:
            raise SizeMismatch(f"exact W1 limited to {EXACT_W1_MAX} samples per set")
        C = cdist(A, B)
        rows, cols = linear_sum_assignment(C)
        return float(C[rows, cols].mean())
    if mode == "pooled1d":
        return float(wasserstein_distance(A.ravel(), B.ravel()))
    raise ValueError(f"unknown W1 mode {mode!r}")


@dataclass
class ReliabilityCurve:
    levels: np.ndarray
    coverage: np.ndarray


def _order_stat_quantile(sorted_s: np.ndarray, q: float) -> np.ndarray:
    """Linear interpolation between order statistics (numpy's 'linear' method)."""
    S = sorted_s.shape[0]
    pos = q * (S - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, S - 1)
    w = pos - lo
    return sorted_s[lo] * (1.0 - w) + sorted_s[hi] * w


def reliability_curve(samples, truth, levels: int = 99) -> ReliabilityCurve:
    """Coverage of central equal-tailed ensemble intervals at levels j/(levels+1)."""
    s = np.asarray(samples, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if s.shape[1:] != truth.shape:
        raise DimensionMismatch(f"ensemble {s.shape[1:]} vs truth {truth.shape}")
    s = np.sort(s, axis=0)
    ts = np.arange(1, levels + 1) / (levels + 1)
    cov = np.empty(levels)
    for j, t in enumerate(ts):
        lo = _order_stat_quantile(s, (1.0 - t) / 2.0)
        hi = _order_stat_quantile(s, (1.0 + t) / 2.0)
        cov[j] = np.mean((truth >= lo) & (truth <= hi))
    return ReliabilityCurve(ts, cov)


def pce(samples, truth, p: float = 1.0, levels: int = 99, min_samples: int = 20):
    """Probabilistic calibration error: mean over the level grid of |coverage - level|^p.

    ``samples`` is (S, ...) and ``truth`` has the trailing shape; coverage is
    pooled over every scalar (position, variable) entry.
    """
    s = np.asarray(getattr(samples, "samples", samples), dtype=np.float64)
    if s.shape[0] < min_samples:
        raise InsufficientSamples(f"PCE needs >= {min_samples} samples, got {s.shape[0]}")
    curve = reliability_curve(s, truth, levels)
    return float(np.mean(np.abs(curve.coverage - curve.levels) ** p)), curve


def gaussian_pce(mean, std, truth, p: float = 1.0, levels: int = 99):
    """PCE for independent Gaussian predictive marginals, using exact central intervals."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.broadcast_to(np.asarray(std, dtype=np.float64), mean.shape)
    truth = np.asarray(truth, dtype=np.float64)
    if mean.shape != truth.shape:
        raise DimensionMismatch(f"mean {mean.shape} vs truth {truth.shape}")
    ts = np.arange(1, levels + 1) / (levels + 1)
    dev = np.abs(truth - mean)
    cov = np.array([np.mean(dev <= norm.ppf(0.5 + t / 2.0) * std) for t in ts])
    curve = ReliabilityCurve(ts, cov)
    return float(np.mean(np.abs(cov - ts) ** p)), curve


@dataclass
class MomentReport:
    k: int
    lhs_mean: float | None
    rhs_mean: float
    lhs_moment: float
    rhs_moment: float

    @property
    def mean_ok(self) -> bool | None:
        return None if self.lhs_mean is None else self.lhs_mean <= self.rhs_mean

    @property
    def moment_ok(self) -> bool:
        return self.lhs_moment <= self.rhs_moment

    @property
    def slack_mean(self) -> float | None:
        return None if self.lhs_mean is None else self.rhs_mean - self.lhs_mean

    @property
    def slack_moment(self) -> float:
        return self.rhs_moment - self.lhs_moment


def check_moment_bounds(target, source, lipschitz: float, k: int = 1,
                        transported_mean=None, source_mean=None) -> MomentReport:
    """Empirical sides of the two Lipschitz moment inequalities at one position.

    target[i] = T(source[i]); ``transported_mean`` is T applied to the source
    mean (needed for the first inequality). ``source_mean`` defaults to the
    sample mean.
    """
    T = np.asarray(target, dtype=np.float64).reshape(len(target), -1)
    Xi = np.asarray(source, dtype=np.float64).reshape(len(source), -1)
    if T.shape != Xi.shape:
        raise DimensionMismatch("target and source sample sets must match")
    mu = Xi.mean(axis=0) if source_mean is None else np.asarray(source_mean, dtype=np.float64).ravel()
    dev_k = float(np.mean(np.linalg.norm(Xi - mu, axis=1) ** k))
    lhs1 = None
    if transported_mean is not None:
        lhs1 = float(np.linalg.norm(T.mean(axis=0) - np.asarray(transported_mean, dtype=np.float64).ravel()))
    rhs1 = lipschitz * dev_k ** (1.0 / k)
    lhs2 = float(np.mean(np.linalg.norm(T - T.mean(axis=0), axis=1) ** k))
    rhs2 = (2.0 * lipschitz) ** k * dev_k
    return MomentReport(k, lhs1, rhs1, lhs2, rhs2)


@dataclass
class TailReport:
    t: np.ndarray
    frequency: np.ndarray
    bound: np.ndarray

    @property
    def vacuous(self) -> np.ndarray:
        return self.bound >= 1.0

    @property
    def flagged(self) -> np.ndarray:
        """Levels where the empirical frequency exceeds the bound (possible Lipschitz underestimate)."""
        return self.frequency > self.bound


def check_tail_bound(batches, lipschitz: float, source_var: float, t_grid, mu=None) -> TailReport:
    """Frequency of |batch mean - mu| > t against 4 L^2 Var(xi) / (N t^2).

    ``batches`` is (n_batches, N, m) transported samples; ``mu`` defaults to the
    pooled mean of all batches.
    """
    b = np.asarray(batches, dtype=np.float64)
    if b.ndim == 2:
        b = b[:, :, None]
    n = b.shape[1]
    mu = b.reshape(-1, b.shape[2]).mean(axis=0) if mu is None else np.asarray(mu, dtype=np.float64).ravel()
    dev = np.linalg.norm(b.mean(axis=1) - mu, axis=1)
    t = np.asarray(t_grid, dtype=np.float64)
    freq = np.array([np.mean(dev > ti) for ti in t])
    bound = 4.0 * lipschitz**2 * source_var / (n * t**2)
    return TailReport(t, freq, bound)
