"""Seeded random numbers and dense linear algebra.

Random streams come from the PCG64 bit generator (O'Neill 2014, the 128-bit
LCG with XSL-RR output), whose raw 64-bit output is fixed by its definition
and therefore identical on every platform. Uniforms take the top 53 bits of
each raw word; normals use the Box-Muller transform on pairs of uniforms.
We never call numpy's own distribution samplers, whose algorithms may change
between numpy releases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NotPositiveDefinite

DEFAULT_JITTER = 1e-8
MAX_JITTER = 1e-4

_TWO_PI = 2.0 * np.pi
_INV_2_53 = 1.0 / 9007199254740992.0


class Rng:
    """Deterministic random stream.

    Single-owner: share across threads only by ``spawn``-ing children.
    """

    def __init__(self, seed: int = 0):
        seed = int(seed)
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        self.seed = seed
        self._bits = np.random.PCG64(seed)

    # -- raw stream -------------------------------------------------------
    def raw(self, n: int) -> np.ndarray:
        return self._bits.random_raw(int(n)).astype(np.uint64, copy=False)

    def uniform(self, size=None) -> np.ndarray | float:
        """Uniform draws on [0, 1) with 53 bits of resolution."""
        shape = () if size is None else (size if isinstance(size, tuple) else (int(size),))
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        if size is None:
            return float(u[0])
        return u.reshape(shape)

    def integers(self, high: int, size: int) -> np.ndarray:
        """Integers in [0, high) by scaling 53-bit uniforms (relative bias below high * 2**-53)."""
        return np.floor(self.uniform(size) * high).astype(np.int64)

    def standard_normal(self, rows: int, cols: int = 1) -> np.ndarray:
        if rows < 1 or cols < 1:
            raise ValueError("rows and cols must be >= 1")
        n = rows * cols
        half = (n + 1) // 2
        # consecutive uniforms form each pair, so a shorter request is a prefix of a longer one
        u = self.uniform(2 * half).reshape(half, 2)
        u1 = 1.0 - u[:, 0]  # (0, 1], keeps log finite
        u2 = u[:, 1]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * half)
        z[0::2] = r * np.cos(_TWO_PI * u2)
        z[1::2] = r * np.sin(_TWO_PI * u2)
        return z[:n].reshape(rows, cols)

    def normal(self, shape) -> np.ndarray:
        shape = tuple(shape) if np.ndim(shape) else (int(shape),)
        n = int(np.prod(shape, dtype=np.int64))
        return self.standard_normal(n, 1).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")

    # -- state ------------------------------------------------------------
    def spawn(self, index: int) -> Rng:
        """Child stream derived from (seed, index) only, independent of draw history."""
        ss = np.random.SeedSequence([self.seed, int(index)])
        return Rng(int(ss.generate_state(1, np.uint64)[0]))

    def child_seed(self, *path: int) -> int:
        """Integer seed for the stream at ``path`` below this one (spawn(a).spawn(b)... equivalent)."""
        rng = self
        for i in path:
            rng = rng.spawn(i)
        return rng.seed

    def get_state(self) -> dict:
        st = self._bits.state
        return {"seed": self.seed, "state": st["state"]["state"], "inc": st["state"]["inc"]}

    @classmethod
    def from_state(cls, state: dict) -> Rng:
        rng = cls(state["seed"])
        st = rng._bits.state
        st["state"] = {"state": int(state["state"]), "inc": int(state["inc"])}
        st["has_uint32"] = 0
        st["uinteger"] = 0
        rng._bits.state = st
        return rng


def as_rng(rng: Rng | int) -> Rng:
    return rng if isinstance(rng, Rng) else Rng(int(rng))


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular L with L @ L.T == A + jitter * I."""

    L: np.ndarray
    jitter: float = 0.0

    @property
    def n(self) -> int:
        return self.L.shape[0]

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.L))))


def cholesky(A: np.ndarray, jitter: float = 0.0) -> CholeskyFactor:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"cholesky needs a square matrix, got {A.shape}")
    if jitter < 0:
        raise ValueError("jitter must be >= 0")
    M = A + jitter * np.eye(A.shape[0]) if jitter else A
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"non-positive pivot at jitter={jitter:g}") from exc
    if not np.all(np.isfinite(L)) or np.any(np.diag(L) <= 0):
        raise NotPositiveDefinite(f"non-positive pivot at jitter={jitter:g}")
    return CholeskyFactor(L, float(jitter))


def robust_cholesky(A: np.ndarray, jitter: float = DEFAULT_JITTER,
                    max_jitter: float = MAX_JITTER) -> CholeskyFactor:
    """Factor A + jitter*I, escalating jitter x10 up to max_jitter."""
    j = jitter
    while True:
        try:
            return cholesky(A, j)
        except NotPositiveDefinite:
            if j >= max_jitter:
                raise
            j = min(j * 10.0 if j > 0 else DEFAULT_JITTER, max_jitter)


def solve_with_factor(f: CholeskyFactor, B: np.ndarray) -> np.ndarray:
    """Solve (A + jitter I) X = B by forward then backward substitution."""
    B = np.asarray(B, dtype=np.float64)
    if B.shape[0] != f.n:
        raise DimensionMismatch(f"factor has n={f.n}, right-hand side has {B.shape[0]} rows")
    Y = scipy.linalg.solve_triangular(f.L, B, lower=True, check_finite=False)
    return scipy.linalg.solve_triangular(f.L.T, Y, lower=False, check_finite=False)


def forward_substitute(f: CholeskyFactor, B: np.ndarray) -> np.ndarray:
    """L^{-1} B."""
    B = np.asarray(B, dtype=np.float64)
    if B.shape[0] != f.n:
        raise DimensionMismatch(f"factor has n={f.n}, right-hand side has {B.shape[0]} rows")
    return scipy.linalg.solve_triangular(f.L, B, lower=True, check_finite=False)
