"""One-dimensional studies: source recovery for a zero target, regularity transfer
across a jump, solver order, interpolation at observed points, and the
Lipschitz moment and tail checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import gp
from ..cfm_train import FieldObservations, TrainConfig, TrainResult, train
from ..metrics import check_moment_bounds, check_tail_bound
from ..numerics import Rng
from ..posterior import sample_prior
from ..rff import RffBasis, embed, make_basis
from ..transport import estimate_lipschitz, integrate, roundtrip_error
from ..velocity_net import init_velocity_net
from .common import ExperimentSpec, Outputs, spearman


def _sine(x):
    return 0.8 * np.sin(2 * np.pi * x) + 0.3 * np.cos(6 * np.pi * x)


def _step(x, jump=1.0):
    return 0.4 * np.sin(2 * np.pi * x) + np.where(x >= 0.5, 0.5 * jump, -0.5 * jump)


TARGETS = {"sine": _sine, "zero": lambda x: np.zeros_like(x), "step": _step}


@dataclass
class ToySetup:
    n_points: int = 128
    n_freq: int = 64
    sigma_rff: float = 10.0
    width: int = 64
    depth: int = 4
    iterations: int = 2000
    batch_size: int = 256
    sigma_noise: float = 0.3
    lr: float = 1e-3


@dataclass
class ToyModel:
    embedder: object
    result: TrainResult
    obs: FieldObservations

    @property
    def net(self):
        return self.result.net


def grid(n: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)[:, None]


def train_toy(seed: int, setup: ToySetup = ToySetup(), target: str = "sine", embedder=None,
              values=None) -> ToyModel:
    """Fit the flow to a 1D target on a regular grid. Sub-streams: 0 basis, 1 init, 2 training."""
    rng = Rng(seed)
    X = grid(setup.n_points)
    vals = TARGETS[target](X[:, 0]) if values is None else values
    obs = FieldObservations(X, vals)
    if embedder is None:
        embedder = make_basis(rng.spawn(0), setup.n_freq, 1, setup.sigma_rff)
    net = init_velocity_net(rng.spawn(1), embedder.dim, 1, [setup.width] * setup.depth)
    cfg = TrainConfig(iterations=setup.iterations, batch_size=setup.batch_size, lr=setup.lr,
                      sigma_noise=setup.sigma_noise, seed=rng.child_seed(2))
    return ToyModel(embedder, train(obs, embedder, net, cfg), obs)


# -- source recovery for a constant-zero target --------------------------------

T0_DEFAULTS = {
    "sigma_rff_grid": [10.0, 20.0, 40.0, 80.0],
    "n_seeds": 10,
    "n_points": 256,
    "n_freq": 128,
    "width": 64,
    "iterations": 2000,
    "steps": 100,
    "nugget": 1e-3,
}


def run_t0_convergence(spec: ExperimentSpec) -> dict:
    """Train on Z = 0, pull the zero field back to the source and fit its GP lengthscale.

    A flow that has learned the implicit source should give a lengthscale near 1/sigma_rff.
    """
    p = spec.resolved(T0_DEFAULTS)
    setup = ToySetup(n_points=p["n_points"], n_freq=p["n_freq"], width=p["width"],
                     iterations=p["iterations"], sigma_noise=0.0)
    X = grid(p["n_points"])
    rows = []
    for s in range(p["n_seeds"]):
        for j, sig in enumerate(p["sigma_rff_grid"]):
            setup.sigma_rff = float(sig)
            m = train_toy(spec.cell_seed(s, j), setup, "zero")
            xi = integrate(m.net, m.embedder, X, np.zeros((X.shape[0], 1)), p["steps"], "backward")
            ell, _ = gp.lengthscale_mle(X, xi, nugget=p["nugget"])
            rows.append((s, float(sig), ell, 1.0 / sig, ell * sig))
    out = Outputs(spec.output_dir())
    out.table("t0_convergence.csv", ["seed", "sigma_rff", "mle_lengthscale", "inverse_sigma_rff", "ratio"], rows)
    rho = spearman([r[1] for r in rows], [r[2] for r in rows])
    return {"rows": rows, "spearman": rho}


# -- regularity transfer across a jump ----------------------------------------------

class RegionRff:
    """RFF features split by side of a threshold, plus the side indicator.

    The source features [g(x) 1{x < c}, g(x) 1{x >= c}] give a covariance that
    equals the RFF kernel within a side and zero across, so prior draws are two
    independent GPs glued at c.
    """

    def __init__(self, basis: RffBasis, threshold: float = 0.5):
        self.basis = basis
        self.threshold = threshold

    @property
    def dim(self) -> int:
        return 2 * self.basis.dim + 1

    def _parts(self, X):
        X = np.asarray(X, dtype=np.float64).reshape(-1, self.basis.d)
        g = embed(self.basis, X)
        right = (X[:, 0] >= self.threshold).astype(np.float64)[:, None]
        return g, right

    def source_features(self, X) -> np.ndarray:
        g, right = self._parts(X)
        return np.concatenate([g * (1.0 - right), g * right], axis=1)

    def embed(self, X) -> np.ndarray:
        g, right = self._parts(X)
        return np.concatenate([g * (1.0 - right), g * right, right], axis=1)


DISC_DEFAULTS = {
    "n_seeds": 20,
    "jump": 1.0,
    "n_points": 256,
    "n_freq": 64,
    "sigma_rff": 5.0,
    "width": 64,
    "iterations": 2000,
    "sigma_noise": 0.1,
    "samples": 32,
    "steps": 100,
}


def run_discontinuity(spec: ExperimentSpec) -> dict:
    """Prior increments across x = 0.5 for a continuous and a split source, per seed.

    The increment is measured between the two grid points 1/256 apart that straddle 0.5.
    """
    p = spec.resolved(DISC_DEFAULTS)
    setup = ToySetup(n_points=p["n_points"], n_freq=p["n_freq"], sigma_rff=p["sigma_rff"],
                     width=p["width"], iterations=p["iterations"], sigma_noise=p["sigma_noise"])
    X = grid(p["n_points"])
    vals = _step(X[:, 0], p["jump"])
    gap = 1.0 / 256
    probe = np.array([[0.5 - gap / 2], [0.5 + gap / 2]])
    rows = []
    for s in range(p["n_seeds"]):
        seed = spec.cell_seed(s)
        basis = make_basis(Rng(seed).spawn(0), p["n_freq"], 1, p["sigma_rff"])
        for kind, emb in (("continuous", basis), ("split", RegionRff(basis))):
            m = train_toy(seed, setup, embedder=emb, values=vals)
            e = sample_prior(m.net, emb, probe, p["samples"], Rng(seed).spawn(3), steps=p["steps"])
            inc = np.abs(e.samples[:, 1, 0] - e.samples[:, 0, 0])
            rows.append((s, kind, float(np.median(inc)), float(np.max(inc)), p["jump"]))
    out = Outputs(spec.output_dir())
    out.table("discontinuity.csv", ["seed", "source", "median_increment", "max_increment", "true_jump"], rows)
    med = {k: float(np.median([r[2] for r in rows if r[1] == k])) for k in ("continuous", "split")}
    return {"rows": rows, "median_increment": med, "jump": p["jump"]}


# -- solver order and interpolation at the observations --------------------------------

EULER_DEFAULTS = {"k_grid": [25, 50, 100], "z_max": 3.0, "n_levels": 13}


def run_euler_order(spec: ExperimentSpec, model: ToyModel | None = None) -> dict:
    p = spec.resolved(EULER_DEFAULTS)
    m = model or train_toy(spec.cell_seed(0))
    X = m.obs.positions
    levels = np.linspace(-p["z_max"], p["z_max"], p["n_levels"])
    Z = np.broadcast_to(levels[:, None, None], (levels.size, X.shape[0], 1)).copy()
    errs = [(int(k), roundtrip_error(m.net, m.embedder, X, Z, int(k))) for k in p["k_grid"]]
    Outputs(spec.output_dir()).table("euler_order.csv", ["k", "roundtrip_error"], errs)
    return {"rows": errs}


# -- moment inequalities and the sample-mean tail bound ------------------------------

MOMENT_DEFAULTS = {"n_models": 20, "n_samples": 10000, "pairs": 1000, "steps": 100, "n_positions": 3}


def run_moment_bounds(spec: ExperimentSpec, setup: ToySetup = ToySetup()) -> dict:
    p = spec.resolved(MOMENT_DEFAULTS)
    rows = []
    for s in range(p["n_models"]):
        seed = spec.cell_seed(s)
        m = train_toy(seed, setup)
        rng = Rng(seed).spawn(4)
        idx = np.linspace(0, m.obs.n - 1, p["n_positions"]).round().astype(int)
        for i in idx:
            x = m.obs.positions[i:i + 1]
            L = estimate_lipschitz(m.net, m.embedder, x, rng, p["pairs"], p["steps"])
            xi = rng.standard_normal(p["n_samples"], 1)
            Xs = np.repeat(x, p["n_samples"], axis=0)
            tz = integrate(m.net, m.embedder, Xs, xi, p["steps"], "forward")
            t0 = integrate(m.net, m.embedder, x, np.zeros((1, 1)), p["steps"], "forward")[0]
            for k in (1, 2):
                r = check_moment_bounds(tz, xi, L, k, transported_mean=t0, source_mean=np.zeros(1))
                rows.append((s, float(x[0, 0]), k, L, r.lhs_mean, r.rhs_mean, r.lhs_moment, r.rhs_moment,
                             int(r.mean_ok), int(r.moment_ok)))
    Outputs(spec.output_dir()).table(
        "moment_bounds.csv",
        ["model", "x", "k", "lipschitz", "mean_lhs", "mean_rhs", "moment_lhs", "moment_rhs", "mean_ok", "moment_ok"],
        rows)
    violations = sum((1 - r[8]) + (1 - r[9]) for r in rows)
    return {"rows": rows, "violations": violations}


TAIL_DEFAULTS = {"batch_sizes": [25, 100], "t_grid": [0.25, 0.5, 1.0], "n_batches": 10000,
                 "pairs": 1000, "steps": 20, "trained": True}


def run_tail_bound(spec: ExperimentSpec, model: ToyModel | None = None) -> dict:
    """Chebyshev bound on the sample mean, for the identity map and for a trained flow."""
    p = spec.resolved(TAIL_DEFAULTS)
    rng = Rng(spec.cell_seed(0))
    t_grid = np.asarray(p["t_grid"], dtype=np.float64)
    rows = []
    for N in p["batch_sizes"]:
        b = rng.standard_normal(p["n_batches"] * N, 1).reshape(p["n_batches"], N, 1)
        rep = check_tail_bound(b, 1.0, 1.0, t_grid, mu=np.zeros(1))
        rows += [("identity", N, t, f, bd, int(fl)) for t, f, bd, fl in
                 zip(rep.t, rep.frequency, rep.bound, rep.flagged)]
    if p["trained"]:
        m = model or train_toy(spec.cell_seed(1))
        x = m.obs.positions[m.obs.n // 3:m.obs.n // 3 + 1]
        L = estimate_lipschitz(m.net, m.embedder, x, rng, p["pairs"], p["steps"])
        for N in p["batch_sizes"]:
            xi = rng.standard_normal(p["n_batches"] * N, 1)
            tz = integrate(m.net, m.embedder, np.repeat(x, xi.shape[0], axis=0), xi, p["steps"], "forward")
            rep = check_tail_bound(tz.reshape(p["n_batches"], N, 1), L, 1.0, t_grid)
            rows += [("trained", N, t, f, bd, int(fl)) for t, f, bd, fl in
                     zip(rep.t, rep.frequency, rep.bound, rep.flagged)]
    Outputs(spec.output_dir()).table("tail_bound.csv", ["map", "batch_size", "t", "frequency", "bound", "flagged"], rows)
    return {"rows": rows}
