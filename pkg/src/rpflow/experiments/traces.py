"""Trace interpolation on a synthetic layered volume.

The volume is a 65 x 65 grid of 16-sample traces. Each trace is a sum of
Ricker-like pulses at layer interfaces whose depths are warped by smooth
random surfaces, plus one fault that offsets every interface across a line.
Traces on every eighth inline and crossline are observed and the rest are
predicted; each trace is one 16-dimensional value at a 2D position.
"""

from __future__ import annotations

import numpy as np

from ..baselines import gpr_predict
from ..cfm_train import FieldObservations, TrainConfig, train
from ..errors import InvalidParam
from ..gp import sample_prior_rff
from ..metrics import gaussian_pce, pce, psnr, ssim, wasserstein1
from ..numerics import Rng
from ..posterior import PosteriorConfig, sample_posterior
from ..rff import KernelSpec, make_basis
from ..velocity_net import init_velocity_net
from .common import ExperimentSpec, Outputs, interpolation_gap


def ricker(u: np.ndarray) -> np.ndarray:
    a = (np.pi * u) ** 2
    return (1.0 - 2.0 * a) * np.exp(-a)


def synthetic_volume(seed: int, n: int = 65, n_time: int = 16, n_layers: int = 5,
                     warp: float = 0.06, width: float = 0.12, dip: float = 0.1,
                     fault_throw: float = 0.1) -> np.ndarray:
    """(n, n, n_time) amplitudes scaled to max |a| = 1.

    ``dip`` bounds the depth change of each planar layer across the grid;
    ``warp`` scales the smooth random relief added on top.
    """
    rng = Rng(seed)
    X = np.stack(np.meshgrid(np.linspace(0, 1, n), np.linspace(0, 1, n), indexing="ij"), -1).reshape(-1, 2)
    depth0 = np.sort(rng.uniform(n_layers)) * 0.9 + 0.05
    amps = (rng.uniform(n_layers) * 1.5 + 0.5) * np.where(rng.uniform(n_layers) < 0.5, -1.0, 1.0)
    surfaces = sample_prior_rff(rng.spawn(1), make_basis(rng.spawn(2), 256, 2, 4.0), X, n_layers).values
    # fault: a line x0 = a + b x1, hanging wall shifted down
    a, b = 0.35 + 0.3 * rng.uniform(), 0.4 * (rng.uniform() - 0.5)
    hanging = (X[:, 0] > a + b * X[:, 1]).astype(np.float64)
    slopes = dip * (rng.uniform((n_layers, 2)) - 0.5)
    depths = depth0[None] + (X - 0.5) @ slopes.T + warp * surfaces + fault_throw * hanging[:, None]
    t = np.linspace(0.0, 1.0, n_time)
    vol = np.einsum("pk,pkt->pt", np.broadcast_to(amps, depths.shape),
                    ricker((t[None, None, :] - depths[:, :, None]) / width))
    vol /= np.max(np.abs(vol))
    return vol.reshape(n, n, n_time)


def line_mask(n: int, every: int) -> np.ndarray:
    """True on traces lying on every ``every``-th inline or crossline."""
    i, j = np.mgrid[0:n, 0:n]
    return ((i % every == 0) | (j % every == 0)).ravel()


class TraceProblem:
    def __init__(self, vol: np.ndarray, every: int = 8):
        self.vol = np.asarray(vol, dtype=np.float64)
        n, n2, self.m = self.vol.shape
        if n != n2:
            raise InvalidParam("trace volume must have a square spatial grid")
        self.n = n
        g = np.linspace(0.0, 1.0, n)
        self.positions = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
        self.values = self.vol.reshape(-1, self.m)
        self.train_mask = line_mask(n, every)
        self.test_mask = ~self.train_mask
        self.obs = FieldObservations(self.positions[self.train_mask], self.values[self.train_mask], (-1.0, 1.0))

    @property
    def X_test(self):
        return self.positions[self.test_mask]

    @property
    def truth_test(self):
        return self.values[self.test_mask]

    def compose(self, pred_test):
        out = self.values.copy()
        out[self.test_mask] = pred_test
        return out.reshape(self.vol.shape)

    def section_ssim(self, pred_test) -> float:
        """Mean SSIM over inline sections (position x time images), amplitudes on [-1, 1]."""
        full = self.compose(pred_test)
        return float(np.mean([ssim(full[i], self.vol[i], peak=2.0) for i in range(self.n)]))

    def psnr(self, pred_test) -> float:
        return psnr(pred_test, self.truth_test, peak=2.0)


TRACE_DEFAULTS = {
    "seeds": [0, 1, 2],
    "grid_size": 65,
    "n_time": 16,
    "every": 8,
    "n_freq": 128,
    "sigma_rff": 6.0,
    "width": 256,
    "depth": 4,
    "iterations": 6000,
    "batch_size": 256,
    "lr": 1e-3,
    "warmup_fraction": 0.25,
    "ema_decay": 0.999,
    "sigma_noise": 0.012,
    "posterior_lengthscale": 0.035,
    "samples": 64,
    "steps": 20,
    "gpr_lengthscale_grid": [0.025, 0.035, 0.05, 0.07, 0.1, 0.15],
    "w1_traces": 512,
    "check_interpolation": True,
}


def run_trace_interpolation(spec: ExperimentSpec) -> dict:
    """RP Flow posterior against noiseless GPR on held-out traces, one volume per seed.

    Returns {"rows": [(seed, method, metric, value)], "per_seed": {seed: {method: metrics}}}.
    """
    p = spec.resolved(TRACE_DEFAULTS)
    out = Outputs(spec.output_dir())
    rows, per_seed = [], {}
    for vs in p["seeds"]:
        vs = int(vs)
        prob = TraceProblem(synthetic_volume(spec.cell_seed(0, vs), p["grid_size"], p["n_time"]), p["every"])
        res = per_seed[vs] = {}
        pick = Rng(spec.cell_seed(5, vs)).permutation(prob.X_test.shape[0])[:p["w1_traces"]]

        basis = make_basis(Rng(spec.cell_seed(1, vs)), p["n_freq"], 2, p["sigma_rff"])
        net0 = init_velocity_net(Rng(spec.cell_seed(2, vs)), basis.dim, prob.m, [p["width"]] * p["depth"])
        cfg = TrainConfig(iterations=p["iterations"], batch_size=p["batch_size"], lr=p["lr"],
                          sigma_noise=p["sigma_noise"],
                          warmup_steps=int(p["warmup_fraction"] * p["iterations"]),
                          ema_decay=p["ema_decay"], seed=spec.cell_seed(3, vs))
        tr = train(prob.obs, basis, net0, cfg)
        pc = PosteriorConfig(lengthscale=p["posterior_lengthscale"], k_backward=p["steps"],
                             k_forward=p["steps"], S=p["samples"], seed=spec.cell_seed(4, vs))
        post = sample_posterior(tr.net, basis, prob.obs, prob.X_test, pc)
        mean = post.mean()
        res["rpflow"] = {
            "psnr": prob.psnr(mean),
            "ssim": prob.section_ssim(mean),
            "pce": pce(post.samples, prob.truth_test)[0],
            "w1": wasserstein1(post.samples[0][pick], prob.truth_test[pick]),
            "final_loss": float(np.mean(tr.losses[-200:])),
        }
        if p["check_interpolation"]:
            gap = interpolation_gap(tr.net, basis, prob.obs, 100, p["posterior_lengthscale"], 4,
                                    spec.cell_seed(6, vs))
            res["rpflow"].update({"train_gap": gap["max_gap"], "train_gap_tolerance": gap["tolerance"]})

        best = None
        for ell in p["gpr_lengthscale_grid"]:
            gm, gv = gpr_predict(prob.obs, KernelSpec(float(ell)), prob.X_test)
            q = prob.psnr(gm)
            if best is None or q > best[0]:
                best = (q, float(ell), gm, gv)
        q, ell, gm, gv = best
        draw = gm + np.sqrt(gv) * Rng(spec.cell_seed(7, vs)).standard_normal(*gm.shape)
        res["gpr_noiseless"] = {
            "psnr": q,
            "ssim": prob.section_ssim(gm),
            "pce": gaussian_pce(gm, np.sqrt(gv), prob.truth_test)[0],
            "w1": wasserstein1(draw[pick], prob.truth_test[pick]),
            "lengthscale": ell,
        }
        for method, met in res.items():
            rows.extend((vs, method, k, v) for k, v in met.items())
    out.table("trace_metrics.csv", ["volume_seed", "method", "metric", "value"], rows)
    return {"rows": rows, "per_seed": per_seed}
