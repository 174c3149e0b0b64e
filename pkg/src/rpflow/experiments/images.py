"""Image regression at desk scale: 4x upsampling and 25% random-pixel reconstruction.

Pixel values in [0, 1] are mapped to [-1, 1] for the flow and the GP
baselines; ``sigma_noise`` values in specs are in native [0, 1] pixel units
and are doubled when handed to the trainer.
"""

from __future__ import annotations

import numpy as np

from ..baselines import gpr_predict, rpflow_ablation, train_rff_net
from ..cfm_train import FieldObservations, TrainConfig, train
from ..errors import InvalidParam
from ..io import image_positions, load_image
from ..metrics import gaussian_pce, pce, psnr, ssim
from ..numerics import Rng
from ..posterior import PosteriorConfig, sample_posterior, sample_prior
from ..rff import KernelSpec, make_basis
from ..velocity_net import init_velocity_net
from .common import ExperimentSpec, Outputs

TASKS = ("upsample4x", "random25")


def task_mask(shape, task: str, seed: int = 0) -> np.ndarray:
    """Boolean training mask over the (H, W) pixel grid, row-major flattened."""
    h, w = shape
    if task == "upsample4x":
        rr, cc = np.mgrid[0:h, 0:w]
        return ((rr % 4 == 1) & (cc % 4 == 1)).ravel()
    if task == "random25":
        n = h * w
        keep = Rng(seed).permutation(n)[:int(round(0.25 * n))]
        mask = np.zeros(n, dtype=bool)
        mask[keep] = True
        return mask
    raise InvalidParam(f"unknown image task {task!r}; expected one of {TASKS}")


class ImageProblem:
    """An image split into training pixels and held-out pixels."""

    def __init__(self, img: np.ndarray, task: str, seed: int = 0):
        img = np.asarray(img, dtype=np.float64)
        self.img = img if img.ndim == 3 else img[:, :, None]
        self.h, self.w, self.m = self.img.shape
        self.positions = image_positions(self.h, self.w)
        self.values = self.img.reshape(-1, self.m)
        self.train_mask = task_mask((self.h, self.w), task, seed)
        self.test_mask = ~self.train_mask
        self.obs = FieldObservations(self.positions[self.train_mask],
                                     2.0 * self.values[self.train_mask] - 1.0, (0.0, 1.0))

    @property
    def X_test(self) -> np.ndarray:
        return self.positions[self.test_mask]

    @property
    def truth_test(self) -> np.ndarray:
        return self.values[self.test_mask]

    def compose(self, pred_test: np.ndarray) -> np.ndarray:
        """Full image with observed pixels kept and held-out pixels from ``pred_test`` ([0, 1] units)."""
        out = self.values.copy()
        out[self.test_mask] = pred_test
        return out.reshape(self.h, self.w, self.m)

    def scores(self, pred_test: np.ndarray) -> tuple[float, float]:
        return psnr(pred_test, self.truth_test), ssim(self.compose(pred_test), self.img)


def to_unit(v):
    return (np.asarray(v) + 1.0) / 2.0


IMAGE_DEFAULTS = {
    "image": "",
    "task": "upsample4x",
    "mask_seed": 0,
    "n_freq": 128,
    "sigma_rff": 10.0,
    "width": 128,
    "depth": 4,
    "iterations": 3000,
    "batch_size": 256,
    "lr": 1e-3,
    "sigma_noise_grid": [0.0, 0.06],
    "posterior_lengthscale": 0.03,
    "posterior_lengthscale_grid": [0.03],
    "samples": 32,
    "steps": 20,
    "gpr_lengthscale_grid": [0.02, 0.03, 0.04, 0.05],
    "gpr_noise_grid": [0.03, 0.06, 0.1, 0.15],
    "rff_net": True,
    "rff_net_sigma": 16.0,
    "ablations": False,
    # chosen on the tuning image at 64 px (5 octaves overfit); 0 falls back to posenc_freqs_for
    "posenc_freqs": 4,
}


def posenc_freqs_for(side: int) -> int:
    """Octave count scaled to resolution: 8 at 512 pixels, one fewer per halving."""
    return max(1, int(round(8 - np.log2(512.0 / side))))


def _flow_cfg(p, sigma_native: float, seed: int) -> TrainConfig:
    return TrainConfig(iterations=p["iterations"], batch_size=p["batch_size"], lr=p["lr"],
                       sigma_noise=2.0 * sigma_native, seed=seed)


def evaluate_flow(prob: ImageProblem, net, embedder, p, seed: int, ell: float) -> dict:
    """Prior and posterior ensembles at held-out pixels, scored in [0, 1] units."""
    X = prob.X_test
    truth = prob.truth_test
    prior = sample_prior(net, embedder, X, p["samples"], Rng(seed).spawn(0), steps=p["steps"])
    prior_s = to_unit(prior.samples)
    post = sample_posterior(net, embedder, prob.obs, X,
                            PosteriorConfig(lengthscale=ell, k_backward=p["steps"], k_forward=p["steps"],
                                            S=p["samples"], seed=Rng(seed).child_seed(1)))
    post_s = to_unit(post.samples)
    post_mean = post_s.mean(axis=0)
    prior_pce, prior_curve = pce(prior_s, truth)
    post_pce, post_curve = pce(post_s, truth)
    post_psnr, post_ssim = prob.scores(post_mean)
    return {
        "prior_psnr": float(np.mean([psnr(s, truth) for s in prior_s])),
        "prior_ssim": float(np.mean([ssim(prob.compose(s), prob.img) for s in prior_s])),
        "prior_pce": prior_pce,
        "posterior_psnr": post_psnr,
        "posterior_ssim": post_ssim,
        "posterior_pce": post_pce,
        "posterior_sample_psnr": float(np.mean([psnr(s, truth) for s in post_s])),
        "_curves": {"prior": prior_curve, "posterior": post_curve},
        "_mean": post_mean,
        "_std": post_s.std(axis=0, ddof=1),
    }


def run_image_regression(spec: ExperimentSpec, img: np.ndarray | None = None) -> dict:
    """Train and score RP Flow (one model per sigma_noise) and the baselines on one image.

    Returns {"rows": [(method, sigma, metric, value), ...], "metrics": nested dict}.
    """
    p = spec.resolved(IMAGE_DEFAULTS)
    if img is None:
        if not p["image"]:
            raise InvalidParam("image regression needs an image path or array")
        img, _ = load_image(p["image"])
    prob = ImageProblem(img, p["task"], p["mask_seed"])
    out = Outputs(spec.output_dir())
    res: dict = {}
    rows = []

    def record(method, sigma, metrics):
        res.setdefault(method, {})[sigma] = {k: v for k, v in metrics.items() if not k.startswith("_")}
        rows.extend((method, sigma, k, v) for k, v in metrics.items() if not k.startswith("_"))

    basis = make_basis(Rng(spec.cell_seed(0)), p["n_freq"], 2, p["sigma_rff"])
    for i, sig in enumerate(p["sigma_noise_grid"]):
        net0 = init_velocity_net(Rng(spec.cell_seed(1)), basis.dim, prob.m, [p["width"]] * p["depth"])
        tr = train(prob.obs, basis, net0, _flow_cfg(p, sig, spec.cell_seed(2, i)))
        ev = evaluate_flow(prob, tr.net, basis, p, spec.cell_seed(3, i), p["posterior_lengthscale"])
        record("rpflow", float(sig), ev)
        tag = f"rpflow_sigma{sig:g}"
        out.curve(f"{tag}_prior_reliability.csv", ev["_curves"]["prior"])
        out.curve(f"{tag}_posterior_reliability.csv", ev["_curves"]["posterior"])
        out.image(f"{tag}_mean.pgm", prob.compose(ev["_mean"])[:, :, 0])
        out.image(f"{tag}_std.pgm", _std_map(prob, ev["_std"]), 0.0, 0.25)
        if i == 0 and len(p["posterior_lengthscale_grid"]) > 1:
            for ell in p["posterior_lengthscale_grid"]:
                post = sample_posterior(tr.net, basis, prob.obs, prob.X_test,
                                        PosteriorConfig(lengthscale=ell, k_backward=p["steps"],
                                                        k_forward=p["steps"], S=p["samples"],
                                                        seed=spec.cell_seed(4)))
                q, s = prob.scores(to_unit(post.samples).mean(axis=0))
                record("rpflow_posterior_lengthscale", float(ell), {"posterior_psnr": q, "posterior_ssim": s})
        if i == 0 and p["ablations"]:
            record("rpflow_rff", float(sig), {"posterior_psnr": ev["posterior_psnr"]})
            J = p["posenc_freqs"] or posenc_freqs_for(min(prob.h, prob.w))
            for kind in ("rpflow_posenc", "rpflow_no_pos"):
                emb, atr = rpflow_ablation(kind, prob.obs, _flow_cfg(p, sig, spec.cell_seed(2, i)),
                                           hidden=(p["width"],) * p["depth"], n_freqs=J,
                                           init_seed=spec.cell_seed(5))
                post = sample_posterior(atr.net, emb, prob.obs, prob.X_test,
                                        PosteriorConfig(lengthscale=p["posterior_lengthscale"],
                                                        k_backward=p["steps"], k_forward=p["steps"],
                                                        S=p["samples"], seed=spec.cell_seed(3, i)))
                q, s = prob.scores(to_unit(post.samples).mean(axis=0))
                record(kind, float(sig), {"posterior_psnr": q, "posterior_ssim": s,
                                          "final_loss": float(np.mean(atr.losses[-200:]))})

    # GPR: lengthscale tuned for PSNR (noiseless), then noise tuned for PCE (calibrated)
    best = None
    for ell in p["gpr_lengthscale_grid"]:
        mean, var = gpr_predict(prob.obs, KernelSpec(ell), prob.X_test)
        q, s = prob.scores(to_unit(mean))
        if best is None or q > best[0]:
            best = (q, s, ell, mean, var)
    q, s, ell, mean, var = best
    g_pce, g_curve = gaussian_pce(to_unit(mean), np.sqrt(var) / 2.0, prob.truth_test)
    record("gpr_noiseless", 0.0, {"psnr": q, "ssim": s, "pce": g_pce, "lengthscale": ell})
    out.curve("gpr_noiseless_reliability.csv", g_curve)
    cal = run_gpr_calibration(prob, ell, p["gpr_noise_grid"])
    record("gpr_calibrated", cal["best_sigma"], {"psnr": cal["psnr"], "ssim": cal["ssim"], "pce": cal["best_pce"],
                                                 "lengthscale": ell})

    if p["rff_net"]:
        nb = make_basis(Rng(spec.cell_seed(6)), 2 * p["n_freq"], 2, p["rff_net_sigma"])
        raw = FieldObservations(prob.obs.positions, to_unit(prob.obs.values))
        net = train_rff_net(raw, nb, TrainConfig(iterations=p["iterations"], batch_size=p["batch_size"],
                                                 lr=p["lr"], seed=spec.cell_seed(7)),
                            hidden=(p["width"],) * p["depth"])
        q, s = prob.scores(net.predict(prob.X_test))
        record("rff_net", 0.0, {"psnr": q, "ssim": s})

    out.table("metrics.csv", ["method", "sigma", "metric", "value"], rows)
    return {"rows": rows, "metrics": res}


def _std_map(prob: ImageProblem, std_test):
    full = np.zeros_like(prob.values)
    full[prob.test_mask] = std_test
    return full.reshape(prob.h, prob.w, prob.m)[:, :, 0]


def run_gpr_calibration(prob: ImageProblem, lengthscale: float, noise_grid) -> dict:
    """Observation-noise std (native units) minimizing the calibrated GPR's PCE."""
    curve = []
    for sn in noise_grid:
        # native std sn is 2 sn in the [-1, 1] working space
        mean, var = gpr_predict(prob.obs, KernelSpec(lengthscale, (2.0 * sn) ** 2), prob.X_test)
        val, _ = gaussian_pce(to_unit(mean), np.sqrt(var) / 2.0, prob.truth_test)
        q, s = prob.scores(to_unit(mean))
        curve.append((float(sn), val, q, s))
    i = int(np.argmin([c[1] for c in curve]))
    return {"best_sigma": curve[i][0], "best_pce": curve[i][1], "psnr": curve[i][2], "ssim": curve[i][3],
            "curve": curve}


CAL_DEFAULTS = dict(IMAGE_DEFAULTS, sigma_noise_grid=[0.0, 0.03, 0.06, 0.09, 0.12], model="rpflow",
                    rff_net=False)


def run_calibration_sweep(spec: ExperimentSpec, img: np.ndarray | None = None) -> dict:
    """PCE against sigma_noise on one (tuning) image; returns the argmin and the curve.

    model=rpflow scores the prior ensemble of one flow per sigma;
    model=gpr scores the calibrated GPR over the same grid (as observation-noise std).
    """
    p = spec.resolved(CAL_DEFAULTS)
    if img is None:
        img, _ = load_image(p["image"])
    prob = ImageProblem(img, p["task"], p["mask_seed"])
    grid = [float(s) for s in p["sigma_noise_grid"]]
    if p["model"] == "gpr":
        cal = run_gpr_calibration(prob, p["posterior_lengthscale"], grid)
        curve = [(s, v) for s, v, _, _ in cal["curve"]]
    elif p["model"] == "rpflow":
        basis = make_basis(Rng(spec.cell_seed(0)), p["n_freq"], 2, p["sigma_rff"])
        curve = []
        for i, sig in enumerate(grid):
            net0 = init_velocity_net(Rng(spec.cell_seed(1)), basis.dim, prob.m, [p["width"]] * p["depth"])
            tr = train(prob.obs, basis, net0, _flow_cfg(p, sig, spec.cell_seed(2, i)))
            prior = sample_prior(tr.net, basis, prob.X_test, p["samples"], Rng(spec.cell_seed(3, i)),
                                 steps=p["steps"])
            curve.append((sig, pce(to_unit(prior.samples), prob.truth_test)[0]))
    else:
        raise InvalidParam(f"calibration model must be 'rpflow' or 'gpr', got {p['model']!r}")
    Outputs(spec.output_dir()).table("calibration_sweep.csv", ["sigma", "pce1"], curve)
    best = min(curve, key=lambda c: c[1])
    return {"best_sigma": best[0], "best_pce": best[1], "curve": curve}
