"""Posterior samples at observed positions must return the observations.

Checked on the 1D toy and on a small image, against a tolerance derived
from each model's own forward-backward roundtrip error.
"""

from __future__ import annotations

import numpy as np

from ..cfm_train import FieldObservations, TrainConfig, train
from ..errors import InvalidParam
from ..io import image_positions, load_image
from ..numerics import Rng
from ..rff import make_basis
from ..velocity_net import init_velocity_net
from .common import ExperimentSpec, Outputs, interpolation_gap
from .images import task_mask
from .toy1d import ToySetup, train_toy

INTERP_DEFAULTS = {
    "image": "",
    "image_size": 32,
    "task": "random25",
    "n_freq": 64,
    "sigma_rff": 10.0,
    "width": 64,
    "iterations": 1500,
    "sigma_noise": 0.06,
    "posterior_lengthscale": 0.05,
    "samples": 8,
    "steps": 100,
}


def block_downsample(img: np.ndarray, size: int) -> np.ndarray:
    """Average-pool a square-ish image to at most ``size`` pixels per side (integer factors only)."""
    h, w = img.shape[:2]
    f = max(1, int(np.ceil(max(h, w) / size)))
    h2, w2 = h // f, w // f
    a = img[:h2 * f, :w2 * f].reshape(h2, f, w2, f, *img.shape[2:])
    return a.mean(axis=(1, 3))


def run_interpolation_check(spec: ExperimentSpec) -> dict:
    p = spec.resolved(INTERP_DEFAULTS)
    rows = []

    toy = train_toy(spec.cell_seed(0), ToySetup())
    g = interpolation_gap(toy.net, toy.embedder, toy.obs, p["steps"], toy.embedder.lengthscale,
                          p["samples"], spec.cell_seed(1))
    rows.append(("toy1d", g["max_gap"], g["roundtrip"], g["tolerance"]))

    if p["image"]:
        img, _ = load_image(p["image"])
        img = block_downsample(img if img.ndim == 2 else img.mean(axis=2), p["image_size"])
        h, w = img.shape
        mask = task_mask((h, w), p["task"], spec.cell_seed(2))
        obs = FieldObservations(image_positions(h, w)[mask], 2.0 * img.reshape(-1, 1)[mask] - 1.0, (0.0, 1.0))
        basis = make_basis(Rng(spec.cell_seed(3)), p["n_freq"], 2, p["sigma_rff"])
        net0 = init_velocity_net(Rng(spec.cell_seed(4)), basis.dim, 1, [p["width"]] * 4)
        tr = train(obs, basis, net0, TrainConfig(iterations=p["iterations"], sigma_noise=2.0 * p["sigma_noise"],
                                                 seed=spec.cell_seed(5)))
        g = interpolation_gap(tr.net, basis, obs, p["steps"], p["posterior_lengthscale"], p["samples"],
                              spec.cell_seed(6))
        rows.append((f"image{h}x{w}", g["max_gap"], g["roundtrip"], g["tolerance"]))
    elif p["image_size"] <= 0:
        raise InvalidParam("image_size must be positive")

    Outputs(spec.output_dir()).table("interpolation_gap.csv", ["task", "max_gap", "roundtrip", "tolerance"], rows)
    return {"rows": rows, "ok": all(r[1] <= r[3] for r in rows)}
