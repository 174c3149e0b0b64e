"""Experiment specs, seeding and output helpers shared by every study."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from ..cfm_train import FieldObservations
from ..errors import FormatError, InvalidParam
from ..io import convert_value, parse_config, save_image, write_table
from ..numerics import Rng
from ..posterior import PosteriorConfig, sample_posterior
from ..transport import roundtrip_error

OUTPUT_ENV = "RPFLOW_OUTPUT_ROOT"
COMMON_KEYS = {"seed": int, "out_dir": str}


@dataclass
class ExperimentSpec:
    """A named study, its parameter overrides, an output directory and a master seed."""

    name: str
    params: dict = field(default_factory=dict)
    out_dir: str | None = None
    seed: int = 0

    def resolved(self, defaults: dict) -> dict:
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise InvalidParam(f"{self.name}: unknown parameters {sorted(unknown)}; known: {sorted(defaults)}")
        out = dict(defaults)
        out.update(self.params)
        for k, v in out.items():
            if isinstance(v, (list, tuple)) and len(v) == 0 and k.endswith("grid"):
                raise InvalidParam(f"{self.name}: sweep grid {k!r} is empty")
            if (k.endswith("image") or k.endswith("_path")) and v and not Path(str(v)).exists():
                raise InvalidParam(f"{self.name}: file {v!r} for {k!r} does not exist")
        return out

    def output_dir(self) -> Path | None:
        if self.out_dir:
            return Path(self.out_dir)
        root = os.environ.get(OUTPUT_ENV)
        return Path(root) / self.name if root else None

    def cell_seed(self, *path: int) -> int:
        """Seed of sweep cell ``path``; depends only on (master seed, path)."""
        return Rng(self.seed).child_seed(*path)


def _schema_type(default):
    if isinstance(default, bool):
        return bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    if isinstance(default, (list, tuple)):
        return "ints" if default and all(isinstance(v, int) for v in default) else "floats"
    if default is None:
        return "optfloat"
    return str


def spec_from_file(name: str, path, defaults: dict) -> ExperimentSpec:
    schema = {k: _schema_type(v) for k, v in defaults.items()}
    schema.update(COMMON_KEYS)
    vals = parse_config(path, schema)
    seed = vals.pop("seed", 0)
    out_dir = vals.pop("out_dir", None)
    return ExperimentSpec(name, vals, out_dir, seed)


def override(spec: ExperimentSpec, defaults: dict, pairs) -> ExperimentSpec:
    """Apply `key=value` strings (command-line overrides) on top of a spec."""
    for item in pairs or ():
        if "=" not in item:
            raise FormatError(f"override {item!r} is not key=value")
        key, val = (s.strip() for s in item.split("=", 1))
        if key == "seed":
            spec.seed = int(val)
        elif key == "out_dir":
            spec.out_dir = val
        elif key in defaults:
            spec.params[key] = convert_value(_schema_type(defaults[key]), val, "override")
        else:
            raise FormatError(f"unknown parameter {key!r}; known: {', '.join(sorted(defaults))}")
    return spec


class Outputs:
    """Writes tables and images under an optional output directory (no-op when None)."""

    def __init__(self, root: Path | None):
        self.root = root
        if root is not None:
            root.mkdir(parents=True, exist_ok=True)

    def table(self, name: str, header, rows) -> None:
        if self.root is not None:
            write_table(self.root / name, header, rows)

    def curve(self, name: str, curve) -> None:
        self.table(name, ["level", "coverage"], zip(curve.levels, curve.coverage))

    def image(self, name: str, img, lo: float = 0.0, hi: float = 1.0) -> None:
        if self.root is not None:
            a = (np.asarray(img, dtype=np.float64) - lo) / max(hi - lo, 1e-12)
            save_image(self.root / name, np.clip(a, 0.0, 1.0))


def spearman(a, b) -> float:
    return float(spearmanr(a, b).statistic)


def interpolation_gap(net, embedder, obs: FieldObservations, k: int, lengthscale: float, S: int,
                      seed: int) -> dict:
    """Posterior samples at the observed points versus the observations.

    The tolerance is the forward-backward roundtrip error of the observations'
    own source values, 2 x roundtrip + 1e-6.
    """
    cfg = PosteriorConfig(lengthscale=lengthscale, k_backward=k, k_forward=k, S=S, seed=seed)
    e = sample_posterior(net, embedder, obs, obs.positions, cfg)
    gap = float(np.max(np.abs(e.samples - obs.values[None])))
    rt = roundtrip_error(net, embedder, obs.positions, e.meta["source_obs"], k)
    return {"max_gap": gap, "roundtrip": rt, "tolerance": 2 * rt + 1e-6}
