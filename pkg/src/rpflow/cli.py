"""rpflow command line: train / sample / eval / experiment / inspect.

Exit codes: 0 success, 1 user error (bad input, config or file), 2 internal
or numerical failure. Relative output paths are placed under
$RPFLOW_OUTPUT_ROOT when that variable is set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .baselines import NoPosition, PosEnc
from .cfm_train import FieldObservations, TrainConfig, train
from .errors import DimensionMismatch, InsufficientSamples, InvalidParam
from .experiments import OUTPUT_ENV, REGISTRY, ExperimentSpec, override, spec_from_file
from .experiments.common import _schema_type
from .experiments.images import TASKS, task_mask
from .io import (
    CHECKPOINT_MAGIC,
    ENSEMBLE_MAGIC,
    Checkpoint,
    convert_value,
    image_positions,
    load_checkpoint,
    load_ensemble,
    load_field_csv,
    load_image,
    parse_config,
    save_checkpoint,
    save_ensemble,
    save_image,
    write_loss_csv,
    write_table,
)
from .metrics import pce, psnr, ssim, wasserstein1
from .numerics import Rng
from .posterior import Ensemble, PosteriorConfig, sample_posterior, sample_prior
from .rff import RffBasis, make_basis
from .velocity_net import init_velocity_net


class UserError(Exception):
    """Bad invocation: reported with exit code 1."""


IMAGE_SUFFIXES = (".pgm", ".ppm", ".pnm")

# key -> (default, help); the type follows the default (None means optional float)
TRAIN_KEYS = {
    "data": ("", "observations: field CSV (x0.. then value columns) or PGM/PPM image"),
    "checkpoint": ("model.rpfc", "output checkpoint path"),
    "loss_csv": ("", "loss trace path (default: <checkpoint>.loss.csv)"),
    "mask": ("none", "images only: none | upsample4x | random25 selects the training pixels"),
    "mask_seed": (0, "seed of the random25 mask"),
    "embedding": ("rff", "position features: rff | posenc | none"),
    "n_freq": (128, "number of random Fourier frequencies"),
    "sigma_rff": (10.0, "frequency scale; the source lengthscale is 1/sigma_rff"),
    "posenc_freqs": (8, "octaves of the positional encoding"),
    "width": (128, "hidden width"),
    "depth": (4, "hidden layers"),
    "iterations": (2000, "Adam steps"),
    "batch_size": (256, "batch size"),
    "lr": (1e-3, "learning rate"),
    "sigma_noise": (0.0, "target noise std in data units"),
    "warmup_steps": (0, "linear learning-rate warmup steps"),
    "ema_decay": (None, "EMA decay of the weights (unset: off)"),
    "seed": (0, "master seed"),
}

SAMPLE_KEYS = {
    "checkpoint": ("model.rpfc", "trained checkpoint"),
    "mode": ("posterior", "prior | posterior"),
    "query": ("all", "all | train | test | path of a CSV whose x0.. columns give positions"),
    "samples": (32, "ensemble size S"),
    "steps": (100, "Euler steps per direction"),
    "posterior_lengthscale": (None, "source GP posterior lengthscale (default: 1/sigma_rff)"),
    "seed": (0, "sampling seed"),
    "output": ("samples.rpfe", "ensemble container path"),
    "summary_csv": ("", "per-position mean/std CSV (default: <output>.summary.csv)"),
    "image_prefix": ("", "write <prefix>_mean.pgm and <prefix>_std.pgm when sampling a whole image"),
}

METRICS = ("psnr", "ssim", "w1", "pce")


def _out_path(p: str) -> Path:
    path = Path(p)
    root = os.environ.get(OUTPUT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _in_path(p: str) -> Path:
    """An input path as given, or under the output root when only that copy exists."""
    path = Path(p)
    root = os.environ.get(OUTPUT_ENV)
    if root and not path.is_absolute() and not path.exists() and (Path(root) / path).exists():
        return Path(root) / path
    return path


def _add_keys(parser: argparse.ArgumentParser, keys: dict) -> None:
    parser.add_argument("--config", help="key = value file; flags given here override it")
    for k, (default, help_) in keys.items():
        parser.add_argument("--" + k.replace("_", "-"), dest=k, default=None, metavar="V",
                            help=f"{help_} [default: {default}]")


def _resolve(args, keys: dict) -> dict:
    schema = {k: _schema_type(d) for k, (d, _) in keys.items()}
    vals = {k: d for k, (d, _) in keys.items()}
    if args.config:
        if not Path(args.config).exists():
            raise UserError(f"config file not found: {args.config}")
        vals.update(parse_config(args.config, schema))
    for k in keys:
        v = getattr(args, k)
        if v is not None:
            vals[k] = convert_value(schema[k], v, "--" + k.replace("_", "-"))
    return vals


# -- data ---------------------------------------------------------------------

def _is_image(path: str) -> bool:
    return Path(path).suffix.lower() in IMAGE_SUFFIXES


def load_observations(meta: dict):
    """Rebuild (training observations, all positions, image shape or None) from checkpoint meta."""
    path = meta["data"]
    if not Path(path).exists():
        raise UserError(f"data file not found: {path}")
    if _is_image(path):
        img, _ = load_image(path)
        img = img if img.ndim == 3 else img[:, :, None]
        h, w, m = img.shape
        X = image_positions(h, w)
        values = img.reshape(-1, m)
        mask = np.ones(h * w, bool) if meta["mask"] == "none" else task_mask((h, w), meta["mask"], meta["mask_seed"])
        shape = (h, w, m)
    else:
        obs = load_field_csv(path)
        X, values, mask, shape = obs.positions, obs.values, np.ones(obs.n, bool), None
    a, b = meta["value_scale"], meta["value_offset"]
    obs = FieldObservations(X[mask], a * values[mask] + b)
    return obs, X, mask, shape


def _embedder(cfg: dict, d: int, rng: Rng):
    kind = cfg["embedding"]
    if kind == "rff":
        return make_basis(rng, cfg["n_freq"], d, cfg["sigma_rff"])
    if kind == "posenc":
        return PosEnc(cfg["posenc_freqs"], d)
    if kind == "none":
        return NoPosition()
    raise UserError(f"embedding must be rff, posenc or none, got {kind!r}")


def cmd_train(args) -> int:
    cfg = _resolve(args, TRAIN_KEYS)
    if not cfg["data"]:
        raise UserError("train needs a data file (--data or 'data =' in the config)")
    data = Path(cfg["data"])
    if not data.exists():
        raise UserError(f"data file not found: {data}")
    image = _is_image(str(data))
    if cfg["mask"] != "none" and (not image or cfg["mask"] not in TASKS):
        raise UserError(f"mask {cfg['mask']!r} needs an image and one of {TASKS}")
    # images are trained on 2v - 1 so pixel values sit symmetric around the source mean
    scale, offset = (2.0, -1.0) if image else (1.0, 0.0)
    meta = {"data": str(data.resolve()), "mask": cfg["mask"], "mask_seed": cfg["mask_seed"],
            "value_scale": scale, "value_offset": offset}
    obs, _, _, shape = load_observations(meta)
    if shape is not None:
        meta["image_shape"] = list(shape)
    rng = Rng(cfg["seed"])
    emb = _embedder(cfg, obs.d, rng.spawn(0))
    net = init_velocity_net(rng.spawn(1), emb.dim, obs.m, [cfg["width"]] * cfg["depth"])
    tc = TrainConfig(iterations=cfg["iterations"], batch_size=cfg["batch_size"], lr=cfg["lr"],
                     sigma_noise=scale * cfg["sigma_noise"], warmup_steps=cfg["warmup_steps"],
                     ema_decay=cfg["ema_decay"], seed=rng.child_seed(2))
    res = train(obs, emb, net, tc)
    # output locations are left out so a rerun elsewhere writes identical bytes
    meta["train_keys"] = {k: v for k, v in cfg.items() if k not in ("checkpoint", "loss_csv")}
    ck_path = _out_path(cfg["checkpoint"])
    save_checkpoint(ck_path, Checkpoint(emb, res.net, tc, meta, res.adam, res.ema))
    loss_path = _out_path(cfg["loss_csv"]) if cfg["loss_csv"] else ck_path.with_suffix(".loss.csv")
    write_loss_csv(loss_path, res.losses)
    last = float(np.mean(res.losses[-100:])) if len(res.losses) else float("nan")
    print(f"trained {cfg['iterations']} steps on {obs.n} observations; final loss {last:.5g}")
    print(f"checkpoint: {ck_path}\nloss trace: {loss_path}")
    return 0


def cmd_sample(args) -> int:
    cfg = _resolve(args, SAMPLE_KEYS)
    if cfg["mode"] not in ("prior", "posterior"):
        raise UserError(f"mode must be prior or posterior, got {cfg['mode']!r}")
    ck = load_checkpoint(_in_path(cfg["checkpoint"]))
    meta = ck.meta
    obs, X_all, mask, shape = load_observations(meta)
    q = cfg["query"]
    if q == "all":
        X = X_all
    elif q == "train":
        X = X_all[mask]
    elif q == "test":
        X = X_all[~mask]
    else:
        X = load_field_csv(q).positions if Path(q).exists() else None
        if X is None:
            raise UserError(f"query file not found: {q}")
    if X.shape[0] == 0:
        raise UserError(f"query {q!r} selects no positions")
    S, k = cfg["samples"], cfg["steps"]
    if cfg["mode"] == "prior":
        if cfg["posterior_lengthscale"] is not None:
            warnings.warn("posterior_lengthscale only affects posterior sampling; ignored for mode=prior")
        e = sample_prior(ck.net, ck.embedder, X, S, Rng(cfg["seed"]), steps=k)
    else:
        ell = cfg["posterior_lengthscale"]
        if ell is None:
            if not isinstance(ck.embedder, RffBasis):
                raise UserError("posterior_lengthscale is required for non-RFF embeddings")
            ell = ck.embedder.lengthscale
        e = sample_posterior(ck.net, ck.embedder, obs, X,
                             PosteriorConfig(lengthscale=ell, k_backward=k, k_forward=k, S=S, seed=cfg["seed"]))
    a, b = meta["value_scale"], meta["value_offset"]
    native = Ensemble((e.samples - b) / a, e.positions, e.provenance, e.seeds)
    out = _out_path(cfg["output"])
    save_ensemble(out, native)
    mean = native.samples.mean(axis=0)
    std = native.samples.std(axis=0, ddof=1) if S > 1 else np.zeros_like(mean)
    summ = _out_path(cfg["summary_csv"]) if cfg["summary_csv"] else out.with_suffix(".summary.csv")
    d, m = X.shape[1], mean.shape[1]
    header = [f"x{i}" for i in range(d)] + [f"mean{j}" for j in range(m)] + [f"std{j}" for j in range(m)]
    write_table(summ, header, np.hstack([X, mean, std]).tolist())
    print(f"{cfg['mode']} ensemble S={S} at {X.shape[0]} positions: {out}\nsummary: {summ}")
    if cfg["image_prefix"]:
        if shape is None or q != "all":
            raise UserError("image_prefix needs image data and query=all")
        ext = ".ppm" if m == 3 else ".pgm"
        for tag, arr, gain in (("mean", mean, 1.0), ("std", std, 4.0)):
            a = (arr * gain).reshape(shape)
            save_image(_out_path(f"{cfg['image_prefix']}_{tag}{ext}"), np.clip(a if m == 3 else a[:, :, 0], 0, 1))
    return 0


# -- eval ---------------------------------------------------------------------

def _load_values(path: str):
    """(positions or None, values (N, m)) from an ensemble (first member), CSV or image."""
    p = _in_path(path)
    if not p.exists():
        raise UserError(f"file not found: {path}")
    if _is_image(path):
        img, _ = load_image(p)
        img = img if img.ndim == 3 else img[:, :, None]
        return image_positions(*img.shape[:2]), img.reshape(-1, img.shape[2])
    if p.read_bytes()[:4] == ENSEMBLE_MAGIC:
        e = load_ensemble(p)
        return e.positions, e.samples[0]
    obs = load_field_csv(p)
    return obs.positions, obs.values


def _grid_shape(X: np.ndarray):
    """(H, W) when 2D positions form a complete row-major grid, else None."""
    if X.shape[1] != 2:
        return None
    r, c = np.unique(X[:, 0]), np.unique(X[:, 1])
    if r.size * c.size != X.shape[0]:
        return None
    if not np.array_equal(X, np.stack(np.meshgrid(r, c, indexing="ij"), -1).reshape(-1, 2)):
        return None
    return r.size, c.size


def evaluate(samples: np.ndarray, positions: np.ndarray, truth: np.ndarray, metrics, peak: float = 1.0):
    """Rows (metric, value) comparing an ensemble (S, N, m) with truth (N, m)."""
    if samples.shape[1:] != truth.shape:
        raise DimensionMismatch(f"ensemble values {samples.shape[1:]} vs truth {truth.shape}")
    rows = []
    mean = samples.mean(axis=0)
    for name in metrics:
        if name == "psnr":
            rows.append(("psnr", psnr(mean, truth, peak)))
        elif name == "ssim":
            g = _grid_shape(positions)
            if g is None:
                raise InvalidParam("ssim needs positions on a complete 2D grid")
            rows.append(("ssim", ssim(mean.reshape(*g, -1), truth.reshape(*g, -1), peak)))
        elif name == "w1":
            mode = "exact" if truth.shape[0] <= 1024 else "pooled1d"
            rows.append(("w1", wasserstein1(samples[0], truth, mode)))
        elif name == "pce":
            degenerate = bool(np.all(samples == samples[:1]))
            try:
                rows.append(("pce", pce(samples, truth, min_samples=1 if degenerate else 20)[0]))
            except InsufficientSamples as exc:
                raise InvalidParam(str(exc)) from exc
        else:
            raise InvalidParam(f"unknown metric {name!r}; choose from {', '.join(METRICS)}")
    return rows


def cmd_eval(args) -> int:
    p = _in_path(args.ensemble)
    if not p.exists():
        raise UserError(f"ensemble file not found: {args.ensemble}")
    e = load_ensemble(p)
    _, truth = _load_values(args.truth)
    metrics = [s.strip() for s in args.metrics.split(",") if s.strip()]
    rows = evaluate(e.samples, e.positions, truth, metrics, args.peak)
    out = _out_path(args.output)
    write_table(out, ["metric", "value"], rows)
    for name, v in rows:
        print(f"{name}\t{v:.6g}")
    return 0


# -- experiment / inspect ---------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items() if not str(k).startswith("_")}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, (int, float, str, bool)) or obj is None:
        return obj
    return repr(obj)


def cmd_experiment(args) -> int:
    if args.list or not args.name:
        for name, ex in REGISTRY.items():
            print(f"{name:22s} {ex.summary}")
        return 0
    if args.name not in REGISTRY:
        raise UserError(f"unknown experiment {args.name!r}; available: {', '.join(REGISTRY)}")
    ex = REGISTRY[args.name]
    if args.config:
        if not Path(args.config).exists():
            raise UserError(f"config file not found: {args.config}")
        spec = spec_from_file(args.name, args.config, ex.defaults)
    else:
        spec = ExperimentSpec(args.name)
    override(spec, ex.defaults, args.set)
    if args.out:
        spec.out_dir = args.out
    if args.seed is not None:
        spec.seed = args.seed
    result = ex.run(spec)
    print(json.dumps(_jsonable({k: v for k, v in result.items() if k != "rows"}), indent=1, default=str))
    where = spec.output_dir()
    print(f"outputs: {where}" if where else f"no output directory (set --out or ${OUTPUT_ENV})")
    return 0


def cmd_inspect(args) -> int:
    p = _in_path(args.file)
    if not p.exists():
        raise UserError(f"file not found: {args.file}")
    head = p.read_bytes()[:4]
    if head == CHECKPOINT_MAGIC:
        ck = load_checkpoint(p)
        emb = ck.embedder
        print(f"checkpoint {p}")
        print(f"  embedder: {type(emb).__name__} dim={emb.dim}"
              + (f" F={emb.n_freq} d={emb.d} sigma_rff={emb.sigma_rff:g}" if isinstance(emb, RffBasis) else ""))
        print(f"  net: layers {ck.net.mlp.dims} m={ck.net.m} params={ck.net.mlp.n_params()}")
        print(f"  train config: {json.dumps(_jsonable(vars(ck.config)))}")
        print(f"  adam: {'yes' if ck.adam else 'no'}  ema: {'yes' if ck.ema else 'no'}")
        print(f"  data: {ck.meta.get('data')}")
    elif head == ENSEMBLE_MAGIC:
        e = load_ensemble(p)
        print(f"ensemble {p}: provenance={e.provenance} S={e.S} N={e.n} m={e.m} d={e.positions.shape[1]}"
              f" seeds={list(e.seeds)}")
        print(f"  value range [{e.samples.min():.4g}, {e.samples.max():.4g}], mean {e.samples.mean():.4g}")
    elif head[:2] in (b"P5", b"P6"):
        img, maxval = load_image(p)
        print(f"image {p}: {img.shape[1]}x{img.shape[0]} channels={1 if img.ndim == 2 else 3} maxval={maxval}")
    else:
        obs = load_field_csv(p)
        print(f"field csv {p}: N={obs.n} d={obs.d} m={obs.m}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rpflow", description="Random process flow matching: train, sample, evaluate.")
    ap.add_argument("--version", action="version", version=f"rpflow {__version__}")
    ap.add_argument("--threads", type=int, default=1,
                    help="BLAS threads (1, the default, gives bitwise-reproducible results)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a flow to one observed field")
    _add_keys(p, TRAIN_KEYS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="draw prior or posterior ensembles from a checkpoint")
    _add_keys(p, SAMPLE_KEYS)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="score an ensemble against ground truth")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--truth", required=True, help="ensemble, field CSV or PGM/PPM image")
    p.add_argument("--metrics", default=",".join(METRICS), help="comma-separated subset of " + ", ".join(METRICS))
    p.add_argument("--peak", type=float, default=1.0, help="peak value for PSNR/SSIM")
    p.add_argument("--output", default="metrics.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run a registered study")
    p.add_argument("name", nargs="?")
    p.add_argument("--list", action="store_true", help="print the registered experiments")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one parameter (repeatable)")
    p.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV}/<name>)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("inspect", help="describe a checkpoint, ensemble, image or field CSV")
    p.add_argument("file")
    p.set_defaults(func=cmd_inspect)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors; ours is 1
        return 0 if exc.code in (0, None) else 1
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except (UserError, FileNotFoundError, ValueError) as exc:
        # InvalidParam, FormatError, DimensionMismatch and friends are ValueErrors
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # numerical failures and bugs
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
