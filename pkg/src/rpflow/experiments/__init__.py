"""Registered studies: name -> (parameter defaults, runner, one-line summary)."""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

from .common import OUTPUT_ENV, ExperimentSpec, override, spec_from_file
from .images import (
    CAL_DEFAULTS,
    IMAGE_DEFAULTS,
    run_calibration_sweep,
    run_image_regression,
)
from .interpolation import INTERP_DEFAULTS, run_interpolation_check
from .toy1d import (
    DISC_DEFAULTS,
    EULER_DEFAULTS,
    MOMENT_DEFAULTS,
    T0_DEFAULTS,
    TAIL_DEFAULTS,
    run_discontinuity,
    run_euler_order,
    run_moment_bounds,
    run_t0_convergence,
    run_tail_bound,
)
from .traces import TRACE_DEFAULTS, run_trace_interpolation


@dataclass(frozen=True)
class Experiment:
    defaults: dict
    run: Callable[[ExperimentSpec], dict]
    summary: str


REGISTRY: dict[str, Experiment] = {
    "t0-convergence": Experiment(T0_DEFAULTS, run_t0_convergence,
                                 "MLE lengthscale of back-transported zeros vs 1/sigma_rff"),
    "discontinuity": Experiment(DISC_DEFAULTS, run_discontinuity,
                                "jump reproduction with continuous vs region-split sources"),
    "euler-order": Experiment(EULER_DEFAULTS, run_euler_order,
                              "forward-backward roundtrip error against step count"),
    "interpolation": Experiment(INTERP_DEFAULTS, run_interpolation_check,
                                "posterior samples at observed positions vs observations"),
    "moment-bounds": Experiment(MOMENT_DEFAULTS, run_moment_bounds,
                                "Lipschitz moment inequalities on trained toy models"),
    "tail-bound": Experiment(TAIL_DEFAULTS, run_tail_bound,
                             "Chebyshev bound on ensemble sample means"),
    "image-regression": Experiment(IMAGE_DEFAULTS, run_image_regression,
                                   "4x upsampling or 25% reconstruction against baselines"),
    "calibration-sweep": Experiment(CAL_DEFAULTS, run_calibration_sweep,
                                    "PCE against sigma_noise on a tuning image"),
    "trace-interpolation": Experiment(TRACE_DEFAULTS, run_trace_interpolation,
                                      "held-out traces of a synthetic layered volume"),
}

__all__ = ["OUTPUT_ENV", "REGISTRY", "Experiment", "ExperimentSpec", "override", "spec_from_file"]
