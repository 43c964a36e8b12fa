"""Cached-step output prediction: heterogeneous per-group rules and baselines.

On a cached step the backbone is not called; the output is forecast from the
FULL history. The heterogeneous predictor applies one rule per token group:

    stable   reuse the last FULL output row
    linear   first-order extrapolation with the latest velocity
    chaotic  extrapolation with a smoothstep-damped blend of the two most
             recent velocities, leaning on the older one as the streak grows

Uniform baselines apply a single rule to every token; the random-grouping
baseline keeps the heterogeneous rules but permutes the labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import kernels
from .core import Timestep, TokenMatrix
from .curvature import (
    DEFAULT_EPS,
    DEFAULT_P_CHAOTIC,
    DEFAULT_P_STABLE,
    FullHistory,
    GroupAssignment,
)
from .errors import DimensionError, InsufficientHistoryError, ParameterError

DEFAULT_N_MAX = 6


class PredictorKind(str, Enum):
    CHTP = "chtp"
    UNIFORM_REUSE = "uniform-reuse"
    UNIFORM_LINEAR = "uniform-linear"
    UNIFORM_DAMPED = "uniform-damped"
    RANDOM_GROUPING = "random-grouping"


class HorizonMode(str, Enum):
    """How the extrapolation distance is derived inside the pipeline.

    TIMESTEP_DELTA uses the signed scheduler-time distance t - t_full (negative
    while denoising), which makes straight-line extrapolation exact on
    trajectories affine in scheduler time. STEP_COUNT uses the raw cached-step
    count k, reproducing the formula as published (only equivalent when the
    grid spacing is one unit and of opposite sign).
    """

    TIMESTEP_DELTA = "timestep-delta"
    STEP_COUNT = "step-count"


# Minimum FULL history entries each predictor kind needs before it can run.
MIN_HISTORY = {
    PredictorKind.CHTP: 3,
    PredictorKind.UNIFORM_REUSE: 1,
    PredictorKind.UNIFORM_LINEAR: 2,
    PredictorKind.UNIFORM_DAMPED: 3,
    PredictorKind.RANDOM_GROUPING: 3,
}

_NEEDS_GROUPS = (PredictorKind.CHTP, PredictorKind.RANDOM_GROUPING)


@dataclass(frozen=True)
class PredictorConfig:
    """Prediction policy plus the grouping knobs consumed at mask refresh.

    p_stable / p_chaotic / eps control the curvature grouping recomputed at
    every FULL step once three outputs exist; rng_seed feeds the label
    permutation of the random-grouping baseline (required for that kind).
    """

    kind: PredictorKind = PredictorKind.CHTP
    n_max: int = DEFAULT_N_MAX
    horizon_mode: HorizonMode = HorizonMode.TIMESTEP_DELTA
    rng_seed: int | None = None
    p_stable: float = DEFAULT_P_STABLE
    p_chaotic: float = DEFAULT_P_CHAOTIC
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        if self.n_max < 1:
            raise ParameterError(f"n_max must be >= 1, got {self.n_max}")
        if self.eps < 0 or not math.isfinite(self.eps):
            raise ParameterError(f"eps must be finite and >= 0, got {self.eps}")


def hermite_alpha(k: int, n_max: int) -> float:
    """Smoothstep blend weight alpha_k = 3x^2 - 2x^3, x = min(k / n_max, 1).

    Monotone in k, 0 at k = 0 (the analytic anchor), exactly 0.5 at the
    half-way point, saturating at 1 for k >= n_max.
    """
    if n_max < 1:
        raise ParameterError(f"n_max must be >= 1, got {n_max}")
    if k < 0:
        raise ParameterError(f"k must be >= 0, got {k}")
    x = min(k / n_max, 1.0)
    return 3.0 * x * x - 2.0 * x * x * x


def damped_velocity(h: FullHistory, k: int, cfg: PredictorConfig) -> TokenMatrix:
    """Convex blend (1 - alpha_k) * v_latest + alpha_k * v_prev."""
    if len(h) < 3:
        raise InsufficientHistoryError(
            f"damped velocity needs 3 FULL outputs, have {len(h)}"
        )
    alpha = hermite_alpha(k, cfg.n_max)
    return TokenMatrix((1.0 - alpha) * h.v_latest.data + alpha * h.v_prev.data)


def predict(
    h: FullHistory,
    g: GroupAssignment | None,
    k: int,
    horizon: float,
    cfg: PredictorConfig,
) -> TokenMatrix:
    """Forecast the output at extrapolation distance `horizon` from the last
    FULL output.

    horizon is in scheduler-time units and signed: the pipeline passes
    t - t_full under TIMESTEP_DELTA (negative on descending schedules) or +k
    under STEP_COUNT. The heterogeneous kinds apply the labels in `g` as
    given; the pipeline refreshes (and for random-grouping permutes) them at
    FULL steps.
    """
    if k < 1:
        raise ParameterError(f"k must be >= 1 on cached steps, got {k}")
    if not math.isfinite(horizon):
        raise ParameterError(f"horizon must be finite, got {horizon}")
    need = MIN_HISTORY[cfg.kind]
    if len(h) < need:
        raise InsufficientHistoryError(
            f"{cfg.kind.value} needs {need} FULL outputs, have {len(h)}"
        )
    y_star = h.latest.output

    if cfg.kind is PredictorKind.UNIFORM_REUSE:
        return y_star

    if cfg.kind in _NEEDS_GROUPS:
        if g is None:
            raise ParameterError(f"{cfg.kind.value} requires a group assignment")
        if g.n_tokens != y_star.n_tokens:
            raise DimensionError(
                f"assignment covers {g.n_tokens} tokens, history has {y_star.n_tokens}"
            )
        mode = kernels.MODE_BY_LABEL
        labels = g.labels
    elif cfg.kind is PredictorKind.UNIFORM_LINEAR:
        mode = kernels.MODE_LINEAR
        labels = _NO_LABELS
    else:  # UNIFORM_DAMPED
        mode = kernels.MODE_DAMPED
        labels = _NO_LABELS

    alpha = hermite_alpha(k, cfg.n_max)
    v_latest = h.v_latest.data
    # The linear-only path never reads v_prev; substitute v_latest so the
    # kernel signature stays uniform when only two outputs exist.
    v_prev = h.v_prev.data if h.v_prev is not None else v_latest
    out = kernels.blend_rows(
        y_star.data, v_latest, v_prev, labels, float(horizon), alpha, mode
    )
    return TokenMatrix(out)


_NO_LABELS = np.empty(0, dtype=np.int8)


def randomize_groups(
    g: GroupAssignment, seed: int, refresh_index: int
) -> GroupAssignment:
    """Permute labels uniformly at random while preserving group sizes.

    Deterministic in (seed, refresh_index): the pipeline calls this once per
    mask refresh so a whole cached streak shares one permutation, matching the
    refresh cadence of the real grouping.
    """
    rng = np.random.default_rng((int(seed), int(refresh_index)))
    labels = g.labels[rng.permutation(g.n_tokens)]
    labels.setflags(write=False)
    return GroupAssignment(
        kappa=g.kappa, labels=labels, source_timestep=g.source_timestep
    )


def horizon_for(
    mode: HorizonMode, current: Timestep, t_full: Timestep, k: int
) -> float:
    """Extrapolation distance for a cached step."""
    if mode is HorizonMode.TIMESTEP_DELTA:
        return current.value - t_full.value
    return float(k)
