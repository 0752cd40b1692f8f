"""Trajectory-level conformity scores and the calibrated band expansion.

A calibration trajectory's score is the smallest margin by which its raw
adaptive band must be widened (additively, or in units of the band's own
width) to contain the whole path. The conformal quantile of those scores,
added back to the raw band of a new trajectory, covers that entire new
trajectory with probability at least ``1 - alpha``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .adaptive import WarmStart, one_step_inputs, track_bands
from .core import PredictionBand, ShapeError, Trajectory, TrajectorySet, empirical_quantile

SCORES = ("additive", "multiplicative")
AGGREGATIONS = ("linf", "l2")
W_MIN = 1e-8


def _check_kind(score: str, aggregation: str) -> None:
    if score not in SCORES:
        raise ValueError(f"unknown score {score!r}; expected one of {SCORES}")
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"unknown aggregation {aggregation!r}; expected one of {AGGREGATIONS}")
    if aggregation == "l2" and score != "additive":
        raise ValueError("l2 aggregation is only defined for additive scores")


def _aggregate(per_dim, aggregation):
    if aggregation == "l2":
        return np.sqrt(np.sum(per_dim ** 2, axis=-1))
    return np.max(per_dim, axis=-1)


def _margins(lower, upper, y):
    below = np.maximum(lower - y, 0.0)
    above = np.maximum(y - upper, 0.0)
    return np.maximum(below, above)


def floored_width(lower, upper, w_min: float = W_MIN):
    with np.errstate(over="ignore", invalid="ignore"):
        return np.maximum(upper - lower, w_min)


def additive_scores(lower, upper, y, aggregation: str = "linf"):
    """Scores for arrays shaped ``(..., T, d)``; returns shape ``(...)``."""
    per_dim = _margins(lower, upper, y).max(axis=-2)
    return _aggregate(per_dim, aggregation)


def multiplicative_scores(lower, upper, y, w_min: float = W_MIN):
    ratio = _margins(lower, upper, y) / floored_width(lower, upper, w_min)
    return ratio.max(axis=(-2, -1))


def scores_for(lower, upper, y, score: str, aggregation: str = "linf", w_min: float = W_MIN):
    _check_kind(score, aggregation)
    if score == "additive":
        return additive_scores(lower, upper, y, aggregation)
    return multiplicative_scores(lower, upper, y, w_min)


def expand(lower, upper, margin, score: str, w_min: float = W_MIN):
    """Widen raw bands by a conformal margin (scalar or broadcastable)."""
    margin = np.asarray(margin, dtype=float)
    if score == "additive":
        pad = np.broadcast_to(margin, np.broadcast(lower, margin).shape)
    else:
        w = floored_width(lower, upper, w_min)
        with np.errstate(invalid="ignore"):
            pad = np.where(margin == 0.0, 0.0, margin * w)
    return lower - pad, upper + pad


def _check_pair(band: PredictionBand, traj: Trajectory):
    if band.lower.shape != (traj.horizon, traj.dim):
        raise ShapeError(
            f"band shape {band.lower.shape} does not match trajectory (T={traj.horizon}, d={traj.dim})"
        )


def additive_score(band: PredictionBand, traj: Trajectory, aggregation: str = "linf") -> float:
    """Largest amount by which ``band`` misses ``traj`` at any step.

    Zero exactly when the band covers the trajectory.
    """
    _check_pair(band, traj)
    return float(additive_scores(band.lower, band.upper, traj.values[1:], aggregation))


def multiplicative_score(band: PredictionBand, traj: Trajectory, w_min: float = W_MIN) -> float:
    """Like :func:`additive_score` but each miss is divided by its interval width."""
    _check_pair(band, traj)
    return float(multiplicative_scores(band.lower, band.upper, traj.values[1:], w_min))


@dataclass(frozen=True)
class CalibratedPredictor:
    """Everything needed to issue calibrated bands for new trajectories.

    ``margin`` is the conformal quantile of the calibration scores at
    ``level`` (``1 - alpha`` unless a selection correction lowered it).
    """

    forecaster: object
    gamma: float
    margin: float
    score: str
    tracker: str
    warm: WarmStart
    alpha: float
    alpha_aci: float
    level: float
    aggregation: str = "linf"
    w_min: float = W_MIN
    tuning: str = "fixed"
    normalizer: Optional[object] = None
    n_cal: int = 0

    def with_margin(self, margin: float) -> "CalibratedPredictor":
        return replace(self, margin=float(margin))


def raw_bands(f, data: TrajectorySet, gammas, alpha_aci, warm, tracker):
    preds, obs = one_step_inputs(f, data)
    return track_bands(preds, obs, gammas, alpha_aci, warm, tracker), obs


def calibrate(f, cal: TrajectorySet, gamma: float, alpha: float, score: str = "multiplicative",
              tracker: str = "aci", warm: Optional[WarmStart] = None, alpha_aci: Optional[float] = None,
              aggregation: str = "linf", level: Optional[float] = None, w_min: float = W_MIN,
              tuning: str = "fixed") -> CalibratedPredictor:
    """Score each calibration trajectory at a fixed learning rate and take the
    ``ceil(level (m + 1))``-th smallest score as the margin."""
    _check_kind(score, aggregation)
    if len(cal) < 1:
        raise ValueError("empty calibration set")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    alpha_aci = alpha if alpha_aci is None else alpha_aci
    level = 1 - alpha if level is None else level
    warm = warm if warm is not None else WarmStart.zeros(cal.dim)
    res, obs = raw_bands(f, cal, [gamma], alpha_aci, warm, tracker)
    s = scores_for(res.lower[0], res.upper[0], obs, score, aggregation, w_min)
    q = empirical_quantile(s, level)
    return CalibratedPredictor(f, float(gamma), q, score, tracker, warm, alpha, alpha_aci, level,
                               aggregation, w_min, tuning, n_cal=len(cal))


def predict_bands(cp: CalibratedPredictor, data: TrajectorySet):
    """Calibrated ``(lower, upper)`` arrays of shape ``(n, T, d)``.

    Step ``t`` of each band depends only on ``Y_0..Y_{t-1}``.
    """
    res, _ = raw_bands(cp.forecaster, data, [cp.gamma], cp.alpha_aci, cp.warm, cp.tracker)
    return expand(res.lower[0], res.upper[0], cp.margin, cp.score, cp.w_min)


def predict_band(cp: CalibratedPredictor, traj: Trajectory) -> PredictionBand:
    lo, hi = predict_bands(cp, TrajectorySet(traj.values[None], (traj.label,)))
    return PredictionBand(lo[0], hi[0])
