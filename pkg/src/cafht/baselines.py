"""Comparison methods with simultaneous marginal coverage.

CFRNN splits the error budget evenly over the ``T`` steps and calibrates
each step separately. NCTP divides residuals by per-step scales
estimated on the training set and calibrates the maximum normalized
residual, so a single quantile covers the whole path.

Both accept ``steps_ahead > 1``, in which case bands are shaped
``(n, T, H, d)`` like the multi-step CAFHT output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PredictionBand, Trajectory, TrajectorySet, conformal_rank, empirical_quantile
from .multistep import MultiStepBand, multistep_targets, valid_mask

SIGMA_MIN = 1e-8


def _forecasts(f, data: TrajectorySet, H: int):
    """Predictions and aligned targets, both ``(n, T, H, d)``."""
    return f.predict_all(data, H), multistep_targets(data.values, H)


def _column_quantiles(res, level):
    """Conformal quantile of every column of ``res`` (shape ``(m, ...)``);
    NaN columns stay NaN."""
    m = res.shape[0]
    k = conformal_rank(level, m)
    if k > m:
        return np.where(np.isnan(res[0]), np.nan, np.inf)
    return np.sort(res, axis=0)[max(k, 1) - 1]


@dataclass(frozen=True)
class CfrnnModel:
    """Per-step radii at level ``1 - alpha / N`` (``N`` issued steps);
    shape ``(T, H, d)`` with every dimension sharing the step's radius."""

    forecaster: object
    radii: np.ndarray
    alpha: float
    steps_ahead: int = 1


def cfrnn_fit(f, cal: TrajectorySet, alpha: float, steps_ahead: int = 1) -> CfrnnModel:
    if len(cal) < 1:
        raise ValueError("empty calibration set")
    pred, target = _forecasts(f, cal, steps_ahead)
    res = np.abs(pred - target).max(axis=-1)  # l-inf over dimensions
    n_steps = int(np.sum(~np.isnan(res[0])))
    q = _column_quantiles(res, 1 - alpha / n_steps)
    radii = np.repeat(q[..., None], cal.dim, axis=-1)
    return CfrnnModel(f, radii, alpha, steps_ahead)


@dataclass(frozen=True)
class NctpModel:
    forecaster: object
    sigma: np.ndarray  # (T, H, d)
    margin: float
    alpha: float
    steps_ahead: int = 1


def nctp_scales(f, train: TrajectorySet, steps_ahead: int = 1, sigma_min: float = SIGMA_MIN):
    """Standard deviation of signed training residuals per ``(t, tau, j)``."""
    pred, target = _forecasts(f, train, steps_ahead)
    r = pred - target
    ddof = 1 if len(train) > 1 else 0
    with np.errstate(invalid="ignore"):
        sd = np.std(r, axis=0, ddof=ddof)
    return np.where(np.isnan(sd), 1.0, np.maximum(sd, sigma_min))


def nctp_scores(f, data: TrajectorySet, sigma, steps_ahead: int = 1):
    pred, target = _forecasts(f, data, steps_ahead)
    z = np.abs(pred - target) / sigma
    return np.nanmax(z.reshape(len(data), -1), axis=1)


def nctp_fit(f, train: TrajectorySet, cal: TrajectorySet, alpha: float, steps_ahead: int = 1,
             sigma_min: float = SIGMA_MIN) -> NctpModel:
    if len(train) < 1 or len(cal) < 1:
        raise ValueError("train and calibration sets must be non-empty")
    sigma = nctp_scales(f, train, steps_ahead, sigma_min)
    q = empirical_quantile(nctp_scores(f, cal, sigma, steps_ahead), 1 - alpha)
    return NctpModel(f, sigma, q, alpha, steps_ahead)


def _emit(pred, radius):
    invalid = ~valid_mask(pred.shape[1], pred.shape[2])[:, :, None]
    with np.errstate(invalid="ignore"):
        lo, hi = pred - radius, pred + radius
    lo = np.where(invalid, np.nan, lo)
    hi = np.where(invalid, np.nan, hi)
    return lo, hi


def cfrnn_bands(model: CfrnnModel, data: TrajectorySet):
    """``(lower, upper)`` of shape ``(n, T, H, d)``."""
    return _emit(model.forecaster.predict_all(data, model.steps_ahead), model.radii)


def nctp_bands(model: NctpModel, data: TrajectorySet):
    pred = model.forecaster.predict_all(data, model.steps_ahead)
    if np.isinf(model.margin):
        return _emit(pred, np.inf)
    return _emit(pred, model.margin * model.sigma)


def _as_band(lo, hi, H):
    if H == 1:
        return PredictionBand(lo[0, :, 0], hi[0, :, 0])
    return MultiStepBand(lo[0], hi[0])


def cfrnn_predict(model: CfrnnModel, traj: Trajectory):
    lo, hi = cfrnn_bands(model, TrajectorySet(traj.values[None], (traj.label,)))
    return _as_band(lo, hi, model.steps_ahead)


def nctp_predict(model: NctpModel, traj: Trajectory):
    lo, hi = nctp_bands(model, TrajectorySet(traj.values[None], (traj.label,)))
    return _as_band(lo, hi, model.steps_ahead)
