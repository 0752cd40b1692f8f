"""Multi-step-ahead bands: ``H`` lagged ACI tracks run side by side.

After observing ``Y_e`` (emission time ``e = 0..T-1``) the forecaster
predicts ``Y_{e+1}..Y_{e+H}``, and track ``tau`` wraps its prediction of
``Y_{e+tau}`` in an interval. Track ``tau`` learns from its own misses,
which it only sees ``tau`` steps after issuing each interval.

Band arrays are indexed ``[..., e, tau - 1, j]``; entries whose target
``e + tau`` lies beyond ``T`` are NaN.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .adaptive import WarmStart, aci_radius, aci_update
from .conformal import W_MIN, _margins, expand, floored_width
from .core import ShapeError, Trajectory, TrajectorySet, clipped_widths, empirical_quantile
from .tuning import TuningResult, check_grid


@dataclass(frozen=True)
class MultiStepBand:
    """``lower``/``upper`` of shape ``(T, H, d)``; row ``e`` targets ``Y_{e+tau}``."""

    lower: np.ndarray
    upper: np.ndarray

    @property
    def horizon(self) -> int:
        return self.lower.shape[0]

    @property
    def steps_ahead(self) -> int:
        return self.lower.shape[1]


def valid_mask(T: int, H: int) -> np.ndarray:
    """``mask[e, tau-1]`` is True iff ``e + tau <= T``."""
    e = np.arange(T)[:, None]
    tau = np.arange(1, H + 1)[None, :]
    return e + tau <= T


def multistep_targets(values, H: int):
    """``out[:, e, tau-1] = Y_{e+tau}`` (NaN past the horizon), from ``values`` of
    shape ``(n, T+1, d)``."""
    values = np.asarray(values, dtype=float)
    n, T1, d = values.shape
    T = T1 - 1
    out = np.full((n, T, H, d), np.nan)
    for k in range(H):
        tau = k + 1
        if tau <= T:
            out[:, : T - tau + 1, k] = values[:, tau:]
    return out


def run_multistep_aci(preds, obs_full, gammas, alpha: float, warm: WarmStart, decay: float = 1.0):
    """Raw multi-step ACI bands, shape ``(L, n, T, H, d)``.

    Parameters
    ----------
    preds : ndarray, shape (n, T, H, d)
        ``preds[:, e, tau-1]`` predicts ``Y_{e+tau}`` from ``Y_0..Y_e``.
    obs_full : ndarray, shape (n, T+1, d)
        ``Y_0..Y_T``.
    decay : float
        Track ``tau`` uses learning rate ``gamma * decay**(tau - 1)``.
    """
    preds = np.asarray(preds, dtype=float)
    obs_full = np.asarray(obs_full, dtype=float)
    n, T, H, d = preds.shape
    if obs_full.shape != (n, T + 1, d):
        raise ShapeError(f"observations {obs_full.shape} do not match predictions {preds.shape}")
    g = np.asarray(gammas, dtype=float).reshape(-1)
    L = g.size
    shape = (L, n, d)
    w = warm.scores.shape[0]
    lower = np.full((L, n, T, H, d), np.nan)
    upper = np.full((L, n, T, H, d), np.nan)
    hists, counts, alphas, gams = [], [], [], []
    for tau in range(1, H + 1):
        h = np.full(shape + (w + T,), np.inf)
        h[..., :w] = np.sort(warm.scores, axis=0).T[None, None, :, :]
        hists.append(h)
        counts.append(w)
        alphas.append(np.full(shape, float(warm.alpha_init)))
        gams.append(np.broadcast_to((g * decay ** (tau - 1))[:, None, None], shape))

    for s in range(T):
        y = obs_full[None, :, s, :]
        for k in range(H):
            tau = k + 1
            e_old = s - tau
            if e_old >= 0:
                p = preds[None, :, e_old, k, :]
                lo = lower[:, :, e_old, k]
                hi = upper[:, :, e_old, k]
                err = np.where((lo <= y) & (y <= hi), 0.0, 1.0)
                hists[k][..., counts[k]] = np.abs(y - p)
                counts[k] += 1
                hists[k].sort(axis=-1, kind="stable")
                alphas[k] = aci_update(alphas[k], gams[k], alpha, err)
            if s + tau <= T:
                p = preds[None, :, s, k, :]
                r = aci_radius(hists[k], counts[k], alphas[k])
                lower[:, :, s, k] = p - r
                upper[:, :, s, k] = p + r
    return lower, upper


def _fill(a, value):
    # like nan_to_num but leaves infinite bounds alone
    return np.where(np.isnan(a), value, a)


def _by_target(a, fill):
    """Re-index ``[..., e, tau-1, d]`` to ``[..., s-1, tau-1, d]`` with ``s = e + tau``."""
    T, H = a.shape[-3], a.shape[-2]
    out = np.full(a.shape, fill, dtype=float)
    for k in range(H):
        tau = k + 1
        if tau <= T:
            out[..., tau - 1 :, k, :] = a[..., : T - tau + 1, k, :]
    return out


def multistep_scores(lower, upper, obs, score: str = "additive", w_min: float = W_MIN):
    """Scores for bands shaped ``(..., T, H, d)`` against ``obs`` = ``Y_1..Y_T``
    shaped ``(..., T, d)``."""
    y = obs[..., :, None, :]
    if score == "additive":
        lo = _by_target(_fill(lower, -np.inf), -np.inf).max(axis=-2)
        hi = _by_target(_fill(upper, np.inf), np.inf).min(axis=-2)
        return _margins(lo, hi, obs).max(axis=(-2, -1))
    if score == "multiplicative":
        lo = _by_target(_fill(lower, -np.inf), -np.inf)
        hi = _by_target(_fill(upper, np.inf), np.inf)
        ratio = _margins(lo, hi, y) / floored_width(lo, hi, w_min)
        ratio = _fill(ratio, 0.0)
        return ratio.max(axis=(-3, -2, -1))
    raise ValueError(f"unknown score {score!r}")


def multistep_score(band: MultiStepBand, traj: Trajectory, score: str = "additive") -> float:
    if band.horizon != traj.horizon:
        raise ShapeError("band and trajectory horizons differ")
    return float(multistep_scores(band.lower, band.upper, traj.values[1:], score))


def covers_multistep(band: MultiStepBand, traj: Trajectory) -> bool:
    """True iff every issued region contains its realized target."""
    T, H = band.lower.shape[:2]
    mask = valid_mask(T, H)
    ok = True
    for k in range(H):
        tau = k + 1
        y = traj.values[tau : T + 1]
        n = T - tau + 1
        if n <= 0:
            continue
        lo, hi = band.lower[:n, k], band.upper[:n, k]
        ok &= bool(np.all((lo <= y) & (y <= hi)))
    return ok and bool(mask.any())


def expand_multistep(lower, upper, margin, score, w_min=W_MIN):
    lo, hi = expand(_fill(lower, 0.0), _fill(upper, 0.0), margin, score, w_min)
    nan = np.isnan(lower)
    return np.where(nan, np.nan, lo), np.where(nan, np.nan, hi)


def multistep_widths(lower, upper) -> float:
    """Mean clipped width over all issued regions."""
    w = clipped_widths(_fill(lower, 0.0), _fill(upper, 0.0))
    return float(np.mean(w[~np.isnan(lower)]))


@dataclass(frozen=True)
class CalibratedMultiStep:
    forecaster: object
    steps_ahead: int
    gamma: float
    margin: float
    score: str
    warm: WarmStart
    alpha: float
    alpha_aci: float
    level: float
    decay: float = 1.0
    w_min: float = W_MIN

    def with_margin(self, margin: float) -> "CalibratedMultiStep":
        return replace(self, margin=float(margin))


def multistep_inputs(f, data: TrajectorySet, H: int):
    return f.predict_all(data, H), data.values


def calibrate_multistep(f, cal: TrajectorySet, gamma: float, alpha: float, H: int,
                        score: str = "multiplicative", warm: Optional[WarmStart] = None,
                        alpha_aci: Optional[float] = None, decay: float = 1.0) -> CalibratedMultiStep:
    if H < 1:
        raise ValueError("H must be >= 1")
    if len(cal) < 1:
        raise ValueError("empty calibration set")
    warm = warm if warm is not None else WarmStart.zeros(cal.dim)
    alpha_aci = alpha if alpha_aci is None else alpha_aci
    preds, obs_full = multistep_inputs(f, cal, H)
    lo, hi = run_multistep_aci(preds, obs_full, [gamma], alpha_aci, warm, decay)
    s = multistep_scores(lo[0], hi[0], obs_full[:, 1:], score)
    q = empirical_quantile(s, 1 - alpha)
    return CalibratedMultiStep(f, H, float(gamma), q, score, warm, alpha, alpha_aci, 1 - alpha, decay)


def predict_multistep_bands(cp: CalibratedMultiStep, data: TrajectorySet):
    preds, obs_full = multistep_inputs(cp.forecaster, data, cp.steps_ahead)
    lo, hi = run_multistep_aci(preds, obs_full, [cp.gamma], cp.alpha_aci, cp.warm, cp.decay)
    return expand_multistep(lo[0], hi[0], cp.margin, cp.score, cp.w_min)


def predict_multistep(cp: CalibratedMultiStep, traj: Trajectory) -> MultiStepBand:
    lo, hi = predict_multistep_bands(cp, TrajectorySet(traj.values[None], (traj.label,)))
    return MultiStepBand(lo[0], hi[0])


def select_multistep_from_bands(lower, upper, obs, grid, level, score) -> TuningResult:
    grid = check_grid(grid)
    widths = np.empty(len(grid))
    margins = np.empty(len(grid))
    for i in range(len(grid)):
        q = empirical_quantile(multistep_scores(lower[i], upper[i], obs, score), level)
        lo, hi = expand_multistep(lower[i], upper[i], q, score)
        margins[i] = q
        widths[i] = multistep_widths(lo, hi)
    all_inf = bool(np.all(np.isinf(margins)))
    idx = 0 if all_inf else int(np.argmin(widths))
    return TuningResult(grid, widths, margins, idx, level, all_inf)


def calibrate_multistep_split(f, cal1: TrajectorySet, cal2: TrajectorySet, grid, alpha: float, H: int,
                              score: str = "multiplicative", warm: Optional[WarmStart] = None,
                              alpha_aci: Optional[float] = None, decay: float = 1.0):
    warm = warm if warm is not None else WarmStart.zeros(cal1.dim)
    a_aci = alpha if alpha_aci is None else alpha_aci
    preds, obs_full = multistep_inputs(f, cal1, H)
    lo, hi = run_multistep_aci(preds, obs_full, check_grid(grid), a_aci, warm, decay)
    sel = select_multistep_from_bands(lo, hi, obs_full[:, 1:], grid, 1 - alpha, score)
    cp = calibrate_multistep(f, cal2, sel.gamma, alpha, H, score, warm, alpha_aci, decay)
    return cp, sel
