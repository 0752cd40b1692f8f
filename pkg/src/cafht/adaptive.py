"""Online adaptive intervals: ACI level tracking and PID-style quantile tracking.

Two implementations of the same recursions live here. :class:`AciTracker`
and :class:`PidTracker` process one scalar series step by step and are
what you want for streaming use. :func:`track_bands` runs the identical
arithmetic for many trajectories, dimensions and learning rates at once
and is what calibration and tuning use.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .core import _RANK_EPS, Interval, PredictionBand, Trajectory, TrajectorySet

TRACKERS = ("aci", "pid")


@dataclass(frozen=True)
class WarmStart:
    """Initial state shared by every trajectory a method is applied to.

    ``scores`` (shape ``(w, d)``) are artificial ACI scores drawn uniformly
    on the per-dimension range of the training residuals; ``q0`` (shape
    ``(d,)``) is the PID starting radius.
    """

    scores: np.ndarray
    q0: np.ndarray
    alpha_init: float = 0.1
    seed: Optional[int] = None
    r_min: Optional[np.ndarray] = None
    r_max: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        return self.q0.shape[0]

    @classmethod
    def zeros(cls, dim: int = 1, count: int = 5, alpha_init: float = 0.1) -> "WarmStart":
        return cls(np.zeros((count, dim)), np.zeros(dim), alpha_init)


def make_warm_start(residuals, alpha: float, seed: Optional[int] = None, count: int = 5,
                    alpha_init: float = 0.1) -> WarmStart:
    """Build warm-start state from training residuals.

    Parameters
    ----------
    residuals : array-like
        Absolute training residuals, shape ``(..., d)`` or 1-D for ``d = 1``.
    alpha : float
        Nominal miscoverage; the PID radius starts at the empirical
        ``1 - alpha`` quantile (rank ``ceil((1 - alpha)(m + 1))``, capped at
        the largest residual).
    seed : int, optional
        Seed for the uniform ACI warm scores.
    count : int
        Number of artificial ACI scores.
    """
    r = np.asarray(residuals, dtype=float)
    if r.ndim <= 1:
        r = r.reshape(-1, 1)
    r = r.reshape(-1, r.shape[-1])
    if r.shape[0] == 0:
        raise ValueError("empty training residuals")
    if np.any(r < 0) or not np.all(np.isfinite(r)):
        raise ValueError("residuals must be finite and non-negative")
    if count < 0:
        raise ValueError("count must be >= 0")
    r_min, r_max = r.min(axis=0), r.max(axis=0)
    rng = np.random.default_rng(seed)
    scores = rng.uniform(r_min, r_max, size=(count, r.shape[1]))
    m = r.shape[0]
    k = min(int(math.ceil((1 - alpha) * (m + 1) - _RANK_EPS)), m)
    q0 = np.sort(r, axis=0)[max(k, 1) - 1]
    return WarmStart(scores, q0, alpha_init, seed, r_min, r_max)


def aci_radius(sorted_hist, m, alpha_t):
    """Radius ``Q_t(1 - alpha_t)`` from the ``m`` smallest entries of each row.

    The quantile is the plain empirical one, ``ceil((1 - alpha_t) m)``-th
    smallest score. ``alpha_t <= 0`` (or no history) gives an infinite
    radius and ``alpha_t >= 1`` a zero radius.
    """
    alpha_t = np.asarray(alpha_t, dtype=float)
    if m == 0:
        return np.full(alpha_t.shape, np.inf)
    k = np.ceil((1.0 - alpha_t) * m - _RANK_EPS)
    k = np.clip(k, 1, m).astype(np.intp)
    r = np.take_along_axis(sorted_hist, (k - 1)[..., None], axis=-1)[..., 0]
    r = np.where(alpha_t <= 0.0, np.inf, r)
    return np.where(alpha_t >= 1.0, 0.0, r)


def aci_update(alpha_t, gamma, alpha, err):
    return alpha_t + gamma * (alpha - err)


def pid_update(q_t, gamma, alpha, err):
    return np.maximum(0.0, q_t + gamma * (err - alpha))


class AciTracker:
    """Adaptive conformal inference on one scalar series.

    Call :meth:`step` once per time point with the new point prediction and
    the value observed since the previous call.
    """

    def __init__(self, gamma: float, alpha: float = 0.1, warm_scores=(), alpha_init: float = 0.1):
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        self.gamma = gamma
        self.alpha = alpha
        self.alpha_t = alpha_init
        self.alpha_start = alpha_init
        self.history: List[float] = sorted(float(s) for s in warm_scores)
        self.trace: List[tuple] = []
        self._last: Optional[tuple] = None
        self._t = 0

    def radius(self) -> float:
        # scalar twin of aci_radius
        m = len(self.history)
        if m == 0 or self.alpha_t <= 0.0:
            return math.inf
        if self.alpha_t >= 1.0:
            return 0.0
        k = min(max(math.ceil((1.0 - self.alpha_t) * m - _RANK_EPS), 1), m)
        return self.history[k - 1]

    def step(self, prediction: float, observed_prev: Optional[float] = None) -> Interval:
        if observed_prev is not None:
            if self._last is None:
                raise RuntimeError("observation supplied before any interval was issued")
            pred, lo, hi, r = self._last
            score = abs(observed_prev - pred)
            err = 0.0 if lo <= observed_prev <= hi else 1.0
            self.trace.append((self._t, self.alpha_t, r, int(err)))
            self.history.insert(int(np.searchsorted(self.history, score)), score)
            self.alpha_t = float(aci_update(self.alpha_t, self.gamma, self.alpha, err))
        r = self.radius()
        lo, hi = prediction - r, prediction + r
        self._t += 1
        self._last = (prediction, lo, hi, r)
        return Interval(lo, hi)


class PidTracker:
    """Quantile tracking: the radius itself moves by ``gamma (err - alpha)``."""

    def __init__(self, gamma: float, alpha: float = 0.1, q0: float = 0.0):
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        self.gamma = gamma
        self.alpha = alpha
        self.q_t = max(0.0, float(q0))
        self.trace: List[tuple] = []
        self._last: Optional[tuple] = None
        self._t = 0

    def step(self, prediction: float, observed_prev: Optional[float] = None) -> Interval:
        if observed_prev is not None:
            if self._last is None:
                raise RuntimeError("observation supplied before any interval was issued")
            lo, hi = self._last
            err = 0.0 if lo <= observed_prev <= hi else 1.0
            self.trace.append((self._t, self.q_t, self.q_t, int(err)))
            self.q_t = float(pid_update(self.q_t, self.gamma, self.alpha, err))
        lo, hi = prediction - self.q_t, prediction + self.q_t
        self._t += 1
        self._last = (lo, hi)
        return Interval(lo, hi)


def write_trace_csv(tracker, path) -> None:
    """Dump ``t, alpha_t_or_q_t, radius, err`` rows of a finished tracker."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "alpha_t_or_q_t", "radius", "err"])
        for t, level, radius, err in tracker.trace:
            w.writerow([t, repr(float(level)), repr(float(radius)), err])


@dataclass
class TrackResult:
    """Raw adaptive bands for a batch, shapes ``(L, n, T, d)``."""

    lower: np.ndarray
    upper: np.ndarray
    level: np.ndarray = field(repr=False)  # alpha_t (ACI) or q_t (PID) used at each step
    err: np.ndarray = field(repr=False)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower


def track_bands(preds, obs, gammas, alpha: float, warm: WarmStart, tracker: str = "aci") -> TrackResult:
    """Run one tracker per (learning rate, trajectory, dimension).

    Parameters
    ----------
    preds : ndarray, shape (n, T, d)
        One-step predictions; ``preds[:, t-1]`` forecasts ``Y_t`` from
        ``Y_0..Y_{t-1}``.
    obs : ndarray, shape (n, T, d)
        Realized ``Y_1..Y_T``. Step ``t`` only reads ``obs[:, :t-1]``.
    gammas : sequence of float
        Learning rates to run side by side.
    """
    if tracker not in TRACKERS:
        raise ValueError(f"unknown tracker {tracker!r}; expected one of {TRACKERS}")
    preds = np.asarray(preds, dtype=float)
    obs = np.asarray(obs, dtype=float)
    n, T, d = preds.shape
    if obs.shape != preds.shape:
        raise ValueError(f"predictions {preds.shape} and observations {obs.shape} differ in shape")
    if warm.dim != d:
        raise ValueError(f"warm start has dimension {warm.dim}, data has {d}")
    g = np.asarray(gammas, dtype=float).reshape(-1)
    L = g.size
    shape = (L, n, d)
    gam = np.broadcast_to(g[:, None, None], shape)
    lower = np.empty((L, n, T, d))
    upper = np.empty((L, n, T, d))
    level = np.empty((L, n, T, d))
    err_all = np.empty((L, n, T, d))

    if tracker == "aci":
        w = warm.scores.shape[0]
        hist = np.full(shape + (w + T,), np.inf)
        hist[..., :w] = np.sort(warm.scores, axis=0).T[None, None, :, :]
        state = np.full(shape, float(warm.alpha_init))
    else:
        state = np.broadcast_to(np.maximum(warm.q0, 0.0), shape).astype(float)

    for t in range(T):
        p = preds[None, :, t, :]
        if tracker == "aci":
            r = aci_radius(hist, w + t, state)
        else:
            r = state
        lo = p - r
        hi = p + r
        lower[:, :, t] = lo
        upper[:, :, t] = hi
        level[:, :, t] = state
        y = obs[None, :, t, :]
        err = np.where((lo <= y) & (y <= hi), 0.0, 1.0)
        err_all[:, :, t] = err
        if tracker == "aci":
            hist[..., w + t] = np.abs(y - p)
            hist.sort(axis=-1, kind="stable")
            state = aci_update(state, gam, alpha, err)
        else:
            state = pid_update(state, gam, alpha, err)
    return TrackResult(lower, upper, level, err_all)


def one_step_inputs(f, data: TrajectorySet):
    """``(preds, obs)`` arrays of shape ``(n, T, d)`` for :func:`track_bands`."""
    preds = f.predict_all(data, 1)[:, :, 0, :]
    return preds, data.values[:, 1:, :]


def run_aci_band(f, traj: Trajectory, gamma: float, alpha: float, warm: WarmStart,
                 tracker: str = "aci") -> PredictionBand:
    """Raw adaptive band for one (normalized) trajectory."""
    data = TrajectorySet(traj.values[None], (traj.label,))
    preds, obs = one_step_inputs(f, data)
    res = track_bands(preds, obs, [gamma], alpha, warm, tracker)
    return PredictionBand(res.lower[0, 0], res.upper[0, 0])
