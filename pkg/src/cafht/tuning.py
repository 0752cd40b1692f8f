"""Choosing the learning rate ``gamma`` without breaking the coverage guarantee.

Two routes are provided. :func:`calibrate_split` picks ``gamma`` on one half
of the calibration trajectories and calibrates on the other half.
:func:`calibrate_theory` uses every calibration trajectory for both steps
and compensates by calibrating at a stricter level ``1 - alpha'``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .adaptive import WarmStart
from .conformal import (
    W_MIN,
    CalibratedPredictor,
    _check_kind,
    expand,
    raw_bands,
    scores_for,
)
from .core import TrajectorySet, clipped_widths, empirical_quantile
from .special import inverse_beta_cdf

log = logging.getLogger(__name__)


def gamma_grid(reading: str = "offset") -> tuple:
    """Default learning-rate grid.

    ``"offset"`` steps by 0.01 from 0.001 (0.001, 0.011, ..., 0.091) and
    appends 0.1; ``"aligned"`` uses 0.001 followed by 0.01, 0.02, ..., 0.1.
    Both continue with 0.2, 0.3, ..., 0.9.
    """
    coarse = [round(0.1 * k, 10) for k in range(2, 10)]
    if reading == "offset":
        fine = [round(0.001 + 0.01 * k, 10) for k in range(10)] + [0.1]
    elif reading == "aligned":
        fine = [0.001] + [round(0.01 * k, 10) for k in range(1, 11)]
    else:
        raise ValueError(f"unknown grid reading {reading!r}")
    return tuple(fine + coarse)


DEFAULT_GRID = gamma_grid()


def check_grid(grid: Sequence[float]) -> tuple:
    g = tuple(float(x) for x in grid)
    if not g:
        raise ValueError("gamma grid is empty")
    if any(x <= 0 for x in g):
        raise ValueError("gamma grid must be strictly positive")
    if any(b <= a for a, b in zip(g, g[1:])):
        raise ValueError("gamma grid must be strictly increasing")
    return g


@dataclass
class TuningResult:
    gammas: tuple
    widths: np.ndarray
    margins: np.ndarray
    index: int
    level: float
    all_infinite: bool = False

    @property
    def gamma(self) -> float:
        return self.gammas[self.index]

    def rows(self):
        for i, g in enumerate(self.gammas):
            yield g, float(self.widths[i]), float(self.margins[i]), int(i == self.index)

    def write_csv(self, path, comment: Optional[str] = None) -> None:
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh)
            w.writerow(["gamma", "avg_width", "quantile", "selected"])
            for g, wd, q, sel in self.rows():
                w.writerow([repr(g), repr(wd), repr(q), sel])


def select_from_bands(lower, upper, obs, grid, level, score, aggregation="linf", w_min=W_MIN) -> TuningResult:
    """Width-minimizing candidate given raw bands of shape ``(L, n, T, d)``.

    For each candidate the conformal margin is computed on the same
    trajectories, the bands are expanded, and the mean clipped width is
    compared. Ties go to the smallest ``gamma``.
    """
    grid = check_grid(grid)
    widths = np.empty(len(grid))
    margins = np.empty(len(grid))
    for i in range(len(grid)):
        s = scores_for(lower[i], upper[i], obs, score, aggregation, w_min)
        q = empirical_quantile(s, level)
        lo, hi = expand(lower[i], upper[i], q, score, w_min)
        margins[i] = q
        widths[i] = float(np.mean(clipped_widths(lo, hi)))
    all_inf = bool(np.all(np.isinf(margins)))
    if all_inf:
        log.warning("every gamma candidate gives an infinite margin; keeping the smallest gamma")
        idx = 0
    else:
        idx = int(np.argmin(widths))
    return TuningResult(grid, widths, margins, idx, level, all_inf)


def select_gamma_split(f, cal1: TrajectorySet, grid=DEFAULT_GRID, alpha: float = 0.1,
                       score: str = "multiplicative", tracker: str = "aci",
                       warm: Optional[WarmStart] = None, alpha_aci: Optional[float] = None,
                       aggregation: str = "linf", level: Optional[float] = None) -> TuningResult:
    _check_kind(score, aggregation)
    if len(cal1) < 1:
        raise ValueError("empty selection set")
    grid = check_grid(grid)
    warm = warm if warm is not None else WarmStart.zeros(cal1.dim)
    alpha_aci = alpha if alpha_aci is None else alpha_aci
    level = 1 - alpha if level is None else level
    res, obs = raw_bands(f, cal1, grid, alpha_aci, warm, tracker)
    return select_from_bands(res.lower, res.upper, obs, grid, level, score, aggregation)


def margin_from_bands(lower, upper, obs, level, score, aggregation="linf", w_min=W_MIN) -> float:
    return empirical_quantile(scores_for(lower, upper, obs, score, aggregation, w_min), level)


def calibrate_split(f, cal1: TrajectorySet, cal2: TrajectorySet, grid=DEFAULT_GRID, alpha: float = 0.1,
                    score: str = "multiplicative", tracker: str = "aci", warm: Optional[WarmStart] = None,
                    alpha_aci: Optional[float] = None, aggregation: str = "linf"):
    """Select ``gamma`` on ``cal1`` and calibrate the margin on ``cal2``.

    Returns ``(predictor, tuning_result)``.
    """
    from .conformal import calibrate

    sel = select_gamma_split(f, cal1, grid, alpha, score, tracker, warm, alpha_aci, aggregation)
    cp = calibrate(f, cal2, sel.gamma, alpha, score, tracker, warm, alpha_aci, aggregation, tuning="split")
    return cp, sel


# ---- selection-corrected levels ------------------------------------------


def dkw_constant(L: int) -> float:
    """``c(L) = sqrt(2) L exp(-log 2L) / (sqrt(log 2L) + sqrt(log 2L + 4/pi))``."""
    if L < 1:
        raise ValueError("L must be >= 1")
    lg = math.log(2 * L)
    num = math.sqrt(2.0) * L * math.exp(-lg)
    return num / (math.sqrt(lg) + math.sqrt(lg + 4.0 / math.pi))


class CorrectionError(ValueError):
    pass


def dkw_corrected_level(m: int, L: int, alpha: float) -> float:
    """Miscoverage level that survives selecting among ``L`` candidates on
    the same ``m`` calibration trajectories, via the DKW inequality."""
    if m < 1 or L < 1:
        raise ValueError("m and L must be >= 1")
    err = (math.sqrt(math.log(2 * L) / 2.0) + dkw_constant(L)) / math.sqrt(m)
    a = 1.0 - (1.0 - alpha + err) / (1.0 + 1.0 / m)
    a = min(a, alpha)
    if a <= 0:
        raise CorrectionError("calibration set too small for theory correction")
    return a


def markov_bound(level_alpha: float, m: int, L: int, b: float = 100.0) -> Optional[float]:
    """Coverage lower bound for calibrating at ``level_alpha`` after selection.

    Returns ``None`` when ``floor(level_alpha (m + 1)) = 0``, where the
    bound is undefined.
    """
    l = int(math.floor(level_alpha * (m + 1) + 1e-12))
    if l < 1:
        return None
    if l > m:
        return 0.0
    return inverse_beta_cdf(1.0 / (b * L), m + 1 - l, l) * (1.0 - 1.0 / b)


def markov_corrected_level(m: int, L: int, alpha: float, b: float = 100.0, step: float = 1e-4) -> float:
    """Largest candidate ``alpha_hat <= alpha`` (on a ``step`` grid) whose
    Markov coverage bound reaches ``1 - alpha``."""
    if m < 1 or L < 1:
        raise ValueError("m and L must be >= 1")
    if b <= 1:
        raise ValueError("b must exceed 1")
    cache = {}
    n_steps = int(math.floor(alpha / step + 1e-9))
    for k in range(n_steps + 1):
        a_hat = round(alpha - k * step, 12)
        if a_hat <= 0:
            break
        l = int(math.floor(a_hat * (m + 1) + 1e-12))
        if l < 1:
            break
        if l not in cache:
            cache[l] = markov_bound(a_hat, m, L, b)
        if cache[l] is not None and cache[l] >= 1.0 - alpha:
            return a_hat
    raise CorrectionError("no candidate level satisfies the Markov bound")


def corrected_level(m: int, L: int, alpha: float, b: float = 100.0) -> float:
    """``max`` of the Markov and DKW corrected levels, whichever exist."""
    found = []
    for fn in (lambda: markov_corrected_level(m, L, alpha, b), lambda: dkw_corrected_level(m, L, alpha)):
        try:
            found.append(fn())
        except CorrectionError:
            pass
    if not found:
        raise CorrectionError("calibration set too small for theory correction")
    return min(max(found), alpha)


def calibrate_theory(f, cal: TrajectorySet, grid=DEFAULT_GRID, alpha: float = 0.1,
                     score: str = "multiplicative", tracker: str = "aci", warm: Optional[WarmStart] = None,
                     alpha_aci: Optional[float] = None, aggregation: str = "linf", b: float = 100.0):
    """Select ``gamma`` and calibrate on the same trajectories at level
    ``1 - alpha'``. Returns ``(predictor, tuning_result)``."""
    _check_kind(score, aggregation)
    grid = check_grid(grid)
    warm = warm if warm is not None else WarmStart.zeros(cal.dim)
    alpha_aci = alpha if alpha_aci is None else alpha_aci
    a_prime = corrected_level(len(cal), len(grid), alpha, b)
    res, obs = raw_bands(f, cal, grid, alpha_aci, warm, tracker)
    sel = select_from_bands(res.lower, res.upper, obs, grid, 1 - a_prime, score, aggregation)
    cp = CalibratedPredictor(f, sel.gamma, float(sel.margins[sel.index]), score, tracker, warm, alpha,
                             alpha_aci, 1 - a_prime, aggregation, W_MIN, "theory", n_cal=len(cal))
    return cp, sel
