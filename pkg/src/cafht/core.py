"""Trajectories, prediction bands and the finite-sample empirical quantile."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

LABELS = ("hard", "easy")
ROLES = ("train", "cal1", "cal2", "cal", "test", "data")

# Guards ceil() against representation error, e.g. 0.9 * 20 -> 18.000000000000004.
_RANK_EPS = 1e-9


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class Interval:
    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ValueError(f"lower {self.lower} exceeds upper {self.upper}")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def __contains__(self, y: float) -> bool:
        return self.lower <= y <= self.upper


@dataclass(frozen=True)
class Trajectory:
    """A single path ``Y_0, ..., Y_T`` of ``d``-dimensional observations.

    ``values`` has shape ``(T + 1, d)``. ``label`` is experiment metadata
    (``"hard"``, ``"easy"`` or ``None``) and is never read by any method.
    """

    values: np.ndarray
    label: Optional[str] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 2 or v.shape[1] < 1:
            raise ShapeError(f"trajectory values must have shape (T+1, d) with T >= 1, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("trajectory contains non-finite values")
        if self.label not in (None,) + LABELS:
            raise ValueError(f"unknown label {self.label!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def horizon(self) -> int:
        return self.values.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PredictionBand:
    """Per-step, per-dimension closed intervals for steps ``t = 1..T``.

    ``lower`` and ``upper`` have shape ``(T, d)``; row ``t - 1`` holds the
    region for ``Y_t``. Infinite bounds are allowed.
    """

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.ndim == 1:
            lo, hi = lo[:, None], hi[:, None]
        if lo.shape != hi.shape or lo.ndim != 2:
            raise ShapeError(f"band bounds must share shape (T, d), got {lo.shape} and {hi.shape}")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValueError("band contains NaN bounds")
        if np.any(lo > hi):
            raise ValueError("band has an interval with lower > upper")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def horizon(self) -> int:
        return self.lower.shape[0]

    @property
    def dim(self) -> int:
        return self.lower.shape[1]

    def interval(self, t: int, j: int = 0) -> Interval:
        """Interval for ``Y_{t, j}`` with ``t`` in ``1..T``."""
        return Interval(float(self.lower[t - 1, j]), float(self.upper[t - 1, j]))

    def __len__(self) -> int:
        return self.horizon


@dataclass
class TrajectorySet:
    """A homogeneous collection of trajectories stored as one array.

    ``values`` has shape ``(n, T + 1, d)``.
    """

    values: np.ndarray
    labels: tuple = field(default=())
    role: str = "data"
    ids: tuple = field(default=())

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3 or v.shape[0] < 1:
            raise ShapeError(f"trajectory set must be a non-empty (n, T+1, d) array, got {v.shape}")
        if v.shape[1] < 2:
            raise ShapeError("trajectories need at least two time points")
        if not np.all(np.isfinite(v)):
            raise ValueError("trajectory set contains non-finite values")
        self.values = v
        n = v.shape[0]
        labels = tuple(self.labels) if len(self.labels) else (None,) * n
        if len(labels) != n:
            raise ShapeError(f"{len(labels)} labels for {n} trajectories")
        for lab in labels:
            if lab not in (None,) + LABELS:
                raise ValueError(f"unknown label {lab!r}")
        self.labels = labels
        ids = tuple(self.ids) if len(self.ids) else tuple(range(n))
        if len(ids) != n:
            raise ShapeError(f"{len(ids)} ids for {n} trajectories")
        self.ids = ids
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")

    @classmethod
    def from_trajectories(cls, trajs: Sequence[Trajectory], role: str = "data", ids=()) -> "TrajectorySet":
        if not trajs:
            raise ShapeError("empty trajectory collection")
        shapes = {t.values.shape for t in trajs}
        if len(shapes) != 1:
            raise ShapeError(f"trajectories have differing shapes: {sorted(shapes)}")
        return cls(np.stack([t.values for t in trajs]), tuple(t.label for t in trajs), role, ids)

    def __len__(self) -> int:
        return self.values.shape[0]

    def __iter__(self) -> Iterator[Trajectory]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> Trajectory:
        return Trajectory(self.values[i], self.labels[i])

    @property
    def horizon(self) -> int:
        return self.values.shape[1] - 1

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def subset(self, idx, role: Optional[str] = None) -> "TrajectorySet":
        idx = np.asarray(idx, dtype=int)
        return TrajectorySet(
            self.values[idx],
            tuple(self.labels[i] for i in idx),
            role or self.role,
            tuple(self.ids[i] for i in idx),
        )

    def with_values(self, values: np.ndarray) -> "TrajectorySet":
        return TrajectorySet(values, self.labels, self.role, self.ids)


def conformal_rank(level: float, m: int) -> int:
    """Rank ``ceil(level * (m + 1))`` used by split-conformal quantiles."""
    return int(math.ceil(level * (m + 1) - _RANK_EPS))


def empirical_quantile(scores, level: float) -> float:
    """The ``ceil(level * (m + 1))``-th smallest of ``m`` scores.

    Returns ``inf`` when that rank exceeds ``m``, so an unattainable
    level degrades to an uninformative (infinite) margin instead of a
    silently under-covering one.

    >>> empirical_quantile([1, 2, 3, 4], 0.5)
    3.0
    >>> empirical_quantile([0.2], 0.9)
    inf
    """
    s = np.asarray(scores, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("empty calibration set")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    if np.any(np.isnan(s)):
        raise ValueError("scores contain NaN")
    k = conformal_rank(level, s.size)
    if k > s.size:
        return math.inf
    k = max(k, 1)
    return float(np.partition(s, k - 1)[k - 1])


def clipped_widths(lower, upper, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    """Widths of the intervals intersected with ``[lo, hi]``.

    Data are normalized into ``[-1, 1]``, so no reported width exceeds 2
    and an unbounded interval counts as exactly 2.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    return np.maximum(np.minimum(upper, hi) - np.maximum(lower, lo), 0.0)


def band_width_stats(band: PredictionBand) -> float:
    """Mean interval width over all steps and dimensions.

    Intervals are clipped to the normalized data range ``[-1, 1]``, so an
    infinite interval counts as width 2.
    """
    return float(np.mean(clipped_widths(band.lower, band.upper)))


def covered_mask(lower, upper, y) -> np.ndarray:
    """Elementwise closed-interval membership."""
    return (lower <= y) & (y <= upper)


def covers_simultaneously(band: PredictionBand, traj: Trajectory) -> bool:
    """True iff every ``Y_{t,j}``, ``t = 1..T``, lies in its interval."""
    if band.lower.shape != (traj.horizon, traj.dim):
        raise ShapeError(
            f"band shape {band.lower.shape} does not match trajectory (T={traj.horizon}, d={traj.dim})"
        )
    y = traj.values[1:]
    return bool(np.all(covered_mask(band.lower, band.upper, y)))
