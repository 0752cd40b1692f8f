"""Point forecasters and the min-max normalization applied before fitting.

Every method in this package only needs a forecaster that, given the
observed prefix ``Y_0..Y_e`` of a trajectory, predicts ``Y_{e+1}..Y_{e+H}``.
:class:`ARForecaster` is a ridge-regularized autoregression fit in closed
form; :class:`ExternalForecasts` replays predictions produced elsewhere.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np

from .core import ShapeError, TrajectorySet


class NotFittedError(RuntimeError):
    pass


class Forecaster(Protocol):
    def predict_all(self, data: TrajectorySet, horizon: int = 1) -> np.ndarray:
        """Predictions of shape ``(n, T, H, d)``.

        Entry ``[i, e, tau - 1]`` predicts ``Y_{e + tau}`` of trajectory ``i``
        from its prefix ``Y_0..Y_e``, for emission times ``e = 0..T-1``.
        Entries with ``e + tau > T`` may hold anything.
        """


@dataclass(frozen=True)
class Normalizer:
    shift: np.ndarray
    scale: np.ndarray

    def map(self, values):
        return (np.asarray(values, dtype=float) - self.shift) / self.scale

    def unmap(self, values):
        return np.asarray(values, dtype=float) * self.scale + self.shift

    def apply(self, data: TrajectorySet) -> TrajectorySet:
        return data.with_values(self.map(data.values))


def fit_normalizer(train: TrajectorySet) -> Normalizer:
    """Per-dimension affine map sending the training range onto ``[-1, 1]``."""
    v = train.values.reshape(-1, train.dim)
    hi = v.max(axis=0)
    lo = v.min(axis=0)
    shift = (hi + lo) / 2.0
    scale = (hi - lo) / 2.0
    scale = np.where(scale > 0, scale, 1.0)
    return Normalizer(shift, scale)


def _lag_stack(values: np.ndarray, p: int) -> np.ndarray:
    """``out[i, e, k] = Y_{e-k}`` for ``e = 0..T-1``, zero where ``e - k < 0``."""
    n, T1, d = values.shape
    T = T1 - 1
    out = np.zeros((n, T, p, d))
    for k in range(p):
        if k < T:
            out[:, k:, k, :] = values[:, : T - k, :]
    return out


@dataclass
class ARForecaster:
    """Per-dimension AR(p) model ``Y_t = c + sum_k a_k Y_{t-k}``.

    Pre-sample lags are taken as zero, so a prediction for ``Y_1`` exists
    from ``Y_0`` alone.
    """

    order: int = 3
    ridge: float = 1e-6
    coef: Optional[np.ndarray] = None  # (d, p)
    intercept: Optional[np.ndarray] = None  # (d,)

    @property
    def fitted(self) -> bool:
        return self.coef is not None

    def _check(self):
        if not self.fitted:
            raise NotFittedError("forecaster has not been fitted")

    def predict_next(self, prefix, horizon: int = 1) -> np.ndarray:
        """Iterate one-step predictions ``horizon`` times from ``prefix``.

        ``prefix`` holds ``Y_0..Y_e`` with shape ``(e + 1, d)``; the result
        has shape ``(horizon, d)``.
        """
        self._check()
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        x = np.asarray(prefix, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        p = self.order
        hist = [x[-1 - k] if k < len(x) else np.zeros(x.shape[1]) for k in range(p)]
        out = []
        for _ in range(horizon):
            y = self.intercept + sum(self.coef[:, k] * hist[k] for k in range(p))
            out.append(y)
            hist = [y] + hist[:-1]
        return np.array(out)

    def predict_all(self, data: TrajectorySet, horizon: int = 1) -> np.ndarray:
        self._check()
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        lags = _lag_stack(data.values, self.order)
        n, T, p, d = lags.shape
        out = np.empty((n, T, horizon, d))
        for tau in range(horizon):
            y = self.intercept + np.einsum("ntkd,dk->ntd", lags, self.coef)
            out[:, :, tau, :] = y
            lags = np.concatenate([y[:, :, None, :], lags[:, :, :-1, :]], axis=2)
        return out


def _design(values: np.ndarray, p: int, j: int):
    lags = _lag_stack(values[:, :, j : j + 1], p)[..., 0]  # (n, T, p)
    X = lags.reshape(-1, p)
    X = np.hstack([np.ones((X.shape[0], 1)), X])
    y = values[:, 1:, j].reshape(-1)
    return X, y


def fit_ar(train: TrajectorySet, order: int = 3, ridge: float = 1e-6) -> ARForecaster:
    """Ridge least squares over all pooled (lag window, next value) pairs.

    The intercept is not penalized, so a huge ``ridge`` shrinks the model to
    the mean of the targets.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    if train.horizon < order:
        raise ShapeError(f"horizon T={train.horizon} shorter than AR order {order}")
    d = train.dim
    coef = np.empty((d, order))
    intercept = np.empty(d)
    pen = np.eye(order + 1) * ridge
    pen[0, 0] = 0.0
    for j in range(d):
        X, y = _design(train.values, order, j)
        A = X.T @ X + pen
        if ridge == 0 and np.linalg.cond(A) > 1e12:
            raise np.linalg.LinAlgError(
                "normal equations are singular; refit with a positive ridge penalty"
            )
        beta = np.linalg.solve(A, X.T @ y)
        intercept[j] = beta[0]
        coef[j] = beta[1:]
    return ARForecaster(order, ridge, coef, intercept)


def training_residuals(f: Forecaster, train: TrajectorySet) -> np.ndarray:
    """Absolute one-step residuals ``|Y_t - Yhat_t|``, shape ``(n, T, d)``."""
    pred = f.predict_all(train, 1)[:, :, 0, :]
    return np.abs(train.values[:, 1:, :] - pred)


@dataclass
class ExternalForecasts:
    """Precomputed predictions keyed by ``(traj_id, t, tau)``.

    Rows come from a CSV with header ``traj_id,t,tau,dim_0,...``; a row
    holds the prediction of ``Y_{t+tau}`` made after observing ``Y_t``.
    Predictions must be in the same units as the trajectories they are
    paired with.
    """

    table: dict = field(default_factory=dict)
    dim: int = 1

    @classmethod
    def load(cls, path) -> "ExternalForecasts":
        table = {}
        with open(path, newline="") as fh:
            rows = csv.reader(line for line in fh if not line.startswith("#"))
            header = next(rows, None)
            if not header or header[:3] != ["traj_id", "t", "tau"]:
                raise ValueError(f"{path}: header must start with traj_id,t,tau")
            dims = header[3:]
            if not dims or dims != [f"dim_{j}" for j in range(len(dims))]:
                raise ValueError(f"{path}: expected dim_0..dim_(d-1) columns, got {dims}")
            for lineno, row in enumerate(rows, start=2):
                if len(row) != 3 + len(dims):
                    raise ValueError(f"{path}:{lineno}: expected {3 + len(dims)} fields, got {len(row)}")
                try:
                    key = (row[0], int(row[1]), int(row[2]))
                    vec = np.array([float(x) for x in row[3:]])
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: {exc}") from None
                if not np.all(np.isfinite(vec)):
                    raise ValueError(f"{path}:{lineno}: non-finite prediction")
                table[key] = vec
        return cls(table, len(dims))

    def predict_all(self, data: TrajectorySet, horizon: int = 1) -> np.ndarray:
        n, T = len(data), data.horizon
        out = np.full((n, T, horizon, data.dim), np.nan)
        for i, tid in enumerate(data.ids):
            for e in range(T):
                for tau in range(1, horizon + 1):
                    if e + tau > T:
                        continue
                    key = (str(tid), e, tau)
                    if key not in self.table:
                        raise KeyError(f"no external forecast for traj {tid}, t={e}, tau={tau}")
                    out[i, e, tau - 1] = self.table[key]
        return out
