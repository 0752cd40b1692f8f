"""Synthetic heterogeneous AR(3) trajectories and trajectory CSV I/O.

Each trajectory follows ``X_t = 0.9 X_{t-1} + 0.1 X_{t-2} - 0.2 X_{t-3} + e_t``
from zero lags. A fraction ``delta`` of trajectories is "hard": their noise
variance is ``k`` times larger than that of the "easy" ones.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .core import LABELS, ShapeError, TrajectorySet

AR_COEFS = (0.9, 0.1, -0.2)
PROFILES = ("dynamic", "static")


@dataclass(frozen=True)
class ArConfig:
    """Generator settings.

    ``delta_test`` is the hard fraction used for test trajectories; it
    defaults to ``delta`` (no shift). ``noise`` multiplies every variance.
    """

    T: int = 100
    d: int = 1
    profile: str = "dynamic"
    delta: float = 0.1
    k: float = 10.0
    delta_test: Optional[float] = None
    noise: float = 1.0
    seed: int = 0
    coefs: tuple = field(default=AR_COEFS)

    def __post_init__(self):
        if self.T < 1 or self.d < 1:
            raise ValueError("T and d must be >= 1")
        if self.profile not in PROFILES:
            raise ValueError(f"unknown noise profile {self.profile!r}; expected one of {PROFILES}")
        for name in ("delta", "delta_test"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.k <= 0 or self.noise < 0:
            raise ValueError("k must be positive and noise non-negative")

    @property
    def test_delta(self) -> float:
        return self.delta if self.delta_test is None else self.delta_test


def noise_sd(cfg: ArConfig, hard: bool) -> np.ndarray:
    """Noise standard deviation at ``t = 0..T``."""
    mult = cfg.k if hard else 1.0
    t = np.arange(cfg.T + 1, dtype=float)
    var = t * mult if cfg.profile == "dynamic" else np.full(cfg.T + 1, mult)
    return np.sqrt(var * cfg.noise)


def ar_recursion(eps: np.ndarray, coefs=AR_COEFS, init=None) -> np.ndarray:
    """Run the AR recursion over ``eps`` shaped ``(n, T+1, d)``.

    ``init`` holds the lags ``(X_{-1}, X_{-2}, ...)``, zero by default.
    """
    n, T1, d = eps.shape
    p = len(coefs)
    lags = np.zeros((p, n, d))
    if init is not None:
        init = np.asarray(init, dtype=float)
        lags[:] = init.reshape(p, 1, 1) if init.ndim == 1 else init
    out = np.empty_like(eps)
    for t in range(T1):
        x = eps[:, t]
        for c, lag in zip(coefs, lags):
            x = x + c * lag
        out[:, t] = x
        lags = np.concatenate([x[None], lags[:-1]], axis=0)
    return out


def generate_ar(cfg: ArConfig, n: int, delta: Optional[float] = None, start_id: int = 0,
                role: str = "data") -> TrajectorySet:
    """Draw ``n`` trajectories.

    Trajectory ``i`` uses its own generator seeded by ``(cfg.seed, start_id + i)``,
    so any subset can be regenerated independently of the others.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    delta = cfg.delta if delta is None else delta
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [0, 1]")
    sd = {False: noise_sd(cfg, False), True: noise_sd(cfg, True)}
    eps = np.empty((n, cfg.T + 1, cfg.d))
    labels = []
    for i in range(n):
        rng = np.random.default_rng([cfg.seed, start_id + i])
        hard = bool(rng.random() < delta)
        eps[i] = rng.standard_normal((cfg.T + 1, cfg.d)) * sd[hard][:, None]
        labels.append("hard" if hard else "easy")
    values = ar_recursion(eps, cfg.coefs)
    ids = tuple(range(start_id, start_id + n))
    return TrajectorySet(values, tuple(labels), role, ids)


def split_sizes(n: int, train_frac: float = 0.75, cal1_frac_of_cal: float = 0.5):
    n_train = int(math.floor(train_frac * n + 0.5))
    n_cal1 = int(math.floor(cal1_frac_of_cal * (n - n_train) + 0.5))
    return n_train, n_cal1, n - n_train - n_cal1


def split_dataset(ds: TrajectorySet, train_frac: float = 0.75, cal1_frac_of_cal: float = 0.5, seed: int = 0,
                  sizes: Optional[Sequence[int]] = None):
    """Random disjoint ``(train, cal1, cal2)`` partition.

    ``sizes`` gives explicit part sizes and overrides the fractions.
    """
    n = len(ds)
    if sizes is not None:
        n_train, n_cal1, n_cal2 = (int(x) for x in sizes)
        if n_train + n_cal1 + n_cal2 != n:
            raise ValueError(f"split sizes {tuple(sizes)} do not add up to {n}")
    else:
        n_train, n_cal1, n_cal2 = split_sizes(n, train_frac, cal1_frac_of_cal)
    if min(n_train, n_cal1, n_cal2) < 1:
        raise ValueError(f"dataset of {n} trajectories is too small to split")
    perm = np.random.default_rng(seed).permutation(n)
    train = ds.subset(np.sort(perm[:n_train]), "train")
    cal1 = ds.subset(np.sort(perm[n_train : n_train + n_cal1]), "cal1")
    cal2 = ds.subset(np.sort(perm[n_train + n_cal1 :]), "cal2")
    return train, cal1, cal2


# ---- CSV ------------------------------------------------------------------


def write_trajectories(ds: TrajectorySet, path, comment: Optional[str] = None) -> None:
    """Write ``traj_id,t,dim_0..dim_{d-1}[,label]`` rows."""
    labelled = any(lab is not None for lab in ds.labels)
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(["traj_id", "t"] + [f"dim_{j}" for j in range(ds.dim)] + (["label"] if labelled else []))
        for i, tid in enumerate(ds.ids):
            lab = ds.labels[i]
            for t in range(ds.horizon + 1):
                row = [tid, t] + [repr(float(v)) for v in ds.values[i, t]]
                if labelled:
                    row.append(lab or "")
                w.writerow(row)


class TrajectoryFileError(ValueError):
    pass


def _data_lines(fh):
    for lineno, line in enumerate(fh, start=1):
        if line.strip() and not line.lstrip().startswith("#"):
            yield lineno, line


def load_trajectories(path, role: str = "data") -> TrajectorySet:
    """Parse a trajectory CSV, validating shape and finiteness."""
    with open(path, newline="") as fh:
        lines = list(_data_lines(fh))
    if not lines:
        raise TrajectoryFileError(f"{path}: no header")
    lineno, header_line = lines[0]
    header = next(csv.reader([header_line]))
    header = [h.strip() for h in header]
    if header[:2] != ["traj_id", "t"]:
        raise TrajectoryFileError(f"{path}:{lineno}: header must start with traj_id,t")
    has_label = header[-1] == "label"
    dims = header[2:-1] if has_label else header[2:]
    if not dims or dims != [f"dim_{j}" for j in range(len(dims))]:
        raise TrajectoryFileError(f"{path}:{lineno}: expected columns dim_0..dim_{{d-1}}")
    d = len(dims)
    width = 2 + d + has_label
    rows = {}
    labels = {}
    order = []
    for lineno, line in lines[1:]:
        fields = next(csv.reader([line]))
        if len(fields) != width:
            raise TrajectoryFileError(f"{path}:{lineno}: expected {width} fields, got {len(fields)}")
        try:
            tid = int(fields[0])
            t = int(fields[1])
            vals = [float(x) for x in fields[2 : 2 + d]]
        except ValueError as exc:
            raise TrajectoryFileError(f"{path}:{lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in vals):
            raise TrajectoryFileError(f"{path}:{lineno}: non-finite value")
        lab = (fields[-1].strip() or None) if has_label else None
        if lab is not None and lab not in LABELS:
            raise TrajectoryFileError(f"{path}:{lineno}: unknown label {lab!r}")
        if tid not in rows:
            rows[tid] = {}
            order.append(tid)
            labels[tid] = (lab, lineno)
        elif labels[tid][0] != lab:
            raise TrajectoryFileError(f"{path}:{lineno}: label differs from line {labels[tid][1]}")
        if t in rows[tid]:
            raise TrajectoryFileError(f"{path}:{lineno}: duplicate step t={t} for trajectory {tid}")
        rows[tid][t] = (vals, lineno)
    if not order:
        raise TrajectoryFileError(f"{path}: no trajectories")
    T1 = len(rows[order[0]])
    values = np.empty((len(order), T1, d))
    for i, tid in enumerate(order):
        steps = rows[tid]
        if sorted(steps) != list(range(len(steps))) or len(steps) != T1:
            last = max(ln for _, ln in steps.values())
            raise TrajectoryFileError(
                f"{path}:{last}: trajectory {tid} has steps {len(steps)} "
                f"(expected t = 0..{T1 - 1} as in trajectory {order[0]})"
            )
        for t, (vals, _) in steps.items():
            values[i, t] = vals
    if T1 < 2:
        raise ShapeError("trajectories need at least two steps")
    return TrajectorySet(values, tuple(labels[t][0] for t in order), role, tuple(order))


def relabel_role(ds: TrajectorySet, role: str) -> TrajectorySet:
    return replace(ds, role=role)


def concat(sets: Sequence[TrajectorySet], role: str = "data") -> TrajectorySet:
    values = np.concatenate([s.values for s in sets], axis=0)
    labels = sum((tuple(s.labels) for s in sets), ())
    ids = sum((tuple(s.ids) for s in sets), ())
    return TrajectorySet(values, labels, role, ids)
