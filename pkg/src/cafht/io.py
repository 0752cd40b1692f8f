"""Calibration artifacts and band CSV files.

An artifact is a plain ``key = value`` text file holding everything needed
to rebuild a calibrated predictor: the AR forecaster, the normalizer, the
warm start and the calibrated margin. Floats are written with ``repr`` so
a reload reproduces the predictor bit for bit.
"""

from __future__ import annotations

import csv
from typing import Optional

import numpy as np

from . import __version__
from .adaptive import WarmStart
from .conformal import CalibratedPredictor
from .forecaster import ARForecaster, Normalizer
from .multistep import CalibratedMultiStep

ARTIFACT_FORMAT = "cafht-artifact-1"


class ArtifactError(ValueError):
    pass


def _vec(a) -> str:
    return " ".join(repr(float(x)) for x in np.ravel(a))


def _parse_vec(s: str, shape=None) -> np.ndarray:
    a = np.array([float(x) for x in s.split()], dtype=float)
    return a.reshape(shape) if shape is not None else a


def save_artifact(cp, path, T: int, normalizer: Optional[Normalizer] = None) -> None:
    """Write a calibrated single- or multi-step predictor."""
    f = cp.forecaster
    if not isinstance(f, ARForecaster):
        raise ArtifactError("only the built-in AR forecaster can be serialized")
    multi = isinstance(cp, CalibratedMultiStep)
    d = f.coef.shape[0]
    kv = {
        "format": ARTIFACT_FORMAT,
        "version": __version__,
        "kind": "multistep" if multi else "single",
        "T": T,
        "d": d,
        "gamma": repr(float(cp.gamma)),
        "margin": repr(float(cp.margin)),
        "score": cp.score,
        "alpha": repr(float(cp.alpha)),
        "alpha_aci": repr(float(cp.alpha_aci)),
        "level": repr(float(cp.level)),
        "w_min": repr(float(cp.w_min)),
        "ar.order": f.order,
        "ar.ridge": repr(float(f.ridge)),
        "ar.coef": _vec(f.coef),
        "ar.intercept": _vec(f.intercept),
        "warm.count": cp.warm.scores.shape[0],
        "warm.scores": _vec(cp.warm.scores),
        "warm.q0": _vec(cp.warm.q0),
        "warm.alpha_init": repr(float(cp.warm.alpha_init)),
        "warm.seed": "" if cp.warm.seed is None else cp.warm.seed,
    }
    if multi:
        kv["steps_ahead"] = cp.steps_ahead
        kv["decay"] = repr(float(cp.decay))
        kv["tracker"] = "aci"
    else:
        kv["tracker"] = cp.tracker
        kv["aggregation"] = cp.aggregation
        kv["tuning"] = cp.tuning
        kv["n_cal"] = cp.n_cal
    if normalizer is not None:
        kv["norm.shift"] = _vec(normalizer.shift)
        kv["norm.scale"] = _vec(normalizer.scale)
    with open(path, "w") as fh:
        for k, v in kv.items():
            fh.write(f"{k} = {v}\n")


def read_kv(path) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ArtifactError(f"{path}:{lineno}: expected 'key = value'")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def load_artifact(path):
    """Returns ``(predictor, T, normalizer_or_None)``."""
    kv = read_kv(path)
    if kv.get("format") != ARTIFACT_FORMAT:
        raise ArtifactError(f"{path}: unsupported artifact format {kv.get('format')!r}")
    try:
        d = int(kv["d"])
        T = int(kv["T"])
        order = int(kv["ar.order"])
        f = ARForecaster(order, float(kv["ar.ridge"]), _parse_vec(kv["ar.coef"], (d, order)),
                         _parse_vec(kv["ar.intercept"], (d,)))
        count = int(kv["warm.count"])
        seed = int(kv["warm.seed"]) if kv["warm.seed"] else None
        warm = WarmStart(_parse_vec(kv["warm.scores"], (count, d)), _parse_vec(kv["warm.q0"], (d,)),
                         float(kv["warm.alpha_init"]), seed)
        common = dict(
            forecaster=f,
            gamma=float(kv["gamma"]),
            margin=float(kv["margin"]),
            score=kv["score"],
            warm=warm,
            alpha=float(kv["alpha"]),
            alpha_aci=float(kv["alpha_aci"]),
            level=float(kv["level"]),
            w_min=float(kv["w_min"]),
        )
        if kv["kind"] == "multistep":
            cp = CalibratedMultiStep(steps_ahead=int(kv["steps_ahead"]), decay=float(kv["decay"]), **common)
        else:
            cp = CalibratedPredictor(tracker=kv["tracker"], aggregation=kv["aggregation"], tuning=kv["tuning"],
                                     n_cal=int(kv["n_cal"]), **common)
        norm = None
        if "norm.shift" in kv:
            norm = Normalizer(_parse_vec(kv["norm.shift"], (d,)), _parse_vec(kv["norm.scale"], (d,)))
    except KeyError as exc:
        raise ArtifactError(f"{path}: missing key {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ArtifactError(f"{path}: {exc}") from None
    return cp, T, norm


# ---- band CSV ---------------------------------------------------------------

BAND_HEADER = ["traj_id", "t", "tau", "dim", "lower", "upper"]


def band_rows(ids, lower, upper):
    """Yield rows for bands shaped ``(n, T, H, d)``; ``t`` is the time the
    interval was issued and it covers ``Y_{t+tau}``. Absent entries are skipped."""
    n, T, H, d = lower.shape
    for i in range(n):
        for e in range(T):
            for k in range(H):
                if np.isnan(lower[i, e, k, 0]):
                    continue
                for j in range(d):
                    yield [ids[i], e, k + 1, j, repr(float(lower[i, e, k, j])), repr(float(upper[i, e, k, j]))]


def write_bands(path, ids, lower, upper, comment: Optional[str] = None) -> None:
    """Band CSV. Single-step bands ``(n, T, d)`` are written with ``tau = 1``."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if lower.ndim == 3:
        lower, upper = lower[:, :, None, :], upper[:, :, None, :]
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(BAND_HEADER)
        w.writerows(band_rows(ids, lower, upper))


def provenance(seed, config_hash: str = "-") -> str:
    return f"cafht {__version__} config={config_hash} seed={seed}"
