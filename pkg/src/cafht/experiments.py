"""Repeated train / calibrate / test cycles and the metrics they report.

Every repetition draws fresh data, normalizes by the training part, fits
the AR forecaster and evaluates each method on held-out test trajectories.
All randomness is derived from ``(seed, repetition)`` so the report does
not depend on the order in which repetitions run. Sweep points share the
random streams of a repetition (common random numbers): in a ``delta_test``
sweep only the test labels change, and the trajectories' noise draws are
reused.

Methods are named by strings:

``cafht:<score>:<tracker>:<tuning>[:<aggregation>]``
    e.g. ``cafht:multiplicative:aci:split``.
``aci``
    Raw ACI bands at the learning rate chosen by split tuning, no
    conformal margin.
``cfrnn``, ``nctp``
    The two baselines, calibrated on all calibration trajectories.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .adaptive import make_warm_start, one_step_inputs, track_bands
from .baselines import cfrnn_bands, cfrnn_fit, nctp_bands, nctp_fit
from .conformal import _check_kind, expand
from .core import clipped_widths, empirical_quantile
from .forecaster import fit_ar, fit_normalizer, training_residuals
from .multistep import (
    expand_multistep,
    multistep_scores,
    multistep_targets,
    run_multistep_aci,
    select_multistep_from_bands,
)
from .simdata import ArConfig, concat, generate_ar, split_dataset
from .tuning import DEFAULT_GRID, TuningResult, check_grid, corrected_level, margin_from_bands, select_from_bands

log = logging.getLogger(__name__)

SWEEPS = ("n", "T", "d", "delta", "delta_test", "noise", "k", "H", "alpha")
METRICS = ("width", "cond_hard", "cond_easy", "marginal")
METRIC_TITLES = {
    "width": "Average width",
    "cond_hard": "Conditional coverage (hard)",
    "cond_easy": "Conditional coverage (easy)",
    "marginal": "Simultaneous marginal coverage",
}
DEFAULT_METHODS = ("cafht:multiplicative:aci:split", "cafht:additive:aci:split", "nctp", "cfrnn")


@dataclass(frozen=True)
class MethodSpec:
    name: str
    family: str
    score: str = "multiplicative"
    tracker: str = "aci"
    tuning: str = "split"
    aggregation: str = "linf"


def parse_method(name: str) -> MethodSpec:
    parts = name.strip().split(":")
    fam = parts[0]
    if fam in ("aci", "cfrnn", "nctp"):
        if len(parts) != 1:
            raise ValueError(f"method {name!r} takes no options")
        return MethodSpec(name, fam)
    if fam != "cafht" or len(parts) not in (4, 5):
        raise ValueError(f"unknown method {name!r}; expected cafht:<score>:<tracker>:<tuning>, aci, cfrnn or nctp")
    score, tracker, tuning = parts[1:4]
    agg = parts[4] if len(parts) == 5 else "linf"
    _check_kind(score, agg)
    if tracker not in ("aci", "pid"):
        raise ValueError(f"unknown tracker {tracker!r} in {name!r}")
    if tuning not in ("split", "theory"):
        raise ValueError(f"unknown tuning {tuning!r} in {name!r}")
    return MethodSpec(name, "cafht", score, tracker, tuning, agg)


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: a data generator, a list of methods and a sweep.

    ``values`` lists the sweep points; empty means a single point at the
    configured value. ``split`` fixes ``(train, cal1, cal2)`` sizes and
    otherwise 75% / 12.5% / 12.5% of ``n`` is used.
    """

    data: ArConfig = field(default_factory=ArConfig)
    n: int = 2000
    n_test: int = 200
    reps: int = 20
    alpha: float = 0.1
    methods: tuple = DEFAULT_METHODS
    sweep: str = "n"
    values: tuple = ()
    steps_ahead: int = 1
    grid: tuple = DEFAULT_GRID
    alpha_aci: Optional[float] = None
    warm_count: int = 5
    order: int = 3
    split: Optional[tuple] = None
    seed: int = 0
    sample_trajectories: int = 4

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.sweep not in SWEEPS:
            raise ValueError(f"unknown sweep variable {self.sweep!r}; expected one of {SWEEPS}")
        if not self.methods:
            raise ValueError("no methods configured")
        for m in self.methods:
            parse_method(m)
        check_grid(self.grid)
        if self.n_test < 1:
            raise ValueError("n_test must be >= 1")

    def points(self) -> tuple:
        return tuple(self.values) if self.values else (self.current(),)

    def current(self):
        if self.sweep == "n":
            return self.n
        if self.sweep == "H":
            return self.steps_ahead
        if self.sweep == "alpha":
            return self.alpha
        if self.sweep == "delta_test":
            return self.data.test_delta
        return getattr(self.data, self.sweep)

    def at(self, value) -> "ExperimentConfig":
        """Copy with the sweep variable set to ``value``."""
        if self.sweep == "n":
            return replace(self, n=int(value), values=())
        if self.sweep == "H":
            return replace(self, steps_ahead=int(value), values=())
        if self.sweep == "alpha":
            return replace(self, alpha=float(value), values=())
        cast = int if self.sweep in ("T", "d") else float
        return replace(self, data=replace(self.data, **{self.sweep: cast(value)}), values=())

    def digest(self) -> str:
        text = repr(sorted(_flat(asdict(self)).items()))
        return hashlib.sha256(text.encode()).hexdigest()[:12]


def _flat(d, prefix=""):
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out.update(_flat(v, f"{prefix}{k}."))
        else:
            out[prefix + k] = v
    return out


# ---- metrics -----------------------------------------------------------------


def coverage_flags(lower, upper, targets) -> np.ndarray:
    """Per-trajectory simultaneous coverage for arrays shaped ``(n, ...)``.

    NaN bounds mark absent entries and count as covered.
    """
    ok = (lower <= targets) & (targets <= upper)
    ok |= np.isnan(lower)
    return ok.reshape(ok.shape[0], -1).all(axis=1)


def mean_width(lower, upper) -> float:
    present = ~np.isnan(lower)
    w = clipped_widths(np.where(present, lower, 0.0), np.where(present, upper, 0.0))
    return float(np.mean(w[present]))


def conditional_coverage(covered, labels, label) -> Optional[float]:
    """Fraction of ``label`` trajectories fully covered, ``None`` if there are none."""
    sel = [bool(c) for c, lab in zip(covered, labels) if lab == label]
    if not sel:
        return None
    return sum(sel) / len(sel)


def standard_error(x: Sequence[float]) -> float:
    """Sample standard deviation over ``sqrt(R)``; NaN for a single value."""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return math.nan
    return float(np.std(x, ddof=1) / math.sqrt(x.size))


def _metrics(lower, upper, targets, labels) -> dict:
    cov = coverage_flags(lower, upper, targets)
    return {
        "marginal": float(np.mean(cov)),
        "width": mean_width(lower, upper),
        "cond_hard": conditional_coverage(cov, labels, "hard"),
        "cond_easy": conditional_coverage(cov, labels, "easy"),
        "n_hard": sum(lab == "hard" for lab in labels),
        "n_covered": int(cov.sum()),
    }


# ---- one repetition -------------------------------------------------------------


def rep_seeds(seed: int, rep: int) -> dict:
    s = np.random.SeedSequence([seed, rep]).generate_state(4)
    return {"data": int(s[0]), "split": int(s[1]), "warm": int(s[2])}


@dataclass
class RepData:
    train: object
    cal1: object
    cal2: object
    test: object
    forecaster: object
    warm: object


def prepare(cfg: ExperimentConfig, rep: int) -> RepData:
    seeds = rep_seeds(cfg.seed, rep)
    data_cfg = replace(cfg.data, seed=seeds["data"])
    ds = generate_ar(data_cfg, cfg.n)
    test = generate_ar(data_cfg, cfg.n_test, delta=data_cfg.test_delta, start_id=cfg.n, role="test")
    train, cal1, cal2 = split_dataset(ds, seed=seeds["split"], sizes=cfg.split)
    norm = fit_normalizer(train)
    train, cal1, cal2, test = (norm.apply(x) for x in (train, cal1, cal2, test))
    f = fit_ar(train, cfg.order)
    warm = make_warm_start(training_residuals(f, train), cfg.alpha, seed=seeds["warm"], count=cfg.warm_count)
    return RepData(train, cal1, cal2, test, f, warm)


def _raw(cfg, rd: RepData, tracker: str, every):
    """Raw bands for every grid value on ``cal1 + cal2 + test``, shaped
    ``(L, n, T, H, d)``, with aligned targets ``(n, T, H, d)``."""
    f, H = rd.forecaster, cfg.steps_ahead
    alpha_aci = cfg.alpha if cfg.alpha_aci is None else cfg.alpha_aci
    if H == 1:
        preds, obs = one_step_inputs(f, every)
        res = track_bands(preds, obs, cfg.grid, alpha_aci, rd.warm, tracker)
        return res.lower[:, :, :, None, :], res.upper[:, :, :, None, :], obs[:, :, None, :]
    if tracker != "aci":
        raise ValueError("multi-step bands are only available with the ACI tracker")
    lo, hi = run_multistep_aci(f.predict_all(every, H), every.values, cfg.grid, alpha_aci, rd.warm)
    return lo, hi, multistep_targets(every.values, H)


def _select(lo, hi, y, grid, level, spec: MethodSpec) -> TuningResult:
    if lo.shape[-2] == 1:
        return select_from_bands(lo[..., 0, :], hi[..., 0, :], y[..., 0, :], grid, level, spec.score,
                                 spec.aggregation)
    return select_multistep_from_bands(lo, hi, _obs(y), grid, level, spec.score)


def _obs(targets):
    # Y_1..Y_T from multi-step targets: tau = 1 column
    return targets[:, :, 0, :]


def _margin(lo, hi, y, level, spec: MethodSpec) -> float:
    if lo.shape[-2] == 1:
        return margin_from_bands(lo[..., 0, :], hi[..., 0, :], y[..., 0, :], level, spec.score, spec.aggregation)
    return empirical_quantile(multistep_scores(lo, hi, _obs(y), spec.score), level)


def _expand(lo, hi, q, spec: MethodSpec):
    if lo.shape[-2] == 1:
        return expand(lo, hi, q, spec.score)
    return expand_multistep(lo, hi, q, spec.score)


def run_repetition(cfg: ExperimentConfig, point: int, rep: int, keep_bands: bool = False) -> dict:
    """Evaluate every method once. Returns ``{"methods": {name: metrics or
    {"error": msg}}, "tuning": {...}, "bands": {...}}``."""
    rd = prepare(cfg, rep)
    specs = [parse_method(m) for m in cfg.methods]
    every = concat([rd.cal1, rd.cal2, rd.test])
    n1, n2 = len(rd.cal1), len(rd.cal2)
    i1, i2, it = slice(0, n1), slice(n1, n1 + n2), slice(n1 + n2, None)
    ic = slice(0, n1 + n2)
    labels = rd.test.labels
    raw: Dict[str, tuple] = {}
    out: Dict[str, dict] = {}
    tuning: Dict[str, TuningResult] = {}
    bands: Dict[str, tuple] = {}
    split_mult: Dict[str, TuningResult] = {}

    def raw_for(tracker):
        if tracker not in raw:
            raw[tracker] = _raw(cfg, rd, tracker, every)
        return raw[tracker]

    level = 1 - cfg.alpha
    for spec in specs:
        try:
            if spec.family == "cafht":
                lo, hi, y = raw_for(spec.tracker)
                if spec.tuning == "split":
                    sel = _select(lo[:, i1], hi[:, i1], y[i1], cfg.grid, level, spec)
                    q = _margin(lo[sel.index, i2], hi[sel.index, i2], y[i2], level, spec)
                else:
                    lvl = 1 - corrected_level(n1 + n2, len(cfg.grid), cfg.alpha)
                    sel = _select(lo[:, ic], hi[:, ic], y[ic], cfg.grid, lvl, spec)
                    q = float(sel.margins[sel.index])
                tuning[spec.name] = sel
                tl, th = _expand(lo[sel.index, it], hi[sel.index, it], q, spec)
                if spec.score == "multiplicative" and spec.tracker == "aci" and spec.tuning == "split":
                    split_mult["aci"] = sel
            elif spec.family == "aci":
                lo, hi, y = raw_for("aci")
                sel = split_mult.get("aci")
                if sel is None:
                    ms = MethodSpec("cafht:multiplicative:aci:split", "cafht")
                    sel = _select(lo[:, i1], hi[:, i1], y[i1], cfg.grid, level, ms)
                    split_mult["aci"] = sel
                tl, th = lo[sel.index, it], hi[sel.index, it]
            else:
                cal = concat([rd.cal1, rd.cal2], role="cal")
                H = cfg.steps_ahead
                if spec.family == "cfrnn":
                    model = cfrnn_fit(rd.forecaster, cal, cfg.alpha, H)
                    tl, th = cfrnn_bands(model, rd.test)
                else:
                    model = nctp_fit(rd.forecaster, rd.train, cal, cfg.alpha, H)
                    tl, th = nctp_bands(model, rd.test)
                y = multistep_targets(every.values, H)
            targets = y[it]
            out[spec.name] = _metrics(tl, th, targets, labels)
            if keep_bands:
                bands[spec.name] = (tl, th)
        except Exception as exc:  # recorded per cell, the sweep goes on
            log.warning("method %s failed at point %d rep %d: %s", spec.name, point, rep, exc)
            out[spec.name] = {"error": f"{type(exc).__name__}: {exc}"}
    result = {"methods": out, "tuning": tuning}
    if keep_bands:
        result["bands"] = bands
        result["test"] = rd.test
    return result


# ---- whole experiment ---------------------------------------------------------------


@dataclass
class ReportRow:
    method: str
    sweep: str
    value: object
    stats: Dict[str, tuple]  # metric -> (mean or None, se or None, count)
    reps: int
    failures: int = 0
    error: str = ""


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    rows: List[ReportRow]
    tuning: List[tuple] = field(default_factory=list)  # (value, method, TuningResult)
    sample: Optional[dict] = None
    per_rep: Dict[tuple, dict] = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return any(r.failures for r in self.rows)

    def row(self, method: str, value=None) -> ReportRow:
        for r in self.rows:
            if r.method == method and (value is None or r.value == value):
                return r
        raise KeyError((method, value))


def aggregate(values: Sequence[Optional[float]]) -> tuple:
    xs = [v for v in values if v is not None]
    if not xs:
        return None, None, 0
    return float(np.mean(xs)), standard_error(xs), len(xs)


def _task(args):
    cfg, point, value, rep, keep = args
    return (point, rep), run_repetition(cfg.at(value), point, rep, keep_bands=keep)


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    """Run every sweep point and repetition, then aggregate.

    ``threads > 1`` spreads repetitions over worker processes; results are
    identical to a sequential run.
    """
    tasks = [(cfg, p, v, r, p == 0 and r == 0) for p, v in enumerate(cfg.points()) for r in range(cfg.reps)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = dict(pool.map(_task, tasks))
    else:
        results = dict(map(_task, tasks))
    rows, tuning = [], []
    sample = None
    for p, value in enumerate(cfg.points()):
        for name in cfg.methods:
            cells = [results[(p, r)]["methods"][name] for r in range(cfg.reps)]
            ok = [c for c in cells if "error" not in c]
            errs = [c["error"] for c in cells if "error" in c]
            stats = {m: aggregate([c[m] for c in ok]) for m in METRICS}
            rows.append(ReportRow(name, cfg.sweep, value, stats, len(ok), len(errs), errs[0] if errs else ""))
        first = results[(p, 0)]
        for name in cfg.methods:
            if name in first["tuning"]:
                tuning.append((value, name, first["tuning"][name]))
        if p == 0:
            sample = {"bands": first.get("bands", {}), "test": first.get("test")}
    return ExperimentReport(cfg, rows, tuning, sample, {k: v["methods"] for k, v in results.items()})


# ---- output ----------------------------------------------------------------

REPORT_COLUMNS = ["sweep", "value", "method"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "se")] + [
    "reps",
    "failures",
    "error",
]


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def header_comment(cfg: ExperimentConfig) -> str:
    return f"# cafht {__version__} config={cfg.digest()} seed={cfg.seed}\n"


def write_report_csv(report: ExperimentReport, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(header_comment(report.config))
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in report.rows:
            cells = [r.sweep, _fmt(r.value), r.method]
            for m in METRICS:
                mean, se, _ = r.stats[m]
                cells += [_fmt(mean), _fmt(se)]
            cells += [r.reps, r.failures, r.error]
            w.writerow(cells)


def load_report_csv(path) -> List[dict]:
    """Rows of a report CSV with numeric columns parsed (``None`` for blanks)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    out = []
    for row in rows:
        parsed = {}
        for k, v in row.items():
            if k in ("sweep", "method", "error"):
                parsed[k] = v
            elif k in ("reps", "failures"):
                parsed[k] = int(v)
            else:
                parsed[k] = float(v) if v != "" else None
        out.append(parsed)
    return out


def write_tuning_csv(report: ExperimentReport, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(header_comment(report.config))
        w = csv.writer(fh)
        w.writerow(["value", "method", "gamma", "avg_width", "quantile", "selected"])
        for value, name, sel in report.tuning:
            for g, wd, q, s in sel.rows():
                w.writerow([_fmt(value), name, repr(g), repr(wd), repr(q), s])


def write_bands_sample(report: ExperimentReport, path) -> None:
    """Bands of the first few test trajectories of repetition 0, for plots."""
    sample = report.sample or {}
    test = sample.get("test")
    with open(path, "w", newline="") as fh:
        fh.write(header_comment(report.config))
        w = csv.writer(fh)
        w.writerow(["method", "traj_id", "label", "t", "tau", "dim", "observed", "lower", "upper"])
        if test is None:
            return
        k = min(report.config.sample_trajectories, len(test))
        targets = multistep_targets(test.values, report.config.steps_ahead)
        for name in report.config.methods:
            if name not in sample["bands"]:
                continue
            lo, hi = sample["bands"][name]
            for i in range(k):
                for e in range(lo.shape[1]):
                    for tau in range(lo.shape[2]):
                        if np.isnan(lo[i, e, tau, 0]):
                            continue
                        for j in range(lo.shape[3]):
                            w.writerow([name, test.ids[i], test.labels[i] or "", e, tau + 1, j,
                                        repr(float(targets[i, e, tau, j])), repr(float(lo[i, e, tau, j])),
                                        repr(float(hi[i, e, tau, j]))])


def emit_report(report: ExperimentReport, outdir, formats=("csv", "svg")) -> List[str]:
    """Write ``report.csv``, ``tuning.csv``, ``bands_sample.csv`` and one
    ``report_<metric>.svg`` per metric. Returns the written paths."""
    if not report.rows:
        raise ValueError("empty report")
    os.makedirs(outdir, exist_ok=True)
    written = []
    if "csv" in formats:
        for fname, fn in (("report.csv", write_report_csv), ("tuning.csv", write_tuning_csv),
                          ("bands_sample.csv", write_bands_sample)):
            p = os.path.join(outdir, fname)
            fn(report, p)
            written.append(p)
    if "svg" in formats:
        from .plotting import plot_metric

        rows = [_row_dict(r) for r in report.rows]
        for m in METRICS:
            p = os.path.join(outdir, f"report_{m}.svg")
            plot_metric(rows, m, p, xlabel=report.config.sweep)
            written.append(p)
    return written


def _row_dict(r: ReportRow) -> dict:
    d = {"sweep": r.sweep, "value": float(r.value), "method": r.method}
    for m in METRICS:
        d[f"{m}_mean"], d[f"{m}_se"], _ = r.stats[m]
    return d
