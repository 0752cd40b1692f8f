"""Command-line interface: ``cafht <command> ...``.

Every command is a thin wrapper over library functions.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import os
import sys
from typing import List, Optional

import numpy as np

from . import __version__
from .adaptive import make_warm_start
from .config import ConfigError, load_config
from .conformal import calibrate, predict_bands
from .forecaster import ARForecaster, Normalizer, fit_ar, fit_normalizer, training_residuals
from .io import ArtifactError, _parse_vec, _vec, load_artifact, provenance, read_kv, save_artifact, write_bands
from .multistep import CalibratedMultiStep, calibrate_multistep, calibrate_multistep_split, predict_multistep_bands
from .simdata import ArConfig, concat, generate_ar, load_trajectories, split_dataset, write_trajectories
from .tuning import calibrate_split, calibrate_theory, gamma_grid

FIT_FORMAT = "cafht-fit-1"
log = logging.getLogger("cafht")


class CliError(Exception):
    pass


def _hash_args(args) -> str:
    items = sorted((k, repr(v)) for k, v in vars(args).items() if k not in ("func", "output"))
    return hashlib.sha256(repr(items).encode()).hexdigest()[:12]


def parse_grid(text: str):
    text = text.strip()
    if text in ("offset", "aligned"):
        return gamma_grid(text)
    try:
        return tuple(float(x) for x in text.replace(",", " ").split())
    except ValueError:
        raise CliError(f"cannot parse gamma grid {text!r}") from None


# ---- generate -----------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = ArConfig(T=args.T, d=args.d, profile=args.profile, delta=args.delta, k=args.k, noise=args.noise,
                   seed=args.seed)
    ds = generate_ar(cfg, args.n)
    write_trajectories(ds, args.output, comment=provenance(args.seed, _hash_args(args)))
    return 0


# ---- fit ------------------------------------------------------------------------


def _split(ds, args):
    return split_dataset(ds, train_frac=args.train_frac, seed=args.seed)


def _fit(ds, args):
    train, cal1, cal2 = _split(ds, args)
    norm = fit_normalizer(train)
    train_n = norm.apply(train)
    f = fit_ar(train_n, args.order)
    warm = make_warm_start(training_residuals(f, train_n), args.alpha, seed=args.seed, count=args.warm_count)
    return f, norm, warm, (train, cal1, cal2)


def save_fit(path, f: ARForecaster, norm: Normalizer, warm, args) -> None:
    d = f.coef.shape[0]
    kv = {
        "format": FIT_FORMAT,
        "version": __version__,
        "d": d,
        "seed": args.seed,
        "train_frac": repr(float(args.train_frac)),
        "ar.order": f.order,
        "ar.ridge": repr(float(f.ridge)),
        "ar.coef": _vec(f.coef),
        "ar.intercept": _vec(f.intercept),
        "norm.shift": _vec(norm.shift),
        "norm.scale": _vec(norm.scale),
        "warm.count": warm.scores.shape[0],
        "warm.scores": _vec(warm.scores),
        "warm.q0": _vec(warm.q0),
        "warm.alpha_init": repr(float(warm.alpha_init)),
        "warm.seed": warm.seed,
    }
    with open(path, "w") as fh:
        for k, v in kv.items():
            fh.write(f"{k} = {v}\n")


def load_fit(path):
    from .adaptive import WarmStart

    kv = read_kv(path)
    if kv.get("format") != FIT_FORMAT:
        raise CliError(f"{path}: not a fit file (format {kv.get('format')!r})")
    d, order = int(kv["d"]), int(kv["ar.order"])
    f = ARForecaster(order, float(kv["ar.ridge"]), _parse_vec(kv["ar.coef"], (d, order)),
                     _parse_vec(kv["ar.intercept"], (d,)))
    norm = Normalizer(_parse_vec(kv["norm.shift"], (d,)), _parse_vec(kv["norm.scale"], (d,)))
    count = int(kv["warm.count"])
    warm = WarmStart(_parse_vec(kv["warm.scores"], (count, d)), _parse_vec(kv["warm.q0"], (d,)),
                     float(kv["warm.alpha_init"]), int(kv["warm.seed"]))
    return f, norm, warm, int(kv["seed"]), float(kv["train_frac"])


def cmd_fit(args) -> int:
    ds = load_trajectories(args.input)
    f, norm, warm, _ = _fit(ds, args)
    save_fit(args.output, f, norm, warm, args)
    return 0


# ---- calibrate ----------------------------------------------------------------


def cmd_calibrate(args) -> int:
    ds = load_trajectories(args.input)
    if args.fit:
        f, norm, warm, seed, frac = load_fit(args.fit)
        args.seed, args.train_frac = seed, frac
        _, cal1, cal2 = _split(ds, args)
    else:
        f, norm, warm, (_, cal1, cal2) = _fit(ds, args)
    cal1, cal2 = norm.apply(cal1), norm.apply(cal2)
    grid = parse_grid(args.gamma_grid)
    H = args.steps_ahead
    sel = None
    if H > 1:
        if args.tracker != "aci":
            raise CliError("multi-step calibration requires --tracker aci")
        if args.gamma is not None:
            cp = calibrate_multistep(f, concat([cal1, cal2], "cal"), args.gamma, args.alpha, H, args.score, warm)
        elif args.tuning == "split":
            cp, sel = calibrate_multistep_split(f, cal1, cal2, grid, args.alpha, H, args.score, warm)
        else:
            raise CliError("theory tuning is only available for one-step bands")
    elif args.gamma is not None:
        cp = calibrate(f, concat([cal1, cal2], "cal"), args.gamma, args.alpha, args.score, args.tracker, warm,
                       aggregation=args.aggregation)
    elif args.tuning == "split":
        cp, sel = calibrate_split(f, cal1, cal2, grid, args.alpha, args.score, args.tracker, warm,
                                  aggregation=args.aggregation)
    else:
        cp, sel = calibrate_theory(f, concat([cal1, cal2], "cal"), grid, args.alpha, args.score, args.tracker, warm,
                                   aggregation=args.aggregation)
    save_artifact(cp, args.output, ds.horizon, norm)
    if sel is not None and args.tuning_report:
        sel.write_csv(args.tuning_report, comment=provenance(args.seed, _hash_args(args)))
    return 0


# ---- predict -------------------------------------------------------------------


def predict_file(model_path, input_path, output_path, comment: Optional[str] = None) -> None:
    """Replay the online loop over every trajectory in ``input_path``."""
    cp, T, norm = load_artifact(model_path)
    ds = load_trajectories(input_path)
    d = cp.forecaster.coef.shape[0]
    if ds.dim != d:
        raise CliError(f"model expects d={d}, {input_path} has d={ds.dim}")
    if ds.horizon != T:
        raise CliError(f"model was calibrated for T={T}, {input_path} has T={ds.horizon}")
    data = norm.apply(ds) if norm is not None else ds
    if isinstance(cp, CalibratedMultiStep):
        lo, hi = predict_multistep_bands(cp, data)
    else:
        lo, hi = predict_bands(cp, data)
    if norm is not None:
        lo, hi = unmap_bands(norm, lo, hi)
    write_bands(output_path, ds.ids, lo, hi, comment=comment)


def unmap_bands(norm: Normalizer, lo, hi):
    """Bands back in the original units (the map is increasing, so order is kept)."""
    with np.errstate(invalid="ignore"):
        return norm.unmap(lo), norm.unmap(hi)


def cmd_predict(args) -> int:
    with open(args.model, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()[:12]
    seed = read_kv(args.model).get("warm.seed", "-")
    predict_file(args.model, args.input, args.output, comment=provenance(seed, digest))
    return 0


# ---- experiment -----------------------------------------------------------------


def cmd_experiment(args) -> int:
    from .experiments import emit_report, run_experiment

    cfg, outdir = load_config(args.config, args.set or (), args.seed)
    outdir = args.output or outdir or "results"
    report = run_experiment(cfg, threads=max(1, args.threads))
    paths = emit_report(report, outdir)
    for p in paths:
        print(p)
    if report.failed:
        for r in report.rows:
            if r.failures:
                print(f"method {r.method} failed in {r.failures} repetition(s) at {r.sweep}={r.value}: {r.error}",
                      file=sys.stderr)
        return 2
    return 0


# ---- plot -------------------------------------------------------------------------


def cmd_plot(args) -> int:
    from .experiments import METRICS, load_report_csv
    from .plotting import plot_bands, plot_metric

    os.makedirs(args.output, exist_ok=True)
    if args.report:
        rows = load_report_csv(args.report)
        sweep = rows[0]["sweep"] if rows else ""
        for m in METRICS:
            path = os.path.join(args.output, f"report_{m}.svg")
            plot_metric(rows, m, path, xlabel=sweep)
            print(path)
    if args.bands:
        with open(args.bands, newline="") as fh:
            rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
        path = os.path.join(args.output, "bands_sample.svg")
        plot_bands(rows, path)
        print(path)
    if not args.report and not args.bands:
        raise CliError("plot needs --report and/or --bands")
    return 0


# ---- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cafht", description="Conformal prediction bands for trajectories.")
    p.add_argument("--version", action="version", version=f"cafht {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate AR(3) trajectories")
    g.add_argument("--profile", choices=("dynamic", "static"), default="dynamic")
    g.add_argument("--n", type=int, default=2000)
    g.add_argument("--T", type=int, default=100)
    g.add_argument("--d", type=int, default=1)
    g.add_argument("--delta", type=float, default=0.1)
    g.add_argument("--k", type=float, default=10.0)
    g.add_argument("--noise", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_generate)

    def fit_args(sp):
        sp.add_argument("--input", required=True, help="trajectory CSV")
        sp.add_argument("--seed", type=int, default=0, help="seed for the train/calibration split and warm start")
        sp.add_argument("--train-frac", type=float, default=0.75)
        sp.add_argument("--order", type=int, default=3)
        sp.add_argument("--alpha", type=float, default=0.1)
        sp.add_argument("--warm-count", type=int, default=5)

    f = sub.add_parser("fit", help="fit the normalizer, AR forecaster and warm start")
    fit_args(f)
    f.add_argument("-o", "--output", required=True)
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("calibrate", help="tune gamma and calibrate the conformal margin")
    fit_args(c)
    c.add_argument("--fit", help="fit file from 'cafht fit' (otherwise fitted here)")
    c.add_argument("--score", choices=("additive", "multiplicative"), default="multiplicative")
    c.add_argument("--tracker", choices=("aci", "pid"), default="aci")
    c.add_argument("--tuning", choices=("split", "theory"), default="split")
    c.add_argument("--aggregation", choices=("linf", "l2"), default="linf")
    c.add_argument("--gamma-grid", default="offset", help="'offset', 'aligned' or comma-separated values")
    c.add_argument("--gamma", type=float, help="fixed learning rate (skips tuning)")
    c.add_argument("--steps-ahead", type=int, default=1)
    c.add_argument("--tuning-report", help="write the per-candidate tuning CSV here")
    c.add_argument("-o", "--output", required=True)
    c.set_defaults(func=cmd_calibrate)

    pr = sub.add_parser("predict", help="emit calibrated bands for a trajectory file")
    pr.add_argument("--model", required=True)
    pr.add_argument("--input", required=True)
    pr.add_argument("-o", "--output", required=True)
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("experiment", help="run a configured experiment and write the report")
    e.add_argument("--config", required=True)
    e.add_argument("--seed", type=int)
    e.add_argument("--threads", type=int, default=1)
    e.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
    e.add_argument("-o", "--output", help="output directory")
    e.set_defaults(func=cmd_experiment)

    pl = sub.add_parser("plot", help="render SVG figures from report or band-sample CSVs")
    pl.add_argument("--report")
    pl.add_argument("--bands")
    pl.add_argument("-o", "--output", default=".")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CliError, ConfigError, ArtifactError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"cafht {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
