import csv

import numpy as np
import pytest

from cafht.adaptive import make_warm_start, run_aci_band
from cafht.cli import main, unmap_bands
from cafht.config import ConfigError, apply_overrides, load_config, parse_sections
from cafht.conformal import predict_band
from cafht.forecaster import fit_ar, fit_normalizer, training_residuals
from cafht.io import load_artifact, provenance, write_bands
from cafht.simdata import load_trajectories, split_dataset
from cafht.tuning import calibrate_split, gamma_grid

GRID = "0.01,0.1,0.5"


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    data, test, model = d / "data.csv", d / "test.csv", d / "model.txt"
    assert main(["generate", "--n", "200", "--T", "12", "--seed", "4", "-o", str(data)]) == 0
    assert main(["generate", "--n", "5", "--T", "12", "--seed", "99", "-o", str(test)]) == 0
    assert main(["calibrate", "--input", str(data), "--seed", "2", "--gamma-grid", GRID, "-o", str(model)]) == 0
    return d


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(line for line in fh if not line.startswith("#")))


def test_generate_writes_provenance(workspace):
    first = (workspace / "data.csv").read_text().splitlines()[0]
    assert first.startswith("# cafht ") and "seed=4" in first


def test_dual_path_byte_identical(workspace, tmp_path):
    out = tmp_path / "bands.csv"
    assert main(["predict", "--model", str(workspace / "model.txt"), "--input", str(workspace / "test.csv"),
                 "-o", str(out)]) == 0
    # the same pipeline assembled from library calls
    ds = load_trajectories(workspace / "data.csv")
    train, cal1, cal2 = split_dataset(ds, seed=2)
    norm = fit_normalizer(train)
    f = fit_ar(norm.apply(train))
    warm = make_warm_start(training_residuals(f, norm.apply(train)), 0.1, seed=2)
    cp, _ = calibrate_split(f, norm.apply(cal1), norm.apply(cal2), (0.01, 0.1, 0.5), 0.1, warm=warm)
    test = load_trajectories(workspace / "test.csv")
    bands = [predict_band(cp, traj) for traj in norm.apply(test)]
    lo, hi = unmap_bands(norm, np.stack([b.lower for b in bands]), np.stack([b.upper for b in bands]))
    ref = tmp_path / "ref.csv"
    comment = out.read_text().splitlines()[0][2:]
    write_bands(ref, test.ids, lo, hi, comment=comment)
    assert out.read_bytes() == ref.read_bytes()


def test_no_look_ahead(workspace, tmp_path):
    src = workspace / "test.csv"
    lines = src.read_text().splitlines()
    changed = []
    for line in lines:
        parts = line.split(",")
        if parts[0] == "0" and parts[1].isdigit() and int(parts[1]) > 6:
            parts[2] = repr(float(parts[2]) + 50.0)
        changed.append(",".join(parts))
    mod = tmp_path / "mod.csv"
    mod.write_text("\n".join(changed) + "\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["predict", "--model", str(workspace / "model.txt"), "--input", str(src), "-o", str(a)])
    main(["predict", "--model", str(workspace / "model.txt"), "--input", str(mod), "-o", str(b)])
    ra, rb = _rows(a), _rows(b)
    for x, y in zip(ra[1:], rb[1:]):
        if x[0] == "0" and int(x[1]) < 7:  # band issued after seeing Y_0..Y_t with t <= 6
            assert x == y
    assert ra != rb


def test_zero_margin_artifact_is_raw_band(workspace, tmp_path):
    text = (workspace / "model.txt").read_text().splitlines()
    zero = tmp_path / "zero.txt"
    zero.write_text("\n".join("margin = 0.0" if l.startswith("margin =") else l for l in text) + "\n")
    out = tmp_path / "z.csv"
    assert main(["predict", "--model", str(zero), "--input", str(workspace / "test.csv"), "-o", str(out)]) == 0
    cp, T, norm = load_artifact(zero)
    test = norm.apply(load_trajectories(workspace / "test.csv"))
    raw = run_aci_band(cp.forecaster, test[2], cp.gamma, cp.alpha_aci, cp.warm)
    lo, hi = unmap_bands(norm, raw.lower, raw.upper)
    rows = [r for r in _rows(out)[1:] if r[0] == str(test.ids[2])]
    assert [float(r[4]) for r in rows] == lo[:, 0].tolist()
    assert [float(r[5]) for r in rows] == hi[:, 0].tolist()


def test_predict_shape_mismatch(workspace, tmp_path):
    other = tmp_path / "short.csv"
    main(["generate", "--n", "3", "--T", "5", "-o", str(other)])
    assert main(["predict", "--model", str(workspace / "model.txt"), "--input", str(other), "-o",
                 str(tmp_path / "x.csv")]) == 1


@pytest.mark.parametrize("extra", [["--score", "additive", "--tracker", "pid"], ["--tuning", "theory"],
                                   ["--steps-ahead", "3"], ["--gamma", "0.05"]])
def test_calibrate_variants_roundtrip(workspace, tmp_path, extra):
    model = tmp_path / "m.txt"
    argv = ["calibrate", "--input", str(workspace / "data.csv"), "--gamma-grid", GRID, "-o", str(model)] + extra
    if "theory" in extra:
        argv += ["--alpha", "0.3"]
    assert main(argv) == 0
    out = tmp_path / "b.csv"
    assert main(["predict", "--model", str(model), "--input", str(workspace / "test.csv"), "-o", str(out)]) == 0
    rows = _rows(out)
    assert rows[0] == ["traj_id", "t", "tau", "dim", "lower", "upper"]
    if "--steps-ahead" in extra:
        assert {r[2] for r in rows[1:]} == {"1", "2", "3"}


def test_fit_then_calibrate(workspace, tmp_path):
    fit = tmp_path / "fit.txt"
    assert main(["fit", "--input", str(workspace / "data.csv"), "--seed", "2", "-o", str(fit)]) == 0
    model = tmp_path / "m.txt"
    assert main(["calibrate", "--input", str(workspace / "data.csv"), "--fit", str(fit), "--gamma-grid", GRID,
                 "-o", str(model)]) == 0
    a = dict(l.split(" = ", 1) for l in model.read_text().splitlines())
    b = dict(l.split(" = ", 1) for l in (workspace / "model.txt").read_text().splitlines())
    assert a == b


EXP_CONFIG = """
[ar]
profile = dynamic
T = 10
seed = 1

[experiment]
n = 160
n_test = 30
reps = 2
grid = 0.01, 0.2
methods = cafht:multiplicative:aci:split, nctp
"""


def test_experiment_seed_override(tmp_path):
    cfg = tmp_path / "e.ini"
    cfg.write_text(EXP_CONFIG)
    outs = []
    for i, seed in enumerate(("5", "5", "6")):
        out = tmp_path / f"o{i}"
        assert main(["experiment", "--config", str(cfg), "--seed", seed, "-o", str(out)]) == 0
        outs.append((out / "report.csv").read_bytes())
    assert outs[0] == outs[1] and outs[0] != outs[2]


def test_experiment_exit_codes(tmp_path, capsys):
    assert main(["experiment", "--config", str(tmp_path / "missing.ini")]) == 1
    assert "not found" in capsys.readouterr().err
    cfg = tmp_path / "e.ini"
    cfg.write_text(EXP_CONFIG.replace("cafht:multiplicative:aci:split", "cafht:additive:aci:theory"))
    assert main(["experiment", "--config", str(cfg), "-o", str(tmp_path / "out")]) == 2
    assert (tmp_path / "out" / "report.csv").exists()


def test_config_unknown_key_suggestion(tmp_path):
    with pytest.raises(ConfigError, match="did you mean 'reps'"):
        parse_sections("[experiment]\nrep = 3\n")
    with pytest.raises(ConfigError, match="did you mean 'experiment'"):
        parse_sections("[experimnet]\nreps = 3\n")
    with pytest.raises(ConfigError, match="section.key=value"):
        apply_overrides({}, ["reps"])
    cfg = tmp_path / "e.ini"
    cfg.write_text(EXP_CONFIG)
    c, outdir = load_config(cfg, ["experiment.reps=7", "ar.delta=0.3"])
    assert c.reps == 7 and c.data.delta == 0.3 and c.seed == 1 and outdir is None


def test_bundled_config_parses():
    import pathlib

    cfg, outdir = load_config(pathlib.Path(__file__).parents[1] / "configs" / "table_a1.ini")
    assert cfg.values == (500, 1000, 2000) and outdir == "results/table_a1"


def test_plot_command(workspace, tmp_path):
    cfg = tmp_path / "e.ini"
    cfg.write_text(EXP_CONFIG)
    out = tmp_path / "exp"
    main(["experiment", "--config", str(cfg), "-o", str(out)])
    figs = tmp_path / "figs"
    assert main(["plot", "--report", str(out / "report.csv"), "--bands", str(out / "bands_sample.csv"),
                 "-o", str(figs)]) == 0
    assert (figs / "report_width.svg").exists() and (figs / "bands_sample.svg").exists()
    assert main(["plot", "-o", str(figs)]) == 1
