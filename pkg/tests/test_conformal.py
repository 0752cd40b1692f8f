import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cafht.adaptive import WarmStart, run_aci_band
from cafht.conformal import (
    additive_score,
    additive_scores,
    calibrate,
    expand,
    multiplicative_score,
    predict_band,
    predict_bands,
    raw_bands,
    scores_for,
)
from cafht.core import PredictionBand, Trajectory, band_width_stats, covers_simultaneously


def _band(lo, hi):
    return PredictionBand(np.asarray(lo, float), np.asarray(hi, float))


def test_additive_covered_is_zero():
    traj = Trajectory(np.array([0.0, 0.5, 0.2, -0.3]))
    assert additive_score(_band([-1] * 3, [1] * 3), traj) == 0.0


def test_additive_single_excursion():
    traj = Trajectory(np.array([0.0, 0.5, 1.3, 0.0]))
    assert additive_score(_band([-1] * 3, [1] * 3), traj) == pytest.approx(0.3)


def test_multiplicative_examples():
    traj = Trajectory(np.array([0.0, 1.2]))
    assert multiplicative_score(_band([0.0], [1.0]), traj) == pytest.approx(0.2)
    assert multiplicative_score(_band([0.5], [1.0]), traj) == pytest.approx(0.4)
    assert multiplicative_score(_band([0.0], [2.0]), traj) == 0.0


def _brute_additive(lo, hi, y, agg):
    T, d = lo.shape
    per = []
    for j in range(d):
        m = 0.0
        for t in range(T):
            m = max(m, lo[t, j] - y[t, j], y[t, j] - hi[t, j])
        per.append(m)
    return max(per) if agg == "linf" else math.sqrt(sum(p * p for p in per))


def _brute_mult(lo, hi, y):
    T, d = lo.shape
    m = 0.0
    for t in range(T):
        for j in range(d):
            w = max(hi[t, j] - lo[t, j], 1e-8)
            m = max(m, (lo[t, j] - y[t, j]) / w, (y[t, j] - hi[t, j]) / w)
    return m


def test_scores_match_brute_force(rng):
    for _ in range(300):
        c = rng.normal(size=(5, 2))
        r = rng.uniform(0, 1, size=(5, 2))
        lo, hi = c - r, c + r
        y = rng.normal(size=(6, 2))
        traj = Trajectory(y)
        band = PredictionBand(lo, hi)
        assert additive_score(band, traj) == pytest.approx(_brute_additive(lo, hi, y[1:], "linf"), abs=1e-14)
        assert additive_score(band, traj, "l2") == pytest.approx(_brute_additive(lo, hi, y[1:], "l2"), abs=1e-14)
        assert multiplicative_score(band, traj) == pytest.approx(_brute_mult(lo, hi, y[1:]), rel=1e-14)


def test_l2_requires_additive():
    with pytest.raises(ValueError):
        scores_for(np.zeros((2, 1)), np.ones((2, 1)), np.zeros((2, 1)), "multiplicative", "l2")


def test_zero_width_uses_floor():
    s = multiplicative_score(_band([0.0], [0.0]), Trajectory(np.array([0.0, 1e-9])))
    assert s == pytest.approx(0.1)


def test_calibrate_rank_19(small_pipeline):
    cal = small_pipeline["cal2"].subset(range(19))
    f, warm = small_pipeline["f"], small_pipeline["warm"]
    cp = calibrate(f, cal, 0.05, 0.1, "additive", warm=warm)
    res, obs = raw_bands(f, cal, [0.05], 0.1, warm, "aci")
    s = np.sort(scores_for(res.lower[0], res.upper[0], obs, "additive"))
    assert cp.margin == s[17]


def test_calibrate_overflow_gives_full_width(small_pipeline):
    cal = small_pipeline["cal2"].subset(range(9))
    cp = calibrate(small_pipeline["f"], cal, 0.05, 0.05, "multiplicative", warm=small_pipeline["warm"])
    assert cp.margin == math.inf
    band = predict_band(cp, small_pipeline["test"][0])
    assert band_width_stats(band) == 2.0


def test_calibrate_equal_scores():
    # constant trajectories under an intercept-only forecaster all score the same
    from cafht.core import TrajectorySet
    from cafht.forecaster import ARForecaster

    vals = np.zeros((10, 6, 1))
    vals[:, 3] = 0.7
    f = ARForecaster(1, 0.0, np.zeros((1, 1)), np.zeros(1))
    cp = calibrate(f, TrajectorySet(vals), 0.1, 0.2, "additive", warm=WarmStart.zeros())
    assert cp.margin == pytest.approx(0.7)


def test_calibrate_empty_and_bad_alpha(small_pipeline):
    with pytest.raises(ValueError):
        calibrate(small_pipeline["f"], small_pipeline["cal2"], 0.1, 1.5)


def test_zero_margin_is_raw_band(small_pipeline):
    f, warm = small_pipeline["f"], small_pipeline["warm"]
    cp = calibrate(f, small_pipeline["cal2"], 0.1, 0.1, "additive", warm=warm).with_margin(0.0)
    traj = small_pipeline["test"][3]
    raw = run_aci_band(f, traj, 0.1, 0.1, warm)
    out = predict_band(cp, traj)
    assert np.array_equal(out.lower, raw.lower) and np.array_equal(out.upper, raw.upper)
    cpm = calibrate(f, small_pipeline["cal2"], 0.1, 0.1, "multiplicative", warm=warm).with_margin(0.0)
    assert np.array_equal(predict_band(cpm, traj).upper, raw.upper)


def test_multiplicative_expansion_example():
    lo, hi = expand(np.array([0.0]), np.array([1.0]), 0.2, "multiplicative")
    assert lo[0] == pytest.approx(-0.2) and hi[0] == pytest.approx(1.2)


def test_infinite_margin_gives_infinite_intervals():
    lo, hi = expand(np.array([0.0, -0.1]), np.array([1.0, 0.3]), math.inf, "additive")
    assert np.all(np.isinf(lo)) and np.all(np.isinf(hi))
    lo, hi = expand(np.array([0.0]), np.array([1.0]), math.inf, "multiplicative")
    assert lo[0] == -math.inf and hi[0] == math.inf


@pytest.mark.parametrize("score", ["additive", "multiplicative"])
@pytest.mark.parametrize("tracker", ["aci", "pid"])
def test_containment(small_pipeline, score, tracker):
    f, warm = small_pipeline["f"], small_pipeline["warm"]
    cp = calibrate(f, small_pipeline["cal2"], 0.05, 0.1, score, tracker, warm)
    lo, hi = predict_bands(cp, small_pipeline["test"])
    res, _ = raw_bands(f, small_pipeline["test"], [0.05], 0.1, warm, tracker)
    assert np.all(lo <= res.lower[0]) and np.all(hi >= res.upper[0])


def test_monotone_in_alpha(small_pipeline):
    f, warm = small_pipeline["f"], small_pipeline["warm"]
    margins = [calibrate(f, small_pipeline["cal2"], 0.05, a, "additive", warm=warm).margin for a in (0.05, 0.1, 0.2, 0.4)]
    assert margins == sorted(margins, reverse=True)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 8), st.integers(1, 3), st.integers(0, 2**31 - 1), st.sampled_from(["additive", "multiplicative"]))
def test_score_coverage_duality(T, d, seed, score):
    """``score <= Q`` iff the band expanded by ``Q`` covers the trajectory."""
    rng = np.random.default_rng(seed)
    n = 400
    c = rng.normal(size=(n, T, d))
    r = rng.exponential(size=(n, T, d)) * (rng.random((n, T, d)) > 0.1)
    lo, hi = c - r, c + r
    y = c + rng.normal(scale=2.0, size=(n, T, d))
    s = scores_for(lo, hi, y, score)
    q = np.abs(rng.normal(size=n)) * rng.choice([0.0, 1.0, 1.0], size=n)
    # near-boundary cases; exact ties are at the mercy of rounding in lo - q
    near = s * (1 + rng.choice([-1e-9, 1e-9], size=n))
    q = np.where((rng.random(n) < 0.2) & (s > 1e-6), near, q)
    elo, ehi = expand(lo, hi, q[:, None, None], score)
    covered = np.all((elo <= y) & (y <= ehi), axis=(1, 2))
    assert np.array_equal(covered, s <= q)


def test_duality_on_ten_thousand_instances():
    rng = np.random.default_rng(8)
    n, T, d = 10_000, 5, 2
    c = rng.normal(size=(n, T, d))
    r = rng.exponential(size=(n, T, d))
    y = c + rng.normal(scale=2.0, size=(n, T, d))
    s = additive_scores(c - r, c + r, y)
    q = np.quantile(s, 0.5)
    elo, ehi = expand(c - r, c + r, q, "additive")
    covered = np.all((elo <= y) & (y <= ehi), axis=(1, 2))
    assert np.array_equal(covered, s <= q)
    for i in range(0, n, 997):
        band = PredictionBand(elo[i], ehi[i])
        traj = Trajectory(np.vstack([np.zeros((1, d)), y[i]]))
        assert covers_simultaneously(band, traj) == bool(s[i] <= q)
