import csv
import math

import numpy as np
import pytest
from scipy import special

from cafht.adaptive import WarmStart
from cafht.conformal import calibrate, expand, raw_bands, scores_for
from cafht.core import clipped_widths, empirical_quantile
from cafht.tuning import (
    DEFAULT_GRID,
    CorrectionError,
    calibrate_split,
    calibrate_theory,
    check_grid,
    corrected_level,
    dkw_constant,
    dkw_corrected_level,
    markov_bound,
    markov_corrected_level,
    gamma_grid,
    select_from_bands,
    select_gamma_split,
)

# Reference computed with scipy.special.betaincinv as an independent inverse
# (same candidate grid, step 1e-4, b = 100).
MARKOV_M1000_L27 = 0.0629


def test_grid_readings():
    assert DEFAULT_GRID[:3] == (0.001, 0.011, 0.021) and DEFAULT_GRID[10] == 0.1
    assert gamma_grid("aligned")[:3] == (0.001, 0.01, 0.02)
    assert DEFAULT_GRID[-1] == 0.9 and len(DEFAULT_GRID) == 19
    with pytest.raises(ValueError):
        check_grid([0.1, 0.1])
    with pytest.raises(ValueError):
        check_grid([])


def test_single_candidate(small_pipeline):
    sel = select_gamma_split(small_pipeline["f"], small_pipeline["cal1"], [0.3], warm=small_pipeline["warm"])
    assert sel.gamma == 0.3 and sel.index == 0


def test_infinite_candidate_loses():
    rng = np.random.default_rng(0)
    n, T = 5, 4
    lo = np.zeros((2, n, T, 1))
    hi = np.ones((2, n, T, 1)) * 0.1
    y = rng.uniform(0, 0.1, size=(n, T, 1))
    lo[0] = hi[0] = 0.0  # candidate 0 misses; with m = 5 at level 0.9 its margin is infinite
    y[0, 0, 0] = 0.05
    sel = select_from_bands(lo, hi, y, (0.01, 0.02), 0.8, "additive")
    assert sel.index == 1 and math.isfinite(sel.margins[1])
    sel = select_from_bands(lo, hi, y, (0.01, 0.02), 0.9, "additive")
    assert np.all(np.isinf(sel.margins)) and sel.all_infinite and sel.index == 0


def test_ties_go_to_smallest_gamma():
    lo = np.zeros((3, 4, 2, 1))
    hi = np.ones((3, 4, 2, 1)) * 0.5
    y = np.full((4, 2, 1), 0.25)
    assert select_from_bands(lo, hi, y, (0.1, 0.2, 0.3), 0.5, "additive").index == 0


def test_selection_matches_independent_rerun(small_pipeline):
    f, warm, cal1 = small_pipeline["f"], small_pipeline["warm"], small_pipeline["cal1"]
    grid = (0.005, 0.05, 0.2, 0.6)
    sel = select_gamma_split(f, cal1, grid, 0.1, "multiplicative", warm=warm)
    widths = []
    for g in grid:
        cp = calibrate(f, cal1, g, 0.1, "multiplicative", warm=warm)
        res, _ = raw_bands(f, cal1, [g], 0.1, warm, "aci")
        lo, hi = expand(res.lower[0], res.upper[0], cp.margin, "multiplicative")
        widths.append(np.mean(clipped_widths(lo, hi)))
    assert sel.widths == pytest.approx(widths, rel=1e-12)
    assert sel.index == int(np.argmin(widths))


def test_tuning_csv(small_pipeline, tmp_path):
    sel = select_gamma_split(small_pipeline["f"], small_pipeline["cal1"], (0.01, 0.1), warm=small_pipeline["warm"])
    p = tmp_path / "t.csv"
    sel.write_csv(p, comment="test")
    lines = open(p).read().splitlines()
    assert lines[0] == "# test" and lines[1] == "gamma,avg_width,quantile,selected"
    assert sum(int(r[-1]) for r in csv.reader(lines[2:])) == 1


def test_c1_high_precision():
    exact = (1 / math.sqrt(2)) / (math.sqrt(math.log(2)) + math.sqrt(math.log(2) + 4 / math.pi))
    assert dkw_constant(1) == pytest.approx(0.3164024114647725, abs=1e-12)
    assert dkw_constant(1) == pytest.approx(exact, abs=1e-15)


def test_c_below_one_third():
    assert all(dkw_constant(L) < 1 / 3 for L in range(2, 2000))


def test_dkw_monotone():
    for L in (1, 5, 21, 27):
        levels = [dkw_corrected_level(m, L, 0.1) for m in (300, 500, 1000, 5000, 10**6)]
        assert levels == sorted(levels)
    for m in (500, 1000):
        levels = [dkw_corrected_level(m, L, 0.1) for L in (1, 5, 21, 27, 100)]
        assert levels == sorted(levels, reverse=True)
    assert dkw_corrected_level(10**12, 1, 0.1) == pytest.approx(0.1, abs=1e-5)


def test_dkw_too_small():
    with pytest.raises(CorrectionError, match="too small"):
        dkw_corrected_level(20, 21, 0.1)


def test_markov_bound_non_increasing():
    prev = math.inf
    for k in range(1, 101):
        a = k / 1000
        b = markov_bound(a, 1000, 27)
        if b is None:
            continue
        assert b <= prev + 1e-15
        prev = b


def test_markov_regression_constant():
    assert markov_corrected_level(1000, 27, 0.1) == pytest.approx(MARKOV_M1000_L27, abs=1e-12)


def test_markov_oracle_scipy():
    # independent inversion of the same search
    def oracle(m, L, alpha, b=100):
        for k in range(int(alpha / 1e-4) + 1):
            a = round(alpha - k * 1e-4, 12)
            l = math.floor(a * (m + 1) + 1e-12)
            if l < 1:
                break
            if special.betaincinv(m + 1 - l, l, 1 / (b * L)) * (1 - 1 / b) >= 1 - alpha:
                return a
        return None

    for m in (250, 1000):
        for L in (1, 21, 27):
            assert markov_corrected_level(m, L, 0.1) == pytest.approx(oracle(m, L, 0.1), abs=1e-12)


def test_markov_b_factor():
    from cafht.special import inverse_beta_cdf

    l = math.floor(0.05 * 1001)
    for b in (2.0, 100.0, 1e9):
        raw = inverse_beta_cdf(1 / (b * 27), 1001 - l, l)
        assert markov_bound(0.05, 1000, 27, b=b) == pytest.approx(raw * (1 - 1 / b), rel=1e-15)
    assert markov_bound(0.0005, 1000, 27) is None


@pytest.mark.parametrize("m", [250, 1000])
@pytest.mark.parametrize("L", [1, 21, 27])
def test_corrected_level_below_alpha(m, L):
    a = corrected_level(m, L, 0.1)
    assert 0 < a <= 0.1


def test_theory_not_narrower_than_split(small_pipeline):
    f, warm = small_pipeline["f"], small_pipeline["warm"]
    from cafht.simdata import concat

    cal = concat([small_pipeline["cal1"], small_pipeline["cal2"]], "cal")
    grid = (0.01, 0.1, 0.5)
    cp_t, sel_t = calibrate_theory(f, cal, grid, 0.2, "additive", warm=warm)
    cp_s, sel_s = calibrate_split(f, small_pipeline["cal1"], small_pipeline["cal2"], grid, 0.2, "additive", warm=warm)
    assert cp_t.level > cp_s.level
    assert cp_t.tuning == "theory" and cp_s.tuning == "split"
    # at the same gamma the stricter level can only widen the margin
    res, obs = raw_bands(f, cal, [cp_t.gamma], 0.2, warm, "aci")
    s = scores_for(res.lower[0], res.upper[0], obs, "additive")
    assert cp_t.margin == empirical_quantile(s, cp_t.level) >= empirical_quantile(s, 0.8)


def test_theory_small_set_infinite(small_pipeline):
    cal = small_pipeline["cal1"].subset(range(40))
    with pytest.raises(CorrectionError):
        calibrate_theory(small_pipeline["f"], cal, DEFAULT_GRID, 0.1, warm=small_pipeline["warm"])
