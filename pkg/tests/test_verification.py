import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from ensbma import predictive as pred
from ensbma import verification as ver
from ensbma.predictive import PredictiveDistribution


# ------------------------------------------------------------- point scores

def test_mae_rmse_examples():
    assert ver.mae([1, 2, 3], [2, 2, 2]) == pytest.approx(2 / 3)
    assert ver.rmse([1, 2, 3], [2, 2, 2]) == pytest.approx(math.sqrt(2 / 3))
    assert ver.mae([5.0], [5.0]) == 0.0


def test_mae_rmse_against_loop(rng):
    f, y = rng.normal(270, 5, 500), rng.normal(270, 5, 500)
    absum = sqsum = 0.0
    for a, b in zip(f, y):
        absum += abs(a - b)
        sqsum += (a - b) ** 2
    assert ver.mae(f, y) == pytest.approx(absum / 500, rel=1e-12)
    assert ver.rmse(f, y) == pytest.approx(math.sqrt(sqsum / 500), rel=1e-12)
    assert ver.rmse(f, y) >= ver.mae(f, y)


def test_empty_inputs():
    for fn in (ver.mae, ver.rmse):
        with pytest.raises(ver.EmptyInput):
            fn([], [])
    with pytest.raises(ver.EmptyInput):
        ver.crps_empirical([], 1.0)


# ---------------------------------------------------------- empirical CRPS

def test_crps_empirical_two_point():
    assert ver.crps_empirical([0.0, 1.0], 0.5) == pytest.approx(0.25, abs=1e-15)


def test_crps_empirical_point_mass():
    assert ver.crps_empirical([3.0], 5.0) == pytest.approx(2.0)
    assert ver.crps_empirical([5.0, 5.0, 5.0], 5.0) == 0.0


def step_crps(x, y):
    """Integral of (F_m(t) - 1{t >= y})^2 for the empirical step CDF, piecewise exact."""
    x = np.sort(np.asarray(x, dtype=float))
    knots = np.unique(np.concatenate([x, [y]]))
    total = 0.0
    for a, b in zip(knots[:-1], knots[1:]):
        mid = 0.5 * (a + b)
        total += (np.mean(x <= mid) - float(mid >= y)) ** 2 * (b - a)
    return total


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=15), st.floats(-60, 60))
def test_crps_empirical_matches_step_integral(x, y):
    assert ver.crps_empirical(x, y) == pytest.approx(step_crps(x, y), abs=1e-9)


def test_crps_empirical_pairwise_identity(rng):
    x = rng.normal(0, 1, 11)
    y = 0.3
    direct = np.mean(np.abs(x - y)) - 0.5 * np.mean(np.abs(x[:, None] - x[None, :]))
    assert ver.crps_empirical(x, y) == pytest.approx(direct, abs=1e-12)


# -------------------------------------------------------------------- ranks

def test_rank_extremes(rng):
    ens = np.arange(270.0, 281.0)
    assert ver.rank_of_observation(ens, 260.0, rng) == 1
    assert ver.rank_of_observation(ens, 290.0, rng) == 12
    assert ver.rank_of_observation(ens, 275.5, rng) == 7


def test_rank_ties_are_uniform():
    rng = np.random.default_rng(7)
    ens = np.full(11, 273.0)
    ranks = np.array([ver.rank_of_observation(ens, 273.0, rng) for _ in range(10_000)])
    counts = np.bincount(ranks, minlength=13)[1:]
    assert counts.sum() == 10_000
    assert stats.chisquare(counts).pvalue > 0.01


def test_rank_tie_deterministic_for_seed():
    ens = [1.0, 2.0, 2.0, 2.0, 3.0]
    a = [ver.rank_of_observation(ens, 2.0, np.random.default_rng(3)) for _ in range(5)]
    b = [ver.rank_of_observation(ens, 2.0, np.random.default_rng(3)) for _ in range(5)]
    assert a == b and all(2 <= r <= 5 for r in a)


def test_rank_histogram_skips_partial_ensembles(rng):
    full = [np.arange(11.0)] * 4
    part = [np.r_[np.arange(8.0), [np.nan] * 3]]
    counts, skipped = ver.rank_histogram(full + part, [-1, 20, 5.5, 5.5, 3.0], rng, n_members=11)
    assert skipped == 1
    assert counts.sum() == 4 and counts.size == 12
    assert counts[0] == 1 and counts[11] == 1 and counts[6] == 2


def test_calibrated_histogram_is_flat(rng):
    ens = rng.normal(0, 1, (5000, 11))
    y = rng.normal(0, 1, 5000)
    counts, _ = ver.rank_histogram(ens, y, rng)
    assert ver.chi2_uniform_p(counts) > 0.01


def test_underdispersed_histogram_is_u_shaped(rng):
    ens = rng.normal(0, 0.5, (5000, 11))
    y = rng.normal(0, 1, 5000)
    counts, _ = ver.rank_histogram(ens, y, rng)
    interior = counts[1:-1].mean()
    assert counts[0] > 2 * interior and counts[-1] > 2 * interior
    assert ver.chi2_uniform_p(counts) < 1e-6


def test_chi2_matches_formula():
    counts = np.array([10, 12, 8, 9, 11, 14, 6, 10, 10, 10, 12, 8])
    e = counts.sum() / counts.size
    x2 = float(np.sum((counts - e) ** 2 / e))
    assert ver.chi2_uniform_p(counts) == pytest.approx(stats.chi2.sf(x2, counts.size - 1), rel=1e-12)


# ------------------------------------------------------------ containment

def test_containment_calibrated(rng):
    ens = rng.normal(0, 1, (20_000, 11))
    y = rng.normal(0, 1, 20_000)
    assert ver.containment_fraction(ens, y) == pytest.approx(10 / 12, abs=0.02)


def test_containment_inclusive_bounds():
    assert ver.containment_fraction([[1.0, 2.0, 3.0]], [3.0]) == 1.0
    assert ver.containment_fraction([[1.0, np.nan, 3.0]], [3.5]) == 0.0


# ---------------------------------------------------------------- PIT / KS

def test_pit_uniform_under_true_model(rng):
    d = PredictiveDistribution.from_components([0.3, 0.7], [270.0, 276.0], [4.0, 1.0])
    y = pred.sample(d, 3000, rng)
    u = [ver.pit(d, v) for v in y]
    _, p = ver.ks_uniform_test(u)
    assert p > 0.01


def test_ks_on_grid():
    n = 1000
    u = (np.arange(1, n + 1) - 0.5) / n
    d, p = ver.ks_uniform_test(u)
    assert d == pytest.approx(0.5 / n)
    assert p > 0.99


def test_ks_degenerate_sample():
    d, p = ver.ks_uniform_test(np.full(100, 0.5))
    assert d == pytest.approx(0.5)
    assert p < 1e-10


def test_ks_statistic_matches_scipy(rng):
    u = rng.uniform(size=300)
    d, _ = ver.ks_uniform_test(u)
    assert d == pytest.approx(stats.kstest(u, "uniform").statistic, abs=1e-14)


def test_ks_rejects_out_of_range():
    with pytest.raises(ver.OutOfRangeValue):
        ver.ks_uniform_test([0.2, 1.2])
    with pytest.raises(ver.EmptyInput):
        ver.ks_uniform_test([])


def test_kolmogorov_critical_value():
    assert ver.kolmogorov_sf(1.358) == pytest.approx(0.05, abs=1e-3)


@pytest.mark.parametrize("lam", [0.2, 0.5, 0.8, 0.99, 1.0, 1.2, 1.5, 2.0, 3.0])
def test_kolmogorov_against_scipy(lam):
    assert ver.kolmogorov_sf(lam) == pytest.approx(stats.kstwobign.sf(lam), abs=1e-10)


def test_kolmogorov_limits():
    assert ver.kolmogorov_sf(0.0) == 1.0
    assert ver.kolmogorov_sf(0.05) == pytest.approx(1.0, abs=1e-12)
    assert ver.kolmogorov_sf(10.0) < 1e-80


def test_ks_pvalues_uniform_under_null():
    rng = np.random.default_rng(2024)
    ps = [ver.ks_uniform_test(rng.uniform(size=500))[1] for _ in range(200)]
    assert stats.kstest(ps, "uniform").pvalue > 0.01


# --------------------------------------------------------------- quantiles

def test_hf7_example():
    assert ver.hf7_quantile(np.arange(1, 12), 1 / 12) == pytest.approx(1.8333333, abs=1e-6)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30), st.floats(0, 1))
def test_hf7_matches_numpy(x, p):
    assert ver.hf7_quantile(x, p) == pytest.approx(float(np.quantile(x, p, method="linear")), abs=1e-9)


def test_hf7_vectorised_and_bounds():
    q = ver.hf7_quantile([3.0, 1.0, 2.0], np.array([0.0, 0.5, 1.0]))
    np.testing.assert_allclose(q, [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        ver.hf7_quantile([1.0], 1.5)


# --------------------------------------------------------- central interval

def test_interval_stats_example():
    cov, width = ver.central_interval_stats([(0, 2, 1), (0, 2, 3), (1, 5, 5)])
    assert cov == pytest.approx(2 / 3)
    assert width == pytest.approx(8 / 3)


def test_interval_coverage_calibrated(rng):
    d = PredictiveDistribution.from_components([0.5, 0.5], [272.0, 276.0], [2.0, 3.0])
    lo, hi = pred.quantile(d, np.array([1 / 12, 11 / 12]))
    y = pred.sample(d, 50_000, rng)
    cov, width = ver.central_interval_stats((lo, hi, v) for v in y)
    assert cov == pytest.approx(5 / 6, abs=0.01)
    assert width == pytest.approx(hi - lo)


def test_interval_malformed():
    with pytest.raises(ver.MalformedInterval):
        ver.central_interval_stats([(2.0, 1.0, 1.5)])


# ------------------------------------------------------------------- brier

def test_brier():
    assert ver.brier_score([1.0, 0.0], [1, 0]) == 0.0
    assert ver.brier_score([0.5, 0.5], [1, 0]) == 0.25


# ------------------------------------------------------------ propriety

@pytest.mark.parametrize("factor", [0.5, 2.0])
def test_crps_prefers_true_spread(rng, factor):
    y = rng.normal(273, 2, 4000)
    true = PredictiveDistribution.from_components([1.0], [273.0], [4.0])
    wrong = PredictiveDistribution.from_components([1.0], [273.0], [4.0 * factor**2])
    assert np.mean([pred.crps(wrong, v) for v in y]) > np.mean([pred.crps(true, v) for v in y])


# ---------------------------------------------------------------- reports

def test_accumulator_report():
    acc = ver.ScoreAccumulator()
    acc.add(1.0, 272.0, 272.5, 270.0, 274.0, 273.0)
    acc.add(2.0, 275.0, 274.0, 273.0, 276.0, 277.0)
    r = acc.report(containment=0.5)
    assert r.n_cases == 2 and r.mean_crps == 1.5
    assert r.mae_median == pytest.approx(1.5) and r.coverage == 0.5
    assert r.avg_width == pytest.approx(3.5)
    assert set(r.csv_row()) == set(ver.VerificationReport.SCALAR_FIELDS)
    empty = ver.ScoreAccumulator().report()
    assert empty.n_cases == 0 and math.isnan(empty.mean_crps)
