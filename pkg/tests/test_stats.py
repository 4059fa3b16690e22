import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dualchain.protocol import TrajectoryOutcome
from dualchain.stats import (
    SUMMARY_COLUMNS,
    ArrivalSample,
    SweepRow,
    histogram_log,
    loglog_slope,
    optimal_k,
    remaining_time_curve,
    restricted_mean,
    summarize,
    tail_fraction,
    trend_slope,
    write_histogram_csv,
    write_summary_csv,
    write_tbar_csv,
)

positive_times = st.lists(st.floats(1e-3, 1e3, allow_nan=False), min_size=2, max_size=200)


@given(positive_times, st.integers(2, 60))
def test_histogram_partitions_the_sample(times, bins):
    h = histogram_log(ArrivalSample(np.array(times)), bins)
    assert h.counts.sum() == len(times)
    assert len(h.edges) == bins + 1 and np.all(np.diff(h.edges) > 0)
    for t in times:
        assert h.edges[h.bin_of(t)] <= t <= h.edges[h.bin_of(t) + 1]
    if not h.degenerate:
        ratios = h.edges[1:] / h.edges[:-1]
        np.testing.assert_allclose(ratios, ratios[0], rtol=1e-9)


def test_histogram_degenerate_sample():
    h = histogram_log(ArrivalSample(np.full(5, 3.0)), 10)
    assert h.degenerate and h.counts.sum() == 5
    assert h.edges[0] == pytest.approx(3.0 * 0.995) and h.edges[-1] == pytest.approx(3.0 * 1.005)


def test_histogram_rejects_empty_and_nonpositive():
    with pytest.raises(ValueError):
        histogram_log(ArrivalSample(np.array([])))
    with pytest.raises(ValueError):
        histogram_log(ArrivalSample(np.array([0.0, 1.0])))


def test_bin_edges_right_open_last_closed():
    h = histogram_log(ArrivalSample(np.array([1.0, 10.0, 100.0])), 2)
    assert h.bin_of(1.0) == 0 and h.bin_of(10.0) == 1 and h.bin_of(100.0) == 1
    assert h.bin_of(1000.0) == -1 and list(h.counts) == [1, 2]


def test_sample_from_outcomes_excludes_censored_and_failed():
    outs = [TrajectoryOutcome(0.99, 2.0, (0, 0), 20, 0.99),
            TrajectoryOutcome(0.99, None, (0, 1), 100, 0.5),
            TrajectoryOutcome(0.99, None, (0, 2), 3, 0.1, error="boom"),
            TrajectoryOutcome(0.99, 1.0, (0, 3), 10, 0.995)]
    s = ArrivalSample.from_outcomes(outs, t_max=10.0)
    assert list(s.times) == [1.0, 2.0] and s.censored_count == 1 and s.total == 3


def test_tail_fraction_counts_censored_as_late():
    s = ArrivalSample(np.array([1.0, 5.0, 500.0]), censored_count=1, t_max=2000.0)
    assert tail_fraction(s, 440.0) == pytest.approx(2 / 4)
    assert tail_fraction(s, 2000.0) == 0.0
    assert math.isnan(tail_fraction(ArrivalSample(np.array([])), 1.0))


def test_summary_against_numpy():
    rng = np.random.default_rng(0)
    t = rng.lognormal(1.0, 1.0, 3000)
    s = summarize(ArrivalSample(t, censored_count=30, t_max=1e6))
    assert s.mean == pytest.approx(t.mean()) and s.n == 3000
    assert s.std_error == pytest.approx(t.std(ddof=1) / math.sqrt(3000))
    assert s.censored_fraction == pytest.approx(30 / 3030)
    assert s.mode_bin[0] <= s.mode_bin_center <= s.mode_bin[1]
    with pytest.raises(ValueError):
        summarize(ArrivalSample(np.array([1.0])))


def test_mode_finds_a_planted_cluster():
    rng = np.random.default_rng(1)
    t = np.r_[rng.uniform(1, 1000, 500), rng.uniform(5.9, 6.1, 300)]
    s = summarize(ArrivalSample(t))
    assert s.mode_bin[0] <= 6.0 <= s.mode_bin[1]


@given(st.lists(st.floats(0.01, 100, allow_nan=False), min_size=1, max_size=80),
       st.lists(st.floats(0, 120, allow_nan=False), min_size=1, max_size=10),
       st.integers(1, 5))
def test_remaining_time_matches_brute_force(times, grid, support):
    grid = sorted(grid)
    c = remaining_time_curve(ArrivalSample(np.array(times)), grid, min_support=support)
    expect = []
    for g in grid:
        later = [t for t in times if t > g]
        if len(later) >= support:
            expect.append((g, np.mean(later) - g, len(later)))
    assert len(c.t) == len(expect)
    for (g, v, n), ct, cv, cn in zip(expect, c.t, c.values, c.support):
        assert ct == g and cn == n
        assert cv == pytest.approx(v, rel=1e-9, abs=1e-9)


def test_remaining_time_of_exponential_is_flat():
    # memoryless: E[T - t | T > t] = scale
    t = np.random.default_rng(2).exponential(10.0, 200_000)
    c = remaining_time_curve(ArrivalSample(t), np.arange(0, 30, 1.0))
    np.testing.assert_allclose(c.values, 10.0, rtol=0.03)
    assert abs(trend_slope(c)) < 0.01


def test_trend_slope_of_a_line():
    from dualchain.stats import RemainingTimeCurve
    x = np.linspace(0, 10, 11)
    c = RemainingTimeCurve(t=x, values=3 * x + 1, support=np.full(11, 50))
    assert trend_slope(c) == pytest.approx(3.0)
    assert trend_slope(c, lo=2, hi=4) == pytest.approx(3.0)
    assert math.isnan(trend_slope(c, lo=100))


def test_loglog_slope_recovers_pareto_exponent():
    # Pareto(alpha) density ~ t^-(alpha + 1)
    alpha = 1.0
    t = (np.random.default_rng(3).pareto(alpha, 400_000) + 1.0)
    h = histogram_log(ArrivalSample(t[t < 1e4]), 60)
    assert loglog_slope(h, 2.0, 200.0) == pytest.approx(-(alpha + 1), abs=0.1)


def test_optimal_k_and_sweep_rows():
    rng = np.random.default_rng(4)

    def summ(mu):
        return summarize(ArrivalSample(rng.normal(mu, 0.1, 100).clip(0.01)))

    rows = [SweepRow(k, 0.9, summ(abs(k - 2) + 5)) for k in (1.0, 2.0, 4.0)]
    assert optimal_k(rows, 0.9) == 2.0


def test_optimal_k_ignores_lucky_survivors_of_a_censored_cell():
    # two fast arrivals out of 100, the rest censored at t_max=1000
    mostly_censored = summarize(ArrivalSample(np.array([1.0, 2.0]), censored_count=98, t_max=1000.0))
    healthy = summarize(ArrivalSample(np.full(100, 50.0), t_max=1000.0))
    rows = [SweepRow(0.5, 0.99, mostly_censored), SweepRow(2.0, 0.99, healthy)]
    assert mostly_censored.mean < healthy.mean
    assert mostly_censored.restricted_mean == pytest.approx((3.0 + 98 * 1000.0) / 100)
    assert optimal_k(rows, 0.99) == 2.0


@given(positive_times, st.integers(0, 50))
def test_restricted_mean_bounds(times, censored):
    s = ArrivalSample(np.array(times), censored_count=censored, t_max=1e3)
    rm = restricted_mean(s)
    assert np.mean(times) - 1e-9 <= rm <= 1e3 + 1e-9
    if censored == 0:
        assert rm == pytest.approx(np.mean(times))


def test_csv_writers(tmp_path):
    s = ArrivalSample(np.array([1.0, 2.0, 3.0, 1000.0 / 3]), censored_count=1, t_max=500.0)
    h = histogram_log(s, 4)
    write_histogram_csv(tmp_path / "h.csv", h)
    rows = list(csv.reader((tmp_path / "h.csv").open()))
    assert rows[0] == ["bin_lo", "bin_hi", "count"] and sum(int(r[2]) for r in rows[1:]) == 4
    write_summary_csv(tmp_path / "s.csv", [SweepRow(2.0, 0.99, summarize(s, bins=4))])
    rows = list(csv.reader((tmp_path / "s.csv").open()))
    assert rows[0] == SUMMARY_COLUMNS
    assert rows[1][:3] == ["2", "0.99", "4"]
    assert rows[1][3] == f"{np.mean(s.times):.9g}"
    assert rows[1][6] == "0.2"            # one censored out of five exceeds 440
    write_tbar_csv(tmp_path / "t.csv", remaining_time_curve(s, [0.0, 1.5], min_support=1))
    rows = list(csv.reader((tmp_path / "t.csv").open()))
    assert rows[0] == ["t", "tbar", "support"] and rows[1][2] == "4"
