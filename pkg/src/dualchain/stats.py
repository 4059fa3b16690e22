"""Arrival-time statistics: log-binned histograms, summaries and the
conditional expected remaining wait.

Censored trajectories never enter means, modes or remaining-time values;
they are reported through ``censored_count`` / ``censored_fraction``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DEFAULT_BINS = 50
MIN_SUPPORT = 20
DEGENERATE_WIDEN = 0.005


@dataclass(frozen=True, eq=False)
class ArrivalSample:
    times: np.ndarray          # sorted, uncensored
    censored_count: int = 0
    t_max: float = np.inf

    def __post_init__(self):
        t = np.sort(np.asarray(self.times, dtype=float))
        object.__setattr__(self, "times", t)
        if len(t) and (t[0] < 0 or t[-1] > self.t_max):
            raise ValueError("arrival times must lie in [0, t_max]")

    @classmethod
    def from_outcomes(cls, outcomes, t_max: float) -> "ArrivalSample":
        outcomes = [o for o in outcomes if not o.failed]
        times = [o.arrival_time for o in outcomes if o.arrival_time is not None]
        return cls(np.asarray(times, dtype=float), sum(o.censored for o in outcomes), t_max)

    @property
    def n(self) -> int:
        return len(self.times)

    @property
    def total(self) -> int:
        return self.n + self.censored_count


@dataclass(frozen=True, eq=False)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    degenerate: bool = False

    @property
    def centers(self) -> np.ndarray:
        """Geometric bin centers (natural for log-spaced edges)."""
        return np.sqrt(self.edges[:-1] * self.edges[1:])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    def density(self) -> np.ndarray:
        """Counts per unit time, normalized by the histogram total."""
        return self.counts / (self.widths * max(self.counts.sum(), 1))

    def bin_of(self, t: float) -> int:
        """Index of the bin holding ``t`` (right-open bins, last bin closed)."""
        if t < self.edges[0] or t > self.edges[-1]:
            return -1
        return min(int(np.searchsorted(self.edges, t, side="right")) - 1, len(self.counts) - 1)


@dataclass(frozen=True)
class EnsembleSummary:
    n: int
    mean: float
    std_error: float
    mode_bin_center: float
    mode_bin: tuple[float, float]
    tail_fractions: dict
    censored_count: int
    censored_fraction: float
    restricted_mean: float = float("nan")


@dataclass(frozen=True, eq=False)
class RemainingTimeCurve:
    t: np.ndarray
    values: np.ndarray
    support: np.ndarray


def histogram_log(sample: ArrivalSample, bins: int = DEFAULT_BINS) -> Histogram:
    if sample.n == 0:
        raise ValueError("empty sample")
    if bins < 2:
        raise ValueError("need at least 2 bins")
    lo, hi = float(sample.times[0]), float(sample.times[-1])
    degenerate = False
    if lo <= 0:
        raise ValueError("log binning needs strictly positive arrival times")
    if hi == lo:
        degenerate = True
        lo, hi = lo * (1 - DEGENERATE_WIDEN), hi * (1 + DEGENERATE_WIDEN)
    edges = np.geomspace(lo, hi, bins + 1)
    edges[0], edges[-1] = lo, hi
    counts, _ = np.histogram(sample.times, bins=edges)
    return Histogram(edges=edges, counts=counts, degenerate=degenerate)


def tail_fraction(sample: ArrivalSample, cut: float) -> float:
    """Fraction of all trajectories whose arrival exceeds ``cut``.

    Censored trajectories arrive after ``t_max`` and count as exceeding any
    cut below it.
    """
    if sample.total == 0:
        return float("nan")
    above = int(np.sum(sample.times > cut))
    if cut < sample.t_max:
        above += sample.censored_count
    return above / sample.total


def summarize(sample: ArrivalSample, tail_cuts: Sequence[float] = (440.0,),
              bins: int = DEFAULT_BINS) -> EnsembleSummary:
    if sample.n < 2:
        raise ValueError(f"need at least 2 uncensored arrivals, got {sample.n}")
    t = sample.times
    hist = histogram_log(sample, bins)
    i = int(np.argmax(hist.counts))
    return EnsembleSummary(
        n=sample.n,
        mean=float(t.mean()),
        std_error=float(t.std(ddof=1) / np.sqrt(sample.n)),
        mode_bin_center=float(hist.centers[i]),
        mode_bin=(float(hist.edges[i]), float(hist.edges[i + 1])),
        tail_fractions={float(c): tail_fraction(sample, c) for c in tail_cuts},
        censored_count=sample.censored_count,
        censored_fraction=sample.censored_count / sample.total,
        restricted_mean=restricted_mean(sample),
    )


def restricted_mean(sample: ArrivalSample) -> float:
    """Mean of ``min(arrival, t_max)`` over all trajectories.

    Censored runs contribute ``t_max``, so this is a lower bound on the
    true mean arrival.  It equals the plain mean when nothing is censored.
    """
    if sample.censored_count == 0:
        return float(sample.times.mean())
    return float((sample.times.sum() + sample.censored_count * sample.t_max) / sample.total)


def remaining_time_curve(sample: ArrivalSample, grid: Iterable[float],
                         min_support: int = MIN_SUPPORT) -> RemainingTimeCurve:
    """Mean of the arrivals later than t, minus t, on each grid point with enough support."""
    t = sample.times
    grid = np.asarray(list(grid), dtype=float)
    # suffix sums over the sorted sample
    suffix = np.concatenate([np.cumsum(t[::-1])[::-1], [0.0]])
    start = np.searchsorted(t, grid, side="right")
    support = len(t) - start
    keep = support >= min_support
    vals = suffix[start[keep]] / support[keep] - grid[keep]
    return RemainingTimeCurve(t=grid[keep], values=vals, support=support[keep])


def trend_slope(curve: RemainingTimeCurve, lo: float = 0.0, hi: float = np.inf) -> float:
    m = (curve.t >= lo) & (curve.t <= hi)
    if m.sum() < 2:
        return float("nan")
    return float(np.polyfit(curve.t[m], curve.values[m], 1)[0])


def loglog_slope(hist: Histogram, lo: float, hi: float) -> float:
    """Least-squares exponent of the histogram density on bins centred in [lo, hi]."""
    c = hist.centers
    d = hist.density()
    m = (c >= lo) & (c <= hi) & (hist.counts > 0)
    if m.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(c[m]), np.log(d[m]), 1)[0])


@dataclass(frozen=True)
class SweepRow:
    k: float
    threshold: float
    summary: EnsembleSummary


def sweep_curve(results, tail_cuts=(440.0,)) -> list[SweepRow]:
    rows = []
    for (k, thr), outcomes in results.cells():
        sample = ArrivalSample.from_outcomes(outcomes, results.plan.base.t_max)
        rows.append(SweepRow(k, thr, summarize(sample, tail_cuts)))
    rows.sort(key=lambda r: (r.threshold, r.k))
    return rows


def optimal_k(rows: Sequence[SweepRow], threshold: float) -> float:
    """k with the smallest restricted mean.

    Ranking by the uncensored mean alone would favour a cell where almost
    every run is censored and only a few lucky ones arrive.
    """
    sel = [r for r in rows if r.threshold == threshold]
    return min(sel, key=lambda r: r.summary.restricted_mean).k


# -- CSV emitters ------------------------------------------------------------------

def _g(x) -> str:
    return f"{x:.9g}"


def write_histogram_csv(path, hist: Histogram):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(hist.edges[:-1], hist.edges[1:], hist.counts):
            w.writerow([_g(lo), _g(hi), int(c)])


SUMMARY_COLUMNS = ["k", "threshold", "n", "mean", "std_error", "mode", "tail_fraction_440",
                   "censored_fraction"]


def summary_row(k: float, threshold: float, s: EnsembleSummary) -> list[str]:
    return [_g(k), _g(threshold), str(s.n), _g(s.mean), _g(s.std_error), _g(s.mode_bin_center),
            _g(s.tail_fractions.get(440.0, float("nan"))), _g(s.censored_fraction)]


def write_summary_csv(path, rows: Sequence[SweepRow]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow(summary_row(r.k, r.threshold, r.summary))


def write_tbar_csv(path, curve: RemainingTimeCurve):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "tbar", "support"])
        for t, v, n in zip(curve.t, curve.values, curve.support):
            w.writerow([_g(t), _g(v), int(n)])
