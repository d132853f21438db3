"""Post-run statistics: series summaries, moving averages and TDEV."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SERIES_KINDS = ("center", "drift", "qber", "qber_filtered")


@dataclass(frozen=True)
class TimeSeries:
    """One recorded quantity versus time (strictly increasing timestamps)."""

    timestamps: np.ndarray
    values: np.ndarray
    kind: str = "center"

    def __post_init__(self) -> None:
        if len(self.timestamps) != len(self.values):
            raise ValueError("timestamps and values lengths differ")
        if len(self.timestamps) > 1 and not np.all(np.diff(self.timestamps) > 0):
            raise ValueError("timestamps must be strictly increasing")
        if self.kind not in SERIES_KINDS:
            raise ValueError(f"unknown series kind {self.kind!r}")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class SummaryStats:
    mean: float
    std: float
    n: int
    std_defined: bool


def summarize(series: TimeSeries) -> SummaryStats:
    """Sample mean and sample std (n-1 denominator); std of a single-element
    series is reported as 0 with std_defined=False."""
    if len(series) == 0:
        raise ValueError("series is empty")
    values = np.asarray(series.values, dtype=float)
    mean = float(values.mean())
    if len(values) < 2:
        return SummaryStats(mean=mean, std=0.0, n=1, std_defined=False)
    return SummaryStats(
        mean=mean, std=float(values.std(ddof=1)), n=len(values), std_defined=True
    )


def moving_average(series: TimeSeries, window: float) -> TimeSeries:
    """Centered boxcar average over a time window, shrinking at the edges."""
    t = np.asarray(series.timestamps, dtype=float)
    v = np.asarray(series.values, dtype=float)
    if len(t) > 1 and window <= float(np.min(np.diff(t))):
        raise ValueError("window must exceed the sample spacing")
    half = 0.5 * window
    csum = np.concatenate([[0.0], np.cumsum(v)])
    lo = np.searchsorted(t, t - half, side="left")
    hi = np.searchsorted(t, t + half, side="right")
    out = (csum[hi] - csum[lo]) / (hi - lo)
    return TimeSeries(timestamps=t, values=out, kind=series.kind)


def tdev(series: TimeSeries, taus) -> np.ndarray:
    """Time deviation of uniformly spaced phase data at the requested taus.

    Overlapping estimator on raw phase (no detrending):

        TDEV(n tau0)^2 = 1 / (6 n^2 (N - 3n + 1)) *
            sum_j ( sum_{i=j}^{j+n-1} (x_{i+2n} - 2 x_{i+n} + x_i) )^2

    Each requested tau must be an integer multiple of the sample spacing with
    at least 3n + 1 samples available.

    Returns an array of (tau, tdev) rows, both in the series' units.
    """
    t = np.asarray(series.timestamps, dtype=float)
    x = np.asarray(series.values, dtype=float)
    if len(x) < 4:
        raise ValueError("need at least 4 samples")
    spacings = np.diff(t)
    tau0 = float(spacings[0])
    if not np.allclose(spacings, tau0, rtol=1e-9):
        raise ValueError("tdev requires uniform sample spacing")

    rows = []
    for tau in np.atleast_1d(taus):
        n = int(round(tau / tau0))
        if n < 1 or abs(n * tau0 - tau) > 1e-9 * tau0:
            raise ValueError(f"tau {tau!r} is not a multiple of the spacing")
        big_n = len(x)
        if big_n < 3 * n + 1:
            raise ValueError(
                f"insufficient samples for tau={tau!r}: need {3 * n + 1}, have {big_n}"
            )
        d = x[2 * n:] - 2.0 * x[n:-n] + x[: -2 * n]
        cs = np.concatenate([[0.0], np.cumsum(d)])
        s = cs[n:] - cs[:-n]  # sliding sums of n consecutive second differences
        m = big_n - 3 * n + 1
        var = float(np.dot(s[:m], s[:m])) / (6.0 * n * n * m)
        rows.append((n * tau0, math.sqrt(var)))
    return np.array(rows)


def default_taus(series: TimeSeries, per_decade: int = 4) -> np.ndarray:
    """Quasi-log-spaced taus with enough samples for the TDEV estimator."""
    t = np.asarray(series.timestamps, dtype=float)
    tau0 = float(t[1] - t[0])
    n_max = (len(series) - 1) // 3
    if n_max < 1:
        raise ValueError("series too short for any tau")
    ns = np.unique(
        np.round(
            np.logspace(0, math.log10(n_max), num=max(2, int(per_decade * math.log10(n_max)) + 1))
        ).astype(int)
    )
    ns = ns[(ns >= 1) & (ns <= n_max)]
    return ns * tau0
