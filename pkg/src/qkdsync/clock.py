"""Two-clock drift model, aging, calibration and stability constraints."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace


@dataclass(frozen=True)
class ClockPair:
    """Alice/Bob oscillator pair.

    drift() is the fractional frequency offset (f_B - f_A)/f_A at the start
    of the modeled window; aging_rate is its constant time derivative.
    """

    f_alice: float
    f_bob: float
    static_offset: float = 0.0
    aging_rate: float = 0.0
    elapsed_since_calibration: float = 0.0

    def __post_init__(self) -> None:
        if self.f_alice <= 0 or self.f_bob <= 0:
            raise ValueError("clock frequencies must be > 0")
        if abs(self.drift()) >= 1.0:
            raise ValueError("|drift| must be < 1")

    def drift(self) -> float:
        return (self.f_bob - self.f_alice) / self.f_alice

    def drift_at(self, t: float) -> float:
        """Drift a time t after the start of the window (linear aging)."""
        return self.drift() + self.aging_rate * t

    @classmethod
    def opposing_aging(
        cls,
        f_nominal: float,
        single_clock_aging: float,
        static_offset: float = 0.0,
        initial_drift: float = 0.0,
    ) -> "ClockPair":
        """Worst case of two identical clocks aging in opposite directions:
        the relative drift rate is twice the single-clock rate."""
        return cls(
            f_alice=f_nominal,
            f_bob=f_nominal * (1.0 + initial_drift),
            static_offset=static_offset,
            aging_rate=2.0 * single_clock_aging,
        )


@dataclass(frozen=True)
class TimingBudget:
    """Histogram/QKD timing parameters used by the clock constraints."""

    t_bin: float = 1e-9
    t_int: float = 0.5
    window_width: float = 300e-12
    error_threshold: float = 1e-3

    def __post_init__(self) -> None:
        if not 0.0 < self.window_width <= self.t_bin:
            raise ValueError("window_width must be in (0, t_bin]")
        if self.t_int <= 0:
            raise ValueError("t_int must be > 0")
        if not 0.0 < self.error_threshold < 0.5:
            raise ValueError("error_threshold must be in (0, 0.5)")


def time_shift(clocks: ClockPair, t: float) -> float:
    """Accumulated time shift of Alice's time in Bob's frame at time t.

    drift(0)*t + aging*t^2/2 + static_offset; with aging_rate=0 this is the
    plain linear drift model.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    return clocks.drift() * t + 0.5 * clocks.aging_rate * t * t + clocks.static_offset


def expected_arrival(clocks: ClockPair, t: float, bin_center: float) -> float:
    """Expected photon delay at time t for a bin nominally centered at bin_center."""
    return clocks.drift() * t + clocks.static_offset + bin_center


def max_unambiguous_drift(t_bin: float, tau_d: float) -> float:
    """Largest drift measurable without sign ambiguity: t_bin / (2 tau_d)."""
    if tau_d <= 0:
        raise ValueError("unbounded: dead time must be > 0")
    return t_bin / (2.0 * tau_d)


def max_calibration_interval(aging_rate: float, t_bin: float, tau_d: float) -> float:
    """Longest time since calibration before aging exceeds the drift limit.

    Valid for tau_d much smaller than the returned interval. aging_rate = 0
    returns infinity.
    """
    if aging_rate == 0.0:
        return math.inf
    return max_unambiguous_drift(t_bin, tau_d) / abs(aging_rate)


def short_term_stability_bound(budget: TimingBudget, drift_limit: float) -> float:
    """Maximum tolerable drift rate so the shift over the two acquisitions
    following a frequency compensation stays below drift_limit:
    drift_limit / (4 t_int^2)."""
    return drift_limit / (4.0 * budget.t_int**2)


def apply_frequency_update(clocks: ClockPair, drift_estimate: float) -> ClockPair:
    """New pair with f_B' = f_B / (1 + estimate).

    Exact rational form, so an exact estimate cancels the drift exactly and
    repeated updates accumulate no linearization error.
    """
    if 1.0 + drift_estimate <= 0:
        raise ValueError("1 + drift_estimate must be > 0")
    return replace(clocks, f_bob=clocks.f_bob / (1.0 + drift_estimate))


def residual_drift(true_drift: float, drift_estimate: float) -> float:
    """Drift left after a frequency update: (t - t_hat) / (1 + t_hat)."""
    return (true_drift - drift_estimate) / (1.0 + drift_estimate)


def relative_drift(drift_alice: float, drift_bob: float) -> float:
    """Drift of Bob relative to Alice given each clock's drift from a common
    reference: (t_B - t_A) / (1 + t_A)."""
    return (drift_bob - drift_alice) / (1.0 + drift_alice)


def init_alice_calibration(
    clocks: ClockPair, drift_estimate: float, target_drift: float
) -> float:
    """Alice calibration frequency f_A' = f_A (1 + estimate) / (1 + target),
    placing the pair at exactly target_drift if the estimate was exact."""
    if 1.0 + target_drift <= 0:
        raise ValueError("1 + target_drift must be > 0")
    return clocks.f_alice * (1.0 + drift_estimate) / (1.0 + target_drift)
