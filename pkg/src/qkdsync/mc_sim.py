"""Stochastic timestamp simulation and histogram builders.

Generates detection events under the full generative model (drift, aging,
dead time, dark counts, dispersion, jitter, TDC quantization) plus the fast
Poisson-per-bin histogram sampler. Signal detections are sampled as a
renewal process over the pulse grid (geometric gaps between Bernoulli
successes), so deeply saturated regimes cost O(detected events), not
O(emitted pulses), while remaining exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .clock import ClockPair
from .pdf_engine import (
    ArrivalPdf,
    bin_masses,
    build_folded_bin_pdf,
    convolve_spad,
    tabulate_drift_pdf,
)
from .physics import (
    EffectiveRates,
    OpticalLink,
    SpadModel,
    channel_transmittance,
    effective_rates,
    pulse_sigma_at_distance,
)

LABEL_EARLY, LABEL_LATE, LABEL_DARK = 0, 1, 2

_BUFFER = 1 << 15


@dataclass(frozen=True)
class TdcModel:
    """Time-to-digital converter: binning, delay register and folding period."""

    bin_width: float = 100e-12
    delay_resolution: float = 11e-12
    delay_register: float = 0.0
    period: float = 1e-9

    def __post_init__(self) -> None:
        if self.bin_width <= 0:
            raise ValueError("bin_width must be > 0")
        n = round(self.period / self.bin_width)
        if n < 1 or abs(n * self.bin_width - self.period) > 1e-6 * self.bin_width:
            raise ValueError("period must be an integer multiple of bin_width")
        ticks = round(self.delay_register / self.delay_resolution)
        if abs(ticks * self.delay_resolution - self.delay_register) > 1e-6 * self.delay_resolution:
            raise ValueError("delay_register must be a multiple of delay_resolution")

    @property
    def n_bins(self) -> int:
        return round(self.period / self.bin_width)


@dataclass
class Histogram:
    """Binned counts over one folding period."""

    counts: np.ndarray
    bin_width: float
    period: float
    acq_start: float = 0.0
    acq_duration: float = 0.0

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def bin_centers(self) -> np.ndarray:
        return (np.arange(len(self.counts)) + 0.5) * self.bin_width


@dataclass(frozen=True)
class OscillatorNoise:
    """Per-acquisition clock noise: white-FM drift steps and white-PM jitter."""

    drift_step_std: float = 0.0
    center_jitter_std: float = 0.0


@dataclass(frozen=True, eq=False)
class SimScenario:
    """Complete description of one simulated link + receiver."""

    clocks: ClockPair
    link: OpticalLink
    spad: SpadModel
    tdc: TdcModel
    mean_photon: float = 0.225
    qubit_pattern: np.ndarray | None = None
    rng_seed: int = 0
    intrinsic_error: float = 0.0
    detection_model: str = "poissonian"  # or "linear"
    oscillator_noise: OscillatorNoise = field(default_factory=OscillatorNoise)

    def __post_init__(self) -> None:
        if self.mean_photon < 0:
            raise ValueError("mean_photon must be >= 0")
        if not 0.0 <= self.intrinsic_error < 0.5:
            raise ValueError("intrinsic_error must be in [0, 0.5)")
        if self.detection_model not in ("poissonian", "linear"):
            raise ValueError("detection_model must be 'poissonian' or 'linear'")

    @property
    def slot_period(self) -> float:
        """One qubit slot (two time bins) = one Alice clock period."""
        return 1.0 / self.clocks.f_alice

    @property
    def pattern_period(self) -> float:
        if self.qubit_pattern is None:
            raise ValueError("scenario has no qubit pattern")
        return len(self.qubit_pattern) * self.slot_period


def detection_probability(scenario: SimScenario, mean_photon: float | None = None) -> float:
    """Per-pulse detection probability for the configured photon statistics."""
    n_bar = scenario.mean_photon if mean_photon is None else mean_photon
    x = n_bar * scenario.spad.efficiency * channel_transmittance(scenario.link)
    if scenario.detection_model == "linear":
        if x > 1.0:
            raise ValueError("linear detection model needs nbar*eta_d*eta_ch <= 1")
        return x
    return 1.0 - math.exp(-x)


def default_pattern(length: int = 500, seed: int = 20240917) -> np.ndarray:
    """Pseudo-random early/late pattern (0=early, 1=late)."""
    rng = np.random.Generator(np.random.Philox(seed))
    return (rng.random(length) < 0.5).astype(np.int8)


class QberResult(NamedTuple):
    qber_unfiltered: float
    qber_filtered: float
    kept_fraction: float
    errors_unfiltered: int
    total_unfiltered: int
    errors_filtered: int
    total_filtered: int


def measure_qber(
    times: np.ndarray,
    labels: np.ndarray,
    pattern: np.ndarray | None,
    t_bin: float,
    window_width: float,
    pattern_period: float | None = None,
    delay: float = 0.0,
    intrinsic_error: float = 0.0,
    rng: np.random.Generator | None = None,
) -> QberResult:
    """QBER with and without temporal filtering.

    Unfiltered events are assigned by nearest bin-half boundary inside the
    two-bin frame; filtered events must fall inside one of the two windows.
    With a known pattern, Bob's (slot, bit) is compared against Alice's
    record at that slot, so an unresolved integer-slot offset scrambles the
    comparison (this is what offset recovery fixes). Without a pattern the
    assigned bit is compared directly against the truth label.
    """
    n = len(times)
    if n == 0:
        return QberResult(0.0, 0.0, 0.0, 0, 0, 0, 0)
    frame = 2.0 * t_bin
    if pattern_period is None:
        pattern_period = len(pattern) * frame if pattern is not None else frame

    tau_p = np.mod(times + delay, pattern_period)
    slot = np.floor(tau_p / frame).astype(np.int64)
    tau2 = tau_p - slot * frame
    assigned = (tau2 >= t_bin).astype(np.int8)

    if intrinsic_error > 0.0:
        if rng is None:
            raise ValueError("intrinsic_error > 0 requires an rng")
        flips = rng.random(n) < intrinsic_error
        assigned = assigned ^ flips

    if pattern is not None:
        ref = pattern[np.mod(slot, len(pattern))]
    else:
        if np.any(labels == LABEL_DARK):
            if rng is None:
                raise ValueError("dark counts without a pattern require an rng")
            coin = (rng.random(n) < 0.5).astype(np.int8)
            ref = np.where(labels == LABEL_DARK, coin, labels).astype(np.int8)
        else:
            ref = labels.astype(np.int8)

    err_unf = int(np.count_nonzero(assigned != ref))

    mu_e, mu_l = 0.5 * t_bin, 1.5 * t_bin
    in_e = np.abs(tau2 - mu_e) < 0.5 * window_width
    in_l = np.abs(tau2 - mu_l) < 0.5 * window_width
    keep = in_e | in_l
    assigned_f = in_l.astype(np.int8)
    if intrinsic_error > 0.0:
        assigned_f = assigned_f ^ flips
    err_fil = int(np.count_nonzero((assigned_f != ref) & keep))
    n_fil = int(np.count_nonzero(keep))

    return QberResult(
        qber_unfiltered=err_unf / n,
        qber_filtered=err_fil / n_fil if n_fil else 0.0,
        kept_fraction=n_fil / n,
        errors_unfiltered=err_unf,
        total_unfiltered=n,
        errors_filtered=err_fil,
        total_filtered=n_fil,
    )


def build_histogram(
    times: np.ndarray,
    tdc: TdcModel,
    acq_window: tuple[float, float],
    fold_period: float | None = None,
    delay: float = 0.0,
) -> Histogram:
    """Fold timestamps modulo fold_period and bin them at the TDC bin width."""
    period = tdc.period if fold_period is None else fold_period
    n_bins = round(period / tdc.bin_width)
    if n_bins < 1 or abs(n_bins * tdc.bin_width - period) > 1e-6 * tdc.bin_width:
        raise ValueError("fold_period must be an integer multiple of bin_width")
    t_a, t_b = acq_window
    times = np.asarray(times, dtype=float)
    mask = (times >= t_a) & (times < t_b)
    tau = np.mod(times[mask] + delay, period)
    idx = np.minimum((tau / tdc.bin_width).astype(np.int64), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins).astype(np.int64)
    return Histogram(
        counts=counts,
        bin_width=tdc.bin_width,
        period=period,
        acq_start=t_a,
        acq_duration=t_b - t_a,
    )


def poisson_histogram(
    pdf: ArrivalPdf,
    rates: EffectiveRates | tuple[float, float],
    t_int: float,
    tdc: TdcModel,
    rng: np.random.Generator | int,
) -> Histogram:
    """Histogram with independently Poisson-drawn counts per bin.

    lambda_i = t_int * (cps_eff_alice * P_i + cps_eff_dark / n_bins) with P_i
    the folded-PDF mass of bin i.
    """
    if not pdf.folded or pdf.period is None:
        raise ValueError("poisson_histogram requires a folded PDF")
    if abs(pdf.period - tdc.period) > 1e-6 * tdc.bin_width:
        raise ValueError("pdf folding period must match the TDC period")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.Generator(np.random.Philox(int(rng)))
    cps_alice, cps_dark = rates[0], rates[1]
    masses = bin_masses(pdf, tdc.bin_width)
    lam = t_int * (cps_alice * masses + cps_dark / tdc.n_bins)
    counts = rng.poisson(lam).astype(np.int64)
    return Histogram(
        counts=counts, bin_width=tdc.bin_width, period=tdc.period,
        acq_start=0.0, acq_duration=t_int,
    )


@dataclass
class Acquisition:
    """One histogram acquisition plus the QBER measured from its events."""

    histogram: Histogram
    qber: QberResult
    n_events: int
    start: float
    duration: float
    pattern_histogram: Histogram | None = None


class SimulationRun:
    """Single-owner stateful run of a scenario: event generation, dead time,
    clock evolution, TDC delay register and closed-loop update hooks.

    RNG: counter-based Philox streams derived from the scenario seed with
    numpy SeedSequence.spawn (stream 0 signal thinning/bits, 1 dark counts,
    2 jitter, 3 intrinsic flips, 4 oscillator noise), so runs are exactly
    reproducible and independent scenarios can derive disjoint streams.
    """

    def __init__(self, scenario: SimScenario, window_width: float = 300e-12):
        self.scenario = scenario
        self.window_width = window_width
        self.t_bin = scenario.tdc.period
        if abs(scenario.slot_period - 2.0 * self.t_bin) > 1e-6 * self.t_bin:
            raise ValueError("model requires 1/f_A = 2 * tdc.period (two bins per pulse)")
        self._mu_e = 0.5 * self.t_bin
        self._mu_l = 1.5 * self.t_bin

        seqs = np.random.SeedSequence(scenario.rng_seed).spawn(5)
        self._rng_signal = np.random.Generator(np.random.Philox(seqs[0]))
        self._rng_dark = np.random.Generator(np.random.Philox(seqs[1]))
        self._rng_jitter = np.random.Generator(np.random.Philox(seqs[2]))
        self._rng_flip = np.random.Generator(np.random.Philox(seqs[3]))
        self._rng_noise = np.random.Generator(np.random.Philox(seqs[4]))

        self.time = 0.0
        self.n_bar = scenario.mean_photon
        self._p_det = detection_probability(scenario, self.n_bar)
        self._t_slot = scenario.slot_period

        clocks = scenario.clocks
        self._drift = clocks.drift()
        self._aging = clocks.aging_rate
        self._t0 = clocks.static_offset
        self._accum = 0.0
        self._origin = 0.0
        self._acq_jitter = 0.0

        self._delay_ticks = round(scenario.tdc.delay_register / scenario.tdc.delay_resolution)

        self._t_free = -1.0
        self._next_index = 0
        self._pend_n: int | None = None
        self._pend_bit = 0
        self._pend_jit = 0.0
        self._pend_dark = math.inf
        self._dark_from = 0.0

        spad = scenario.spad
        self._sigma_pulse = pulse_sigma_at_distance(scenario.link)
        self._jitter_margin = (
            12.0 * (abs(spad.location) + spad.skew_scale) + 9.0 * self._sigma_pulse
        )
        self._slot_shape_cache: np.ndarray | None = None
        self.capture_events = False
        self.captured_events: list[tuple[np.ndarray, np.ndarray]] = []

        self._geo = np.empty(0, dtype=np.int64)
        self._geo_i = 0
        self._jit = np.empty(0)
        self._jit_i = 0
        self._coin = np.empty(0, dtype=np.int8)
        self._coin_i = 0
        self._exp = np.empty(0)
        self._exp_i = 0

    # -- state helpers -------------------------------------------------------

    def slot_shape(self) -> np.ndarray:
        """Template bin masses of one qubit slot for offset recovery."""
        if self._slot_shape_cache is None:
            self._slot_shape_cache = _slot_shape(self.scenario)
        return self._slot_shape_cache

    @property
    def delay_register(self) -> float:
        return self._delay_ticks * self.scenario.tdc.delay_resolution

    @property
    def true_drift(self) -> float:
        self_dt = self.time - self._origin
        return self._drift + self._aging * self_dt

    def _shift_at(self, t: float) -> float:
        dt = t - self._origin
        return (
            self._t0 + self._accum + self._acq_jitter
            + self._drift * dt + 0.5 * self._aging * dt * dt
        )

    def _rebase(self) -> None:
        dt = self.time - self._origin
        if dt != 0.0:
            self._accum += self._drift * dt + 0.5 * self._aging * dt * dt
            self._drift += self._aging * dt
            self._origin = self.time

    def apply_drift_update(self, drift_estimate: float) -> None:
        """f_B' = f_B / (1 + estimate): exact residual, phase-continuous."""
        self._rebase()
        self._drift = (self._drift - drift_estimate) / (1.0 + drift_estimate)

    def apply_delay_update(self, delta: float) -> None:
        """Add a (pre-quantized) increment to the TDC delay register."""
        res = self.scenario.tdc.delay_resolution
        ticks = round(delta / res)
        if abs(ticks * res - delta) > 1e-6 * res:
            raise ValueError("delay update must be a multiple of delay_resolution")
        self._delay_ticks += ticks

    def set_mean_photon(self, n_bar: float) -> None:
        self.n_bar = n_bar
        self._p_det = detection_probability(self.scenario, n_bar)
        self._geo = np.empty(0, dtype=np.int64)
        self._geo_i = 0

    # -- buffered draws ------------------------------------------------------

    def _next_geo(self) -> int:
        if self._geo_i >= self._geo.size:
            self._geo = self._rng_signal.geometric(self._p_det, size=_BUFFER)
            self._geo_i = 0
        v = self._geo[self._geo_i]
        self._geo_i += 1
        return int(v)

    def _next_jit(self) -> float:
        # combined per-event timing spread: optical pulse width + SPAD response
        if self._jit_i >= self._jit.size:
            spad = self.scenario.spad
            d = spad.shape_delta
            u0 = self._rng_jitter.standard_normal(_BUFFER)
            u1 = self._rng_jitter.standard_normal(_BUFFER)
            u2 = self._rng_jitter.standard_normal(_BUFFER)
            self._jit = (
                spad.location
                + spad.skew_scale * (d * np.abs(u0) + math.sqrt(1.0 - d * d) * u1)
                + self._sigma_pulse * u2
            )
            self._jit_i = 0
        v = self._jit[self._jit_i]
        self._jit_i += 1
        return float(v)

    def _next_coin(self) -> int:
        if self._coin_i >= self._coin.size:
            self._coin = (self._rng_signal.random(_BUFFER) < 0.5).astype(np.int8)
            self._coin_i = 0
        v = self._coin[self._coin_i]
        self._coin_i += 1
        return int(v)

    def _next_exp(self) -> float:
        if self._exp_i >= self._exp.size:
            self._exp = self._rng_dark.standard_exponential(_BUFFER)
            self._exp_i = 0
        v = self._exp[self._exp_i]
        self._exp_i += 1
        return float(v)

    # -- event generation ----------------------------------------------------

    def _signal_threshold_index(self, t_free: float) -> int:
        lim = t_free - self._shift_at(t_free) - self._mu_l - self._jitter_margin
        return int(math.floor(lim / self._t_slot))  # deliberately one slot early

    def generate(self, duration: float) -> tuple[np.ndarray, np.ndarray]:
        """Advance the run by duration, returning (times, truth labels)."""
        if duration <= 0:
            raise ValueError("duration must be > 0")
        t_end = self.time + duration
        out_t: list[float] = []
        out_lab: list[int] = []

        scenario = self.scenario
        pattern = scenario.qubit_pattern
        plen = len(pattern) if pattern is not None else 0
        tau_d = scenario.spad.dead_time
        dcr = scenario.spad.dark_count_rate
        t_slot = self._t_slot
        mu = (self._mu_e, self._mu_l)
        have_signal = self._p_det > 0.0

        while True:
            if have_signal and self._pend_n is None:
                n = self._next_index + self._next_geo() - 1
                self._pend_n = n
                self._pend_bit = (
                    int(pattern[n % plen]) if pattern is not None else self._next_coin()
                )
                self._pend_jit = self._next_jit()
            if have_signal:
                gt = self._pend_n * t_slot
                t_sig = gt + self._shift_at(gt) + mu[self._pend_bit] + self._pend_jit
            else:
                t_sig = math.inf

            if self._pend_dark == math.inf and dcr > 0.0:
                self._pend_dark = self._dark_from + self._next_exp() / dcr

            if t_sig <= self._pend_dark:
                t_next, is_sig = t_sig, True
            else:
                t_next, is_sig = self._pend_dark, False
            if t_next >= t_end:
                break

            if t_next <= self._t_free:
                # candidate arrived during dead time: lost
                if is_sig:
                    self._next_index = max(
                        self._pend_n + 1, self._signal_threshold_index(self._t_free)
                    )
                    self._pend_n = None
                else:
                    self._dark_from = self._t_free
                    self._pend_dark = math.inf
                continue

            if is_sig:
                out_t.append(t_sig)
                out_lab.append(self._pend_bit)
                self._t_free = t_sig + tau_d
                self._next_index = max(
                    self._pend_n + 1, self._signal_threshold_index(self._t_free)
                )
                self._pend_n = None
            else:
                out_t.append(t_next)
                out_lab.append(LABEL_DARK)
                self._t_free = t_next + tau_d
                self._dark_from = t_next
                self._pend_dark = math.inf

        self.time = t_end
        return np.asarray(out_t, dtype=float), np.asarray(out_lab, dtype=np.int8)

    # -- acquisition interface used by the sync controller --------------------

    def acquire(self, t_int: float, with_pattern_hist: bool = False) -> Acquisition:
        """Acquire one histogram over t_int, measuring QBER from the same events."""
        noise = self.scenario.oscillator_noise
        if noise.drift_step_std > 0.0:
            self._rebase()
            self._drift += noise.drift_step_std * float(self._rng_noise.standard_normal())
        if noise.center_jitter_std > 0.0:
            self._acq_jitter = noise.center_jitter_std * float(
                self._rng_noise.standard_normal()
            )

        start = self.time
        times, labels = self.generate(t_int)
        if self.capture_events:
            self.captured_events.append((times, labels))
        tdc = self.scenario.tdc
        delay = self.delay_register
        hist = build_histogram(times, tdc, (start, start + t_int), delay=delay)

        pattern = self.scenario.qubit_pattern
        pattern_period = self.scenario.pattern_period if pattern is not None else None
        qber = measure_qber(
            times, labels, pattern, self.t_bin, self.window_width,
            pattern_period=pattern_period, delay=delay,
            intrinsic_error=self.scenario.intrinsic_error, rng=self._rng_flip,
        )
        pattern_hist = None
        if with_pattern_hist:
            if pattern is None:
                raise ValueError("pattern histogram requested but scenario has no pattern")
            pattern_hist = build_histogram(
                times, tdc, (start, start + t_int),
                fold_period=pattern_period, delay=delay,
            )
        return Acquisition(
            histogram=hist, qber=qber, n_events=len(times),
            start=start, duration=t_int, pattern_histogram=pattern_hist,
        )


def _slot_shape(scenario: SimScenario) -> np.ndarray:
    """Per-bin masses of one qubit slot (two bins) for an early photon with
    the current pulse width and SPAD response at zero drift."""
    sigma = pulse_sigma_at_distance(scenario.link)
    t_bin = scenario.tdc.period
    folded = build_folded_bin_pdf(
        sigma=sigma, spad=scenario.spad, dt_drift=0.0,
        bin_center=0.5 * t_bin, period=2.0 * t_bin,
    )
    return bin_masses(folded, scenario.tdc.bin_width)


class AnalyticRun:
    """Acquisition backend drawing Poisson histograms from the analytic PDF.

    Statistically equivalent to the event-stream simulator where dead-time
    pile-up within one folding period is negligible; orders of magnitude
    faster for long tracking runs. noiseless=True uses the expected counts
    directly (the expected-value histograms of the estimator-exactness
    analysis). The backend tracks the true center offset and drift and
    mirrors SimulationRun's update interface; it has no notion of the
    transmitted pattern, so slot alignment is assumed and pattern histograms
    are unavailable.
    """

    def __init__(
        self,
        scenario: SimScenario,
        window_width: float = 300e-12,
        noiseless: bool = False,
    ):
        self.scenario = scenario
        self.window_width = window_width
        self.noiseless = noiseless
        self.t_bin = scenario.tdc.period
        self._mu_e = 0.5 * self.t_bin
        self._mu_l = 1.5 * self.t_bin

        seqs = np.random.SeedSequence(scenario.rng_seed).spawn(2)
        self._rng_counts = np.random.Generator(np.random.Philox(seqs[0]))
        self._rng_noise = np.random.Generator(np.random.Philox(seqs[1]))

        self.time = 0.0
        self.n_bar = scenario.mean_photon
        self._eta = channel_transmittance(scenario.link)
        self._rates = effective_rates(
            scenario.spad, scenario.clocks.f_alice, self.n_bar, self._eta
        )
        self._drift = scenario.clocks.drift()
        self._aging = scenario.clocks.aging_rate
        self._center = scenario.clocks.static_offset + scenario.tdc.delay_register
        self._acq_jitter = 0.0
        self._slot_shape_cache: np.ndarray | None = None

        sigma = pulse_sigma_at_distance(scenario.link)
        base = tabulate_drift_pdf(
            sigma=sigma, t_drift=0.0, t_int=1.0, t_0=0.0, bin_center=0.0,
            spad=scenario.spad,
        )
        base = convolve_spad(base, scenario.spad)
        self._grid = base.grid
        dens = base.density
        step = base.step
        edges = np.concatenate(
            [[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * step)]
        )
        self._cdf = edges / edges[-1]
        g = np.concatenate(
            [[0.0], np.cumsum(0.5 * (self._cdf[1:] + self._cdf[:-1]) * step)]
        )
        self._g = g
        self._support = (float(self._grid[0]), float(self._grid[-1]))

    # -- shape machinery -----------------------------------------------------

    def _cdf_at(self, x: np.ndarray) -> np.ndarray:
        return np.interp(x, self._grid, self._cdf, left=0.0, right=1.0)

    def _g_at(self, x: np.ndarray) -> np.ndarray:
        lo, hi = self._support
        out = np.interp(x, self._grid, self._g, left=0.0, right=0.0)
        above = x > hi
        if np.any(above):
            out = np.where(above, self._g[-1] + (x - hi), out)
        return out

    def _arrival_cdf(self, x: np.ndarray, c0: float, delta: float) -> np.ndarray:
        """CDF of c0 + U[min(0,delta), max(0,delta)] + base at x."""
        x = np.asarray(x, dtype=float)
        if abs(delta) < 1e-15:
            return self._cdf_at(x - c0)
        lo, hi = min(0.0, delta), max(0.0, delta)
        return (self._g_at(x - c0 - lo) - self._g_at(x - c0 - hi)) / (hi - lo)

    def _folded_masses(
        self, edges: np.ndarray, period: float, c0: float, delta: float
    ) -> np.ndarray:
        lo, hi = self._support
        span_lo = c0 + min(0.0, delta) + lo
        span_hi = c0 + max(0.0, delta) + hi
        m_lo = math.floor((span_lo - edges[-1]) / period)
        m_hi = math.ceil((span_hi - edges[0]) / period)
        cdf_edges = np.zeros_like(edges)
        for m in range(m_lo, m_hi + 1):
            cdf_edges += self._arrival_cdf(edges + m * period, c0, delta)
        return np.diff(cdf_edges)

    def slot_shape(self) -> np.ndarray:
        if self._slot_shape_cache is None:
            self._slot_shape_cache = _slot_shape(self.scenario)
        return self._slot_shape_cache

    # -- update interface ----------------------------------------------------

    def reset(
        self,
        drift: float | None = None,
        center: float = 0.0,
        seed: int | None = None,
    ) -> None:
        """Rewind to time 0 with fresh RNG streams and a new initial state."""
        if seed is not None:
            seqs = np.random.SeedSequence(seed).spawn(2)
            self._rng_counts = np.random.Generator(np.random.Philox(seqs[0]))
            self._rng_noise = np.random.Generator(np.random.Philox(seqs[1]))
        self.time = 0.0
        self._center = center
        self._acq_jitter = 0.0
        if drift is not None:
            self._drift = drift

    @property
    def true_drift(self) -> float:
        return self._drift

    @property
    def center_offset(self) -> float:
        return self._center

    def apply_drift_update(self, drift_estimate: float) -> None:
        self._drift = (self._drift - drift_estimate) / (1.0 + drift_estimate)

    def apply_delay_update(self, delta: float) -> None:
        res = self.scenario.tdc.delay_resolution
        ticks = round(delta / res)
        if abs(ticks * res - delta) > 1e-6 * res:
            raise ValueError("delay update must be a multiple of delay_resolution")
        self._center += ticks * res

    def set_mean_photon(self, n_bar: float) -> None:
        self.n_bar = n_bar
        self._rates = effective_rates(
            self.scenario.spad, self.scenario.clocks.f_alice, n_bar, self._eta
        )

    # -- counts --------------------------------------------------------------

    def _draw(self, lam: float) -> float:
        if self.noiseless:
            return lam
        return float(self._rng_counts.poisson(lam))

    def _binom(self, n: float, p: float) -> float:
        if self.noiseless:
            return n * p
        return float(self._rng_counts.binomial(int(n), p)) if n >= 1 else 0.0

    def acquire(self, t_int: float, with_pattern_hist: bool = False) -> Acquisition:
        if with_pattern_hist:
            raise ValueError("analytic backend cannot acquire pattern histograms")
        noise = self.scenario.oscillator_noise
        if noise.drift_step_std > 0.0 and not self.noiseless:
            self._drift += noise.drift_step_std * float(self._rng_noise.standard_normal())
        if noise.center_jitter_std > 0.0 and not self.noiseless:
            self._acq_jitter = noise.center_jitter_std * float(
                self._rng_noise.standard_normal()
            )

        tdc = self.scenario.tdc
        delta = self._drift * t_int + 0.5 * self._aging * t_int * t_int
        c0 = self._mu_e + self._center + self._acq_jitter
        r_sig, r_dark = self._rates.cps_eff_alice, self._rates.cps_eff_dark

        # folded histogram over the TDC period
        edges = np.arange(tdc.n_bins + 1) * tdc.bin_width
        masses = self._folded_masses(edges, tdc.period, c0, delta)
        lam = t_int * (r_sig * masses + r_dark / tdc.n_bins)
        if self.noiseless:
            counts = lam
        else:
            counts = self._rng_counts.poisson(lam).astype(np.int64)
        hist = Histogram(
            counts=counts, bin_width=tdc.bin_width, period=tdc.period,
            acq_start=self.time, acq_duration=t_int,
        )

        # QBER over the two-bin frame: early-truth masses, late by symmetry
        frame = 2.0 * self.t_bin
        w = self.window_width
        win_edges = np.array(
            [
                self._mu_e - 0.5 * w, self._mu_e + 0.5 * w,
                self._mu_l - 0.5 * w, self._mu_l + 0.5 * w,
            ]
        )
        half_edges = np.array([0.0, self.t_bin, frame])
        win_m = self._folded_masses(win_edges, frame, c0, delta)
        half_m = self._folded_masses(half_edges, frame, c0, delta)
        p_win_e = win_m[0]
        p_win_l = win_m[2]
        p_half_e, p_half_l = half_m[0], half_m[1]
        probs = np.array(
            [
                p_win_e,
                p_win_l,
                max(p_half_e - p_win_e, 0.0),
                max(p_half_l - p_win_l, 0.0),
            ]
        )
        probs = probs / probs.sum()
        n_sig = self._draw(r_sig * t_int)
        if self.noiseless:
            cat = n_sig * probs
        else:
            cat = self._rng_counts.multinomial(int(n_sig), probs).astype(float)
        q = self.scenario.intrinsic_error
        fl = np.array([self._binom(c, q) for c in cat]) if q > 0 else np.zeros(4)
        err_u_sig = (cat[1] + cat[3]) - (fl[1] + fl[3]) + (fl[0] + fl[2])
        err_f_sig = (cat[1] - fl[1]) + fl[0]
        kept_sig = cat[0] + cat[1]

        n_dark = self._draw(r_dark * t_int)
        kept_dark = self._binom(n_dark, w / self.t_bin)
        err_u_dark = self._binom(n_dark, 0.5)
        err_f_dark = self._binom(kept_dark, 0.5)

        total_u = n_sig + n_dark
        total_f = kept_sig + kept_dark
        err_u = err_u_sig + err_u_dark
        err_f = err_f_sig + err_f_dark
        qber = QberResult(
            qber_unfiltered=err_u / total_u if total_u else 0.0,
            qber_filtered=err_f / total_f if total_f else 0.0,
            kept_fraction=total_f / total_u if total_u else 0.0,
            errors_unfiltered=int(round(err_u)),
            total_unfiltered=int(round(total_u)),
            errors_filtered=int(round(err_f)),
            total_filtered=int(round(total_f)),
        )

        self._center += delta
        self._drift += self._aging * t_int
        self.time += t_int
        return Acquisition(
            histogram=hist, qber=qber, n_events=int(round(total_u)),
            start=self.time - t_int, duration=t_int,
        )


def sample_event_stream(
    scenario: SimScenario, duration: float
) -> tuple[np.ndarray, np.ndarray]:
    """Detection timestamps in Bob's frame with truth labels (0 early, 1 late,
    2 dark) for a fresh run of the scenario."""
    return SimulationRun(scenario).generate(duration)


def write_histogram_csv(hist: Histogram, path) -> None:
    """Serialize a histogram as `bin_start_ps,count` rows."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bin_start_ps,count\n")
        for i, c in enumerate(hist.counts):
            fh.write(f"{i * hist.bin_width * 1e12:.6g},{int(c)}\n")
