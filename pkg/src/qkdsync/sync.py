"""Circular-mean clock synchronization.

Implements the estimation/compensation loop: circular means of two
consecutive folded histograms give the signed clock drift and the TDC delay
correction (with the detector-skewness phase bias removed), an integration
time ramp grows acquisition from the capture-limited start value to its
final value, and a Pearson correlation against the known transmitted
pattern resolves the integer-bin offset ambiguity.
"""

from __future__ import annotations

import cmath
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .mc_sim import Histogram
from .physics import SpadModel, effective_rates, spad_phase_bias


class SyncError(Exception):
    """Base class for synchronization failures."""


class FlatHistogramError(SyncError):
    """Circular-mean modulus below the noise floor: drift too large or too
    few counts."""


class OffsetRecoveryError(SyncError):
    """Pattern correlation too weak to lock the clock offset."""


class ControllerError(SyncError):
    """Closed-loop controller could not proceed."""


@dataclass(frozen=True)
class CircularMean:
    """Complex phasor average of histogram delays; |value| <= 1."""

    value: complex
    count: int


def circular_mean(hist: Histogram, fold_period: float) -> CircularMean:
    """Circular mean m = (1/C) sum_k c_k exp(2 pi i tau_k / fold_period)."""
    if abs(hist.period - fold_period) > 1e-6 * fold_period:
        raise ValueError("histogram folding period must equal fold_period")
    total = float(hist.counts.sum())
    if total <= 0:
        raise FlatHistogramError("no counts")
    phases = np.exp(2j * np.pi * hist.bin_centers / fold_period)
    value = complex(np.dot(hist.counts, phases) / total)
    return CircularMean(value=value, count=int(round(total)))


def estimate_drift(
    m1: CircularMean,
    m2: CircularMean,
    t_int: float,
    t_bin: float,
    modulus_floor: float = 0.05,
) -> float:
    """Signed clock drift from two consecutive circular means.

    t_drift = t_bin / (2 pi t_int) * arg(m2 * conj(m1)); the principal
    argument maps any true shift onto the smallest signed drift, so shifts
    beyond t_bin/2 alias to the opposite sign.
    """
    if min(abs(m1.value), abs(m2.value)) < modulus_floor:
        raise FlatHistogramError(
            "flat histogram: drift too large or counts too low"
        )
    return t_bin / (2.0 * math.pi * t_int) * cmath.phase(m2.value * m1.value.conjugate())


def estimate_delay(
    m: CircularMean,
    drift_estimate: float,
    t_int: float,
    t_bin: float,
    mu_e: float,
    phi_q: float,
    second_histogram: bool = False,
) -> float:
    """Signed TDC delay increment cancelling the shift accumulated by the end
    of the second acquisition.

    From the first histogram the predicted center is extrapolated by
    (3/2) drift * t_int; from the second by (1/2) drift * t_int. phi_q removes
    the circular-mean bias of the skewed detector response.
    """
    coeff = 0.5 if second_histogram else 1.5
    predicted = (
        t_bin / (2.0 * math.pi) * (cmath.phase(m.value) - phi_q)
        + coeff * drift_estimate * t_int
    )
    return mu_e - (predicted % t_bin)


def center_estimate(m: CircularMean, t_bin: float, phi_q: float) -> float:
    """Bias-corrected histogram center in [0, t_bin)."""
    return (t_bin / (2.0 * math.pi) * (cmath.phase(m.value) - phi_q)) % t_bin


def quantize_delay(value: float, resolution: float, carry: float = 0.0) -> tuple[float, float]:
    """Quantize a delay update to the TDC resolution with error feedback.

    Returns (quantized, new_carry); the carried residue makes the long-run
    quantization bias zero.
    """
    raw = value + carry
    q = round(raw / resolution) * resolution
    return q, raw - q


def smallest_signed_mod(x: float, period: float) -> float:
    """Reduce x to the smallest signed representative in (-period/2, period/2]."""
    r = x % period
    if r > 0.5 * period:
        r -= period
    return r


def pattern_template(pattern: np.ndarray, slot_shape: np.ndarray) -> np.ndarray:
    """Expected per-bin intensity over one pattern period.

    slot_shape holds the bin masses of one qubit slot for an early photon;
    late slots use the same shape rolled by half a slot.
    """
    k = len(slot_shape)
    if k % 2 != 0:
        raise ValueError("slot_shape must have an even number of bins")
    late_shape = np.roll(slot_shape, k // 2)
    template = np.empty(len(pattern) * k)
    for i, bit in enumerate(pattern):
        template[i * k: (i + 1) * k] = late_shape if bit else slot_shape
    return template


def recover_offset(
    hist: Histogram,
    pattern: np.ndarray,
    slot_shape: np.ndarray,
    min_correlation: float = 0.5,
) -> tuple[float, float]:
    """Cyclic shift (integer bins x bin width) aligning the histogram with the
    pattern template, via the Pearson correlation maximum over all shifts.

    Returns (shift_time, peak_correlation); raises OffsetRecoveryError below
    min_correlation. Integer-bin search only: sub-bin refinement belongs to
    the circular-mean delay estimator.
    """
    template = pattern_template(pattern, slot_shape)
    h = hist.counts.astype(float)
    n = len(h)
    if len(template) != n:
        raise ValueError("template length does not match histogram")
    h_c = h - h.mean()
    t_c = template - template.mean()
    denom = n * h_c.std() * t_c.std()
    if denom == 0.0:
        raise OffsetRecoveryError("no lock: degenerate histogram or template")
    # corr[s] = sum_j h[j] * template[(j - s) mod n], all shifts at once
    corr = np.fft.irfft(np.fft.rfft(h_c) * np.conj(np.fft.rfft(t_c)), n)
    pearson = corr / denom
    s = int(np.argmax(pearson))
    peak = float(pearson[s])
    if peak < min_correlation:
        raise OffsetRecoveryError(
            f"no lock: peak correlation {peak:.3f} < {min_correlation:.3f}"
        )
    return s * hist.bin_width, peak


def practical_drift_limit(
    spad: SpadModel,
    f_alice: float,
    eta_ch: float,
    t_bin: float,
    n_bar_align: float = 10.0,
    photons_per_hist: float = 10.0,
    safety: float = 0.7,
) -> float:
    """Practical capture limit of the loop at the alignment photon number.

    The minimum useful integration time collects photons_per_hist detections
    at the dead-time-saturated rate; the capture range t_bin / (2 t_int) is
    derated by the safety margin against Poissonian noise.
    """
    if photons_per_hist < 1:
        raise ValueError("photons_per_hist must be >= 1")
    rates = effective_rates(spad, f_alice, n_bar_align, eta_ch)
    t_int = photons_per_hist / rates.cps_eff_alice
    return safety * t_bin / (2.0 * t_int)


@dataclass
class SyncConfig:
    """Ramp/tracking schedule and estimator guards."""

    t_int_start: float = 155e-6
    t_int_max: float = 0.5
    growth: float = 4.0
    iters_per_stage: int = 3
    n_bar_align: float = 10.0
    n_bar_nominal: float = 0.225
    modulus_floor: float = 0.05
    guard_fraction: float = 0.95
    pearson_min: float = 0.5
    tracking_iterations: int = 10
    start_phase: str = "ramping"  # or "tracking"
    phi_q: float | None = None
    pace_real_time: bool = False

    def __post_init__(self) -> None:
        if self.growth <= 1.0:
            raise ValueError("growth must be > 1")
        if self.start_phase not in ("ramping", "tracking"):
            raise ValueError("start_phase must be 'ramping' or 'tracking'")


@dataclass
class IterationRecord:
    iteration: int
    phase: str
    t_cumulative: float
    t_int: float
    n_bar: float
    drift_estimate: float
    delay_applied: float
    center_estimate: float
    qber: float
    qber_filtered: float
    kept_fraction: float


@dataclass
class SyncState:
    """Controller state and per-iteration history."""

    phase: str
    t_int_current: float
    n_bar_current: float
    iteration: int
    phi_q: float
    last_mean: CircularMean | None = None
    history: list[IterationRecord] = field(default_factory=list)
    offset_recovery_time: float | None = None
    offset_shift: float | None = None
    offset_correlation: float | None = None


def _combined_qber(q1, q2) -> tuple[float, float, float]:
    n_u = q1.total_unfiltered + q2.total_unfiltered
    e_u = q1.errors_unfiltered + q2.errors_unfiltered
    n_f = q1.total_filtered + q2.total_filtered
    e_f = q1.errors_filtered + q2.errors_filtered
    qber = e_u / n_u if n_u else 0.0
    qber_f = e_f / n_f if n_f else 0.0
    kept = n_f / n_u if n_u else 0.0
    return qber, qber_f, kept


def run_ramp_controller(backend, config: SyncConfig) -> SyncState:
    """Iterate acquire -> estimate -> compensate through the integration-time
    ramp, clock-offset recovery and the tracking phase.

    The backend provides acquire(t_int, with_pattern_hist=False),
    apply_drift_update, apply_delay_update, set_mean_photon and scenario
    metadata (SimulationRun or AnalyticRun).
    """
    scenario = backend.scenario
    t_bin = backend.t_bin
    mu_e = 0.5 * t_bin
    phi_q = config.phi_q
    if phi_q is None:
        phi_q = spad_phase_bias(scenario.spad, t_bin)

    state = SyncState(
        phase=config.start_phase,
        t_int_current=config.t_int_start if config.start_phase == "ramping" else config.t_int_max,
        n_bar_current=config.n_bar_align if config.start_phase == "ramping" else config.n_bar_nominal,
        iteration=0,
        phi_q=phi_q,
    )
    backend.set_mean_photon(state.n_bar_current)

    res = scenario.tdc.delay_resolution
    carry = 0.0
    cumulative = 0.0
    stage_iter = 0
    tracking_done = 0

    while True:
        if state.phase == "tracking" and tracking_done >= config.tracking_iterations:
            break
        t_int = state.t_int_current
        last_ramp_iter = state.phase == "ramping" and (
            t_int >= config.t_int_max
            or (
                stage_iter == config.iters_per_stage - 1
                and t_int * config.growth >= config.t_int_max
            )
        )

        acq1 = backend.acquire(t_int)
        acq2 = backend.acquire(t_int, with_pattern_hist=last_ramp_iter)
        cumulative += 2.0 * t_int
        if config.pace_real_time:
            time.sleep(2.0 * t_int)  # demo mode: pace at true acquisition speed

        rollback = False
        try:
            m1 = circular_mean(acq1.histogram, t_bin)
            m2 = circular_mean(acq2.histogram, t_bin)
            drift_est = estimate_drift(
                m1, m2, t_int, t_bin, modulus_floor=config.modulus_floor
            )
        except FlatHistogramError as exc:
            if t_int <= config.t_int_start * (1.0 + 1e-9):
                raise ControllerError(
                    f"initial drift exceeds capture range at t_int_start: {exc}"
                ) from exc
            rollback = True
        if not rollback and abs(drift_est) * t_int >= config.guard_fraction * 0.5 * t_bin:
            # too close to the alias boundary to trust; treat like a flat histogram
            rollback = True
        if rollback:
            state.t_int_current = max(t_int / 2.0, config.t_int_start)
            stage_iter = 0
            continue

        delay_raw = estimate_delay(m1, drift_est, t_int, t_bin, mu_e, phi_q)
        delay_q, carry = quantize_delay(delay_raw, res, carry)
        backend.apply_drift_update(drift_est)
        backend.apply_delay_update(delay_q)

        qber, qber_f, kept = _combined_qber(acq1.qber, acq2.qber)
        state.iteration += 1
        state.last_mean = m2
        state.history.append(
            IterationRecord(
                iteration=state.iteration,
                phase=state.phase,
                t_cumulative=cumulative,
                t_int=t_int,
                n_bar=state.n_bar_current,
                drift_estimate=drift_est,
                delay_applied=delay_q,
                center_estimate=center_estimate(m1, t_bin, phi_q),
                qber=qber,
                qber_filtered=qber_f,
                kept_fraction=kept,
            )
        )

        if state.phase == "ramping":
            stage_iter += 1
            if last_ramp_iter:
                shift, peak = recover_offset(
                    acq2.pattern_histogram,
                    scenario.qubit_pattern,
                    backend.slot_shape(),
                    min_correlation=config.pearson_min,
                )
                adjust = smallest_signed_mod(-shift, scenario.pattern_period)
                adjust_q, carry = quantize_delay(adjust, res, carry)
                backend.apply_delay_update(adjust_q)
                state.offset_recovery_time = cumulative
                state.offset_shift = shift
                state.offset_correlation = peak
                state.phase = "tracking"
                state.t_int_current = config.t_int_max
                state.n_bar_current = config.n_bar_nominal
                backend.set_mean_photon(config.n_bar_nominal)
            elif stage_iter >= config.iters_per_stage:
                stage_iter = 0
                state.t_int_current = min(t_int * config.growth, config.t_int_max)
        else:
            tracking_done += 1

    return state
