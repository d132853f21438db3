"""Clock-drift modeling and synchronization for time-bin QKD.

Analytic arrival-time PDFs under drift, Monte-Carlo timestamp simulation,
the circular-mean synchronization loop and the associated clock-stability
constraints.
"""

__version__ = "0.1.0"

from .clock import (
    ClockPair,
    TimingBudget,
    apply_frequency_update,
    expected_arrival,
    init_alice_calibration,
    max_calibration_interval,
    max_unambiguous_drift,
    short_term_stability_bound,
    time_shift,
)
from .mc_sim import (
    AnalyticRun,
    Histogram,
    OscillatorNoise,
    SimScenario,
    SimulationRun,
    TdcModel,
    build_histogram,
    default_pattern,
    measure_qber,
    poisson_histogram,
    sample_event_stream,
)
from .metrics import TimeSeries, moving_average, summarize, tdev
from .pdf_engine import (
    ArrivalPdf,
    FilterWindow,
    convolve_spad,
    drift_pdf,
    drift_qber,
    fold,
    invert_drift_for_threshold,
    leakage_probability,
    tabulate_drift_pdf,
    total_pdf,
)
from .physics import (
    OpticalLink,
    SpadModel,
    channel_transmittance,
    effective_rates,
    pulse_sigma_at_distance,
    spad_kernel,
    spad_phase_bias,
)
from .sync import (
    CircularMean,
    SyncConfig,
    SyncState,
    circular_mean,
    estimate_delay,
    estimate_drift,
    practical_drift_limit,
    recover_offset,
    run_ramp_controller,
)

__all__ = [name for name in dir() if not name.startswith("_")]
