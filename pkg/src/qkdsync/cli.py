"""Scenario runner: reproduces the model's figures as CSV tables.

Subcommands: qber-curve, drift-limit, sync-run, error-map, constraints,
field-sim. Every output file starts with a metadata header (version, config
hash, seed, RNG) and is byte-identical across runs for identical
config+seed. Exit codes: 0 success, 2 configuration error, 3 convergence or
lock failure.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .clock import (
    TimingBudget,
    max_calibration_interval,
    max_unambiguous_drift,
    short_term_stability_bound,
)
from .config import ConfigError, RunConfig, build_scenario, build_spad, load_config
from .mc_sim import AnalyticRun, SimulationRun, write_histogram_csv
from .metrics import TimeSeries, default_taus, summarize, tdev
from .pdf_engine import drift_qber, invert_drift_for_threshold
from .physics import channel_transmittance, pulse_sigma_at_distance, spad_phase_bias
from .sync import (
    SyncConfig,
    SyncError,
    practical_drift_limit,
    run_ramp_controller,
)


def _derived_seed(seed: int, index: int) -> int:
    """Per-point stream seed via SeedSequence (documented splitting scheme)."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


def _meta_lines(cfg: RunConfig) -> list[str]:
    return [
        f"# qkdsync v{__version__}",
        f"# config_sha256={cfg.config_hash()}",
        f"# seed={cfg['seed']}",
        "# rng=philox counter-based; per-point streams via SeedSequence([seed,index])",
    ]


def _fmt(x) -> str:
    if x is None:
        return "none"
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return f"{x:.9g}"


def _write_csv(path: Path, cfg: RunConfig, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for line in _meta_lines(cfg):
            fh.write(line + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_text(path: Path, cfg: RunConfig, pairs) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for line in _meta_lines(cfg):
            fh.write(line + "\n")
        for key, value in pairs:
            fh.write(f"{key} = {_fmt(value)}\n")


def _sync_config(cfg: RunConfig, start_phase: str = "ramping") -> SyncConfig:
    return SyncConfig(
        t_int_start=cfg["t_int_start"],
        t_int_max=cfg["t_int_max"],
        growth=cfg["growth"],
        iters_per_stage=cfg["iters_per_stage"],
        n_bar_align=cfg["n_bar_align"],
        n_bar_nominal=cfg["n_bar_nominal"],
        modulus_floor=cfg["modulus_floor"],
        pearson_min=cfg["pearson_min"],
        tracking_iterations=cfg["tracking_iterations"],
        start_phase=start_phase,
    )


TRACE_HEADER = [
    "iter", "t_cumulative_s", "t_int_s", "n_bar", "drift_est_per_s",
    "delay_applied_ps", "mean_center_ps", "qber", "qber_filtered",
]


def _trace_rows(history):
    for rec in history:
        yield (
            rec.iteration, rec.t_cumulative, rec.t_int, rec.n_bar,
            rec.drift_estimate, rec.delay_applied * 1e12,
            rec.center_estimate * 1e12, rec.qber, rec.qber_filtered,
        )


def _tracking_series(history) -> dict[str, TimeSeries]:
    track = [r for r in history if r.phase == "tracking"]
    t = np.array([r.t_cumulative for r in track])
    return {
        "center": TimeSeries(t, np.array([r.center_estimate for r in track]), "center"),
        "drift": TimeSeries(t, np.array([r.drift_estimate for r in track]), "drift"),
        "qber": TimeSeries(t, np.array([r.qber for r in track]), "qber"),
        "qber_filtered": TimeSeries(
            t, np.array([r.qber_filtered for r in track]), "qber_filtered"
        ),
    }


def _summary_pairs(series: dict[str, TimeSeries]):
    pairs = []
    for name, ts in series.items():
        stats = summarize(ts)
        scale = 1e12 if name in ("center", "drift") else 1.0
        unit = {"center": "_ps", "drift": "_ps_per_s"}.get(name, "")
        pairs.append((f"{name}{unit}_mean", stats.mean * scale))
        pairs.append((f"{name}{unit}_std", stats.std * scale))
    return pairs


def cmd_qber_curve(cfg: RunConfig, outdir: Path) -> int:
    spad = build_spad(cfg)
    t_bin = cfg["t_bin"]
    rows = []
    for z in cfg["z_list"]:
        sigma = pulse_sigma_at_distance(
            build_scenario(cfg, fiber_length=z, with_pattern=False).link
        )
        for w in cfg["w_list"]:
            for dt in np.linspace(0.0, t_bin, cfg["dt_points"]):
                eps = drift_qber(sigma, spad, float(dt), w, t_bin)
                rows.append((dt * 1e12, w * 1e12, z / 1e3, eps))
    _write_csv(outdir / "qber_curve.csv", cfg,
               ["dt_drift_ps", "w_ps", "z_km", "qber"], rows)
    return 0


def cmd_drift_limit(cfg: RunConfig, outdir: Path) -> int:
    spad = build_spad(cfg)
    t_bin = cfg["t_bin"]
    thr = cfg["error_threshold"]
    rows = []
    for z in cfg["z_list"]:
        sigma = pulse_sigma_at_distance(
            build_scenario(cfg, fiber_length=z, with_pattern=False).link
        )
        for w in cfg["w_list"]:
            try:
                dt = invert_drift_for_threshold(thr, sigma, spad, w, t_bin)
                rows.append((z / 1e3, w * 1e12, dt * 1e12))
            except ValueError:
                rows.append((z / 1e3, w * 1e12, float("nan")))  # unreachable: flagged
    _write_csv(outdir / "drift_limit.csv", cfg,
               ["z_km", "w_ps", "max_dt_drift_ps"], rows)
    return 0


def cmd_sync_run(cfg: RunConfig, outdir: Path, dump_events: bool = False) -> int:
    scenario = build_scenario(cfg)
    run = SimulationRun(scenario, window_width=cfg["window_width"])
    if dump_events:
        run.capture_events = True
    state = run_ramp_controller(run, _sync_config(cfg))
    _write_csv(outdir / "sync_trace.csv", cfg, TRACE_HEADER, _trace_rows(state.history))
    pairs = [
        ("phase", state.phase),
        ("iterations", state.iteration),
        ("offset_recovery_time_s", state.offset_recovery_time),
        ("offset_shift_ps", (state.offset_shift or 0.0) * 1e12),
        ("offset_correlation", state.offset_correlation),
    ]
    series = _tracking_series(state.history)
    if len(series["center"]) >= 1:
        pairs.extend(_summary_pairs(series))
    _write_text(outdir / "sync_summary.txt", cfg, pairs)
    if dump_events:
        path = outdir / "events.csv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t_ps,label\n")
            for times, labels in run.captured_events:
                for t, lab in zip(times, labels):
                    fh.write(f"{t * 1e12:.3f},{int(lab)}\n")
    return 0


def cmd_error_map(cfg: RunConfig, outdir: Path) -> int:
    t_bin = cfg["t_bin"]
    rows = []
    index = 0
    backends = {
        0: AnalyticRun(build_scenario(cfg, with_pattern=False), noiseless=True),
        1: AnalyticRun(build_scenario(cfg, with_pattern=False), noiseless=False),
    }
    from .sync import FlatHistogramError, circular_mean, estimate_drift

    for drift in cfg["t_drift_list"]:
        for t_int in cfg["t_int_list"]:
            for noisy in (0, 1):
                backend = backends[noisy]
                backend.reset(drift=drift, seed=_derived_seed(cfg["seed"], index))
                index += 1
                acq1 = backend.acquire(t_int)
                acq2 = backend.acquire(t_int)
                try:
                    m1 = circular_mean(acq1.histogram, t_bin)
                    m2 = circular_mean(acq2.histogram, t_bin)
                    est = estimate_drift(m1, m2, t_int, t_bin,
                                         modulus_floor=cfg["modulus_floor"])
                    rel = (est - drift) / drift * 100.0
                except FlatHistogramError:
                    rel = float("nan")
                rows.append((drift, t_int, noisy, rel))
    _write_csv(outdir / "error_map.csv", cfg,
               ["t_drift_per_s", "t_int_s", "noisy", "rel_error_pct"], rows)
    return 0


def cmd_constraints(cfg: RunConfig, outdir: Path) -> int:
    spad = build_spad(cfg)
    t_bin = cfg["t_bin"]
    link = build_scenario(cfg, with_pattern=False).link
    sigma = pulse_sigma_at_distance(link)
    eta = channel_transmittance(link)

    drift_max = max_unambiguous_drift(t_bin, spad.dead_time)
    practical = practical_drift_limit(
        spad, cfg["f_alice"], eta, t_bin,
        n_bar_align=cfg["n_bar_align"],
    )
    pairs = [
        ("max_unambiguous_drift_us_per_s", drift_max * 1e6),
        ("practical_drift_limit_us_per_s", practical * 1e6),
        ("practical_drift_limit_raw_us_per_s", practical / 0.7 * 1e6),
    ]
    windows = sorted(set(cfg["w_list"]) | {t_bin})
    for w in windows:
        if w > t_bin:
            continue
        budget = TimingBudget(
            t_bin=t_bin, t_int=cfg["t_int_max"], window_width=w,
            error_threshold=cfg["error_threshold"],
        )
        try:
            dt_lim = invert_drift_for_threshold(
                cfg["error_threshold"], sigma, spad, w, t_bin
            )
        except ValueError:
            pairs.append((f"dt_drift_limit_w{round(w * 1e12)}ps", float("nan")))
            continue
        bound = short_term_stability_bound(budget, dt_lim)
        pairs.append((f"dt_drift_limit_w{round(w * 1e12)}ps_ps", dt_lim * 1e12))
        pairs.append((f"short_term_bound_w{round(w * 1e12)}ps_ps_per_s2", bound * 1e12))

    ten_year = 10 * 365.25 * 86400.0
    aging_10y = 2.0 * cfg["xo_ten_year_aging"] / ten_year
    pairs.append(
        ("calib_interval_theoretical_years",
         max_calibration_interval(aging_10y, t_bin, spad.dead_time) / (365.25 * 86400))
    )
    pairs.append(
        ("calib_interval_practical_years",
         practical / aging_10y / (365.25 * 86400))
    )
    pairs.append(
        ("xo_daily_aging_rate_ps_per_s2", 2.0 * cfg["xo_daily_aging"] / 86400.0 * 1e12)
    )
    _write_text(outdir / "constraints.txt", cfg, pairs)
    for key, value in pairs:
        print(f"{key} = {_fmt(value)}")
    return 0


def cmd_field_sim(cfg: RunConfig, outdir: Path, real_time: bool = False) -> int:
    scenario = build_scenario(cfg, with_pattern=False)
    backend = AnalyticRun(scenario, window_width=cfg["window_width"])
    t_int = cfg["t_int"]
    n_iter = max(4, int(round(cfg["duration"] / (2.0 * t_int))))
    sync_cfg = _sync_config(cfg, start_phase="tracking")
    sync_cfg.t_int_max = t_int
    sync_cfg.tracking_iterations = n_iter
    sync_cfg.pace_real_time = real_time
    state = run_ramp_controller(backend, sync_cfg)

    _write_csv(outdir / "field_trace.csv", cfg, TRACE_HEADER, _trace_rows(state.history))
    series = _tracking_series(state.history)
    center = series["center"]
    taus = default_taus(center)
    rows = [(tau, val * 1e12) for tau, val in tdev(center, taus)]
    _write_csv(outdir / "field_tdev.csv", cfg, ["tau_s", "tdev_ps"], rows)
    _write_text(outdir / "field_summary.txt", cfg, _summary_pairs(series))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="qkdsync",
        description="Clock-drift model and synchronization simulator for time-bin QKD",
    )
    parser.add_argument("--version", action="version", version=f"qkdsync {__version__}")
    sub = parser.add_subparsers(dest="cmd", required=True)

    def add_common(p):
        p.add_argument("--config", type=str, default=None, help="key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable; wins over the file)")
        p.add_argument("--out", type=str, default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the seed key")

    p = sub.add_parser("qber-curve", help="drift-induced QBER vs accumulated shift")
    add_common(p)
    p = sub.add_parser("drift-limit", help="max tolerable shift vs distance per window")
    add_common(p)
    p = sub.add_parser("sync-run", help="closed-loop ramp + offset recovery + tracking")
    add_common(p)
    p.add_argument("--dump-events", action="store_true",
                   help="also dump raw detection events (t_ps,label)")
    p = sub.add_parser("error-map", help="drift-estimation relative error grid")
    add_common(p)
    p = sub.add_parser("constraints", help="clock stability budget numbers")
    add_common(p)
    p = sub.add_parser("field-sim", help="long-run tracking emulation + TDEV")
    add_common(p)
    p.add_argument("--real-time", action="store_true",
                   help="pace iterations at true acquisition duration (demo)")

    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
        if args.seed is not None:
            cfg = load_config(args.config, list(args.set) + [f"seed={args.seed}"])
        outdir = Path(args.out)
        if args.cmd == "qber-curve":
            return cmd_qber_curve(cfg, outdir)
        if args.cmd == "drift-limit":
            return cmd_drift_limit(cfg, outdir)
        if args.cmd == "sync-run":
            return cmd_sync_run(cfg, outdir, dump_events=args.dump_events)
        if args.cmd == "error-map":
            return cmd_error_map(cfg, outdir)
        if args.cmd == "constraints":
            return cmd_constraints(cfg, outdir)
        if args.cmd == "field-sim":
            return cmd_field_sim(cfg, outdir, real_time=args.real_time)
        raise ConfigError(f"unknown command {args.cmd!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SyncError as exc:
        print(f"synchronization failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
