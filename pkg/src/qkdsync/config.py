"""Run configuration: unit-aware key=value files with flag overrides.

Dimensioned quantities always carry an explicit unit suffix (ps, ns, us, ms,
s, km, dB, MHz, ...); bare numbers are accepted only for dimensionless
values. Unknown keys and missing units are errors.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .clock import ClockPair
from .mc_sim import OscillatorNoise, SimScenario, TdcModel, default_pattern
from .physics import OpticalLink, SpadModel, dispersion_si


class ConfigError(Exception):
    """Invalid configuration (maps to exit code 2)."""


_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"

_TIME_UNITS = {
    "fs": 1e-15, "ps": 1e-12, "ns": 1e-9, "us": 1e-6, "µs": 1e-6,
    "ms": 1e-3, "s": 1.0, "min": 60.0, "h": 3600.0,
}
_FREQ_UNITS = {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9, "cps": 1.0, "kcps": 1e3}
_LENGTH_UNITS = {"nm": 1e-9, "um": 1e-6, "µm": 1e-6, "mm": 1e-3, "m": 1.0, "km": 1e3}


def _parse_with_units(text: str, units: dict[str, float], what: str) -> float:
    m = re.fullmatch(rf"\s*({_NUM})\s*([^\s]+)\s*", text)
    if not m:
        raise ConfigError(f"{what}: expected '<number> <unit>', got {text!r}")
    value, unit = m.groups()
    if unit not in units:
        raise ConfigError(f"{what}: unknown unit {unit!r} (allowed: {sorted(units)})")
    return float(value) * units[unit]


def parse_time(text: str) -> float:
    return _parse_with_units(text, _TIME_UNITS, "time")


def parse_frequency(text: str) -> float:
    return _parse_with_units(text, _FREQ_UNITS, "frequency")


def parse_length(text: str) -> float:
    return _parse_with_units(text, _LENGTH_UNITS, "length")


def parse_db(text: str) -> float:
    return _parse_with_units(text, {"dB": 1.0}, "loss")


def parse_db_per_km(text: str) -> float:
    return _parse_with_units(text, {"dB/km": 1.0}, "attenuation")


def parse_dispersion(text: str) -> float:
    v = _parse_with_units(text, {"ps/nm/km": 1.0}, "dispersion")
    return dispersion_si(v)


def parse_chirp(text: str) -> float:
    return _parse_with_units(text, {"rad/s2": 1.0, "rad/s^2": 1.0}, "chirp")


def parse_drift(text: str) -> float:
    """Fractional frequency offset written as time-per-time, e.g. '2.3 us/s'."""
    units = {f"{u}/s": s for u, s in _TIME_UNITS.items() if u not in ("min", "h")}
    return _parse_with_units(text, units, "drift")


def parse_drift_rate(text: str) -> float:
    """Drift derivative written as e.g. '23 ps/s2' (1/s)."""
    units = {}
    for u, s in _TIME_UNITS.items():
        if u in ("min", "h"):
            continue
        units[f"{u}/s2"] = s
        units[f"{u}/s^2"] = s
    return _parse_with_units(text, units, "drift rate")


def parse_float(text: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"expected a number, got {text!r}") from exc


def parse_int(text: str) -> int:
    try:
        return int(text)
    except ValueError as exc:
        raise ConfigError(f"expected an integer, got {text!r}") from exc


def parse_str(text: str) -> str:
    return text.strip()


def _list_of(parser: Callable[[str], Any]) -> Callable[[str], list]:
    def parse(text: str) -> list:
        return [parser(part) for part in text.split(",") if part.strip()]

    return parse


# key -> (parser, default-as-text); defaults mirror the lab setup
SCHEMA: dict[str, tuple[Callable[[str], Any], str]] = {
    # optical link
    "wavelength": (parse_length, "1550 nm"),
    "pulse_fwhm": (parse_time, "77 ps"),
    "chirp": (parse_chirp, "-3.7e20 rad/s2"),
    "dispersion": (parse_dispersion, "17 ps/nm/km"),
    "fiber_length": (parse_length, "0 km"),
    "attenuation": (parse_db_per_km, "0.2 dB/km"),
    "extra_loss": (parse_db, "0 dB"),
    # detector
    "skew_shape": (parse_float, "3.0"),
    "skew_scale": (parse_time, "150 ps"),
    "efficiency": (parse_float, "0.25"),
    "dead_time": (parse_time, "15 us"),
    "dark_count_rate": (parse_frequency, "1.8 kHz"),
    # clocks
    "f_alice": (parse_frequency, "500 MHz"),
    "initial_drift": (parse_drift, "0 ps/s"),
    "static_offset": (parse_time, "0 ps"),
    "aging_rate": (parse_drift_rate, "0 ps/s2"),
    "xo_daily_aging": (parse_float, "500e-9"),
    "xo_ten_year_aging": (parse_float, "50e-6"),
    # TDC
    "t_bin": (parse_time, "1 ns"),
    "bin_width": (parse_time, "100 ps"),
    "delay_resolution": (parse_time, "11 ps"),
    "delay_register": (parse_time, "0 ps"),
    # run
    "mean_photon": (parse_float, "0.225"),
    "intrinsic_error": (parse_float, "0"),
    "detection_model": (parse_str, "poissonian"),
    "pattern_length": (parse_int, "500"),
    "pattern_seed": (parse_int, "20240917"),
    "window_width": (parse_time, "300 ps"),
    "error_threshold": (parse_float, "0.001"),
    "seed": (parse_int, "0"),
    # synchronization schedule
    "t_int_start": (parse_time, "155 us"),
    "t_int_max": (parse_time, "500 ms"),
    "growth": (parse_float, "4"),
    "iters_per_stage": (parse_int, "3"),
    "n_bar_align": (parse_float, "10"),
    "n_bar_nominal": (parse_float, "0.225"),
    "modulus_floor": (parse_float, "0.05"),
    "pearson_min": (parse_float, "0.5"),
    "tracking_iterations": (parse_int, "10"),
    # oscillator noise (per-acquisition steps)
    "drift_noise": (parse_drift, "0 ps/s"),
    "center_noise": (parse_time, "0 ps"),
    # field emulation
    "duration": (parse_time, "24 h"),
    "t_int": (parse_time, "500 ms"),
    # sweeps
    "z_list": (_list_of(parse_length), "120 km"),
    "w_list": (_list_of(parse_time), "300 ps,500 ps,1000 ps"),
    "loss_list": (_list_of(parse_db), "10 dB,20 dB,30 dB"),
    "dt_points": (parse_int, "41"),
    "t_drift_list": (_list_of(parse_drift), "-3 us/s,-2 us/s,-1 us/s,-0.3 us/s,0.3 us/s,1 us/s,2 us/s,3 us/s"),
    "t_int_list": (_list_of(parse_time), "155 us,310 us,620 us,1.24 ms,2.48 ms,4.96 ms,9.92 ms"),
}


@dataclass
class RunConfig:
    """Resolved configuration: parsed values plus the raw text for hashing."""

    values: dict[str, Any]
    raw: dict[str, str]

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def config_hash(self) -> str:
        canon = "\n".join(f"{k}={self.raw[k]}" for k in sorted(self.raw))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def load_config(
    path: str | Path | None = None, overrides: list[str] | None = None
) -> RunConfig:
    """Resolve defaults, then file entries, then --set overrides (flags win)."""
    raw = {key: default for key, (_, default) in SCHEMA.items()}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in SCHEMA:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            raw[key] = value
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        raw[key] = value

    values: dict[str, Any] = {}
    for key, (parser, _) in SCHEMA.items():
        try:
            values[key] = parser(raw[key])
        except ConfigError as exc:
            raise ConfigError(f"key {key!r}: {exc}") from exc
    return RunConfig(values=values, raw=raw)


def build_link(cfg: RunConfig, fiber_length: float | None = None,
               extra_loss: float | None = None) -> OpticalLink:
    return OpticalLink(
        wavelength=cfg["wavelength"],
        pulse_fwhm=cfg["pulse_fwhm"],
        chirp=cfg["chirp"],
        dispersion_coeff=cfg["dispersion"],
        fiber_length=cfg["fiber_length"] if fiber_length is None else fiber_length,
        attenuation_db_per_km=cfg["attenuation"],
        extra_loss_db=cfg["extra_loss"] if extra_loss is None else extra_loss,
    )


def build_spad(cfg: RunConfig) -> SpadModel:
    return SpadModel(
        skew_shape=cfg["skew_shape"],
        skew_scale=cfg["skew_scale"],
        efficiency=cfg["efficiency"],
        dead_time=cfg["dead_time"],
        dark_count_rate=cfg["dark_count_rate"],
    )


def build_tdc(cfg: RunConfig) -> TdcModel:
    return TdcModel(
        bin_width=cfg["bin_width"],
        delay_resolution=cfg["delay_resolution"],
        delay_register=cfg["delay_register"],
        period=cfg["t_bin"],
    )


def build_scenario(
    cfg: RunConfig,
    seed: int | None = None,
    fiber_length: float | None = None,
    extra_loss: float | None = None,
    with_pattern: bool = True,
) -> SimScenario:
    f_a = cfg["f_alice"]
    clocks = ClockPair(
        f_alice=f_a,
        f_bob=f_a * (1.0 + cfg["initial_drift"]),
        static_offset=cfg["static_offset"],
        aging_rate=cfg["aging_rate"],
    )
    pattern = (
        default_pattern(cfg["pattern_length"], cfg["pattern_seed"])
        if with_pattern
        else None
    )
    return SimScenario(
        clocks=clocks,
        link=build_link(cfg, fiber_length=fiber_length, extra_loss=extra_loss),
        spad=build_spad(cfg),
        tdc=build_tdc(cfg),
        mean_photon=cfg["mean_photon"],
        qubit_pattern=pattern,
        rng_seed=cfg["seed"] if seed is None else seed,
        intrinsic_error=cfg["intrinsic_error"],
        detection_model=cfg["detection_model"],
        oscillator_noise=OscillatorNoise(
            drift_step_std=cfg["drift_noise"],
            center_jitter_std=cfg["center_noise"],
        ),
    )
