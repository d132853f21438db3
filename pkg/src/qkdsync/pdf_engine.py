"""Analytic arrival-time PDFs under clock drift.

Evaluates the drift-smeared Gaussian arrival PDF, convolves it with the
SPAD kernel, folds it over a histogram period, and integrates filtering
windows to obtain leakage probabilities and the drift-induced QBER.

All tabulated PDFs live on uniform grids whose nodes sit at exact integer
multiples of the grid step, so folding reduces to index arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import ndtr

from .physics import SpadModel, spad_kernel

DEFAULT_GRID_STEP = 0.5e-12
# below |dt_drift| < SMALL_DRIFT_FACTOR*sigma the boxcar smear is numerically
# invisible and the Phi difference would cancel catastrophically
SMALL_DRIFT_FACTOR = 1e-4
_SUPPORT_SIGMAS = 8.5
_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class FilterWindow:
    """Temporal acceptance window [center - width/2, center + width/2)."""

    center: float
    width: float

    def __post_init__(self) -> None:
        if self.width <= 0:
            raise ValueError("window width must be > 0")

    @property
    def lo(self) -> float:
        return self.center - 0.5 * self.width

    @property
    def hi(self) -> float:
        return self.center + 0.5 * self.width


@dataclass(frozen=True)
class ArrivalPdf:
    """Tabulated arrival-time density on a uniform grid.

    grid[k] = (index0 + k) * step exactly; for folded PDFs the grid covers
    [0, period) and the density is periodic.
    """

    grid: np.ndarray
    density: np.ndarray
    step: float
    index0: int
    folded: bool = False
    period: float | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.step > 1e-12:
            raise ValueError("grid step must be <= 1 ps")
        if len(self.grid) != len(self.density):
            raise ValueError("grid and density lengths differ")
        if self.folded and self.period is None:
            raise ValueError("folded PDF requires a period")

    def integral(self) -> float:
        """Trapezoid integral (periodic closure when folded)."""
        if self.folded:
            return float(self.density.sum() * self.step)
        return float(np.trapezoid(self.density, dx=self.step))

    def mean(self) -> float:
        if self.folded:
            return float((self.grid * self.density).sum() * self.step)
        return float(np.trapezoid(self.grid * self.density, dx=self.step))

    def std(self) -> float:
        m = self.mean()
        sq = (self.grid - m) ** 2 * self.density
        if self.folded:
            var = float(sq.sum() * self.step)
        else:
            var = float(np.trapezoid(sq, dx=self.step))
        return math.sqrt(max(var, 0.0))


def drift_pdf(
    sigma: float,
    t_drift: float,
    t_int: float,
    t_0: float,
    bin_center: float,
    t,
):
    """Density of the photon delay accumulated over one integration window.

    A Gaussian of std sigma smeared by the drift-induced shift dt = t_drift *
    t_int: the exact CDF-difference form for appreciable |dt|, the Gaussian
    limit centered at bin_center + t_0 + dt/2 otherwise. Valid for either
    drift sign.
    """
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    if t_int <= 0:
        raise ValueError("t_int must be > 0")
    t = np.asarray(t, dtype=float)
    dt = t_drift * t_int
    mu = bin_center + t_0
    if abs(dt) < SMALL_DRIFT_FACTOR * sigma:
        z = (t - mu - 0.5 * dt) / sigma
        return np.exp(-0.5 * z * z) / (_SQRT_2PI * sigma)
    upper = ndtr((mu + dt - t) / sigma)
    lower = ndtr((mu - t) / sigma)
    return (upper - lower) / dt


def _aligned_range(lo: float, hi: float, step: float) -> tuple[int, int]:
    k_lo = int(math.floor(lo / step))
    k_hi = int(math.ceil(hi / step))
    return k_lo, k_hi


def tabulate_drift_pdf(
    sigma: float,
    t_drift: float,
    t_int: float,
    t_0: float,
    bin_center: float,
    spad: SpadModel | None = None,
    step: float = DEFAULT_GRID_STEP,
) -> ArrivalPdf:
    """Tabulate the unfolded drift PDF on an index-aligned grid.

    The grid covers the smear interval plus _SUPPORT_SIGMAS standard
    deviations; if a SpadModel is given the margin also reserves room for the
    later kernel convolution (the convolution itself extends the grid).
    """
    dt = t_drift * t_int
    mu = bin_center + t_0
    margin = _SUPPORT_SIGMAS * sigma
    lo = mu + min(dt, 0.0) - margin
    hi = mu + max(dt, 0.0) + margin
    k_lo, k_hi = _aligned_range(lo, hi, step)
    grid = np.arange(k_lo, k_hi + 1, dtype=float) * step
    dens = drift_pdf(sigma, t_drift, t_int, t_0, bin_center, grid)
    meta = {
        "sigma": sigma,
        "t_drift": t_drift,
        "t_int": t_int,
        "t_0": t_0,
        "bin_center": bin_center,
        "spad": spad,
    }
    return ArrivalPdf(grid=grid, density=dens, step=step, index0=k_lo, meta=meta)


def sampled_kernel(spad: SpadModel, step: float) -> tuple[np.ndarray, int]:
    """Kernel sampled at grid offsets, renormalized to unit discrete mass.

    Returns (values, half_width) with values[j] = k((j - half_width) * step).
    """
    half = int(math.ceil(spad.kernel_half_span / step))
    offsets = np.arange(-half, half + 1, dtype=float) * step
    k = spad_kernel(spad, offsets)
    k = k / (k.sum() * step)
    return k, half


def convolve_spad(pdf: ArrivalPdf, spad: SpadModel) -> ArrivalPdf:
    """Convolve an unfolded PDF with the SPAD kernel.

    Direct discrete summation (no spectral noise floor in the tails); the
    grid is extended by the kernel half-span on both sides so no mass is
    clipped, and the zero-mean kernel leaves the expectation unchanged.
    """
    if pdf.folded:
        raise ValueError("convolve_spad requires an unfolded PDF")
    k, half = sampled_kernel(spad, pdf.step)
    dens = np.convolve(pdf.density, k) * pdf.step
    dens = np.maximum(dens, 0.0)
    index0 = pdf.index0 - half
    grid = np.arange(index0, index0 + len(dens), dtype=float) * pdf.step
    meta = dict(pdf.meta)
    meta["spad"] = spad
    return ArrivalPdf(
        grid=grid, density=dens, step=pdf.step, index0=index0, meta=meta
    )


def convolve_spad_quadrature(pdf: ArrivalPdf, spad: SpadModel, t) -> np.ndarray:
    """Direct-quadrature audit of the SPAD convolution at points t.

    Trapezoid evaluation of int p(t - u) k(u) du on the kernel grid; used to
    validate the spectral convolution pointwise.
    """
    meta = pdf.meta
    k, half = sampled_kernel(spad, pdf.step)
    u = np.arange(-half, half + 1, dtype=float) * pdf.step
    out = np.empty(np.shape(t), dtype=float)
    for i, ti in enumerate(np.atleast_1d(t)):
        p = drift_pdf(
            meta["sigma"], meta["t_drift"], meta["t_int"], meta["t_0"],
            meta["bin_center"], ti - u,
        )
        out.flat[i] = np.sum(p * k) * pdf.step
    return out


def total_pdf(early: ArrivalPdf, late: ArrivalPdf) -> ArrivalPdf:
    """Equal-weight mixture of the early and late photon PDFs."""
    if early.folded != late.folded:
        raise ValueError("cannot mix folded and unfolded PDFs")
    if early.index0 != late.index0 or len(early.grid) != len(late.grid):
        raise ValueError("grid mismatch between early and late PDFs")
    return ArrivalPdf(
        grid=early.grid,
        density=0.5 * early.density + 0.5 * late.density,
        step=early.step,
        index0=early.index0,
        folded=early.folded,
        period=early.period,
        meta={"early": early.meta, "late": late.meta},
    )


def fold(
    pdf: ArrivalPdf,
    period: float,
    m_span: tuple[int, int] | None = None,
    mass_tolerance: float = 1e-9,
) -> ArrivalPdf:
    """Fold an unfolded PDF: p~(tau) = sum_m p(tau + m * period).

    m indexes whole periods (m = floor(t / period)); m_span restricts the
    included periods and defaults to every period the grid touches. Raises if
    the included region misses more than mass_tolerance of the total mass.
    """
    if pdf.folded:
        raise ValueError("pdf is already folded")
    n_period = round(period / pdf.step)
    if n_period < 1 or abs(n_period * pdf.step - period) > 1e-6 * pdf.step:
        raise ValueError("period must be an integer multiple of the grid step")

    abs_idx = pdf.index0 + np.arange(len(pdf.density))
    m_all = np.floor_divide(abs_idx, n_period)
    if m_span is None:
        included = np.ones(len(abs_idx), dtype=bool)
    else:
        m_min, m_max = m_span
        included = (m_all >= m_min) & (m_all <= m_max)

    covered = float(pdf.density[included].sum() * pdf.step)
    total = pdf.integral()
    deficit = total - covered
    if deficit > mass_tolerance:
        raise ValueError(
            f"m_span misses probability mass: deficit {deficit:.3e} "
            f"(tolerance {mass_tolerance:.1e})"
        )

    folded = np.zeros(n_period)
    np.add.at(folded, abs_idx[included] % n_period, pdf.density[included])
    grid = np.arange(n_period, dtype=float) * pdf.step
    return ArrivalPdf(
        grid=grid,
        density=folded,
        step=pdf.step,
        index0=0,
        folded=True,
        period=period,
        meta=dict(pdf.meta),
    )


def _window_integral(pdf: ArrivalPdf, lo: float, hi: float) -> float:
    """Trapezoid integral of a folded PDF over [lo, hi) with partial end cells."""
    step = pdf.step
    dens = pdf.density
    n = len(dens)
    period = pdf.period if pdf.period is not None else n * step
    if not (0.0 <= lo < hi <= period * (1.0 + 1e-12)):
        raise ValueError("window must lie inside [0, period)")
    hi = min(hi, period)

    edge = np.concatenate([dens, dens[:1]])  # periodic closure at node n
    cum = np.concatenate(
        [[0.0], np.cumsum(0.5 * (edge[1:] + edge[:-1]) * step)]
    )

    def cum_at(x: float) -> float:
        pos = x / step
        k = min(int(math.floor(pos)), n)
        frac = pos - k
        c = float(cum[k])
        if frac > 0.0 and k < n:
            d0 = edge[k]
            d1 = edge[k + 1]
            dxv = d0 + frac * (d1 - d0)
            c += 0.5 * (d0 + dxv) * frac * step
        return c

    return cum_at(hi) - cum_at(lo)


def leakage_probability(pdf_folded: ArrivalPdf, window: FilterWindow) -> float:
    """Probability mass of a folded PDF inside a filtering window."""
    if not pdf_folded.folded:
        raise ValueError("leakage_probability requires a folded PDF")
    return _window_integral(pdf_folded, window.lo, window.hi)


def bin_masses(pdf: ArrivalPdf, bin_width: float) -> np.ndarray:
    """Probability mass of each histogram bin of a folded PDF.

    bin_width must be an integer multiple of the grid step and divide the
    folding period exactly.
    """
    if not pdf.folded or pdf.period is None:
        raise ValueError("bin_masses requires a folded PDF")
    k = round(bin_width / pdf.step)
    if k < 1 or abs(k * pdf.step - bin_width) > 1e-6 * pdf.step:
        raise ValueError("bin_width must be an integer multiple of the grid step")
    n = len(pdf.density)
    if n % k != 0:
        raise ValueError("folding period must be an integer number of bins")
    edge = np.concatenate([pdf.density, pdf.density[:1]])
    cum = np.concatenate(
        [[0.0], np.cumsum(0.5 * (edge[1:] + edge[:-1]) * pdf.step)]
    )
    return np.diff(cum[::k])


def build_folded_bin_pdf(
    sigma: float,
    spad: SpadModel | None,
    dt_drift: float,
    bin_center: float,
    period: float,
    t_0: float = 0.0,
    step: float = DEFAULT_GRID_STEP,
) -> ArrivalPdf:
    """Drift PDF for one bin, SPAD-convolved and folded over period."""
    pdf = tabulate_drift_pdf(
        sigma=sigma, t_drift=dt_drift, t_int=1.0, t_0=t_0,
        bin_center=bin_center, spad=spad, step=step,
    )
    if spad is not None:
        pdf = convolve_spad(pdf, spad)
    return fold(pdf, period)


def drift_qber(
    sigma: float,
    spad: SpadModel | None,
    dt_drift: float,
    window_width: float,
    t_bin: float,
    step: float = DEFAULT_GRID_STEP,
) -> float:
    """Drift-induced QBER under temporal filtering of width window_width.

    Folds the early-bin PDF over 2*t_bin (t_0 = 0) and uses the early/late
    symmetry of the folded mixture: eps = leak / (correct + leak) with leak
    the early-photon mass inside the late window.
    """
    if not 0.0 < window_width <= t_bin:
        raise ValueError("window_width must be in (0, t_bin]")
    mu_e = 0.5 * t_bin
    mu_l = 1.5 * t_bin
    folded = build_folded_bin_pdf(
        sigma=sigma, spad=spad, dt_drift=dt_drift,
        bin_center=mu_e, period=2.0 * t_bin, step=step,
    )
    leak = leakage_probability(folded, FilterWindow(mu_l, window_width))
    correct = leakage_probability(folded, FilterWindow(mu_e, window_width))
    return leak / (leak + correct)


def invert_drift_for_threshold(
    threshold: float,
    sigma: float,
    spad: SpadModel | None,
    window_width: float,
    t_bin: float,
    step: float = DEFAULT_GRID_STEP,
    tolerance: float = 0.5e-12,
) -> float:
    """Largest drift-induced shift with QBER <= threshold (rising branch).

    Bisection on [0, t_bin]; raises if the threshold is already exceeded at
    zero drift.
    """
    if not 0.0 < threshold < 0.5:
        raise ValueError("threshold must be in (0, 0.5)")

    def eps(dt: float) -> float:
        return drift_qber(sigma, spad, dt, window_width, t_bin, step=step)

    lo = 0.0
    hi = t_bin
    if eps(lo) > threshold:
        raise ValueError("threshold unreachable: QBER exceeds it at zero drift")
    if eps(hi) <= threshold:
        raise ValueError("threshold unreachable: QBER stays below it up to t_bin")
    while hi - lo > tolerance:
        mid = 0.5 * (lo + hi)
        if eps(mid) <= threshold:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
