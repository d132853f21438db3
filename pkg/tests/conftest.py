import numpy as np
import pytest

from qkdsync.clock import ClockPair
from qkdsync.mc_sim import SimScenario, TdcModel, default_pattern
from qkdsync.physics import OpticalLink, SpadModel

T_BIN = 1e-9
F_ALICE = 500e6


@pytest.fixture(scope="session")
def lab_spad() -> SpadModel:
    return SpadModel(skew_shape=3.0, skew_scale=150e-12, efficiency=0.25,
                     dead_time=15e-6, dark_count_rate=1800.0)


@pytest.fixture(scope="session")
def link_120km() -> OpticalLink:
    return OpticalLink(wavelength=1550e-9, pulse_fwhm=77e-12, chirp=-3.7e20,
                       fiber_length=120e3)


@pytest.fixture(scope="session")
def tdc() -> TdcModel:
    return TdcModel(bin_width=100e-12, delay_resolution=11e-12, period=T_BIN)


def make_scenario(
    drift: float = 0.0,
    loss_db: float = 20.0,
    n_bar: float = 10.0,
    seed: int = 0,
    static_offset: float = 0.0,
    spad: SpadModel | None = None,
    with_pattern: bool = True,
    fiber_length: float = 0.0,
    link: OpticalLink | None = None,
    **kwargs,
) -> SimScenario:
    clocks = ClockPair(
        f_alice=F_ALICE, f_bob=F_ALICE * (1.0 + drift), static_offset=static_offset
    )
    if link is None:
        link = OpticalLink(fiber_length=fiber_length, extra_loss_db=loss_db)
    return SimScenario(
        clocks=clocks,
        link=link,
        spad=spad if spad is not None else SpadModel(),
        tdc=TdcModel(),
        mean_photon=n_bar,
        qubit_pattern=default_pattern() if with_pattern else None,
        rng_seed=seed,
        **kwargs,
    )


def two_sample_chi2_pvalue(a: np.ndarray, b: np.ndarray) -> float:
    """Two-sample chi-square homogeneity test over histogram bins."""
    from scipy.stats import chi2

    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    keep = (a + b) > 0
    a, b = a[keep], b[keep]
    na, nb = a.sum(), b.sum()
    k1 = np.sqrt(nb / na)
    k2 = np.sqrt(na / nb)
    stat = float(np.sum((k1 * a - k2 * b) ** 2 / (a + b)))
    dof = len(a) - 1
    return float(chi2.sf(stat, dof))
