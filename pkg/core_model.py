"""
Dimensionless quantities shared by every module: effective rates, Kerr gain,
amplification ratio and the critical input power.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

from kerr_params import (
    C_LIGHT, HBAR, ZETA_0,
    CavityParams, DerivedRates, DomainError, InvalidParameterError,
    KerrMediumParams, KerrSpringError,
)

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')


class ThresholdError(KerrSpringError):
    """Raised when the Kerr gain is at or beyond the multistability threshold."""


class NoCriticalPowerError(KerrSpringError):
    """Raised when no finite input power reaches the threshold."""


def derive_rates(cavity: CavityParams, medium: KerrMediumParams, n_bar: float) -> DerivedRates:
    """
    Effective decay, finesse and resonant power at photon number n_bar.

    The finesse is taken against the effective decay gamma = gamma' + beta n.
    The finesse quoted for a measured cavity is the low-power value (gamma ~ gamma').
    """
    if not math.isfinite(n_bar):
        raise InvalidParameterError(f"n_bar must be finite, got {n_bar}")
    if n_bar < 0:
        raise InvalidParameterError(f"n_bar must be non-negative, got {n_bar}")

    gamma_lin = cavity.total_linear_decay
    gamma = gamma_lin + medium.shg_decay(n_bar)
    finesse = math.pi * C_LIGHT / (2.0 * cavity.half_cycle_length * gamma)
    resonant_power = (C_LIGHT / cavity.half_cycle_length) * cavity.input_decay / gamma ** 2 * cavity.input_power
    values = (gamma, finesse, resonant_power)
    if not all(math.isfinite(v) for v in values):
        raise InvalidParameterError(f"non-finite derived rate for n_bar={n_bar}")

    return DerivedRates(
        total_linear_decay=gamma_lin,
        effective_decay=gamma,
        finesse=finesse,
        resonant_power=resonant_power,
        input_photon_rate=cavity.input_photon_rate,
    )


def kerr_gain(chi: float, input_power: float, gamma: float, omega0: float) -> float:
    """zeta = -2 chi P0 / (gamma^2 hbar omega_0)."""
    if gamma == 0:
        raise DomainError("kerr_gain requires a non-zero decay rate")
    if omega0 <= 0:
        raise InvalidParameterError(f"omega0 must be positive, got {omega0}")
    return -2.0 * chi * input_power / (gamma ** 2 * HBAR * omega0)


def kerr_chi_for_gain(zeta: float, input_power: float, gamma: float, omega0: float) -> float:
    """Susceptibility giving the requested Kerr gain (inverse of kerr_gain)."""
    if input_power <= 0:
        raise DomainError("a Kerr gain needs a positive input power")
    return -zeta * gamma ** 2 * HBAR * omega0 / (2.0 * input_power)


def cavity_kerr_gain(cavity: CavityParams, medium: KerrMediumParams) -> float:
    """Kerr gain of a cavity evaluated with its low-power decay rate."""
    return kerr_gain(medium.kerr_susceptibility, cavity.input_power,
                     cavity.total_linear_decay, cavity.carrier_angular_frequency)


def threshold_compare(zeta: float, rtol: float = 1e-12) -> int:
    """-1 below threshold, 0 at threshold (within rtol), +1 beyond it."""
    ratio = zeta / ZETA_0
    if abs(ratio - 1.0) <= rtol:
        return 0
    return -1 if ratio < 1.0 else 1


def amplification_ratio(zeta: float) -> float:
    """A = 1 / (1 - zeta/zeta_0), defined below the multistability threshold."""
    ratio = zeta / ZETA_0
    if ratio >= 1.0:
        raise ThresholdError(f"zeta={zeta:.6g} is at or beyond the multistability threshold {ZETA_0:.6g}")
    return 1.0 / (1.0 - ratio)


def critical_power(chi: float, gamma: float, omega0: float) -> float:
    """Input power at which zeta(P0) reaches zeta_0."""
    if chi == 0:
        raise NoCriticalPowerError("chi = 0: the Kerr gain never reaches threshold")
    gain_per_watt = kerr_gain(chi, 1.0, gamma, omega0)
    if gain_per_watt > 0:
        raise NoCriticalPowerError(
            f"chi={chi:.6g} gives a positive Kerr gain; threshold is reached only for zeta < 0")
    return ZETA_0 / gain_per_watt


def map_ordered(func: Callable[[T], R], items: Iterable[T], jobs: int = 1) -> List[R]:
    """Apply func to every item, concurrently when jobs > 1, keeping input order."""
    items = list(items)
    if jobs <= 1 or len(items) < 2:
        return [func(item) for item in items]
    logger.debug("running %d tasks on %d workers", len(items), jobs)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, items))
