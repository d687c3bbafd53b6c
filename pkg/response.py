"""
Frequency-domain response of the Kerr cavity: complex optical spring constant,
photothermal absorption rate and transfer function, self-energy and the
effective susceptibility of the suspended mirror.

The spring constant and the photothermal rate share one kernel,
    Delta / ((gamma + i Omega)^2 + Delta^2 + 2 [beta'(gamma + i Omega) - chi' Delta] n),
with beta', chi' the differential SHG and Kerr coefficients at the operating point.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from kerr_params import (
    C_LIGHT, HBAR,
    CavityParams, DomainError, InvalidParameterError, KerrMediumParams, MechanicalParams,
)
from steady_state import NumericalFailureError, SteadyState

logger = logging.getLogger(__name__)

DIVERGENCE_FLOOR = 1e-300

Frequency = Union[float, np.ndarray]


class DivergentSpringError(NumericalFailureError):
    """Raised when the spring kernel denominator vanishes (critical point)."""


def _scalar_or_array(values: np.ndarray, template) -> Union[complex, np.ndarray]:
    if np.ndim(template) == 0:
        return complex(values)
    return values


def _spring_kernel(cavity: CavityParams, medium: KerrMediumParams,
                   state: SteadyState, omega: Frequency) -> np.ndarray:
    if not state.is_stable:
        logger.warning("evaluating the spring on an unstable branch (n=%.6g)", state.photon_number)

    n = state.photon_number
    delta = state.effective_detuning
    s = state.effective_decay + 1j * np.asarray(omega, dtype=float)
    denominator = (s * s + delta ** 2
                   + 2.0 * (medium.differential_shg(n) * s - medium.differential_kerr(n) * delta) * n)
    if np.any(np.abs(denominator) < DIVERGENCE_FLOOR):
        raise DivergentSpringError(
            f"spring denominator vanishes at Delta={delta:.6g} rad/s, n={n:.6g}",
            np.abs(np.atleast_1d(denominator)).tolist())
    return delta / denominator


def complex_spring_constant(cavity: CavityParams, medium: KerrMediumParams,
                            state: SteadyState, omega: Frequency) -> Union[complex, np.ndarray]:
    """K_opt(Omega) = 2 hbar G^2 n * kernel, N/m."""
    kernel = _spring_kernel(cavity, medium, state, omega)
    values = 2.0 * HBAR * cavity.optomech_coupling ** 2 * state.photon_number * kernel
    return _scalar_or_array(values, omega)


def photothermal_rate(cavity: CavityParams, medium: KerrMediumParams,
                      state: SteadyState, omega: Frequency) -> Union[complex, np.ndarray]:
    """omega_th(Omega) = d * K_opt(Omega)."""
    spring = np.asarray(complex_spring_constant(cavity, medium, state, omega))
    return _scalar_or_array(medium.photothermal_absorption * spring, omega)


def static_spring_constant(cavity: CavityParams, medium: KerrMediumParams, state: SteadyState) -> float:
    """
    k_opt = 4 omega_0 P / (L c) * Delta / (gamma^2 + Delta^2 + 2 gamma gamma_S + 2 Delta Delta_K) * (G L / omega_0)^2,
    with gamma_S = beta' n and Delta_K = -chi' n.
    """
    n = state.photon_number
    gamma = state.effective_decay
    delta = state.effective_detuning
    gamma_s = medium.differential_shg(n) * n
    delta_k = -medium.differential_kerr(n) * n
    denominator = gamma ** 2 + delta ** 2 + 2.0 * gamma * gamma_s + 2.0 * delta * delta_k
    if abs(denominator) < DIVERGENCE_FLOOR:
        raise DivergentSpringError(f"static spring diverges at Delta={delta:.6g} rad/s", [denominator])

    omega0 = cavity.carrier_angular_frequency
    length = cavity.half_cycle_length
    coupling_factor = (cavity.optomech_coupling * length / omega0) ** 2
    return 4.0 * omega0 * state.intracavity_power / (length * C_LIGHT) * delta / denominator * coupling_factor


def kerr_spring_constant(omega0: float, power: float, length: float, gamma: float,
                         xi: float, xi_kerr: float, omega: Frequency = 0.0,
                         coupling: Optional[float] = None) -> Union[complex, np.ndarray]:
    """
    Lossless spring constant in normalised detunings xi = Delta/gamma and
    xi_K = Delta_K/gamma, with zeta = (1 + xi^2) xi_K.
    """
    if gamma <= 0:
        raise DomainError("kerr_spring_constant requires a positive decay rate")
    coupling = omega0 / length if coupling is None else coupling
    w = 1.0 + 1j * np.asarray(omega, dtype=float) / gamma
    denominator = w * w + xi ** 2 + 2.0 * xi * xi_kerr
    if np.any(np.abs(denominator) < DIVERGENCE_FLOOR):
        raise DivergentSpringError("lossless spring denominator vanishes")
    prefactor = 4.0 * omega0 * power / (length * C_LIGHT) / gamma * (coupling * length / omega0) ** 2
    return _scalar_or_array(prefactor * xi / denominator, omega)


def photothermal_transfer(omega_th: Union[complex, np.ndarray], gamma_th: float,
                          omega: Frequency) -> Union[complex, np.ndarray]:
    """H_th(Omega) = (gamma_th + i Omega) / (omega_th + gamma_th + i Omega)."""
    omega_arr = np.asarray(omega, dtype=float)
    if np.any(omega_arr < 0):
        raise InvalidParameterError("photothermal_transfer needs non-negative frequencies")
    numerator = gamma_th + 1j * omega_arr
    values = numerator / (np.asarray(omega_th) + numerator)
    return _scalar_or_array(values, omega)


def self_energy(spring: Union[complex, np.ndarray], omega_th: Union[complex, np.ndarray],
                gamma_th: float, omega: Frequency) -> Union[complex, np.ndarray]:
    """
    Sigma_th = (gamma_th + i Omega) / (omega_th + gamma_th + i Omega) * K_opt.
    Negative Omega is accepted so that Sigma(-Omega) = conj(Sigma(Omega)) can be checked.
    """
    numerator = gamma_th + 1j * np.asarray(omega, dtype=float)
    values = numerator / (np.asarray(omega_th) + numerator) * np.asarray(spring)
    return _scalar_or_array(values, omega)


def effective_susceptibility(mech: MechanicalParams, spring: Union[complex, np.ndarray],
                             transfer: Union[complex, np.ndarray], omega: Frequency) -> Union[complex, np.ndarray]:
    """
    delta x / delta F_ext = H_th / (m(-Omega^2 + Omega_m^2 + i Omega Gamma_m) + H_th k_opt).
    This is the cavity-length observable, photothermal displacement included.
    """
    omega_arr = np.asarray(omega, dtype=float)
    spring_arr = np.asarray(spring)
    transfer_arr = np.asarray(transfer)
    for name, arr in (('spring', spring_arr), ('transfer', transfer_arr)):
        if arr.ndim and arr.shape != omega_arr.shape:
            raise InvalidParameterError(f"{name} samples are not aligned with the frequency grid")

    mechanical = mech.mass * (-omega_arr ** 2 + mech.resonance ** 2 + 1j * omega_arr * mech.damping)
    denominator = mechanical + transfer_arr * spring_arr
    poles = denominator == 0
    if np.any(poles):
        logger.info("susceptibility pole on the grid at Omega=%s rad/s", omega_arr[poles] if omega_arr.ndim else omega_arr)
    with np.errstate(divide='ignore', invalid='ignore'):
        values = transfer_arr / denominator
    return _scalar_or_array(values, omega)


@dataclass(frozen=True)
class ResonanceReport:
    """Resonance of the composite spring; instability_rate > 0 for a net anti-spring."""
    angular_frequency: float
    instability_rate: float = 0.0

    @property
    def stable(self) -> bool:
        return self.instability_rate == 0.0


def composite_resonance(mech: MechanicalParams, static_spring: Union[float, complex]) -> ResonanceReport:
    """Omega_res = sqrt(Omega_m^2 + Re(k_opt)/m)."""
    radicand = mech.resonance ** 2 + complex(static_spring).real / mech.mass
    if radicand < 0:
        logger.warning("net anti-spring: Omega_m^2 + k/m = %.6g rad^2/s^2", radicand)
        return ResonanceReport(angular_frequency=0.0, instability_rate=math.sqrt(-radicand))
    return ResonanceReport(angular_frequency=math.sqrt(radicand))


def optical_spring_frequency(mass: float, spring: float) -> float:
    """Free-mass optical spring resonance sqrt(k/m)."""
    if mass <= 0:
        raise InvalidParameterError(f"mass must be positive, got {mass}")
    if spring < 0:
        raise DomainError("an anti-spring has no real resonance")
    return math.sqrt(spring / mass)


@dataclass(frozen=True, eq=False)
class SpringResponse:
    """Spring constant, photothermal rate, transfer function and self-energy on one grid."""
    frequencies: np.ndarray
    spring_constant: np.ndarray
    photothermal_rate: np.ndarray
    transfer: np.ndarray
    self_energy: np.ndarray
    outside_adiabatic: np.ndarray

    def __post_init__(self):
        size = len(self.frequencies)
        for name in ('spring_constant', 'photothermal_rate', 'transfer', 'self_energy', 'outside_adiabatic'):
            if len(getattr(self, name)) != size:
                raise InvalidParameterError(f"{name} does not match the frequency grid")

    def to_records(self) -> List[dict]:
        return [
            {
                'omega_rad_s': float(w),
                're_Kopt': float(k.real), 'im_Kopt': float(k.imag),
                're_omega_th': float(t.real), 'im_omega_th': float(t.imag),
                're_Hth': float(h.real), 'im_Hth': float(h.imag),
            }
            for w, k, t, h in zip(self.frequencies, self.spring_constant, self.photothermal_rate, self.transfer)
        ]


def spring_response(cavity: CavityParams, medium: KerrMediumParams, state: SteadyState,
                    omega_grid) -> SpringResponse:
    omega = np.asarray(omega_grid, dtype=float)
    if omega.ndim != 1:
        raise InvalidParameterError("omega_grid must be one-dimensional")
    spring = np.asarray(complex_spring_constant(cavity, medium, state, omega))
    rate = medium.photothermal_absorption * spring
    transfer = np.asarray(photothermal_transfer(rate, medium.photothermal_relaxation, omega))
    outside = omega < medium.photothermal_relaxation
    if medium.photothermal_absorption and np.any(outside):
        logger.info("%d frequencies lie below gamma_th where the adiabatic transfer function is approximate",
                    int(np.count_nonzero(outside)))
    return SpringResponse(
        frequencies=omega,
        spring_constant=spring,
        photothermal_rate=rate,
        transfer=transfer,
        self_energy=transfer * spring,
        outside_adiabatic=outside,
    )


@dataclass(frozen=True)
class CompositeOscillator:
    """Mirror suspension plus optical spring."""
    mech: MechanicalParams
    static_spring: float
    response: Optional[SpringResponse] = None

    @property
    def resonance(self) -> ResonanceReport:
        return composite_resonance(self.mech, self.static_spring)

    def susceptibility(self) -> np.ndarray:
        if self.response is None:
            raise InvalidParameterError("no sampled spring response attached")
        return np.asarray(effective_susceptibility(
            self.mech, self.response.spring_constant, self.response.transfer, self.response.frequencies))


def frequency_grid(start: float, stop: float, count: int, spacing: str = 'log') -> np.ndarray:
    """Angular frequencies, logarithmic by default."""
    if count < 1:
        raise InvalidParameterError(f"count must be positive, got {count}")
    if spacing == 'log':
        if start <= 0 or stop <= 0:
            raise InvalidParameterError("a logarithmic grid needs positive bounds")
        return np.geomspace(start, stop, count)
    if spacing == 'linear':
        return np.linspace(start, stop, count)
    raise InvalidParameterError(f"spacing must be 'log' or 'linear', got {spacing!r}")


def bode(values) -> Tuple[np.ndarray, np.ndarray]:
    """Magnitude in dB and unwrapped phase in degrees."""
    arr = np.asarray(values, dtype=complex)
    with np.errstate(divide='ignore'):
        magnitude = 20.0 * np.log10(np.abs(arr))
    phase = np.degrees(np.unwrap(np.angle(arr)))
    return magnitude, phase
