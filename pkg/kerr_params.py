"""
Parameter containers for Kerr-enhanced optomechanical cavities.
Immutable, self-validating dataclasses; all quantities SI.
"""
import math
from dataclasses import dataclass
from typing import Literal, Optional

from scipy import constants

HBAR = constants.hbar
C_LIGHT = constants.c

# Critical Kerr gain at the onset of multistability, kept as the exact expression.
ZETA_0 = -8.0 / (3.0 * math.sqrt(3.0))

StabilityType = Literal['stable', 'unstable']

# Runtime list for validation
STABILITY_LABELS = ('stable', 'unstable')

MICRO_MATCH_RTOL = 1e-12


class KerrSpringError(Exception):
    """Base class for every error raised by kerrspring."""


class InvalidParameterError(KerrSpringError, ValueError):
    """Raised when a parameter is missing, non-finite or out of range."""


class ConfigurationError(KerrSpringError, ValueError):
    """Raised for an unusable scan, integrator or configuration setting."""


class DomainError(KerrSpringError, ValueError):
    """Raised when an operation is evaluated outside its mathematical domain."""


def _require_finite(name: str, value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InvalidParameterError(f"{name} must be numeric, got {type(value).__name__}")
    if not math.isfinite(value):
        raise InvalidParameterError(f"{name} must be finite, got {value}")
    return float(value)


def _close(a: float, b: float, rtol: float) -> bool:
    return abs(a - b) <= rtol * max(abs(a), abs(b))


@dataclass(frozen=True)
class CavityParams:
    """
    Fabry-Perot / bow-tie cavity driven by a carrier of power P0.
    The optomechanical coupling defaults to G = omega_0 / L.
    """
    half_cycle_length: float
    carrier_angular_frequency: float
    input_decay: float
    other_loss_decay: float
    input_power: float
    optomech_coupling: Optional[float] = None

    def __post_init__(self):
        # ----- VALIDATION -----
        length = _require_finite('half_cycle_length', self.half_cycle_length)
        omega0 = _require_finite('carrier_angular_frequency', self.carrier_angular_frequency)
        gamma_in = _require_finite('input_decay', self.input_decay)
        gamma_out = _require_finite('other_loss_decay', self.other_loss_decay)
        power = _require_finite('input_power', self.input_power)

        if length <= 0:
            raise InvalidParameterError(f"half_cycle_length must be positive, got {length}")
        if omega0 <= 0:
            raise InvalidParameterError(f"carrier_angular_frequency must be positive, got {omega0}")
        if gamma_in <= 0:
            raise InvalidParameterError(f"input_decay must be positive, got {gamma_in}")
        if gamma_out < 0:
            raise InvalidParameterError(f"other_loss_decay must be non-negative, got {gamma_out}")
        if power < 0:
            raise InvalidParameterError(f"input_power must be non-negative, got {power}")

        # ----- NORMALISE: coupling defaults to omega_0 / L -----
        if self.optomech_coupling is None:
            object.__setattr__(self, 'optomech_coupling', omega0 / length)
        else:
            _require_finite('optomech_coupling', self.optomech_coupling)

        if not math.isfinite(self.finesse) or self.finesse <= 0:
            raise InvalidParameterError(f"derived finesse must be positive and finite, got {self.finesse}")

    @classmethod
    def from_finesse(cls, half_cycle_length: float, carrier_angular_frequency: float,
                     finesse: float, input_power: float, loss_ratio: float = 0.0,
                     optomech_coupling: Optional[float] = None) -> 'CavityParams':
        """Split gamma' = pi c / (2 L F) into input and other-loss rates by gamma_out/gamma_in."""
        if finesse <= 0 or loss_ratio < 0:
            raise InvalidParameterError("finesse must be positive and loss_ratio non-negative")
        total = math.pi * C_LIGHT / (2.0 * half_cycle_length * finesse)
        gamma_in = total / (1.0 + loss_ratio)
        return cls(half_cycle_length, carrier_angular_frequency, gamma_in,
                   total - gamma_in, input_power, optomech_coupling)

    @property
    def total_linear_decay(self) -> float:
        return self.input_decay + self.other_loss_decay

    @property
    def finesse(self) -> float:
        """Low-power finesse pi c / (2 L gamma')."""
        return math.pi * C_LIGHT / (2.0 * self.half_cycle_length * self.total_linear_decay)

    @property
    def input_photon_rate(self) -> float:
        """|a_in|^2 = P0 / (hbar omega_0)."""
        return self.input_power / (HBAR * self.carrier_angular_frequency)

    @property
    def photon_to_power(self) -> float:
        """Factor hbar omega_0 c / (2L) turning a photon number into intracavity power."""
        return HBAR * self.carrier_angular_frequency * C_LIGHT / (2.0 * self.half_cycle_length)

    @property
    def charging_time(self) -> float:
        """tau = 2 pi / gamma'."""
        return 2.0 * math.pi / self.total_linear_decay


@dataclass(frozen=True)
class ThermalMicroParams:
    """Crystal properties from which the photothermal rates follow."""
    thermal_resistance: float
    heat_capacity: float
    expansion: float
    absorption: float
    crystal_length: float

    def __post_init__(self):
        for name in ('thermal_resistance', 'heat_capacity', 'expansion', 'absorption', 'crystal_length'):
            value = _require_finite(name, getattr(self, name))
            if value <= 0:
                raise InvalidParameterError(f"{name} must be positive, got {value}")

    @property
    def relaxation_rate(self) -> float:
        return 1.0 / (self.thermal_resistance * self.heat_capacity)

    @property
    def absorption_coefficient(self) -> float:
        return (self.expansion * self.absorption * self.crystal_length ** 2 * C_LIGHT
                / (2.0 * self.heat_capacity))


@dataclass(frozen=True)
class KerrMediumParams:
    """
    Kerr medium inside the cavity.

    chi and beta are per-photon rates. The optional slopes make both linear in
    the intracavity photon number: chi(n) = chi + chi1 n, beta(n) = beta + beta1 n.
    """
    kerr_susceptibility: float = 0.0
    shg_loss: float = 0.0
    photothermal_relaxation: float = 1.0
    photothermal_absorption: float = 0.0
    kerr_slope: float = 0.0
    shg_slope: float = 0.0
    micro: Optional[ThermalMicroParams] = None

    def __post_init__(self):
        for name in ('kerr_susceptibility', 'shg_loss', 'photothermal_relaxation',
                     'photothermal_absorption', 'kerr_slope', 'shg_slope'):
            _require_finite(name, getattr(self, name))
        if self.shg_loss < 0:
            raise InvalidParameterError(f"shg_loss must be non-negative, got {self.shg_loss}")
        if self.shg_slope < 0:
            raise InvalidParameterError(f"shg_slope must be non-negative, got {self.shg_slope}")
        if self.photothermal_relaxation <= 0:
            raise InvalidParameterError(
                f"photothermal_relaxation must be positive, got {self.photothermal_relaxation}")

        if self.micro is not None:
            if not _close(self.micro.relaxation_rate, self.photothermal_relaxation, MICRO_MATCH_RTOL):
                raise InvalidParameterError("photothermal_relaxation does not match 1/(kC) from micro parameters")
            if not _close(self.micro.absorption_coefficient, self.photothermal_absorption, MICRO_MATCH_RTOL):
                raise InvalidParameterError("photothermal_absorption does not match alpha alpha' L'^2 c/(2C)")

    @classmethod
    def from_micro(cls, micro: ThermalMicroParams, kerr_susceptibility: float = 0.0,
                   shg_loss: float = 0.0) -> 'KerrMediumParams':
        return cls(kerr_susceptibility=kerr_susceptibility, shg_loss=shg_loss,
                   photothermal_relaxation=micro.relaxation_rate,
                   photothermal_absorption=micro.absorption_coefficient,
                   micro=micro)

    @property
    def has_power_slopes(self) -> bool:
        return self.kerr_slope != 0.0 or self.shg_slope != 0.0

    def kerr_shift(self, n: float) -> float:
        """Kerr detuning magnitude chi(n) n."""
        return (self.kerr_susceptibility + self.kerr_slope * n) * n

    def shg_decay(self, n: float) -> float:
        """SHG decay gamma_S = beta(n) n."""
        return (self.shg_loss + self.shg_slope * n) * n

    def differential_kerr(self, n: float) -> float:
        """d(chi(n) n)/dn, the coefficient seen by small fluctuations."""
        return self.kerr_susceptibility + 2.0 * self.kerr_slope * n

    def differential_shg(self, n: float) -> float:
        return self.shg_loss + 2.0 * self.shg_slope * n


@dataclass(frozen=True)
class MechanicalParams:
    """Suspended mirror: mass, resonance and velocity damping rate."""
    mass: float
    resonance: float
    damping: float = 0.0

    def __post_init__(self):
        mass = _require_finite('mass', self.mass)
        resonance = _require_finite('resonance', self.resonance)
        damping = _require_finite('damping', self.damping)
        if mass <= 0:
            raise InvalidParameterError(f"mass must be positive, got {mass}")
        if resonance < 0:
            raise InvalidParameterError(f"resonance must be non-negative, got {resonance}")
        if damping < 0:
            raise InvalidParameterError(f"damping must be non-negative, got {damping}")

    @classmethod
    def from_quality_factor(cls, mass: float, resonance: float, quality_factor: float) -> 'MechanicalParams':
        if quality_factor <= 0:
            raise InvalidParameterError(f"quality_factor must be positive, got {quality_factor}")
        return cls(mass, resonance, resonance / quality_factor)

    @property
    def quality_factor(self) -> float:
        """Q = Omega_m / Gamma_m (infinite without damping)."""
        if self.damping == 0:
            return math.inf
        return self.resonance / self.damping


@dataclass(frozen=True)
class DerivedRates:
    """Rates and powers of a cavity at a given intracavity photon number."""
    total_linear_decay: float
    effective_decay: float
    finesse: float
    resonant_power: float
    input_photon_rate: float

    def __post_init__(self):
        if self.effective_decay < self.total_linear_decay:
            raise InvalidParameterError("effective_decay must not be below total_linear_decay")
