"""
Two-photon quadrature calculus for a dual-recycled Michelson with a Kerr medium
in the arms: rotation, ponderomotive and squeeze matrices, the Kerr
decomposition, input-output coefficients and the Michelson optical spring.

Quadrature vectors are (amplitude, phase). The sideband chain is
    b = -r_s a + t_s f,  e = r_s f + t_s a,  c = R(phi) e,  f = R(phi) d,
    d = T [K(kappa) c e^{2i beta} + alpha h e^{i beta}],   T = R(Phi) K(-2 Phi),
with h = (0, h) the strain signal.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from kerr_params import C_LIGHT, HBAR, DomainError, InvalidParameterError
from response import DivergentSpringError, kerr_spring_constant

logger = logging.getLogger(__name__)

SRM_RTOL = 1e-12


def rotation(phi: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, -s], [s, c]])


def ponderomotive(kappa: float) -> np.ndarray:
    return np.array([[1.0, 0.0], [-kappa, 1.0]])


def squeeze(s: float, eta: float) -> np.ndarray:
    """S(s, eta) = R(eta) diag(s, 1/s) R(-eta)."""
    if not s > 0:
        raise InvalidParameterError(f"squeeze factor must be positive, got {s}")
    return rotation(eta) @ np.diag([s, 1.0 / s]) @ rotation(-eta)


def _arccot(x: float) -> float:
    """
    arccot on the principal branch (-pi/2, pi/2]. For Phi < 0 only this branch
    makes R(Phi) S R(theta) reproduce the Kerr operator; the (0, pi) branch flips
    the squeeze axis and leaves an O(1) residual.
    """
    return math.atan(1.0 / x)


@dataclass(frozen=True, eq=False)
class KerrDecomposition:
    """R(Phi) K(-2 Phi) = R(Phi) S(s, eta) R(theta), with its numerical residual."""
    squeeze_factor: float
    squeeze_angle: float
    rotation_angle: float
    factors: tuple
    residual: float


def kerr_decomposition(kerr_phase: float) -> KerrDecomposition:
    """
    Factor the Kerr arm operator into rotation, squeeze and rotation
    (s = exp(asinh Phi), eta = -arccot(Phi)/2, theta = arctan Phi). Defined for Phi < 0.
    """
    if not kerr_phase < 0:
        raise DomainError(f"the Kerr decomposition is defined for Phi < 0, got {kerr_phase}")
    s = math.exp(math.asinh(kerr_phase))
    eta = -_arccot(kerr_phase) / 2.0
    theta = math.atan(kerr_phase)
    factors = (rotation(kerr_phase), squeeze(s, eta), rotation(theta))
    lhs = rotation(kerr_phase) @ ponderomotive(-2.0 * kerr_phase)
    rhs = factors[0] @ factors[1] @ factors[2]
    return KerrDecomposition(s, eta, theta, factors, float(np.max(np.abs(lhs - rhs))))


@dataclass(frozen=True)
class OpaParameters:
    squeeze_factor: float
    squeeze_angle: float
    detune_phase: float


def opa_map(kerr_phase: float, detune_phase: float) -> OpaParameters:
    """OPA settings equivalent to the Kerr scheme: s, eta and the shifted detune phase."""
    decomposition = kerr_decomposition(kerr_phase)
    return OpaParameters(decomposition.squeeze_factor, decomposition.squeeze_angle, detune_phase + kerr_phase)


@dataclass(frozen=True)
class MichelsonParams:
    """Lossless signal-recycling mirror, arms of length L_arm carrying P_arm."""
    srm_reflectivity: float
    srm_transmissivity: float
    arm_length: float
    arm_power: float
    detune_phase: float
    kerr_phase: float
    mass: float
    carrier_angular_frequency: float

    def __post_init__(self):
        for name in ('srm_reflectivity', 'srm_transmissivity', 'arm_length', 'arm_power',
                     'detune_phase', 'kerr_phase', 'mass', 'carrier_angular_frequency'):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
                raise InvalidParameterError(f"{name} must be a finite number, got {value!r}")
        if not 0 <= self.srm_reflectivity <= 1 or not 0 <= self.srm_transmissivity <= 1:
            raise InvalidParameterError("SRM amplitude reflectivity and transmissivity must lie in [0, 1]")
        if abs(self.srm_reflectivity ** 2 + self.srm_transmissivity ** 2 - 1.0) > SRM_RTOL:
            raise InvalidParameterError("a lossless SRM needs r_s^2 + t_s^2 = 1")
        for name in ('arm_length', 'mass', 'carrier_angular_frequency'):
            if getattr(self, name) <= 0:
                raise InvalidParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if self.arm_power < 0:
            raise InvalidParameterError(f"arm_power must be non-negative, got {self.arm_power}")

    @classmethod
    def from_reflectivity(cls, srm_reflectivity: float, **kwargs) -> 'MichelsonParams':
        transmissivity = math.sqrt(max(0.0, 1.0 - srm_reflectivity ** 2))
        return cls(srm_reflectivity=srm_reflectivity, srm_transmissivity=transmissivity, **kwargs)

    @classmethod
    def from_susceptibility(cls, chi: float, srm_reflectivity: float, arm_length: float, arm_power: float,
                            detune_phase: float, mass: float, carrier_angular_frequency: float) -> 'MichelsonParams':
        """Phi = -4 L_arm^2 chi P_arm / (hbar omega_0 c^2)."""
        kerr_phase = -4.0 * arm_length ** 2 * chi * arm_power / (HBAR * carrier_angular_frequency * C_LIGHT ** 2)
        return cls.from_reflectivity(srm_reflectivity, arm_length=arm_length, arm_power=arm_power,
                                     detune_phase=detune_phase, kerr_phase=kerr_phase, mass=mass,
                                     carrier_angular_frequency=carrier_angular_frequency)

    @property
    def signal_strength(self) -> float:
        """alpha = sqrt(4 omega_0 P_arm L_arm^2 / (hbar c^2))."""
        return math.sqrt(4.0 * self.carrier_angular_frequency * self.arm_power * self.arm_length ** 2
                         / (HBAR * C_LIGHT ** 2))

    def coupling(self, omega: float) -> float:
        """kappa = 8 omega_0 P_arm / (m c^2 Omega^2)."""
        if omega == 0:
            raise DomainError("the radiation-pressure coupling diverges at Omega = 0; "
                              "use michelson_spring_constant for the static spring")
        return 8.0 * self.carrier_angular_frequency * self.arm_power / (self.mass * C_LIGHT ** 2 * omega ** 2)

    def phase_delay(self, omega: float) -> float:
        return self.arm_length * omega / C_LIGHT

    def kerr_operator(self) -> np.ndarray:
        return rotation(self.kerr_phase) @ ponderomotive(-2.0 * self.kerr_phase)


@dataclass(frozen=True, eq=False)
class TwoPhotonResponse:
    """b = (A a e^{2i beta} + H h e^{i beta}) / M at one sideband frequency."""
    sideband: float
    phase_delay: float
    M: complex
    A: np.ndarray
    H: np.ndarray
    coupling: float
    signal_strength: float

    @property
    def noise_transfer(self) -> np.ndarray:
        return self.A * np.exp(2j * self.phase_delay) / self.M

    @property
    def signal_transfer(self) -> np.ndarray:
        return self.H * np.exp(1j * self.phase_delay) / self.M

    def to_dict(self) -> dict:
        def pair(z):
            return [float(z.real), float(z.imag)]
        return {
            'omega': self.sideband,
            'M_re': float(self.M.real), 'M_im': float(self.M.imag),
            'A': [[pair(z) for z in row] for row in self.A],
            'H': [pair(z) for z in self.H[:, 1]],
        }


def interferometer_response(params: MichelsonParams, omega: float) -> TwoPhotonResponse:
    """Closed-form M, A and H at sideband frequency Omega > 0."""
    if not omega > 0:
        raise DomainError("interferometer_response needs Omega > 0; use michelson_spring_constant at DC")
    rs, ts = params.srm_reflectivity, params.srm_transmissivity
    phi, kerr = params.detune_phase, params.kerr_phase
    beta = params.phase_delay(omega)
    kappa = params.coupling(omega)
    alpha = params.signal_strength

    psi = 2.0 * phi + kerr
    kk = kappa - 2.0 * kerr
    e2 = np.exp(2j * beta)
    rs2 = rs * rs
    ts2 = ts * ts

    M = 1.0 + rs2 * e2 * e2 - rs * e2 * (2.0 * math.cos(psi) + kk * math.sin(psi))
    a11 = ((1.0 + rs2) * math.cos(psi) + 0.5 * kk * (ts2 * math.sin(kerr) + (1.0 + rs2) * math.sin(psi))
           - 2.0 * rs * math.cos(2.0 * beta))
    a12 = -ts2 * (kk * math.sin(phi) * math.sin(phi + kerr) + math.sin(psi))
    a21 = -ts2 * (kk * math.cos(phi) * math.cos(phi + kerr) - math.sin(psi))
    a22 = ((1.0 + rs2) * math.cos(psi) + 0.5 * kk * (-ts2 * math.sin(kerr) + (1.0 + rs2) * math.sin(psi))
           - 2.0 * rs * math.cos(2.0 * beta))
    h12 = -ts * alpha * (rs * e2 * math.sin(phi) + math.sin(phi + kerr))
    h22 = ts * alpha * (-rs * e2 * math.cos(phi) + math.cos(phi + kerr))

    return TwoPhotonResponse(
        sideband=omega,
        phase_delay=beta,
        M=complex(M),
        A=np.array([[a11, a12], [a21, a22]], dtype=complex),
        H=np.array([[0.0, h12], [0.0, h22]], dtype=complex),
        coupling=kappa,
        signal_strength=alpha,
    )


@dataclass(frozen=True, eq=False)
class ChainResponse:
    """Numerically assembled b = noise_transfer a + signal_transfer h."""
    noise_transfer: np.ndarray
    signal_transfer: np.ndarray


def assemble_chain(params: MichelsonParams, omega: float, arm_operator: Optional[np.ndarray] = None,
                   coupling: Optional[float] = None) -> ChainResponse:
    """
    Solve the five chained relations for an arbitrary 2x2 arm operator
    (default: the Kerr operator R(Phi) K(-2 Phi)). coupling overrides kappa(Omega).
    """
    if not omega > 0:
        raise DomainError("assemble_chain needs Omega > 0")
    rs, ts = params.srm_reflectivity, params.srm_transmissivity
    beta = params.phase_delay(omega)
    kappa = params.coupling(omega) if coupling is None else coupling
    arm = params.kerr_operator() if arm_operator is None else np.asarray(arm_operator, dtype=float)
    detune = rotation(params.detune_phase)

    round_trip = detune @ arm @ ponderomotive(kappa) @ detune
    z = rs * np.exp(2j * beta)
    lhs = np.eye(2) - z * round_trip
    drive_noise = ts * np.exp(2j * beta) * round_trip
    drive_signal = (detune @ arm) * params.signal_strength * np.exp(1j * beta)
    drive_signal = drive_signal @ np.diag([0.0, 1.0])

    f_noise = np.linalg.solve(lhs, drive_noise)
    f_signal = np.linalg.solve(lhs, drive_signal)
    return ChainResponse(
        noise_transfer=-rs * np.eye(2) + ts * f_noise,
        signal_transfer=ts * f_signal,
    )


def opa_response(params: MichelsonParams, squeeze_factor: float, squeeze_angle: float,
                 opa_detune_phase: float, omega: float) -> ChainResponse:
    """Chain response with the OPA arm operator R(phi_opa - phi) S(s, eta) R(phi_opa - phi)."""
    shift = rotation(opa_detune_phase - params.detune_phase)
    arm = shift @ squeeze(squeeze_factor, squeeze_angle) @ shift
    return assemble_chain(params, omega, arm_operator=arm)


@dataclass(frozen=True)
class MichelsonSpring:
    exact: float
    approximate: float


def michelson_spring_constant(params: MichelsonParams) -> MichelsonSpring:
    """
    k_opt = 8 omega_0 P_arm / c^2 * sin(psi) / (r_s + 1/r_s - 2 cos psi + 2 Phi sin psi), psi = 2 phi + Phi,
    and its small-parameter cavity form with gamma = t_s^2 c / (4 L_arm),
    Delta_K = Phi c / (2 L_arm) and Delta = phi c / L_arm + Delta_K.
    """
    rs = params.srm_reflectivity
    if not rs > 0:
        raise InvalidParameterError("the Michelson spring needs r_s > 0")
    psi = 2.0 * params.detune_phase + params.kerr_phase
    denominator = rs + 1.0 / rs - 2.0 * math.cos(psi) + 2.0 * params.kerr_phase * math.sin(psi)
    if denominator == 0:
        raise DivergentSpringError("Michelson spring denominator vanishes", [denominator])
    omega0 = params.carrier_angular_frequency
    exact = 8.0 * omega0 * params.arm_power / C_LIGHT ** 2 * math.sin(psi) / denominator

    length = params.arm_length
    gamma = params.srm_transmissivity ** 2 * C_LIGHT / (4.0 * length)
    delta_k = params.kerr_phase * C_LIGHT / (2.0 * length)
    delta = params.detune_phase * C_LIGHT / length + delta_k
    if gamma > 0:
        approximate = float(kerr_spring_constant(omega0, params.arm_power, length, gamma,
                                                 delta / gamma, delta_k / gamma).real)
    else:
        approximate = math.nan
    return MichelsonSpring(exact=exact, approximate=approximate)


def _static_denominator(params: MichelsonParams, omega: float) -> float:
    rs = params.srm_reflectivity
    psi = 2.0 * params.detune_phase + params.kerr_phase
    kk = params.coupling(omega) - 2.0 * params.kerr_phase
    return 1.0 + rs * rs - rs * (2.0 * math.cos(psi) + kk * math.sin(psi))


def optical_spring_resonance(params: MichelsonParams) -> float:
    """Omega_opt solving M = 0 at beta = 0 (bracketed root search)."""
    spring = michelson_spring_constant(params).exact
    if spring <= 0:
        raise DomainError("no optical spring resonance: the static spring is not restoring")
    estimate = math.sqrt(spring / params.mass)
    lo, hi = estimate / 10.0, estimate * 10.0
    return brentq(lambda w: _static_denominator(params, w), lo, hi, xtol=1e-15 * estimate, rtol=1e-14)


def spring_sweep(params: MichelsonParams, detune_phases: Sequence[float]) -> List[dict]:
    rows = []
    for phi in detune_phases:
        swept = MichelsonParams(params.srm_reflectivity, params.srm_transmissivity, params.arm_length,
                                params.arm_power, float(phi), params.kerr_phase, params.mass,
                                params.carrier_angular_frequency)
        rows.append({'phi_rad': float(phi), 'Phi_rad': params.kerr_phase,
                     'k_opt_N_per_m': michelson_spring_constant(swept).exact})
    return rows
