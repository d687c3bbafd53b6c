"""
Self-consistent operating points of the Kerr cavity.

The field balance n [(gamma' + beta(n) n)^2 + (Delta' - chi(n) n)^2] = 2 gamma_in |a_in|^2
is a cubic in n for constant chi and beta and a quintic once either depends
linearly on n. Roots come from the companion matrix of the polynomial written
in the scaled variable y = n / n_s, n_s = 2 gamma_in |a_in|^2 / gamma'^2.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import Polynomial

from core_model import derive_rates, map_ordered
from kerr_params import (
    STABILITY_LABELS,
    CavityParams, InvalidParameterError, KerrMediumParams, KerrSpringError, StabilityType,
)

logger = logging.getLogger(__name__)

IMAG_TRUNCATION = 1e-8
MERGE_RTOL = 1e-6
RESIDUAL_RTOL = 1e-9
DRIFT_WARNING_FRACTION = 0.15
NEWTON_STEPS = 6


class NumericalFailureError(KerrSpringError):
    """Raised when a numerical method fails; carries the offending residuals."""

    def __init__(self, message: str, residuals: Sequence[float] = ()):
        super().__init__(message)
        self.residuals = tuple(residuals)


class InconsistentPowersError(InvalidParameterError):
    """Raised when measured powers imply an imaginary detuning."""


@dataclass(frozen=True)
class SteadyState:
    """One operating point of the cavity."""
    photon_number: float
    bare_detuning: float
    effective_detuning: float
    normalized_detuning: float
    effective_decay: float
    intracavity_power: float
    stability: StabilityType
    growth_rate: float = 0.0

    def __post_init__(self):
        if self.photon_number < 0:
            raise InvalidParameterError(f"photon_number must be non-negative, got {self.photon_number}")
        if self.stability not in STABILITY_LABELS:
            raise InvalidParameterError(f"stability must be one of: {', '.join(STABILITY_LABELS)}")

    @property
    def is_stable(self) -> bool:
        return self.stability == 'stable'


@dataclass(frozen=True)
class PowerCurve:
    """Steady states over a grid of bare normalized detunings xi0 = Delta'/gamma'."""
    detuning_grid: Tuple[float, ...]
    branches: Tuple[Tuple[SteadyState, ...], ...]
    resonant_power: float
    errors: Tuple[Tuple[float, str], ...] = field(default=())

    def __post_init__(self):
        if len(self.detuning_grid) != len(self.branches):
            raise InvalidParameterError("detuning_grid and branches must have the same length")

    def branch_counts(self) -> List[int]:
        return [len(states) for states in self.branches]

    def max_branch_count(self) -> int:
        return max(self.branch_counts(), default=0)

    def to_records(self) -> List[dict]:
        records = []
        for xi0, states in zip(self.detuning_grid, self.branches):
            for index, state in enumerate(states):
                records.append({
                    'xi0': xi0,
                    'branch_index': index,
                    'n_bar': state.photon_number,
                    'P_over_Pmax': state.intracavity_power / self.resonant_power,
                    'xi': state.normalized_detuning,
                    'stable': state.is_stable,
                })
        return records


@dataclass(frozen=True)
class DiscriminantResult:
    value: float
    amplification_wins: bool


def _balance_polynomial(cavity: CavityParams, medium: KerrMediumParams,
                        bare_detuning: float, n_scale: float) -> Polynomial:
    """y (u^2 + v^2) - 1 with u, v the decay and detuning divided by gamma'."""
    gamma_lin = cavity.total_linear_decay
    u = Polynomial([1.0,
                    medium.shg_loss * n_scale / gamma_lin,
                    medium.shg_slope * n_scale ** 2 / gamma_lin])
    v = Polynomial([bare_detuning / gamma_lin,
                    -medium.kerr_susceptibility * n_scale / gamma_lin,
                    -medium.kerr_slope * n_scale ** 2 / gamma_lin])
    return Polynomial([0.0, 1.0]) * (u * u + v * v) - 1.0


def _polish(poly: Polynomial, root: float) -> float:
    deriv = poly.deriv()
    best, best_residual = root, abs(poly(root))
    y = root
    for _ in range(NEWTON_STEPS):
        slope = deriv(y)
        if slope == 0:
            break
        y = y - poly(y) / slope
        residual = abs(poly(y))
        if residual < best_residual:
            best, best_residual = y, residual
        if best_residual == 0:
            break
    return best


def _merge_close(roots: List[float]) -> List[float]:
    merged: List[List[float]] = []
    for y in sorted(roots):
        if merged and abs(y - merged[-1][-1]) <= MERGE_RTOL * max(abs(y), abs(merged[-1][-1])):
            merged[-1].append(y)
        else:
            merged.append([y])
    return [sum(group) / len(group) for group in merged]


def stability_matrix(cavity: CavityParams, medium: KerrMediumParams,
                     n: float, bare_detuning: float) -> np.ndarray:
    """Drift matrix of (delta a, delta a*) linearised around photon number n."""
    gamma = cavity.total_linear_decay + medium.shg_decay(n)
    delta = bare_detuning - medium.kerr_shift(n)
    drive = math.sqrt(2.0 * cavity.input_decay * cavity.input_photon_rate)
    a_bar = drive / complex(gamma, -delta)
    kappa = complex(medium.differential_shg(n), medium.differential_kerr(n))
    return np.array([
        [complex(-gamma, delta) - kappa * n, -kappa * a_bar ** 2],
        [-kappa.conjugate() * a_bar.conjugate() ** 2, complex(-gamma, -delta) - kappa.conjugate() * n],
    ])


def balance_slope(cavity: CavityParams, medium: KerrMediumParams, n: float, bare_detuning: float) -> float:
    """
    d/dn of n[(gamma)^2 + (Delta)^2]; negative on the middle (unstable) branch.
    Equals the determinant of the stability matrix.
    """
    gamma = cavity.total_linear_decay + medium.shg_decay(n)
    delta = bare_detuning - medium.kerr_shift(n)
    return (gamma ** 2 + delta ** 2
            + 2.0 * n * (gamma * medium.differential_shg(n) - delta * medium.differential_kerr(n)))


def _make_state(cavity: CavityParams, medium: KerrMediumParams, n: float, bare_detuning: float) -> SteadyState:
    gamma = cavity.total_linear_decay + medium.shg_decay(n)
    delta = bare_detuning - medium.kerr_shift(n)
    eigenvalues = np.linalg.eigvals(stability_matrix(cavity, medium, n, bare_detuning))
    growth = float(np.max(eigenvalues.real))
    return SteadyState(
        photon_number=n,
        bare_detuning=bare_detuning,
        effective_detuning=delta,
        normalized_detuning=delta / gamma,
        effective_decay=gamma,
        intracavity_power=cavity.photon_to_power * n,
        stability='stable' if growth < 0 else 'unstable',
        growth_rate=growth,
    )


def solve_steady_states(cavity: CavityParams, medium: KerrMediumParams,
                        bare_detuning: float) -> List[SteadyState]:
    """
    All non-negative real operating points at bare detuning Delta' (rad/s),
    sorted by photon number and classified by linear stability.
    """
    if not math.isfinite(bare_detuning):
        raise InvalidParameterError(f"bare_detuning must be finite, got {bare_detuning}")

    drive = 2.0 * cavity.input_decay * cavity.input_photon_rate
    if drive == 0:
        return [_make_state(cavity, medium, 0.0, bare_detuning)]

    n_scale = drive / cavity.total_linear_decay ** 2
    poly = _balance_polynomial(cavity, medium, bare_detuning, n_scale)

    candidates = []
    for root in poly.roots():
        if abs(root.imag) > IMAG_TRUNCATION * abs(root):
            continue
        y = float(root.real)
        if y < 0:
            continue
        candidates.append(_polish(poly, y))

    roots = _merge_close(candidates)
    residuals = [abs(poly(y)) for y in roots]
    if not roots or max(residuals) > RESIDUAL_RTOL:
        raise NumericalFailureError(
            f"steady-state root finding failed at Delta'={bare_detuning:.6g} rad/s", residuals)

    return [_make_state(cavity, medium, y * n_scale, bare_detuning) for y in roots]


def steady_state_at(cavity: CavityParams, medium: KerrMediumParams, bare_detuning: float,
                    branch: str = 'lowest') -> SteadyState:
    """Pick one stable operating point: 'lowest' or 'highest' photon number."""
    if branch not in ('lowest', 'highest'):
        raise InvalidParameterError(f"branch must be 'lowest' or 'highest', got {branch!r}")
    stable = [s for s in solve_steady_states(cavity, medium, bare_detuning) if s.is_stable]
    if not stable:
        raise NumericalFailureError(f"no stable operating point at Delta'={bare_detuning:.6g} rad/s")
    return stable[0] if branch == 'lowest' else stable[-1]


def power_curve(cavity: CavityParams, medium: KerrMediumParams,
                xi0_grid: Sequence[float], jobs: int = 1) -> PowerCurve:
    """Steady states across the bare normalized detuning grid; failures are recorded, not raised."""
    grid = [float(x) for x in xi0_grid]
    if not all(math.isfinite(x) for x in grid):
        raise InvalidParameterError("detuning grid must be finite")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise InvalidParameterError("detuning grid must be sorted")

    gamma_lin = cavity.total_linear_decay

    def solve_point(xi0: float):
        try:
            return tuple(solve_steady_states(cavity, medium, xi0 * gamma_lin)), None
        except KerrSpringError as exc:
            logger.warning("steady state failed at xi0=%.6g: %s", xi0, exc)
            return (), str(exc)

    results = map_ordered(solve_point, grid, jobs)
    errors = tuple((xi0, message) for xi0, (_, message) in zip(grid, results) if message)
    return PowerCurve(
        detuning_grid=tuple(grid),
        branches=tuple(states for states, _ in results),
        resonant_power=derive_rates(cavity, medium, 0.0).resonant_power,
        errors=errors,
    )


def bistable_window(zeta: float) -> Optional[Tuple[float, float]]:
    """
    Bare detuning interval (xi0_low, xi0_high) with three operating points of the
    lossless cavity, or None below threshold. Fold points satisfy
    xi^4 + 2 xi^2 + 2 zeta xi + 1 = 0.
    """
    if zeta == 0:
        return None
    roots = Polynomial([1.0, 2.0 * zeta, 2.0, 0.0, 1.0]).roots()
    folds = sorted({float(r.real) for r in roots if abs(r.imag) <= IMAG_TRUNCATION * max(abs(r), 1.0)})
    if len(folds) < 2 or folds[-1] - folds[0] <= MERGE_RTOL * abs(folds[-1]):
        return None
    edges = [xi - zeta / (1.0 + xi * xi) for xi in (folds[0], folds[-1])]
    return min(edges), max(edges)


def reflected_power(cavity: CavityParams, medium: KerrMediumParams, state: SteadyState) -> float:
    """P_ref = [1 - 4 gamma_in (gamma - gamma_in) / (gamma^2 + Delta^2)] P0."""
    gamma = state.effective_decay
    delta = state.effective_detuning
    gamma_in = cavity.input_decay
    return (1.0 - 4.0 * gamma_in * (gamma - gamma_in) / (gamma ** 2 + delta ** 2)) * cavity.input_power


def loss_ratio_from_reflection(reflected_fraction: float, overcoupled: bool = False) -> float:
    """gamma_out / gamma_in from the on-resonance reflected fraction of a loss-free-SHG cavity."""
    if not 0 <= reflected_fraction <= 1:
        raise InvalidParameterError(f"reflected_fraction must lie in [0, 1], got {reflected_fraction}")
    s = math.sqrt(reflected_fraction)
    if overcoupled:
        if s == 1:
            raise InvalidParameterError("an over-coupled cavity cannot reflect everything on resonance")
        return (1.0 + s) / (1.0 - s)
    return (1.0 - s) / (1.0 + s)


def detuning_from_powers(p_trans: float, p_scan_max: float, p_pdh_max: float) -> float:
    """
    Normalized detuning from the transmitted power, corrected for the drop of the
    resonant power under lock: P_max = (1 - P_scan/P_PDH) P_trans + P_scan.
    """
    if p_trans <= 0 or p_scan_max <= 0 or p_pdh_max <= 0:
        raise InvalidParameterError("all powers must be positive")

    drift = p_scan_max / p_pdh_max
    if abs(drift - 1.0) > DRIFT_WARNING_FRACTION:
        logger.warning("P_scan_max/P_PDH_max = %.3f deviates from 1 by more than %.0f%%; "
                       "the linear drift model may not hold", drift, DRIFT_WARNING_FRACTION * 100)

    # negative exactly when P_trans exceeds the modelled resonant power
    radicand = p_scan_max * (1.0 / p_trans - 1.0 / p_pdh_max)
    if radicand < 0:
        raise InconsistentPowersError(
            f"P_trans={p_trans:.6g} W exceeds the modelled resonant power; radicand {radicand:.6g}")
    return math.sqrt(radicand)


def shg_discriminant(medium: KerrMediumParams, cavity: CavityParams, n_bar: float) -> DiscriminantResult:
    """D(n) = (chi^2 - 3 beta^2) n^2 - 4 gamma' beta n - gamma'^2."""
    if n_bar < 0:
        raise InvalidParameterError(f"n_bar must be non-negative, got {n_bar}")
    chi = medium.kerr_susceptibility
    beta = medium.shg_loss
    gamma_lin = cavity.total_linear_decay
    value = (chi ** 2 - 3.0 * beta ** 2) * n_bar ** 2 - 4.0 * gamma_lin * beta * n_bar - gamma_lin ** 2
    return DiscriminantResult(value=value, amplification_wins=beta < abs(chi) / math.sqrt(3.0))


def discriminant_root(medium: KerrMediumParams, cavity: CavityParams) -> Optional[float]:
    """Positive photon number where D(n) = 0, or None when SHG loss prevents it."""
    chi = medium.kerr_susceptibility
    beta = medium.shg_loss
    gamma_lin = cavity.total_linear_decay
    lead = chi ** 2 - 3.0 * beta ** 2
    if lead <= 0:
        return None
    sqrt_term = math.sqrt(16.0 * gamma_lin ** 2 * beta ** 2 + 4.0 * lead * gamma_lin ** 2)
    return (4.0 * gamma_lin * beta + sqrt_term) / (2.0 * lead)
