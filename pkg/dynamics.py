"""
Time-domain integration of the nonlinear cavity field for detuning scans.

    da/dt = [i Delta'(t) + i G x_th - i chi(n) n - gamma' - beta(n) n] a + sqrt(2 gamma_in) a_in
    dx_th/dt = -gamma_th x_th + d hbar G n            (photothermal, optional)

The drive uses the input amplitude a_in (real, |a_in|^2 = P0 / (hbar omega_0)); the
resonant amplitude of a linear cavity is a_max = sqrt(2 gamma_in) a_in / gamma'.
Fixed-step classical RK4 keeps runs reproducible.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Literal, Optional, Tuple

import numpy as np
from scipy.integrate import trapezoid

from core_model import derive_rates
from kerr_params import (
    HBAR, CavityParams, ConfigurationError, InvalidParameterError, KerrMediumParams, KerrSpringError,
)
from steady_state import NumericalFailureError, steady_state_at

logger = logging.getLogger(__name__)

ScanDirection = Literal['upward', 'downward']

# Runtime list for validation
SCAN_DIRECTIONS = ('upward', 'downward')

SCAN_SPEEDS = {'fast': 100.0, 'slow': 1e6}

MAX_STEP_FRACTION = 0.01
HYSTERESIS_FRACTION = 0.05
JUMP_WINDOW_TAUS = 10.0
JUMP_EDGE_FRACTION = 1e-2


class InstabilityError(NumericalFailureError):
    """Raised when the integrated state stops being finite."""

    def __init__(self, message: str, last_good_time: float):
        super().__init__(message)
        self.last_good_time = last_good_time


@dataclass(frozen=True)
class ScanConfig:
    """
    Linear detuning sweep from detuning_start to detuning_end (rad/s).
    'upward' means Delta' increases during the scan.
    """
    direction: ScanDirection
    detuning_start: float
    detuning_end: float
    scan_rate: float
    time_step: float
    include_photothermal: bool = False

    def __post_init__(self):
        if self.direction not in SCAN_DIRECTIONS:
            raise ConfigurationError(f"direction must be one of: {', '.join(SCAN_DIRECTIONS)}")
        for name in ('detuning_start', 'detuning_end', 'scan_rate', 'time_step'):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ConfigurationError(f"{name} must be a finite number, got {value!r}")
        if self.scan_rate <= 0:
            raise ConfigurationError(f"scan_rate must be positive, got {self.scan_rate}")
        if self.time_step <= 0:
            raise ConfigurationError(f"time_step must be positive, got {self.time_step}")
        rising = self.detuning_end > self.detuning_start
        if rising != (self.direction == 'upward'):
            raise ConfigurationError(
                f"an {self.direction} scan cannot run from {self.detuning_start:.6g} to {self.detuning_end:.6g} rad/s")

    @classmethod
    def for_cavity(cls, cavity: CavityParams, direction: ScanDirection, low: float, high: float,
                   speed: str = 'fast', scan_rate: Optional[float] = None,
                   include_photothermal: bool = False) -> 'ScanConfig':
        """Scan over [low, high] with the default rate for speed and the largest allowed step."""
        if direction not in SCAN_DIRECTIONS:
            raise ConfigurationError(f"direction must be one of: {', '.join(SCAN_DIRECTIONS)}")
        rate = default_scan_rate(cavity, high - low, speed) if scan_rate is None else scan_rate
        start, end = (low, high) if direction == 'upward' else (high, low)
        return cls(direction, start, end, rate, MAX_STEP_FRACTION * cavity.charging_time, include_photothermal)

    @property
    def window(self) -> Tuple[float, float]:
        return min(self.detuning_start, self.detuning_end), max(self.detuning_start, self.detuning_end)

    @property
    def duration(self) -> float:
        return abs(self.detuning_end - self.detuning_start) / self.scan_rate


@dataclass(frozen=True)
class Jump:
    """Abrupt power excursion: 50% crossing time, 10-90% rise time, size in watts."""
    time: float
    rise_time: float
    size: float
    direction: int


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    field: np.ndarray
    photon_number: np.ndarray
    transmitted_power: np.ndarray
    detunings: np.ndarray
    charging_time: float
    resonant_power: float
    direction: Optional[ScanDirection] = None
    discontinuities: Tuple[Jump, ...] = field(default=())

    def to_records(self) -> List[dict]:
        records = []
        for t, a, n, p in zip(self.times, self.field, self.photon_number, self.transmitted_power):
            record = {'t_s': float(t), 're_a': float(a.real), 'im_a': float(a.imag),
                      'n': float(n), 'P_trans_W': float(p)}
            if self.direction is not None:
                record['direction'] = self.direction
            records.append(record)
        return records


@dataclass(frozen=True, eq=False)
class HysteresisResult:
    up: Trajectory
    down: Trajectory
    hysteretic: bool
    loop_area: float
    max_difference: float


def default_scan_rate(cavity: CavityParams, window: float, speed: str = 'fast') -> float:
    """rad/s^2 covering the window in 100 charging times (fast) or 10^6 (slow)."""
    if speed not in SCAN_SPEEDS:
        raise ConfigurationError(f"speed must be one of: {', '.join(SCAN_SPEEDS)}")
    if window <= 0:
        raise ConfigurationError(f"scan window must be positive, got {window}")
    return window / (SCAN_SPEEDS[speed] * cavity.charging_time)


def scan_schedule(cfg: ScanConfig) -> Callable[[float], float]:
    sign = 1.0 if cfg.direction == 'upward' else -1.0
    start, rate = cfg.detuning_start, cfg.scan_rate

    def detuning(t: float) -> float:
        return start + sign * rate * t

    return detuning


def integrate_field(cavity: CavityParams, medium: KerrMediumParams,
                    schedule: Callable[[float], float], duration: float, time_step: float,
                    initial_field: complex = 0j, include_photothermal: bool = False,
                    sample_interval: Optional[float] = None,
                    jump_threshold: float = 0.1) -> Trajectory:
    """
    Integrate the field under the detuning schedule Delta'(t) for duration seconds.

    Samples are kept every sample_interval (default: every step). The step must
    resolve the cavity pole: time_step <= 0.01 * 2 pi / gamma'. Nonlinear loss
    shortens the charging time, so the step is also compared against the peak
    effective decay gamma' + beta(n) n reached during the run; a coarser step is
    logged as a warning.
    """
    tau = cavity.charging_time
    if time_step <= 0 or time_step > MAX_STEP_FRACTION * tau * (1.0 + 1e-12):
        raise ConfigurationError(
            f"time_step={time_step:.3g} s must be positive and at most {MAX_STEP_FRACTION} tau = "
            f"{MAX_STEP_FRACTION * tau:.3g} s")
    if not math.isfinite(duration) or duration <= 0:
        raise ConfigurationError(f"duration must be positive and finite, got {duration}")
    initial_field = complex(initial_field)
    if not (math.isfinite(initial_field.real) and math.isfinite(initial_field.imag)):
        raise InvalidParameterError("initial field must be finite")

    gamma_lin = cavity.total_linear_decay
    drive = math.sqrt(2.0 * cavity.input_decay * cavity.input_photon_rate)
    coupling = cavity.optomech_coupling
    chi, chi1 = medium.kerr_susceptibility, medium.kerr_slope
    beta, beta1 = medium.shg_loss, medium.shg_slope
    gamma_th = medium.photothermal_relaxation
    heating = medium.photothermal_absorption * HBAR * coupling if include_photothermal else 0.0

    def rhs(t: float, a: complex, x: float) -> Tuple[complex, float]:
        n = a.real * a.real + a.imag * a.imag
        detuning = schedule(t) + coupling * x - (chi + chi1 * n) * n
        decay = gamma_lin + (beta + beta1 * n) * n
        da = complex(-decay, detuning) * a + drive
        dx = heating * n - gamma_th * x if include_photothermal else 0.0
        return da, dx

    steps = int(math.ceil(duration / time_step - 1e-9))
    stride = 1 if sample_interval is None else max(1, int(round(sample_interval / time_step)))
    if stride * time_step > tau / 10.0:
        logger.warning("trajectory sampled every %.3g s, coarser than tau/10; jump detection is unreliable",
                       stride * time_step)

    a, x, t = initial_field, 0.0, 0.0
    times, fields, detunings = [t], [a], [schedule(t)]
    h = time_step
    n_peak = initial_field.real ** 2 + initial_field.imag ** 2
    for step in range(1, steps + 1):
        k1a, k1x = rhs(t, a, x)
        k2a, k2x = rhs(t + 0.5 * h, a + 0.5 * h * k1a, x + 0.5 * h * k1x)
        k3a, k3x = rhs(t + 0.5 * h, a + 0.5 * h * k2a, x + 0.5 * h * k2x)
        k4a, k4x = rhs(t + h, a + h * k3a, x + h * k3x)
        a_next = a + h / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
        x_next = x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        if not (math.isfinite(a_next.real) and math.isfinite(a_next.imag) and math.isfinite(x_next)):
            raise InstabilityError(f"state became non-finite after t={t:.6g} s", last_good_time=t)
        a, x, t = a_next, x_next, step * h
        n_peak = max(n_peak, a.real * a.real + a.imag * a.imag)
        if step % stride == 0 or step == steps:
            times.append(t)
            fields.append(a)
            detunings.append(schedule(t))

    gamma_peak = gamma_lin + (beta + beta1 * n_peak) * n_peak
    if gamma_peak > gamma_lin and h > MAX_STEP_FRACTION * 2.0 * math.pi / gamma_peak * (1.0 + 1e-12):
        logger.warning("time_step=%.3g s does not resolve the peak effective decay %.3g /s; "
                       "keep it below %.3g s", h, gamma_peak, MAX_STEP_FRACTION * 2.0 * math.pi / gamma_peak)

    field_arr = np.array(fields, dtype=complex)
    photon_number = (field_arr.real ** 2 + field_arr.imag ** 2)
    trajectory = Trajectory(
        times=np.array(times),
        field=field_arr,
        photon_number=photon_number,
        transmitted_power=cavity.photon_to_power * photon_number,
        detunings=np.array(detunings),
        charging_time=tau,
        resonant_power=derive_rates(cavity, medium, 0.0).resonant_power,
    )
    jumps = detect_jumps(trajectory, jump_threshold)
    object.__setattr__(trajectory, 'discontinuities', tuple(jumps))
    return trajectory


def steady_field(cavity: CavityParams, medium: KerrMediumParams, bare_detuning: float,
                 branch: str = 'lowest') -> complex:
    """Intracavity amplitude of a stable operating point, sqrt(2 gamma_in) a_in / (gamma - i Delta)."""
    state = steady_state_at(cavity, medium, bare_detuning, branch)
    drive = math.sqrt(2.0 * cavity.input_decay * cavity.input_photon_rate)
    return drive / complex(state.effective_decay, -state.effective_detuning)


def run_scan(cavity: CavityParams, medium: KerrMediumParams, cfg: ScanConfig,
             initial_field: Optional[complex] = None, sample_interval: Optional[float] = None) -> Trajectory:
    """
    Integrate one ScanConfig and label the trajectory with its direction.
    Without an initial field the scan starts on the lowest stable operating point.
    """
    if cfg.window[1] - cfg.window[0] < 2.0 * cavity.total_linear_decay:
        raise ConfigurationError("the scan must cover at least one full linewidth (2 gamma')")
    if initial_field is None:
        initial_field = steady_field(cavity, medium, cfg.detuning_start)
    logger.debug("%s scan over %.6g..%.6g rad/s in %.3g s", cfg.direction, *cfg.window, cfg.duration)
    trajectory = integrate_field(cavity, medium, scan_schedule(cfg), cfg.duration, cfg.time_step,
                                 initial_field, cfg.include_photothermal, sample_interval)
    object.__setattr__(trajectory, 'direction', cfg.direction)
    return trajectory


def _crossing_time(times: np.ndarray, power: np.ndarray, level: float, rising: bool) -> float:
    values = power if rising else -power
    target = level if rising else -level
    index = int(np.argmax(values >= target))
    if index == 0:
        return float(times[0])
    t0, t1 = times[index - 1], times[index]
    v0, v1 = values[index - 1], values[index]
    if v1 == v0:
        return float(t1)
    return float(t0 + (target - v0) * (t1 - t0) / (v1 - v0))


def detect_jumps(traj: Trajectory, threshold: float = 0.1) -> List[Jump]:
    """
    Abrupt monotone power excursions larger than threshold * Pmax.

    A jump starts where the power changes by at least threshold * Pmax per
    charging time; it extends while the slope keeps its sign and stays above 1%
    of the segment's peak slope, at most 10 tau on either side.
    """
    if not 0 < threshold < 1:
        raise InvalidParameterError(f"threshold must lie in (0, 1), got {threshold}")
    times = np.asarray(traj.times, dtype=float)
    power = np.asarray(traj.transmitted_power, dtype=float)
    if len(times) < 3:
        return []

    tau = traj.charging_time
    pmax = traj.resonant_power
    dt = np.diff(times)
    if np.max(dt) > tau / 10.0:
        logger.warning("trajectory is sampled coarser than tau/10; rise times are unreliable")
    slopes = np.diff(power) / dt
    seed_floor = threshold * pmax / tau
    claimed = np.zeros(len(slopes), dtype=bool)

    jumps: List[Jump] = []
    for index in np.argsort(-np.abs(slopes), kind='stable'):
        peak = slopes[index]
        if abs(peak) < seed_floor:
            break
        if claimed[index]:
            continue
        sign = 1.0 if peak > 0 else -1.0
        edge = JUMP_EDGE_FRACTION * abs(peak)
        t_lo = times[index] - JUMP_WINDOW_TAUS * tau
        t_hi = times[index + 1] + JUMP_WINDOW_TAUS * tau

        lo = index
        while lo > 0 and not claimed[lo - 1] and sign * slopes[lo - 1] >= edge and times[lo - 1] >= t_lo:
            lo -= 1
        hi = index
        while (hi < len(slopes) - 1 and not claimed[hi + 1] and sign * slopes[hi + 1] >= edge
               and times[hi + 2] <= t_hi):
            hi += 1
        claimed[lo:hi + 1] = True

        seg_t = times[lo:hi + 2]
        seg_p = power[lo:hi + 2]
        start, end = seg_p[0], seg_p[-1]
        size = end - start
        if abs(size) < threshold * pmax:
            continue
        rising = size > 0
        t10 = _crossing_time(seg_t, seg_p, start + 0.1 * size, rising)
        t90 = _crossing_time(seg_t, seg_p, start + 0.9 * size, rising)
        t50 = _crossing_time(seg_t, seg_p, start + 0.5 * size, rising)
        jumps.append(Jump(time=t50, rise_time=t90 - t10, size=float(size), direction=1 if rising else -1))

    return sorted(jumps, key=lambda jump: jump.time)


def _power_on_grid(traj: Trajectory, grid: np.ndarray) -> np.ndarray:
    detunings = np.asarray(traj.detunings)
    power = np.asarray(traj.transmitted_power)
    if detunings[-1] < detunings[0]:
        detunings, power = detunings[::-1], power[::-1]
    return np.interp(grid, detunings, power)


def hysteresis_scan(cavity: CavityParams, medium: KerrMediumParams,
                    cfg_up: ScanConfig, cfg_down: ScanConfig,
                    grid_points: int = 2001, sample_interval: Optional[float] = None) -> HysteresisResult:
    """
    Run an upward and a downward scan over the same window and compare them.
    The configs are oriented by their direction labels, so their order does not matter.
    """
    configs = {cfg_up.direction: cfg_up, cfg_down.direction: cfg_down}
    if set(configs) != set(SCAN_DIRECTIONS):
        raise ConfigurationError("hysteresis needs one upward and one downward scan")
    up_cfg, down_cfg = configs['upward'], configs['downward']
    if not np.allclose(up_cfg.window, down_cfg.window, rtol=1e-12, atol=0.0):
        raise ConfigurationError("upward and downward scans must cover the same window")

    up = run_scan(cavity, medium, up_cfg, sample_interval=sample_interval)
    down = run_scan(cavity, medium, down_cfg, sample_interval=sample_interval)

    grid = np.linspace(*up_cfg.window, grid_points)
    difference = np.abs(_power_on_grid(up, grid) - _power_on_grid(down, grid))
    max_difference = float(np.max(difference))
    pmax = up.resonant_power
    hysteretic = max_difference > HYSTERESIS_FRACTION * pmax
    logger.info("scan difference %.3g of Pmax (hysteretic=%s)", max_difference / pmax, hysteretic)
    return HysteresisResult(
        up=up,
        down=down,
        hysteretic=hysteretic,
        loop_area=float(trapezoid(difference, grid)),
        max_difference=max_difference,
    )
