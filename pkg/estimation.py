"""
Parameter estimation for Kerr-enhanced optical springs.

The lossless model
    k_opt(xi) = 16/(3 sqrt 3) k_opt_0 / (1 + xi^2) * xi / (1 + xi^2 + 2 zeta xi / (1 + xi^2))
is fitted to spring constants measured against the normalised detuning; the
fitted Kerr gains at several input powers extrapolate to the critical power.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import least_squares, minimize_scalar

from core_model import amplification_ratio, map_ordered, threshold_compare
from kerr_params import ZETA_0, InvalidParameterError, KerrSpringError
from response import DivergentSpringError
from steady_state import NumericalFailureError

logger = logging.getLogger(__name__)

MODEL_NORMALISATION = 16.0 / (3.0 * math.sqrt(3.0))
OPTIMAL_XI = 1.0 / math.sqrt(3.0)
PDH_LINEARITY_XI = 0.3
REQUIRED_SPAN = (0.4, 1.5)
FIT_STARTS = (0.0, ZETA_0 / 2.0, 0.9 * ZETA_0)
POLE_PENALTY = 1e6
POLE_FLOOR = 1e-12
FIT_XTOL = 1e-10

PHOTOTHERMAL_BAND = (2.0 * math.pi * 100.0, 2.0 * math.pi * 2000.0)
GAIN_BAND = (2.0 * math.pi * 6000.0, 2.0 * math.pi * 7000.0)


class FitFailureError(NumericalFailureError):
    """Raised when no start of a fit converges; carries per-start diagnostics."""

    def __init__(self, message: str, diagnostics: Sequence[dict] = ()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)


class InsufficientDataError(KerrSpringError, ValueError):
    """Raised when a dataset is too small or too narrow for an estimate."""


class InsufficientBandError(InsufficientDataError):
    """Raised when a fit band spans less than half a decade."""


class NoDivergenceError(KerrSpringError):
    """Raised when the Kerr gain does not grow towards threshold with input power."""


def _model_parts(xi: np.ndarray, zeta: float) -> Tuple[np.ndarray, np.ndarray]:
    lorentz = 1.0 + xi * xi
    denominator = lorentz + 2.0 * zeta * xi / lorentz
    return lorentz, denominator


def model_k_opt(xi, zeta: float, k_opt_0: float):
    """Lossless spring constant against normalised detuning (scalar or array)."""
    xi_arr = np.asarray(xi, dtype=float)
    lorentz, denominator = _model_parts(xi_arr, zeta)
    if np.any(np.abs(denominator) < POLE_FLOOR):
        raise DivergentSpringError(f"spring model has a pole for zeta={zeta:.6g} on the requested detunings")
    values = MODEL_NORMALISATION * k_opt_0 / lorentz * xi_arr / denominator
    return float(values) if xi_arr.ndim == 0 else values


def optimal_detuning(zeta: float) -> float:
    """Detuning maximising the lossless spring constant (golden-section search)."""
    if threshold_compare(zeta) >= 0:
        raise InvalidParameterError(f"zeta={zeta:.6g} is not below the multistability threshold")
    result = minimize_scalar(lambda x: -model_k_opt(x, zeta, 1.0), bracket=(0.1, OPTIMAL_XI, 2.0),
                             method='golden', tol=1e-10)
    return float(result.x)


@dataclass(frozen=True)
class SpringDataset:
    """Measured (or synthetic) spring constants at normalised detunings."""
    xi: Tuple[float, ...]
    k_opt: Tuple[float, ...]
    sigma_k: Tuple[float, ...]
    input_power: Optional[float] = None
    temperature_label: str = ''

    def __post_init__(self):
        # ----- NORMALISE: store tuples of floats, strip the label -----
        for name in ('xi', 'k_opt', 'sigma_k'):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        object.__setattr__(self, 'temperature_label', str(self.temperature_label).strip())

        # ----- VALIDATION -----
        if not (len(self.xi) == len(self.k_opt) == len(self.sigma_k)):
            raise InvalidParameterError("xi, k_opt and sigma_k must have the same length")
        values = self.xi + self.k_opt + self.sigma_k
        if not all(math.isfinite(v) for v in values):
            raise InvalidParameterError("dataset values must be finite")
        if any(s <= 0 for s in self.sigma_k):
            raise InvalidParameterError("sigma_k must be positive")
        if any(x <= 0 for x in self.xi):
            raise InvalidParameterError("xi must be positive")
        if self.input_power is not None and not self.input_power > 0:
            raise InvalidParameterError(f"input_power must be positive, got {self.input_power}")

        low = sum(1 for x in self.xi if x < PDH_LINEARITY_XI)
        if low:
            logger.warning("%d points below xi=%.1f where the PDH signal is not linear", low, PDH_LINEARITY_XI)

    def __len__(self) -> int:
        return len(self.xi)

    @property
    def low_linearity(self) -> Tuple[bool, ...]:
        return tuple(x < PDH_LINEARITY_XI for x in self.xi)

    def arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.array(self.xi), np.array(self.k_opt), np.array(self.sigma_k)

    def subset(self, indices: Sequence[int]) -> 'SpringDataset':
        return SpringDataset(tuple(self.xi[i] for i in indices), tuple(self.k_opt[i] for i in indices),
                             tuple(self.sigma_k[i] for i in indices), self.input_power, self.temperature_label)

    def to_records(self) -> List[dict]:
        return [
            {'xi': x, 'k_opt_N_per_m': k, 'sigma_k': s, 'P0_W': self.input_power, 'temp_label': self.temperature_label}
            for x, k, s in zip(self.xi, self.k_opt, self.sigma_k)
        ]

    @classmethod
    def from_records(cls, records: Sequence[dict]) -> 'SpringDataset':
        if not records:
            raise InsufficientDataError("dataset has no points")
        powers = {r.get('P0_W') for r in records}
        labels = {r.get('temp_label', '') or '' for r in records}
        if len(powers) > 1 or len(labels) > 1:
            raise InvalidParameterError("a dataset must have a single input power and temperature label")
        try:
            xi = [float(r['xi']) for r in records]
            k = [float(r['k_opt_N_per_m']) for r in records]
            sigma = [float(r['sigma_k']) for r in records]
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidParameterError(f"malformed dataset record: {exc}") from exc
        power = powers.pop()
        return cls(tuple(xi), tuple(k), tuple(sigma),
                   None if power in (None, '') else float(power), labels.pop())


@dataclass(frozen=True)
class FitResult:
    zeta: float
    zeta_err: float
    k_opt_0: float
    k_opt_0_err: float
    covariance: Tuple[Tuple[float, float], Tuple[float, float]] = ((0.0, 0.0), (0.0, 0.0))
    chi2_reduced: float = 0.0
    unphysical: bool = False
    input_power: Optional[float] = None
    temperature_label: str = ''
    bootstrap_samples: int = 0

    @property
    def amplification(self) -> float:
        if self.unphysical:
            return math.inf
        return amplification_ratio(self.zeta)

    @property
    def amplification_err(self) -> float:
        """First-order propagation of zeta_err through A = 1/(1 - zeta/zeta_0)."""
        if self.unphysical:
            return math.inf
        return abs(1.0 / ZETA_0) / (1.0 - self.zeta / ZETA_0) ** 2 * self.zeta_err

    def to_dict(self) -> Dict[str, object]:
        return {
            'zeta': self.zeta, 'zeta_err': self.zeta_err,
            'k_opt_0': self.k_opt_0, 'k_opt_0_err': self.k_opt_0_err,
            'A': self.amplification, 'A_err': self.amplification_err,
            'chi2red': self.chi2_reduced,
            'covariance': [list(row) for row in self.covariance],
            'unphysical': self.unphysical,
            'P0_W': self.input_power, 'temp_label': self.temperature_label,
        }


def _weighted_residuals(params, xi, k, sigma):
    zeta, k0 = params
    lorentz, denominator = _model_parts(xi, zeta)
    with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
        model = MODEL_NORMALISATION * k0 / lorentz * xi / denominator
        residuals = (model - k) / sigma
    bad = ~np.isfinite(residuals) | (np.abs(denominator) < POLE_FLOOR)
    residuals[bad] = POLE_PENALTY
    return residuals


def _weighted_jacobian(params, xi, k, sigma):
    zeta, k0 = params
    lorentz, denominator = _model_parts(xi, zeta)
    with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
        shape = MODEL_NORMALISATION / lorentz * xi / denominator
        d_zeta = -k0 * shape * (2.0 * xi / lorentz) / denominator
        jac = np.column_stack([d_zeta / sigma, shape / sigma])
    jac[~np.isfinite(jac)] = 0.0
    return jac


def _linear_k0(xi, k, sigma, zeta) -> float:
    """Weighted least-squares k_opt_0 for a fixed zeta."""
    lorentz, denominator = _model_parts(xi, zeta)
    with np.errstate(divide='ignore', invalid='ignore'):
        shape = MODEL_NORMALISATION / lorentz * xi / denominator
    w = 1.0 / sigma ** 2
    if not np.all(np.isfinite(shape)):
        return float(np.sum(w * k) / np.sum(w)) or 1.0
    return float(np.sum(w * shape * k) / np.sum(w * shape * shape))


def _fit_arrays(xi, k, sigma):
    """Best (zeta, k_opt_0) over the multi-start set; raises FitFailureError."""
    diagnostics = []
    best = None
    for start in FIT_STARTS:
        x0 = np.array([start, _linear_k0(xi, k, sigma, start)])
        try:
            result = least_squares(_weighted_residuals, x0, jac=_weighted_jacobian, args=(xi, k, sigma),
                                   method='lm', xtol=FIT_XTOL, ftol=1e-14, gtol=1e-14, x_scale='jac')
        except (ValueError, np.linalg.LinAlgError) as exc:
            diagnostics.append({'start_zeta': start, 'status': None, 'message': str(exc)})
            continue
        diagnostics.append({'start_zeta': start, 'status': int(result.status), 'message': result.message,
                            'cost': float(result.cost), 'zeta': float(result.x[0]), 'k_opt_0': float(result.x[1])})
        if result.status <= 0 or not np.all(np.isfinite(result.x)):
            continue
        if np.any(_weighted_residuals(result.x, xi, k, sigma) == POLE_PENALTY):
            continue
        if best is None or result.cost < best.cost:
            best = result
    if best is None:
        raise FitFailureError("spring fit did not converge from any start", diagnostics)
    logger.debug("fit starts: %s", diagnostics)
    return best


def fit_spring(dataset: SpringDataset, bootstrap: int = 0, seed=None) -> FitResult:
    """
    Weighted least-squares fit of (zeta, k_opt_0) with Levenberg-Marquardt
    from several starts. Errors come from the Gauss-Newton curvature at the
    optimum, or from bootstrap resampling when bootstrap > 0.
    """
    if len(dataset) < 4:
        raise InsufficientDataError(f"a spring fit needs at least 4 points, got {len(dataset)}")
    if min(dataset.xi) > REQUIRED_SPAN[0] or max(dataset.xi) < REQUIRED_SPAN[1]:
        raise InsufficientDataError(
            f"detunings must span at least [{REQUIRED_SPAN[0]}, {REQUIRED_SPAN[1]}], "
            f"got [{min(dataset.xi):.3g}, {max(dataset.xi):.3g}]")

    xi, k, sigma = dataset.arrays()
    best = _fit_arrays(xi, k, sigma)
    zeta, k0 = (float(v) for v in best.x)

    jac = _weighted_jacobian(best.x, xi, k, sigma)
    try:
        covariance = np.linalg.inv(jac.T @ jac)
    except np.linalg.LinAlgError:
        logger.warning("singular normal matrix; using the pseudo-inverse for the covariance")
        covariance = np.linalg.pinv(jac.T @ jac)
    zeta_err, k0_err = (float(math.sqrt(max(v, 0.0))) for v in np.diag(covariance))
    dof = max(len(xi) - 2, 1)
    chi2_reduced = float(2.0 * best.cost / dof)

    samples = 0
    if bootstrap > 0:
        rng = np.random.default_rng(seed)
        estimates = []
        for _ in range(bootstrap):
            idx = rng.integers(0, len(xi), len(xi))
            if len(set(idx.tolist())) < 3:
                continue
            try:
                estimates.append(_fit_arrays(xi[idx], k[idx], sigma[idx]).x)
            except FitFailureError:
                continue
        samples = len(estimates)
        if samples >= 2:
            spread = np.std(np.array(estimates), axis=0, ddof=1)
            zeta_err, k0_err = float(spread[0]), float(spread[1])
        else:
            logger.warning("bootstrap produced %d usable resamples; keeping curvature errors", samples)

    unphysical = threshold_compare(zeta) >= 0
    if unphysical:
        logger.warning("fitted zeta=%.6g is at or beyond the multistability threshold %.6g", zeta, ZETA_0)

    return FitResult(
        zeta=zeta, zeta_err=zeta_err, k_opt_0=k0, k_opt_0_err=k0_err,
        covariance=tuple(tuple(float(v) for v in row) for row in covariance),
        chi2_reduced=chi2_reduced, unphysical=unphysical,
        input_power=dataset.input_power, temperature_label=dataset.temperature_label,
        bootstrap_samples=samples,
    )


def synthesize_dataset(zeta: float, k_opt_0: float, noise: float = 0.0, seed=None,
                       points: int = 12, xi_range: Tuple[float, float] = (0.35, 2.0),
                       input_power: Optional[float] = None, temperature_label: str = '',
                       sigma_fraction: Optional[float] = None) -> SpringDataset:
    """
    Points from model_k_opt with multiplicative Gaussian noise, deterministic for a fixed seed.
    Error bars are sigma_fraction * |model| (default: the noise level, or 1% without noise).
    """
    if not 0 <= noise <= 0.5:
        raise InvalidParameterError(f"noise must lie in [0, 0.5], got {noise}")
    if points < 1:
        raise InvalidParameterError(f"points must be positive, got {points}")
    xi = np.linspace(xi_range[0], xi_range[1], points)
    model = np.asarray(model_k_opt(xi, zeta, k_opt_0))
    rng = np.random.default_rng(seed)
    k = model * (1.0 + noise * rng.standard_normal(points)) if noise > 0 else model.copy()
    fraction = sigma_fraction if sigma_fraction is not None else (noise if noise > 0 else 0.01)
    sigma = fraction * np.abs(model)
    return SpringDataset(tuple(xi.tolist()), tuple(k.tolist()), tuple(sigma.tolist()),
                         input_power, temperature_label)


@dataclass(frozen=True)
class MonteCarloSummary:
    trials: int
    failures: int
    median_zeta_error: float
    median_zeta_bias: float
    median_k_opt_0_error: float


def monte_carlo_recovery(zeta: float, k_opt_0: float, noise: float, trials: int = 100,
                         points: int = 12, seed: int = 0, jobs: int = 1) -> MonteCarloSummary:
    """Fit many noisy synthetic datasets; per-trial seeds are spawned from one root seed."""
    children = np.random.SeedSequence(seed).spawn(trials)

    def trial(child):
        dataset = synthesize_dataset(zeta, k_opt_0, noise, seed=child, points=points)
        try:
            fit = fit_spring(dataset)
        except FitFailureError:
            return None
        return fit.zeta - zeta, abs(fit.k_opt_0 - k_opt_0) / abs(k_opt_0)

    outcomes = [o for o in map_ordered(trial, children, jobs) if o is not None]
    if not outcomes:
        raise FitFailureError("every Monte-Carlo trial failed")
    errors = np.array(outcomes)
    return MonteCarloSummary(
        trials=trials,
        failures=trials - len(outcomes),
        median_zeta_error=float(np.median(np.abs(errors[:, 0]))),
        median_zeta_bias=float(np.median(errors[:, 0])),
        median_k_opt_0_error=float(np.median(errors[:, 1])),
    )


@dataclass(frozen=True)
class PhotothermalFit:
    """
    H(Omega) = gain (gamma_th + i Omega) / (omega_th(Omega) + gamma_th + i Omega) with
    omega_th(Omega) = omega_th * shape(Omega); without a shape omega_th is a constant.
    """
    omega_th: float
    gamma_th: float
    gain: float
    fallback: bool = False

    @property
    def omega_th_scale(self) -> float:
        return self.omega_th


def _photothermal_model(params, omega, shape=1.0):
    w, gamma_th, gain = params
    numerator = gamma_th + 1j * omega
    return gain * numerator / (w * shape + numerator)


def fit_photothermal(omega, transfer, band: Tuple[float, float] = PHOTOTHERMAL_BAND,
                     gain_band: Tuple[float, float] = GAIN_BAND, spring_shape=None) -> PhotothermalFit:
    """
    Fit the photothermal transfer function inside band (rad/s). When the fitted
    |omega_th| is below gamma_th the gain is instead the mean |H| over gain_band.

    omega_th(Omega) = d K_opt(Omega) follows the complex spring. Pass spring_shape,
    K_opt(Omega) / K_opt(0) sampled on omega, to fit that shape at a free scale.
    Without it omega_th is taken as constant, which holds while Omega << gamma.
    """
    omega = np.asarray(omega, dtype=float)
    transfer = np.asarray(transfer, dtype=complex)
    if omega.shape != transfer.shape or omega.ndim != 1:
        raise InvalidParameterError("omega and transfer must be aligned one-dimensional samples")
    lo, hi = band
    if not 0 < lo < hi:
        raise InvalidParameterError(f"invalid band {band}")
    if hi / lo < math.sqrt(10.0):
        raise InsufficientBandError(f"band {lo:.4g}..{hi:.4g} rad/s spans less than half a decade")
    if lo < omega.min() or hi > omega.max():
        raise InsufficientDataError("fit band lies outside the sampled frequencies")
    inside = (omega >= lo) & (omega <= hi)
    if np.count_nonzero(inside) < 4:
        raise InsufficientDataError("fewer than 4 samples inside the fit band")
    if spring_shape is None:
        shape = np.ones_like(omega, dtype=complex)
    else:
        shape = np.asarray(spring_shape, dtype=complex)
        if shape.shape != omega.shape:
            raise InvalidParameterError("spring_shape must be sampled on omega")
    w_band, h_band = omega[inside], transfer[inside]
    s_band = shape[inside]

    # Constant-omega_th start: H a - b - i Omega g = -i Omega H with a = omega_th + gamma_th, b = g gamma_th
    rows = np.column_stack([h_band, -np.ones_like(h_band), -1j * w_band])
    rhs = -1j * w_band * h_band
    system = np.vstack([rows.real, rows.imag])
    target = np.concatenate([rhs.real, rhs.imag])
    (a, b, g), *_ = np.linalg.lstsq(system, target, rcond=None)
    gamma_th = b / g if g != 0 else 1.0
    initial = np.array([a - gamma_th, gamma_th, g])

    scale = np.abs(h_band)

    def residuals(params):
        diff = (_photothermal_model(params, w_band, s_band) - h_band) / scale
        return np.concatenate([diff.real, diff.imag])

    result = least_squares(residuals, initial, method='lm', xtol=1e-12, ftol=1e-14, gtol=1e-14)
    if not np.all(np.isfinite(result.x)) or result.status <= 0:
        raise FitFailureError("photothermal fit did not converge",
                              [{'status': int(result.status), 'message': result.message}])
    omega_th, gamma_fit, gain = (float(v) for v in result.x)

    if abs(omega_th) < abs(gamma_fit):
        g_lo, g_hi = gain_band
        in_gain_band = (omega >= g_lo) & (omega <= g_hi)
        if not np.any(in_gain_band):
            raise InsufficientDataError("no samples in the gain normalisation band")
        logger.info("omega_th < gamma_th; normalising the gain over %.4g..%.4g rad/s", g_lo, g_hi)
        gain = float(np.mean(np.abs(transfer[in_gain_band])))
        return PhotothermalFit(omega_th=omega_th, gamma_th=abs(gamma_fit), gain=gain, fallback=True)
    return PhotothermalFit(omega_th=omega_th, gamma_th=abs(gamma_fit), gain=gain)


@dataclass(frozen=True)
class CriticalPowerEstimate:
    critical_power: float
    critical_power_err: float
    slope: float
    slope_err: float


def amplification_vs_power(fits: Sequence[FitResult]) -> CriticalPowerEstimate:
    """Fit zeta = c P0 through the origin and return P0_crit = zeta_0 / c."""
    if any(f.input_power is None for f in fits):
        raise InvalidParameterError("every fit needs its input power")
    if len({f.input_power for f in fits}) < 3:
        raise InsufficientDataError("at least 3 distinct input powers are required")

    power = np.array([f.input_power for f in fits])
    zeta = np.array([f.zeta for f in fits])
    errors = np.array([f.zeta_err for f in fits])

    if np.all(np.isfinite(errors)) and np.all(errors > 0):
        w = 1.0 / errors ** 2
        slope = float(np.sum(w * power * zeta) / np.sum(w * power ** 2))
        slope_err = float(1.0 / math.sqrt(np.sum(w * power ** 2)))
    else:
        slope = float(np.sum(power * zeta) / np.sum(power ** 2))
        dof = len(power) - 1
        slope_err = float(math.sqrt(np.sum((zeta - slope * power) ** 2) / dof / np.sum(power ** 2)))

    if slope >= 0:
        raise NoDivergenceError(f"zeta does not decrease with input power (slope {slope:.6g} per W)")
    critical = ZETA_0 / slope
    return CriticalPowerEstimate(
        critical_power=critical,
        critical_power_err=abs(ZETA_0) / slope ** 2 * slope_err,
        slope=slope,
        slope_err=slope_err,
    )


def amplification_table(fits: Sequence[FitResult], reference: Optional[FitResult] = None) -> List[dict]:
    """
    Rows of A(P0) sorted by power. k_opt_0 is normalised against the reference
    fit scaled linearly with input power.
    """
    rows = []
    for fit in sorted(fits, key=lambda f: (f.input_power is None, f.input_power or 0.0)):
        row = {'P0_W': fit.input_power, 'temp_label': fit.temperature_label, 'zeta': fit.zeta,
               'A': fit.amplification, 'A_err': fit.amplification_err}
        if reference is not None and reference.input_power and fit.input_power:
            expected = reference.k_opt_0 * fit.input_power / reference.input_power
            row['k_opt_0_normalised'] = fit.k_opt_0 / expected
        rows.append(row)
    return rows
