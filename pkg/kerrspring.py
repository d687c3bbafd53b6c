#!/usr/bin/env python3
"""Command line front end for the Kerr-enhanced optical spring toolkit."""
import argparse
import json
import logging
import math
import re
import sys
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np

from dynamics import SCAN_DIRECTIONS, SCAN_SPEEDS, ScanConfig, hysteresis_scan, run_scan
from estimation import fit_spring, synthesize_dataset
from interferometer import interferometer_response, michelson_spring_constant, spring_sweep
from kerr_io import (
    build_cavity, build_mechanics, build_medium, build_michelson, emit, jobs_from_env,
    load_config, merge_config, read_dataset,
)
from kerr_params import ConfigurationError, KerrSpringError
from recipes import RECIPES, RecipeCheckError, reproduce
from response import (
    CompositeOscillator, bode, composite_resonance, frequency_grid, photothermal_rate,
    spring_response, static_spring_constant,
)
from steady_state import power_curve, reflected_power, solve_steady_states, steady_state_at

logger = logging.getLogger(__name__)

Subcommand = Literal['steady', 'curve', 'spring', 'response', 'scan', 'fit', 'gwd', 'reproduce', 'synth']

# Runtime list for validation
SUBCOMMANDS = ('steady', 'curve', 'spring', 'response', 'scan', 'fit', 'gwd', 'reproduce', 'synth')

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_RECIPE = 4

# Arguments that do not change the data and stay out of the provenance echo
UNECHOED = ('output', 'jobs', 'verbose', 'params', 'handler')

# Flags taking start..stop[:count]; a negative start looks like an option to argparse
GRID_FLAGS = ('--xi0', '--freq', '--phi', '--xi')
GRID_VALUE = re.compile(r'^-(?!-)\S*\.\.')


def join_grid_values(argv: Sequence[str]) -> List[str]:
    """Rewrite '--xi0 -4..4' as '--xi0=-4..4' so negative grid starts parse."""
    tokens = list(argv)
    joined = []
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if token in GRID_FLAGS and i + 1 < len(tokens) and GRID_VALUE.match(tokens[i + 1]):
            joined.append(f"{token}={tokens[i + 1]}")
            i += 2
            continue
        joined.append(token)
        i += 1
    return joined


def parse_grid(text: str, default_count: int) -> Tuple[float, float, int]:
    """Parse 'start..stop[:count]' or a single value."""
    body, _, count = text.partition(':')
    start, sep, stop = body.partition('..')
    try:
        lo = float(start)
        hi = float(stop) if sep else lo
        n = int(count) if count else (default_count if sep else 1)
    except ValueError as exc:
        raise ConfigurationError(f"bad grid {text!r}: expected start..stop[:count]") from exc
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ConfigurationError(f"grid {text!r} must be finite")
    if n < 1 or (sep and n < 2):
        raise ConfigurationError(f"grid {text!r} needs at least two points")
    if hi < lo:
        raise ConfigurationError(f"grid {text!r} must run from low to high")
    return lo, hi, n


def _linear_grid(text: str, default_count: int) -> List[float]:
    lo, hi, n = parse_grid(text, default_count)
    return np.linspace(lo, hi, n).tolist()


def _frequency_grid_rad(text: str, default_count: int) -> np.ndarray:
    lo, hi, n = parse_grid(text, default_count)
    if lo <= 0:
        raise ConfigurationError("frequency grids are in Hz and must start above zero")
    return frequency_grid(2.0 * math.pi * lo, 2.0 * math.pi * hi, n) if n > 1 else np.array([2.0 * math.pi * lo])


def _apply_zeta(config: dict, zeta: Optional[float]) -> dict:
    """Lossless packaged cavity with the requested Kerr gain."""
    if zeta is None:
        return config
    return merge_config({'cavity': {'loss_ratio': 0.0},
                         'medium': {'kerr_gain': zeta, 'kerr_susceptibility_rad_s': None}}, config)


def _cavity_and_medium(config: dict):
    cavity = build_cavity(config)
    return cavity, build_medium(config, cavity)


def cmd_steady(args, config):
    cavity, medium = _cavity_and_medium(config)
    states = solve_steady_states(cavity, medium, args.xi0 * cavity.total_linear_decay)
    rows = [
        {'xi0': args.xi0, 'branch_index': i, 'n_bar': s.photon_number, 'P_W': s.intracavity_power,
         'xi': s.normalized_detuning, 'stable': s.is_stable, 'growth_rate_rad_s': s.growth_rate,
         'P_ref_W': reflected_power(cavity, medium, s)}
        for i, s in enumerate(states)
    ]
    columns = ['xi0', 'branch_index', 'n_bar', 'P_W', 'xi', 'stable', 'growth_rate_rad_s', 'P_ref_W']
    return columns, rows, {'n_bar': 'photons', 'P_W': 'W', 'growth_rate_rad_s': 'rad/s', 'P_ref_W': 'W'}, []


def cmd_curve(args, config):
    cavity, medium = _cavity_and_medium(config)
    curve = power_curve(cavity, medium, _linear_grid(args.xi0, 801), args.jobs)
    columns = ['xi0', 'branch_index', 'n_bar', 'P_over_Pmax', 'xi', 'stable']
    return columns, curve.to_records(), {'n_bar': 'photons'}, []


def cmd_spring(args, config):
    cavity, medium = _cavity_and_medium(config)
    mech = build_mechanics(config)
    rows = []
    for xi0 in _linear_grid(args.xi0, 101):
        states = [s for s in solve_steady_states(cavity, medium, xi0 * cavity.total_linear_decay) if s.is_stable]
        for index, state in enumerate(states):
            k = static_spring_constant(cavity, medium, state)
            resonance = composite_resonance(mech, k)
            rows.append({
                'xi0': xi0, 'branch_index': index, 'xi': state.normalized_detuning, 'k_opt_N_per_m': k,
                'omega_th_rad_s': complex(photothermal_rate(cavity, medium, state, 0.0)).real,
                'f_res_Hz': resonance.angular_frequency / (2.0 * math.pi),
                'instability_rate_rad_s': resonance.instability_rate,
            })
    columns = ['xi0', 'branch_index', 'xi', 'k_opt_N_per_m', 'omega_th_rad_s', 'f_res_Hz', 'instability_rate_rad_s']
    units = {'k_opt_N_per_m': 'N/m', 'omega_th_rad_s': 'rad/s', 'f_res_Hz': 'Hz', 'instability_rate_rad_s': 'rad/s'}
    return columns, rows, units, []


def cmd_response(args, config):
    cavity, medium = _cavity_and_medium(config)
    mech = build_mechanics(config)
    state = steady_state_at(cavity, medium, args.xi0 * cavity.total_linear_decay, args.branch)
    omega = _frequency_grid_rad(args.freq, 300)
    response = spring_response(cavity, medium, state, omega)
    oscillator = CompositeOscillator(mech, static_spring_constant(cavity, medium, state), response)
    chi_mag, chi_phase = bode(oscillator.susceptibility())
    rows = response.to_records()
    for row, w, mag, phase, outside in zip(rows, omega, chi_mag, chi_phase, response.outside_adiabatic):
        row.update({'freq_Hz': float(w / (2.0 * math.pi)), 'chi_mag_dB': float(mag),
                    'chi_phase_deg': float(phase), 'adiabatic': not bool(outside)})
    columns = ['freq_Hz', 'omega_rad_s', 're_Kopt', 'im_Kopt', 're_omega_th', 'im_omega_th',
               're_Hth', 'im_Hth', 'chi_mag_dB', 'chi_phase_deg', 'adiabatic']
    units = {'freq_Hz': 'Hz', 'omega_rad_s': 'rad/s', 're_Kopt': 'N/m', 'im_Kopt': 'N/m',
             're_omega_th': 'rad/s', 'im_omega_th': 'rad/s', 'chi_mag_dB': 'dB re m/N'}
    return columns, rows, units, []


def cmd_scan(args, config):
    cavity, medium = _cavity_and_medium(config)
    scan = config['scan']
    gamma = cavity.total_linear_decay
    if args.xi0 is not None:
        lo, hi, _ = parse_grid(args.xi0, 2)
    else:
        lo, hi = scan['xi0_start'], scan['xi0_end']
    speed = args.speed or scan['speed']
    if speed not in SCAN_SPEEDS:
        raise ConfigurationError(f"scan speed must be one of: {', '.join(SCAN_SPEEDS)}")
    samples = scan['samples_per_tau']
    if not samples or samples <= 0:
        raise ConfigurationError("scan.samples_per_tau must be positive")
    sample_interval = cavity.charging_time / samples

    def make(direction):
        return ScanConfig.for_cavity(cavity, direction, lo * gamma, hi * gamma, speed=speed,
                                     scan_rate=scan['scan_rate_rad_s2'],
                                     include_photothermal=scan['include_photothermal'])

    if args.direction == 'both':
        result = hysteresis_scan(cavity, medium, make('upward'), make('downward'),
                                 sample_interval=sample_interval)
        trajectories = [result.up, result.down]
        logger.info("hysteretic=%s loop area %.6g W rad/s", result.hysteretic, result.loop_area)
    else:
        trajectories = [run_scan(cavity, medium, make(args.direction), sample_interval=sample_interval)]

    rows = [record for trajectory in trajectories for record in trajectory.to_records()]
    for trajectory in trajectories:
        for jump in trajectory.discontinuities:
            logger.info("%s scan: jump of %.3g W at t=%.6g s (rise %.3g tau)", trajectory.direction,
                        jump.size, jump.time, jump.rise_time / trajectory.charging_time)
    columns = ['direction', 't_s', 're_a', 'im_a', 'n', 'P_trans_W']
    return columns, rows, {'t_s': 's', 'n': 'photons', 'P_trans_W': 'W'}, []


def cmd_fit(args, config):
    fit = fit_spring(read_dataset(args.input), bootstrap=args.bootstrap, seed=args.seed)
    row = fit.to_dict()
    columns = ['zeta', 'zeta_err', 'k_opt_0', 'k_opt_0_err', 'A', 'A_err', 'chi2red', 'unphysical',
               'P0_W', 'temp_label']
    return columns, [row], {'k_opt_0': 'N/m', 'k_opt_0_err': 'N/m', 'P0_W': 'W'}, []


def cmd_gwd(args, config):
    params = build_michelson(config)
    if args.phi is not None:
        rows = spring_sweep(params, _linear_grid(args.phi, 101))
        return ['phi_rad', 'Phi_rad', 'k_opt_N_per_m'], rows, {'k_opt_N_per_m': 'N/m'}, []

    spring = michelson_spring_constant(params)
    logger.info("Michelson static spring %.6g N/m (approximate %.6g N/m)", spring.exact, spring.approximate)
    rows = []
    for omega in _frequency_grid_rad(args.freq, 200):
        response = interferometer_response(params, float(omega))
        noise = response.noise_transfer
        signal = response.signal_transfer
        rows.append({
            'freq_Hz': float(omega / (2.0 * math.pi)), 'kappa': response.coupling, 'beta_rad': response.phase_delay,
            'M_re': response.M.real, 'M_im': response.M.imag,
            'noise_11_abs': abs(noise[0, 0]), 'noise_12_abs': abs(noise[0, 1]),
            'noise_21_abs': abs(noise[1, 0]), 'noise_22_abs': abs(noise[1, 1]),
            'signal_1_abs': abs(signal[0, 1]), 'signal_2_abs': abs(signal[1, 1]),
        })
    columns = ['freq_Hz', 'kappa', 'beta_rad', 'M_re', 'M_im', 'noise_11_abs', 'noise_12_abs',
               'noise_21_abs', 'noise_22_abs', 'signal_1_abs', 'signal_2_abs']
    return columns, rows, {'freq_Hz': 'Hz', 'beta_rad': 'rad', 'signal_1_abs': '1/sqrt(m)',
                           'signal_2_abs': '1/sqrt(m)'}, []


def cmd_reproduce(args, config):
    result = reproduce(args.recipe, config, seed=args.seed, jobs=args.jobs)
    return list(result.columns), result.rows, result.units, result.checks


def cmd_synth(args, config):
    mech = build_mechanics(config)
    k_opt_0 = args.k0
    if k_opt_0 is None:
        k_opt_0 = mech.mass * ((2.0 * math.pi * 53.0) ** 2 - mech.resonance ** 2)
    lo, hi, points = parse_grid(args.xi, 12)
    dataset = synthesize_dataset(args.zeta, k_opt_0, noise=args.noise, seed=args.seed, points=points,
                                 xi_range=(lo, hi), input_power=args.power, temperature_label=args.label)
    columns = ['xi', 'k_opt_N_per_m', 'sigma_k', 'P0_W', 'temp_label']
    return columns, dataset.to_records(), {'k_opt_N_per_m': 'N/m', 'sigma_k': 'N/m', 'P0_W': 'W'}, []


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--params', help='JSON or TOML parameter file (packaged defaults if omitted).')
    common.add_argument('-o', '--output', help='Output file (stdout if omitted).')
    common.add_argument('--format', choices=('csv', 'json'), default='csv', help='Output format.')
    common.add_argument('--seed', type=int, default=0, help='Seed for synthetic data and resampling.')
    common.add_argument('--jobs', type=int, default=None,
                        help='Worker threads for sweeps (default: $KERRSPRING_JOBS or 1).')
    common.add_argument('-v', '--verbose', action='store_true', help='Show debug logging on stderr.')

    zeta_flag = argparse.ArgumentParser(add_help=False)
    zeta_flag.add_argument('--zeta', type=float, default=None,
                           help='Kerr gain for a lossless cavity with the packaged geometry.')

    parser = argparse.ArgumentParser(
        prog='kerrspring',
        description=(
            "Steady states, optical spring constants, photothermal response, hysteresis scans and "
            "parameter estimation for Kerr-enhanced optomechanical cavities."
        ),
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        epilog="""
Examples:
  %(prog)s curve --zeta 0 --xi0 -4..4
  %(prog)s synth --zeta -0.77 --noise 0.01 --format json -o data.json
  %(prog)s fit --input data.json --format json
  %(prog)s reproduce fig4
        """,
    )
    sub = parser.add_subparsers(dest='subcommand', required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    steady = sub.add_parser('steady', parents=[common, zeta_flag], formatter_class=fmt,
                            help='Operating points at one detuning.')
    steady.add_argument('--xi0', type=float, default=0.0, help="Bare normalized detuning Delta'/gamma'.")
    steady.set_defaults(handler=cmd_steady)

    curve = sub.add_parser('curve', parents=[common, zeta_flag], formatter_class=fmt,
                           help='Intracavity power against detuning.')
    curve.add_argument('--xi0', default='-4..4:801', help='Detuning grid start..stop[:count].')
    curve.set_defaults(handler=cmd_curve)

    spring = sub.add_parser('spring', parents=[common, zeta_flag], formatter_class=fmt,
                            help='Static optical spring constant against detuning.')
    spring.add_argument('--xi0', default='0.2..2.5:101', help='Detuning grid start..stop[:count].')
    spring.set_defaults(handler=cmd_spring)

    response = sub.add_parser('response', parents=[common, zeta_flag], formatter_class=fmt,
                              help='Frequency response at one operating point.')
    response.add_argument('--xi0', type=float, default=1.0, help="Bare normalized detuning Delta'/gamma'.")
    response.add_argument('--branch', choices=('lowest', 'highest'), default='lowest',
                          help='Stable branch to linearise about.')
    response.add_argument('--freq', default='10..7000:300', help='Frequency grid in Hz (log spaced).')
    response.set_defaults(handler=cmd_response)

    scan = sub.add_parser('scan', parents=[common, zeta_flag], formatter_class=fmt,
                          help='Time-domain detuning scans.')
    scan.add_argument('--direction', choices=SCAN_DIRECTIONS + ('both',), default='both',
                      help='Scan direction; both runs the hysteresis pair.')
    scan.add_argument('--xi0', default=None, help='Scan window start..stop (default: scan section).')
    scan.add_argument('--speed', choices=tuple(SCAN_SPEEDS), default=None,
                      help='Scan speed preset (default: scan section).')
    scan.set_defaults(handler=cmd_scan)

    fit = sub.add_parser('fit', parents=[common], formatter_class=fmt,
                         help='Fit Kerr gain and spring scale to a dataset.')
    fit.add_argument('--input', required=True, help='Dataset in CSV or JSON.')
    fit.add_argument('--bootstrap', type=int, default=0, help='Bootstrap resamples for the errors.')
    fit.set_defaults(handler=cmd_fit)

    gwd = sub.add_parser('gwd', parents=[common], formatter_class=fmt,
                         help='Detuned signal-recycled Michelson with a Kerr medium.')
    gwd.add_argument('--freq', default='1..1000:200', help='Sideband frequency grid in Hz.')
    gwd.add_argument('--phi', default=None, help='Sweep the detune phase instead: start..stop[:count] rad.')
    gwd.set_defaults(handler=cmd_gwd)

    recipe = sub.add_parser('reproduce', parents=[common], formatter_class=fmt,
                            help='Run a packaged reproduction recipe with checks.')
    recipe.add_argument('recipe', choices=RECIPES, help='Recipe name.')
    recipe.set_defaults(handler=cmd_reproduce)

    synth = sub.add_parser('synth', parents=[common], formatter_class=fmt,
                           help='Write a synthetic spring dataset.')
    synth.add_argument('--zeta', type=float, required=True, help='Kerr gain of the synthetic cavity.')
    synth.add_argument('--k0', type=float, default=None,
                       help='Linear maximum spring constant in N/m (default: 53 Hz spring on the packaged mirror).')
    synth.add_argument('--noise', type=float, default=0.01, help='Relative Gaussian noise.')
    synth.add_argument('--xi', default='0.35..2.0:12', help='Normalized detuning grid start..stop[:count].')
    synth.add_argument('--power', type=float, default=None, help='Input power label in W.')
    synth.add_argument('--label', default='', help='Temperature label.')
    synth.set_defaults(handler=cmd_synth)
    return parser


def _run_section(args) -> dict:
    return {key: value for key, value in sorted(vars(args).items()) if key not in UNECHOED}


def _write(args, config, columns, rows, units, checks) -> None:
    if args.output:
        with open(args.output, 'w', encoding='utf-8', newline='') as stream:
            emit(stream, args.format, config, columns, rows, units, checks)
    else:
        emit(sys.stdout, args.format, config, columns, rows, units, checks)


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, RecipeCheckError):
        return EXIT_RECIPE
    if isinstance(exc, (ValueError, OSError)):
        return EXIT_CONFIG
    return EXIT_NUMERICAL


def report_error(exc: BaseException, code: int) -> None:
    message = str(exc)
    record = {'error': type(exc).__name__, 'exit_code': code, 'message': message}
    sys.stderr.write(json.dumps(record, sort_keys=True) + '\n')
    print(f"❌ Error: {message}", file=sys.stderr)


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(join_grid_values(sys.argv[1:] if argv is None else argv))
    except SystemExit as exc:
        if exc.code is None:
            return EXIT_OK
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr,
                        format='%(levelname)s %(name)s: %(message)s')
    config = None
    try:
        if args.jobs is None:
            args.jobs = jobs_from_env()
        elif args.jobs < 1:
            raise ConfigurationError(f"--jobs must be at least 1, got {args.jobs}")
        zeta = None if args.subcommand == 'synth' else getattr(args, 'zeta', None)
        config = _apply_zeta(load_config(args.params), zeta)
        columns, rows, units, checks = args.handler(args, config)
    except RecipeCheckError as exc:
        echoed = dict(config, run=_run_section(args))
        result = exc.result
        _write(args, echoed, list(result.columns), result.rows, result.units, result.checks)
        report_error(exc, EXIT_RECIPE)
        return EXIT_RECIPE
    except (KerrSpringError, ValueError, OSError) as exc:
        code = exit_code_for(exc)
        report_error(exc, code)
        return code

    echoed = dict(config, run=_run_section(args))
    _write(args, echoed, columns, rows, units, checks)
    return EXIT_OK


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == '__main__':
    main()
