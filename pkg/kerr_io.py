"""
Configuration documents, parameter construction and tidy output.

Parameter files are JSON or TOML with the sections cavity, medium, mechanics,
michelson and scan; every key carries its unit. Unknown sections and keys are
rejected. Output is CSV with '#' provenance lines or one JSON document.
"""
import copy
import csv
import hashlib
import json
import logging
import math
import os
import sys
from typing import Dict, Iterable, List, Optional, Sequence, TextIO

from core_model import kerr_chi_for_gain
from estimation import InsufficientDataError, SpringDataset
from interferometer import MichelsonParams
from kerr_params import C_LIGHT, CavityParams, ConfigurationError, KerrMediumParams, MechanicalParams

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

JOBS_ENV = 'KERRSPRING_JOBS'

# Bow-tie cavity, PPKTP crystal and 280 mg suspended mirror of the experiment.
DEFAULT_CONFIG: Dict[str, Dict[str, object]] = {
    'cavity': {
        'half_cycle_length_m': 0.25,
        'wavelength_m': 1.064e-6,
        'finesse': 100.0,
        'loss_ratio': 0.17,
        'input_power_W': 0.6,
        'optomech_coupling_rad_per_s_m': None,
    },
    'medium': {
        'kerr_susceptibility_rad_s': None,
        'kerr_gain': -1.0 / math.sqrt(3.0),
        'shg_loss_rad_s': 0.0,
        'kerr_slope_rad_s': 0.0,
        'shg_slope_rad_s': 0.0,
        'photothermal_relaxation_rad_s': 2.0 * math.pi * 50.0,
        'photothermal_absorption': 0.0,
    },
    'mechanics': {
        'mass_kg': 280e-6,
        'resonance_Hz': 14.0,
        'quality_factor': 193.0,
    },
    'michelson': {
        'srm_power_transmissivity': 0.01,
        'arm_length_m': 4000.0,
        'arm_power_W': 1.0e5,
        'detune_phase_rad': 0.01,
        'kerr_phase_rad': -0.003,
        'mass_kg': 40.0,
        'wavelength_m': 1.064e-6,
    },
    'scan': {
        'xi0_start': -3.0,
        'xi0_end': 6.0,
        'speed': 'fast',
        'scan_rate_rad_s2': None,
        'include_photothermal': False,
        'samples_per_tau': 100,
    },
}

STRING_KEYS = {('scan', 'speed')}
BOOL_KEYS = {('scan', 'include_photothermal')}


def default_config() -> Dict[str, Dict[str, object]]:
    return copy.deepcopy(DEFAULT_CONFIG)


def _read_document(path: str) -> dict:
    if not os.path.isfile(path):
        raise ConfigurationError(f"parameter file not found: {path}")
    try:
        if path.endswith('.toml'):
            with open(path, 'rb') as handle:
                return tomllib.load(handle)
        with open(path, 'r', encoding='utf-8') as handle:
            return json.load(handle)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from exc


def _check_value(section: str, key: str, value):
    if value is None:
        return None
    if (section, key) in STRING_KEYS:
        if not isinstance(value, str):
            raise ConfigurationError(f"{section}.{key} must be a string")
        return value
    if (section, key) in BOOL_KEYS:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{section}.{key} must be true or false")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"{section}.{key} must be a number, got {value!r}")
    if not math.isfinite(value):
        raise ConfigurationError(f"{section}.{key} must be finite")
    return value


def merge_config(overrides: dict, base: Optional[dict] = None) -> dict:
    """Overlay a parameter document on the defaults under the strict schema."""
    config = default_config() if base is None else copy.deepcopy(base)
    if not isinstance(overrides, dict):
        raise ConfigurationError("a parameter document must be a table of sections")
    for section, values in overrides.items():
        if section not in config:
            raise ConfigurationError(f"unknown section '{section}' (expected one of: {', '.join(config)})")
        if not isinstance(values, dict):
            raise ConfigurationError(f"section '{section}' must be a table")
        for key, value in values.items():
            if key not in config[section]:
                raise ConfigurationError(f"unknown key '{section}.{key}'")
            config[section][key] = _check_value(section, key, value)

    # TOML has no null: an explicit susceptibility replaces the default gain
    medium = overrides.get('medium', {})
    if 'kerr_susceptibility_rad_s' in medium and 'kerr_gain' not in medium:
        config['medium']['kerr_gain'] = None
    return config


def load_config(path: Optional[str] = None) -> dict:
    if path is None:
        return default_config()
    logger.debug("reading parameters from %s", path)
    return merge_config(_read_document(path))


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def _angular_frequency(wavelength: float) -> float:
    if not wavelength or wavelength <= 0:
        raise ConfigurationError("wavelength_m must be positive")
    return 2.0 * math.pi * C_LIGHT / wavelength


def build_cavity(config: dict, lossless: bool = False) -> CavityParams:
    section = config['cavity']
    return CavityParams.from_finesse(
        half_cycle_length=section['half_cycle_length_m'],
        carrier_angular_frequency=_angular_frequency(section['wavelength_m']),
        finesse=section['finesse'],
        input_power=section['input_power_W'],
        loss_ratio=0.0 if lossless else section['loss_ratio'],
        optomech_coupling=section['optomech_coupling_rad_per_s_m'],
    )


def build_medium(config: dict, cavity: CavityParams) -> KerrMediumParams:
    """
    chi comes from kerr_susceptibility_rad_s or from kerr_gain (evaluated with
    gamma' and P0 of the cavity); giving both is an error.
    """
    section = config['medium']
    chi = section['kerr_susceptibility_rad_s']
    zeta = section['kerr_gain']
    if chi is not None and zeta is not None:
        raise ConfigurationError("give medium.kerr_susceptibility_rad_s or medium.kerr_gain, not both")
    if chi is None:
        chi = 0.0 if zeta is None or zeta == 0 else kerr_chi_for_gain(
            zeta, cavity.input_power, cavity.total_linear_decay, cavity.carrier_angular_frequency)
    return KerrMediumParams(
        kerr_susceptibility=chi,
        shg_loss=section['shg_loss_rad_s'],
        photothermal_relaxation=section['photothermal_relaxation_rad_s'],
        photothermal_absorption=section['photothermal_absorption'],
        kerr_slope=section['kerr_slope_rad_s'],
        shg_slope=section['shg_slope_rad_s'],
    )


def build_mechanics(config: dict) -> MechanicalParams:
    section = config['mechanics']
    return MechanicalParams.from_quality_factor(
        section['mass_kg'], 2.0 * math.pi * section['resonance_Hz'], section['quality_factor'])


def build_michelson(config: dict) -> MichelsonParams:
    section = config['michelson']
    transmissivity = section['srm_power_transmissivity']
    if not 0 <= transmissivity <= 1:
        raise ConfigurationError("michelson.srm_power_transmissivity must lie in [0, 1]")
    return MichelsonParams(
        srm_reflectivity=math.sqrt(1.0 - transmissivity),
        srm_transmissivity=math.sqrt(transmissivity),
        arm_length=section['arm_length_m'],
        arm_power=section['arm_power_W'],
        detune_phase=section['detune_phase_rad'],
        kerr_phase=section['kerr_phase_rad'],
        mass=section['mass_kg'],
        carrier_angular_frequency=_angular_frequency(section['wavelength_m']),
    )


def jobs_from_env(default: int = 1) -> int:
    raw = os.environ.get(JOBS_ENV)
    if raw is None or raw == '':
        return default
    try:
        jobs = int(raw)
    except ValueError as exc:
        raise ConfigurationError(f"{JOBS_ENV} must be an integer, got {raw!r}") from exc
    if jobs < 1:
        raise ConfigurationError(f"{JOBS_ENV} must be at least 1, got {jobs}")
    return jobs


def _cell(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if value is None:
        return ''
    if isinstance(value, float):
        return repr(value)
    return value


def write_csv(stream: TextIO, config: dict, columns: Sequence[str], rows: Iterable[dict],
              units: Optional[Dict[str, str]] = None, checks: Sequence[dict] = ()) -> None:
    stream.write(f"# config: {json.dumps(config, sort_keys=True, separators=(',', ':'))}\n")
    stream.write(f"# config_sha256: {config_hash(config)}\n")
    if units:
        stream.write('# units: ' + ', '.join(f"{c}={units[c]}" for c in columns if c in units) + '\n')
    for check in checks:
        status = 'pass' if check['passed'] else 'FAIL'
        stream.write(f"# check: {check['name']} {status} expected={check['expected']} actual={check['actual']}\n")
    writer = csv.writer(stream, lineterminator='\n')
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in columns])


def write_json(stream: TextIO, config: dict, rows: List[dict], checks: Sequence[dict] = ()) -> None:
    document = {'config': config, 'config_sha256': config_hash(config), 'data': rows, 'checks': list(checks)}
    stream.write(json.dumps(document, sort_keys=True, indent=2))
    stream.write('\n')


def emit(stream: TextIO, fmt: str, config: dict, columns: Sequence[str], rows: List[dict],
         units: Optional[Dict[str, str]] = None, checks: Sequence[dict] = ()) -> None:
    if fmt == 'csv':
        write_csv(stream, config, columns, rows, units, checks)
    elif fmt == 'json':
        write_json(stream, config, rows, checks)
    else:
        raise ConfigurationError(f"unknown output format {fmt!r}")


def _csv_records(path: str) -> List[dict]:
    with open(path, 'r', encoding='utf-8', newline='') as handle:
        lines = [line for line in handle if not line.startswith('#')]
    return list(csv.DictReader(lines))


def read_dataset(path: str) -> SpringDataset:
    """SpringDataset from CSV (columns xi, k_opt_N_per_m, sigma_k[, P0_W, temp_label]) or JSON."""
    if not os.path.isfile(path):
        raise ConfigurationError(f"dataset not found: {path}")
    if path.endswith('.json'):
        with open(path, 'r', encoding='utf-8') as handle:
            try:
                document = json.load(handle)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
        records = document['data'] if isinstance(document, dict) and 'data' in document else document
    else:
        records = _csv_records(path)
    if not isinstance(records, list) or not records:
        raise InsufficientDataError(f"no dataset records in {path}")
    return SpringDataset.from_records(records)
