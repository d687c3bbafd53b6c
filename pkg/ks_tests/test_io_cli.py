import io
import json
import os
import sys

import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import kerrspring
import recipes
from estimation import InsufficientDataError, synthesize_dataset
from kerr_io import (
    build_cavity, build_medium, build_michelson, config_hash, default_config, emit, jobs_from_env,
    load_config, merge_config, read_dataset, write_csv,
)
from kerr_params import ConfigurationError, KerrSpringError
from kerrspring import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, EXIT_RECIPE, join_grid_values, parse_grid, run
from recipes import RecipeResult, _check
from steady_state import NumericalFailureError


class TestMergeConfig:

    def test_defaults_untouched(self):
        config = merge_config({'cavity': {'finesse': 300.0}})
        assert config['cavity']['finesse'] == 300.0
        assert default_config()['cavity']['finesse'] == 100.0

    def test_unknown_section(self):
        with pytest.raises(ConfigurationError, match="unknown section 'laser'"):
            merge_config({'laser': {}})

    def test_configuration_error_is_a_value_error(self):
        with pytest.raises(ValueError):
            merge_config({'laser': {}})
        assert issubclass(ConfigurationError, KerrSpringError)

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError, match="unknown key 'cavity.colour'"):
            merge_config({'cavity': {'colour': 1}})

    def test_non_number(self):
        with pytest.raises(ConfigurationError, match="must be a number"):
            merge_config({'cavity': {'finesse': 'high'}})

    def test_bool_is_not_a_number(self):
        with pytest.raises(ConfigurationError, match="must be a number"):
            merge_config({'cavity': {'finesse': True}})

    def test_speed_must_be_string(self):
        with pytest.raises(ConfigurationError, match="must be a string"):
            merge_config({'scan': {'speed': 3}})

    def test_explicit_susceptibility_replaces_gain(self):
        config = merge_config({'medium': {'kerr_susceptibility_rad_s': 1e-3}})
        assert config['medium']['kerr_gain'] is None

    def test_both_kerr_inputs_rejected(self):
        config = merge_config({'medium': {'kerr_gain': -0.5, 'kerr_susceptibility_rad_s': 1e-3}})
        with pytest.raises(ConfigurationError, match="not both"):
            build_medium(config, build_cavity(config))


class TestLoadConfig:

    def test_toml(self, tmp_path):
        path = tmp_path / 'params.toml'
        path.write_text('[cavity]\nfinesse = 300.0\n\n[scan]\nspeed = "slow"\n')
        config = load_config(str(path))
        assert config['cavity']['finesse'] == 300.0
        assert config['scan']['speed'] == 'slow'

    def test_json(self, tmp_path):
        path = tmp_path / 'params.json'
        path.write_text(json.dumps({'mechanics': {'mass_kg': 1e-3}}))
        assert load_config(str(path))['mechanics']['mass_kg'] == 1e-3

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="not found"):
            load_config(str(tmp_path / 'absent.json'))

    def test_malformed_json(self, tmp_path):
        path = tmp_path / 'params.json'
        path.write_text('{"cavity": ')
        with pytest.raises(ConfigurationError, match="cannot parse"):
            load_config(str(path))

    def test_hash_ignores_key_order(self):
        forward = {'a': 1, 'b': {'c': 2, 'd': 3}}
        backward = {'b': {'d': 3, 'c': 2}, 'a': 1}
        assert config_hash(forward) == config_hash(backward)
        assert config_hash(forward) != config_hash({'a': 2, 'b': {'c': 2, 'd': 3}})

    def test_lossless_override(self):
        config = default_config()
        lossy = build_cavity(config)
        assert lossy.other_loss_decay / lossy.input_decay == pytest.approx(0.17)
        assert build_cavity(config, lossless=True).other_loss_decay == 0.0

    def test_michelson_from_transmissivity(self):
        params = build_michelson(default_config())
        assert params.srm_transmissivity ** 2 == pytest.approx(0.01)

    def test_bad_transmissivity(self):
        config = merge_config({'michelson': {'srm_power_transmissivity': 1.5}})
        with pytest.raises(ConfigurationError, match="lie in \\[0, 1\\]"):
            build_michelson(config)


class TestJobsFromEnv:

    def test_default(self, monkeypatch):
        monkeypatch.delenv('KERRSPRING_JOBS', raising=False)
        assert jobs_from_env() == 1

    def test_value(self, monkeypatch):
        monkeypatch.setenv('KERRSPRING_JOBS', '3')
        assert jobs_from_env() == 3

    @pytest.mark.parametrize('raw', ['zero', '0', '-2'])
    def test_invalid(self, monkeypatch, raw):
        monkeypatch.setenv('KERRSPRING_JOBS', raw)
        with pytest.raises(ConfigurationError, match="KERRSPRING_JOBS"):
            jobs_from_env()


class TestOutput:

    def test_csv_provenance_lines(self):
        stream = io.StringIO()
        write_csv(stream, {'a': 1}, ['x', 'ok'], [{'x': 0.5, 'ok': True}], {'x': 'm'},
                  [_check('c', 1.0, 1.0, 0.1)])
        lines = stream.getvalue().splitlines()
        assert lines[0] == '# config: {"a":1}'
        assert lines[1] == f'# config_sha256: {config_hash({"a": 1})}'
        assert lines[2] == '# units: x=m'
        assert lines[3] == '# check: c pass expected=1.0 actual=1.0'
        assert lines[4:] == ['x,ok', '0.5,true']

    def test_json_document(self):
        stream = io.StringIO()
        emit(stream, 'json', {'a': 1}, ['x'], [{'x': 2.0}])
        document = json.loads(stream.getvalue())
        assert document['data'] == [{'x': 2.0}]
        assert document['config_sha256'] == config_hash({'a': 1})
        assert document['checks'] == []

    def test_unknown_format(self):
        with pytest.raises(ConfigurationError, match="unknown output format"):
            emit(io.StringIO(), 'xml', {}, [], [])


class TestReadDataset:

    def test_csv_round_trip(self, tmp_path):
        dataset = synthesize_dataset(-0.4, 1.0, noise=0.01, seed=2, points=8)
        path = tmp_path / 'data.csv'
        with open(path, 'w', encoding='utf-8', newline='') as stream:
            write_csv(stream, {}, ['xi', 'k_opt_N_per_m', 'sigma_k', 'P0_W', 'temp_label'], dataset.to_records())
        assert read_dataset(str(path)) == dataset

    def test_json_round_trip(self, tmp_path):
        dataset = synthesize_dataset(-0.4, 1.0, noise=0.01, seed=2, points=8, input_power=0.6)
        path = tmp_path / 'data.json'
        with open(path, 'w', encoding='utf-8') as stream:
            emit(stream, 'json', {}, [], dataset.to_records())
        assert read_dataset(str(path)) == dataset

    def test_missing(self, tmp_path):
        with pytest.raises(ConfigurationError, match="dataset not found"):
            read_dataset(str(tmp_path / 'none.csv'))

    def test_empty(self, tmp_path):
        path = tmp_path / 'data.json'
        path.write_text('[]')
        with pytest.raises(InsufficientDataError, match="no dataset records"):
            read_dataset(str(path))


class TestParseGrid:

    def test_negative_start_joined_to_flag(self):
        assert join_grid_values(['curve', '--xi0', '-4..4:11', '-v']) == ['curve', '--xi0=-4..4:11', '-v']

    def test_other_arguments_untouched(self):
        argv = ['steady', '--xi0', '-1.5', '--zeta', '-1', '--freq', '10..100']
        assert join_grid_values(argv) == argv

    def test_range(self):
        assert parse_grid('0..1:5', 3) == (0.0, 1.0, 5)

    def test_default_count(self):
        assert parse_grid('-4..4', 801) == (-4.0, 4.0, 801)

    def test_single_value(self):
        assert parse_grid('2.5', 10) == (2.5, 2.5, 1)

    def test_reversed(self):
        with pytest.raises(ConfigurationError, match="low to high"):
            parse_grid('1..0', 5)

    def test_garbage(self):
        with pytest.raises(ConfigurationError, match="bad grid"):
            parse_grid('a..b', 5)

    def test_too_few_points(self):
        with pytest.raises(ConfigurationError, match="at least two points"):
            parse_grid('0..1:1', 5)


def json_output(capsys):
    return json.loads(capsys.readouterr().out)


def error_record(err):
    return json.loads(next(line for line in err.splitlines() if line.startswith("{")))


class TestCli:

    def test_help(self, capsys):
        assert run(['--help']) == EXIT_OK
        assert 'kerrspring' in capsys.readouterr().out

    def test_curve_peak(self, capsys):
        code = run(['curve', '--zeta', '0', '--xi0=-4..4:801', '--format', 'json'])
        assert code == EXIT_OK
        document = json_output(capsys)
        assert len(document['data']) == 801
        assert max(row['P_over_Pmax'] for row in document['data']) == pytest.approx(1.0, rel=1e-9)
        assert document['config']['run']['subcommand'] == 'curve'
        assert 'output' not in document['config']['run']

    def test_negative_grid_start_after_flag(self, capsys):
        assert run(['curve', '--zeta', '0', '--xi0', '-4..4', '--format', 'json']) == EXIT_OK
        rows = json_output(capsys)['data']
        assert len(rows) == 801
        assert rows[0]['xi0'] == -4.0
        assert rows[-1]['xi0'] == 4.0

    def test_steady_csv(self, capsys):
        assert run(['steady', '--zeta', '-1', '--xi0', '1.0']) == EXIT_OK
        out = capsys.readouterr().out
        assert out.startswith('# config: ')
        assert 'xi0,branch_index,n_bar,P_W,xi,stable,growth_rate_rad_s,P_ref_W' in out

    def test_gwd(self, capsys):
        assert run(['gwd', '--freq', '10..100:5', '--format', 'json']) == EXIT_OK
        rows = json_output(capsys)['data']
        assert [round(row['freq_Hz'], 6) for row in rows] == [10.0, 17.782794, 31.622777, 56.234133, 100.0]

    def test_synth_then_fit_is_reproducible(self, tmp_path, capsys):
        data = tmp_path / 'data.json'
        assert run(['synth', '--zeta', '-0.3', '--noise', '0.01', '--seed', '4', '--format', 'json',
                    '-o', str(data)]) == EXIT_OK
        outputs = []
        for name in ('first.json', 'second.json'):
            target = tmp_path / name
            assert run(['fit', '--input', str(data), '--format', 'json', '-o', str(target)]) == EXIT_OK
            outputs.append(target.read_bytes())
        assert outputs[0] == outputs[1]
        fit = json.loads(outputs[0])['data'][0]
        assert fit['zeta'] == pytest.approx(-0.3, abs=0.1)

    def test_unknown_parameter_key(self, tmp_path, capsys):
        path = tmp_path / 'params.json'
        path.write_text(json.dumps({'cavity': {'colour': 'red'}}))
        assert run(['curve', '--params', str(path)]) == EXIT_CONFIG
        record = error_record(capsys.readouterr().err)
        assert record['error'] == 'ConfigurationError'
        assert record['exit_code'] == EXIT_CONFIG

    def test_missing_parameter_file(self, tmp_path):
        assert run(['curve', '--params', str(tmp_path / 'absent.toml')]) == EXIT_CONFIG

    def test_bad_jobs(self):
        assert run(['curve', '--jobs', '0']) == EXIT_CONFIG

    def test_numerical_failure(self, monkeypatch, capsys):
        def broken(*args, **kwargs):
            raise NumericalFailureError("root polishing did not converge")

        monkeypatch.setattr(kerrspring, 'power_curve', broken)
        assert run(['curve', '--zeta', '0']) == EXIT_NUMERICAL
        captured = capsys.readouterr()
        assert captured.out == ''
        record = error_record(captured.err)
        assert record == {'error': 'NumericalFailureError', 'exit_code': EXIT_NUMERICAL,
                          'message': 'root polishing did not converge'}
        assert '❌ Error: root polishing did not converge' in captured.err

    def test_reproduce_writes_checks(self, capsys):
        assert run(['reproduce', 'fig1b']) == EXIT_OK
        out = capsys.readouterr().out
        assert '# check: peak_power_zeta_0 pass' in out
        assert '# check: peak_detuning_zeta_-1 pass' in out

    def test_failed_check_still_writes_data(self, monkeypatch, capsys):
        def failing(config, seed=0, jobs=1):
            return RecipeResult('fig1b', ['x'], [{'x': 0.25}], [_check('x_limit', 2.0, 1.0, 0.1)])

        monkeypatch.setitem(recipes.RECIPE_FUNCTIONS, 'fig1b', failing)
        assert run(['reproduce', 'fig1b']) == EXIT_RECIPE
        captured = capsys.readouterr()
        assert '# check: x_limit FAIL expected=1.0 actual=2.0' in captured.out
        assert captured.out.rstrip().endswith('x\n0.25')
        assert error_record(captured.err)['error'] == 'RecipeCheckError'
