import json

import pandas as pd
import pytest

from jackstep import Jackstep
from twostep import ConfigurationError
from utils.configuration import Settings, get_env
from utils.plot import MAX_SIZE
from utils.utils import parse_columns, parse_int_list


@pytest.fixture
def app():
    jackstep = Jackstep(Settings(workers=1))
    jackstep.load_cogs()
    assert not jackstep.failed_cogs
    return jackstep


def data_args(path):
    return ['--data', str(path), '--r-col', 'T', '--z-cols', 'z1..z5', '--add-intercept']


class TestParsing:
    @pytest.mark.parametrize('spec, expected', [
        ('z1..z3', ['z1', 'z2', 'z3']),
        ('z1..3', ['z1', 'z2', 'z3']),
        ('y, x10..x12', ['y', 'x10', 'x11', 'x12']),
        ('a3..a1', ['a3', 'a2', 'a1']),
        ('', []),
    ])
    def test_parse_columns(self, spec, expected):
        assert parse_columns(spec) == expected

    def test_parse_int_list(self):
        assert parse_int_list('5, 40,80') == [5, 40, 80]


class TestSettings:
    def test_defaults(self):
        settings = Settings(workers=2)
        assert (settings.bootstrap, settings.alpha, settings.weights) == (500, 0.05, 'rademacher')

    def test_zero_workers_means_all_cores(self):
        assert Settings(workers=0).workers >= 1

    def test_file_then_environment(self, tmp_path):
        path = tmp_path / 'config.ini'
        path.write_text('[Main]\nseed = 3\nbootstrap = 100\nworkers = 2\n')
        settings = Settings.load(path, environ={'JACKSTEP_SEED': '7'})
        assert settings.seed == 7
        assert settings.bootstrap == 100
        assert settings.workers == 2

    def test_file_fallback(self, tmp_path):
        secret = tmp_path / 'alpha'
        secret.write_text('0.1\n')
        settings = Settings.load(tmp_path / 'missing.ini', environ={'JACKSTEP_ALPHA_FILE': str(secret),
                                                                    'JACKSTEP_WORKERS': '1'})
        assert settings.alpha == 0.1

    def test_missing_env_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="Couldn't find"):
            get_env('JACKSTEP_SEED', {'JACKSTEP_SEED_FILE': str(tmp_path / 'nope')})

    @pytest.mark.parametrize('env', [
        {'JACKSTEP_WORKERS': 'many'},
        {'JACKSTEP_ALPHA': '1.5'},
        {'JACKSTEP_LOG_LEVEL': 'LOUD'},
        {'JACKSTEP_SEED': '-1'},
    ])
    def test_bad_values(self, tmp_path, env):
        with pytest.raises(ConfigurationError):
            Settings.load(tmp_path / 'missing.ini', environ=env)


class TestCommands:
    def test_estimate_writes_report(self, app, toy_csv, tmp_path, capsys):
        out = tmp_path / 'report.json'
        code = app.run(['estimate', *data_args(toy_csv), '--bootstrap', '0', '--out', str(out)])
        assert code == 0
        report = json.loads(out.read_text())
        assert len(report['theta_hat']) == 3
        assert 'tau(0.5)' in report['intervals']
        assert report['intervals']['tau(0.5)']['method'] == 'normal'
        assert 'Design balance' in capsys.readouterr().out

    def test_estimate_summary_file(self, app, toy_csv, tmp_path):
        summary = tmp_path / 'out' / 'summary.txt'
        code = app.run(['estimate', *data_args(toy_csv), '--bootstrap', '0', '--summary', str(summary)])
        assert code == 0
        assert summary.exists()

    def test_missing_column(self, app, toy_csv):
        code = app.run(['estimate', '--data', str(toy_csv), '--r-col', 'T', '--z-cols', 'z1..z9', '--bootstrap', '0'])
        assert code == 2

    def test_missing_file(self, app, tmp_path):
        assert app.run(['estimate', *data_args(tmp_path / 'nope.csv'), '--bootstrap', '0']) == 2

    def test_unknown_flag(self, app, toy_csv):
        assert app.run(['estimate', *data_args(toy_csv), '--frobnicate']) == 1

    def test_unknown_command(self, app):
        assert app.run(['fit']) == 1

    def test_simulate_rejects_bad_config(self, app):
        assert app.run(['simulate', '--preset', 'smoke', '--reps', '1']) == 1

    def test_simulate_writes_table(self, app, tmp_path):
        config = tmp_path / 'sim.ini'
        config.write_text('[Simulation]\nn = 100\nk_grid = 3\nreps = 3\nseed = 2\n')
        out = tmp_path / 'table.csv'
        assert app.run(['simulate', '--config', str(config), '--out', str(out), '--text', str(tmp_path / 't.txt')]) == 0
        frame = pd.read_csv(out)
        assert list(frame['estimator']) == ['conventional', 'jackknife']

    def test_mte_curve(self, app, toy_csv, tmp_path):
        out, svg, preview = tmp_path / 'curve.csv', tmp_path / 'curve.svg', tmp_path / 'curve.png'
        args = ['mte-curve', *data_args(toy_csv), '--bootstrap', '0', '--out', str(out), '--svg', str(svg),
                '--preview', str(preview)]
        assert app.run(args) == 0
        frame = pd.read_csv(out)
        assert list(frame.columns) == ['a', 'tau_hat', 'tau_bc', 'ci_lo', 'ci_hi']
        assert len(frame) == 99
        first_svg = svg.read_bytes()
        assert app.run(args) == 0
        assert svg.read_bytes() == first_svg

        from PIL import Image
        with Image.open(preview) as img:
            assert img.size[0] <= MAX_SIZE[0] and img.size[1] <= MAX_SIZE[1]

    def test_diagnostics(self, app, toy_csv, capsys):
        assert app.run(['diagnostics', *data_args(toy_csv)]) == 0
        out = capsys.readouterr().out
        assert 'Design balance' in out

    def test_constant_treatment_is_bad_data(self, app, toy_csv, tmp_path):
        frame = pd.read_csv(toy_csv)
        frame['T'] = 1
        path = tmp_path / 'treated.csv'
        frame.to_csv(path, index=False)
        assert app.run(['estimate', *data_args(path), '--bootstrap', '0']) == 2

    def test_estimate_with_bootstrap(self, app, toy_csv, tmp_path, capsys):
        normal, boot = tmp_path / 'normal.json', tmp_path / 'boot.json'
        assert app.run(['estimate', *data_args(toy_csv), '--bootstrap', '0', '--out', str(normal)]) == 0
        assert app.run(['estimate', *data_args(toy_csv), '--bootstrap', '50', '--seed', '3', '--out', str(boot)]) == 0
        assert 'Percentile-t intervals from 50 bootstrap draws' in capsys.readouterr().out
        normal, boot = json.loads(normal.read_text()), json.loads(boot.read_text())
        assert boot['n_draws'] == 50
        assert len(boot['t_draws']) == 50
        assert boot['intervals'].keys() == normal['intervals'].keys()
        for interval in boot['intervals'].values():
            assert interval['method'] == 'percentile-t'
            assert interval['lower'] < interval['upper']
            assert interval['q_lower'] < interval['q_upper']

        def mean_length(report):
            return sum(i['upper'] - i['lower'] for i in report['intervals'].values()) / len(report['intervals'])
        assert mean_length(normal) <= mean_length(boot)

    def test_flagged_simulation_fails(self, app, monkeypatch, caplog):
        class Flagged:
            flagged = True

            def to_text(self):
                return 'table\n'
        monkeypatch.setattr('cogs.simulate.run_monte_carlo', lambda spec, workers: Flagged())
        assert app.run(['simulate', '--preset', 'smoke']) == 3
        assert 'more than 2% failed replications' in caplog.text
        assert '2%%' not in caplog.text
