# -*- coding: utf-8 -*-
import json

import pandas as pd
import pytest

from main import EXIT_INPUT, EXIT_OK, EXIT_RUNTIME, main, parse_arguments

UNIT_MODEL = """
component Unit(lambda: real = 0.01, mu: real = 0.1) {
    automaton Function {
        state OK init;
        state NOK;
        trans OK -> NOK law expo(lambda);
        trans NOK -> OK law expo(mu);
    }
}

system Units {
    instance unit0: Unit();
}
"""

DRIFT_MODEL = """
component Drift {
    var rate: real = -1.0;
    automaton A {
        state S init;
        state T;
        trans S -> T law expo(rate);
    }
}

system Broken {
    instance d: Drift();
}
"""


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    """临时工作目录：关闭文件日志，输出写到 tmp_path/output"""
    config = {'output_root': str(tmp_path / 'output'), 'logging': {'file_enabled': False}}
    (tmp_path / 'config.json').write_text(json.dumps(config), encoding='utf-8')
    (tmp_path / 'unit.model').write_text(UNIT_MODEL, encoding='utf-8')
    (tmp_path / 'drift.model').write_text(DRIFT_MODEL, encoding='utf-8')
    monkeypatch.chdir(tmp_path)
    return tmp_path


def test_simulate_writes_traces(workspace, cases_dir):
    out = workspace / 'sim'
    code = main(['simulate', str(cases_dir / 'case0.model'), '--horizon', '20', '--seed', '1',
                 '--step', '0.1', '--grid', '1', '--set', 'Heater.lambda=0.0', '--out', str(out)])
    assert code == EXIT_OK
    firings = pd.read_csv(out / 'firings.csv')
    samples = pd.read_csv(out / 'samples.csv')
    assert firings['transition'].tolist() == ['ON_to_OFF']
    assert len(samples) == 21


def test_simulate_zero_horizon(workspace, cases_dir):
    out = workspace / 'zero'
    assert main(['simulate', str(cases_dir / 'case0.model'), '--horizon', '0', '--grid', '1',
                 '--out', str(out)]) == EXIT_OK
    assert len(pd.read_csv(out / 'samples.csv')) == 1
    assert pd.read_csv(out / 'firings.csv').empty


def test_simulate_parquet_to_default_directory(workspace, cases_dir):
    assert main(['simulate', str(cases_dir / 'case0.model'), '--horizon', '5', '--grid', '1',
                 '--step', '0.1', '--format', 'parquet']) == EXIT_OK
    assert (workspace / 'output' / 'simulate' / 'samples.parquet').is_file()


def test_experiment_with_predicate(workspace):
    out = workspace / 'exp'
    code = main(['experiment', 'unit.model', '--runs', '5', '--horizon', '200', '--seed', '3',
                 '--set', 'unit0.lambda=0.05', '--predicate', 'down=active(Function.NOK)',
                 '--no-progress', '--out', str(out)])
    assert code == EXIT_OK
    results = pd.read_csv(out / 'results.csv')
    assert 'down' in results['key'].tolist()
    assert (results['runs'] == 5).all()
    assert (out / 'clusters.csv').is_file()


def test_metrics_and_diff(workspace, cases_dir):
    assert main(['metrics', str(cases_dir / 'case0.model'), '--out', str(workspace / 'm')]) == EXIT_OK
    table = pd.read_csv(workspace / 'm' / 'metrics.csv')
    assert table['code'].tolist() == [48]
    assert table['files'].tolist() == [3]

    assert main(['diff', str(cases_dir / 'case0.model'), str(cases_dir / 'case1.model'),
                 '--out', str(workspace / 'd')]) == EXIT_OK
    diff = pd.read_csv(workspace / 'd' / 'diff.csv')
    assert diff['rloc_percent'].tolist() == [pytest.approx(12.96)]

    assert main(['metrics', str(cases_dir / 'case0.model'), '--no-includes',
                 '--out', str(workspace / 'n')]) == EXIT_OK
    assert pd.read_csv(workspace / 'n' / 'metrics.csv')['files'].tolist() == [1]


def test_report_writes_all_tables(workspace, cases_dir):
    out = workspace / 'report'
    assert main(['report', '--cases', str(cases_dir), '--out', str(out)]) == EXIT_OK
    assert len(list(out.glob('*.csv'))) == 8


@pytest.mark.parametrize('argv', [
    ['simulate', 'missing.model'],
    ['metrics', 'missing.model'],
    ['report', '--cases', 'no-such-dir'],
    ['experiment', 'unit.model', '--runs', '2', '--set', 'ghost.lambda=1', '--no-progress'],
])
def test_input_errors_exit_with_input_code(workspace, argv):
    assert main(argv) == EXIT_INPUT


def test_unknown_profile_is_input_error(workspace, cases_dir):
    assert main(['metrics', str(cases_dir / 'case0.model'), '--profile', 'cobol-85']) == EXIT_INPUT


def test_syntax_error_is_input_error(workspace):
    (workspace / 'bad.model').write_text('system {\n  instance a Heater();\n}\n', encoding='utf-8')
    assert main(['simulate', 'bad.model']) == EXIT_INPUT


def test_runtime_error_exit_code(workspace):
    assert main(['simulate', 'drift.model', '--horizon', '1']) == EXIT_RUNTIME


def test_broken_config_is_input_error(workspace, cases_dir):
    (workspace / 'broken.json').write_text('{ not json', encoding='utf-8')
    assert main(['--config', 'broken.json', 'metrics', str(cases_dir / 'case0.model')]) == EXIT_INPUT


@pytest.mark.parametrize('value', ['novalue', '=1', 'x=[1]', 'x=abc'])
def test_invalid_overrides_rejected_by_parser(value):
    with pytest.raises(SystemExit):
        parse_arguments(['simulate', 'm.model', '--set', value])


def test_argument_parsing():
    args = parse_arguments(['experiment', 'm.model', '-r', '10', '-w', '2', '--set', 'heater0.isMain=true',
                            '--set', 'Heater.mu=0.5', '--predicate', 'p = x > 1'])
    assert (args.runs, args.workers) == (10, 2)
    assert args.set == [('heater0.isMain', True), ('Heater.mu', 0.5)]
    assert args.predicate == [('p', 'x > 1')]
