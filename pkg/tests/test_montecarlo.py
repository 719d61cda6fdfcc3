# -*- coding: utf-8 -*-
import math
import os
import random
import time

import pandas as pd
import pytest

from errors import LawError, ReplicationError, ValidationError
from heated_room import (CASES_DIR, FIG2B_PARAMS, NO_FAILURE, TEXT_PARAMS, steady_state_unavailability,
                         zero_ok_probability)
from kernel import ComponentBuilder, SystemBuilder, expo, inst
from montecarlo import (CLUSTER_COLUMNS, RESULT_COLUMNS, TRAJECTORY_COLUMNS, ExperimentSpec, ReplicationSummary,
                        aggregate, cluster_proportions, cluster_sequences, mean_and_stderr, run_experiment,
                        write_result)
from pdmp_engine import EngineConfig, run_replication


def experiment(model, **kwargs):
    return run_experiment(ExperimentSpec(model=model, **kwargs), progress=False)


def test_mean_and_stderr():
    mean, stderr = mean_and_stderr([1.0, 2.0, 3.0])
    assert mean == pytest.approx(2.0)
    assert stderr == pytest.approx(1 / math.sqrt(3))
    assert mean_and_stderr([4.0]) == (4.0, 0.0)
    assert all(math.isnan(v) for v in mean_and_stderr([]))


def test_spec_validation():
    with pytest.raises(ValidationError):
        ExperimentSpec(model='x.model', runs=0)
    with pytest.raises(ValidationError):
        ExperimentSpec(model='x.model', workers=0)
    with pytest.raises(ValidationError):
        ExperimentSpec(model='x.model', statistics=('occupancy', 'histogram'))
    with pytest.raises(ValidationError):
        ExperimentSpec(model='x.model', statistics=('trajectory',))


def test_unavailability_matches_markov_chain(failure_system):
    result = experiment(failure_system([(0.01, 0.1)]), runs=300, horizon=1e4, seed=7)
    mean, stderr = result.fraction('unit0', 'Function.NOK')
    assert stderr > 0
    assert abs(mean - steady_state_unavailability(0.01, 0.1)) < 4 * stderr
    ok, _ = result.fraction('unit0', 'Function.OK')
    assert ok + mean == pytest.approx(1.0)


def test_all_units_down_probability(failure_system):
    rates = [(0.02, 0.01), (0.01, 0.01), (0.01, 0.01), (0.01, 0.01)]
    result = experiment(failure_system(rates), runs=200, horizon=1e4, seed=21)
    mean, stderr = result.fraction('*', 'Function.NOK=4')
    assert abs(mean - zero_ok_probability(rates)) < 4 * stderr
    counts = result.statistics[result.statistics['statistic'] == 'count_fraction']
    assert set(counts['key']) >= {f"Function.NOK={k}" for k in range(5)}


def test_predicate_fraction_tracks_state(failure_system):
    result = experiment(failure_system([(0.05, 0.1)]), runs=20, horizon=500.0, seed=2,
                        predicates=(('down', 'active(Function.NOK)'),))
    down, _ = result.fraction('*', 'down')
    nok, _ = result.fraction('unit0', 'Function.NOK')
    assert down == pytest.approx(nok, abs=1e-12)
    row = result.statistics[result.statistics['key'] == 'down'].iloc[0]
    assert row['statistic'] == 'predicate'


def test_single_run_without_failures_gives_one_cluster(failure_system):
    result = experiment(failure_system([(0.0, 0.1)]), runs=1, horizon=100.0)
    assert len(result.clusters) == 1
    assert result.clusters[0].signature == ('unit0.Function.OK',)
    assert result.fraction('unit0', 'Function.OK') == (1.0, 0.0)


def test_cluster_sequences_and_proportions():
    signatures = [('u.F.OK',), ('u.F.NOK',), ('u.F.OK',), ('u.F.OK',), ('u.F.NOK',)]
    summaries = [ReplicationSummary(run, {}, sig) for run, sig in enumerate(signatures)]
    clusters = cluster_sequences(summaries)
    assert [(c.signature, c.count, c.representative) for c in clusters] == [
        (('u.F.OK',), 3, 0), (('u.F.NOK',), 2, 1)]
    assert cluster_proportions(clusters, 'u.F') == pytest.approx({'OK': 0.6, 'NOK': 0.4})
    assert cluster_proportions(clusters, 'v.F') == {}


def test_aggregate_is_order_independent(failure_system):
    result = experiment(failure_system([(0.05, 0.1), (0.02, 0.2)]), runs=30, horizon=300.0, seed=5)
    shuffled = list(result.summaries)
    random.Random(0).shuffle(shuffled)
    again = aggregate(shuffled, result.horizon)
    pd.testing.assert_frame_equal(again.statistics, result.statistics)
    assert again.clusters == result.clusters


def test_result_independent_of_worker_count(failure_system):
    model = failure_system([(0.05, 0.1), (0.02, 0.2)])
    serial = experiment(model, runs=24, horizon=300.0, seed=13, workers=1)
    parallel = experiment(model, runs=24, horizon=300.0, seed=13, workers=2)
    pd.testing.assert_frame_equal(serial.statistics, parallel.statistics)
    assert serial.clusters == parallel.clusters


def coin_with_bad_rate():
    """一半的重复在 t=0 进入 T，随后 T 的速率为负"""
    builder = ComponentBuilder('Coin').variable('rate', 'real', -1.0)
    (builder.automaton('A', ['S', 'T', 'U'], 'S')
     .transition('S', 'T', inst(0.5))
     .transition('T', 'U', expo('rate')))
    return SystemBuilder().instance('c', builder.build()).build()


@pytest.mark.parametrize('workers', [1, 2, 4])
def test_failed_replication_reports_its_index(workers):
    model = coin_with_bad_rate()
    config = EngineConfig(horizon=10.0, seed=42, sample_step=None)
    failing = []
    for run in range(20):
        try:
            run_replication(model, config, run=run)
        except LawError:
            failing.append(run)
    assert failing
    with pytest.raises(ReplicationError) as info:
        experiment(model, runs=20, horizon=10.0, seed=42, workers=workers)
    assert info.value.run == failing[0]
    assert isinstance(info.value.cause, LawError)


def test_experiment_from_model_file_with_trajectory(tmp_path):
    result = experiment(CASES_DIR / 'case0.model', runs=2, horizon=10.0, sample_step=1.0,
                        statistics=('occupancy', 'clusters', 'trajectory'),
                        engine=EngineConfig(step_size=0.1), overrides=tuple(NO_FAILURE.items()))
    trajectory = result.trajectory
    assert list(trajectory.columns) == TRAJECTORY_COLUMNS
    assert len(trajectory) == 11
    assert (trajectory['runs'] == 2).all()
    assert (trajectory['min'] == trajectory['max']).all()

    paths = write_result(result, tmp_path)
    assert set(paths) == {'results', 'clusters', 'trajectory'}
    assert paths['results'].read_text(encoding='utf-8').splitlines()[0] == ','.join(RESULT_COLUMNS)
    assert paths['clusters'].read_text(encoding='utf-8').splitlines()[0] == ','.join(CLUSTER_COLUMNS)


def test_trajectory_file_skipped_without_samples(tmp_path, failure_only_model):
    result = experiment(failure_only_model, runs=3, horizon=50.0)
    assert set(write_result(result, tmp_path)) == {'results', 'clusters'}


# ---------------------------------------------------------------------------
# 用例文件上的统计性质
# ---------------------------------------------------------------------------

def worker_count() -> int:
    return min(4, os.cpu_count() or 1)


@pytest.fixture(scope='module')
def case0_long_run():
    """用例 0：1000 次重复、horizon 1e4，返回 (结果, 耗时秒数)"""
    started = time.perf_counter()
    result = experiment(CASES_DIR / 'case0.model', runs=1000, horizon=1e4, seed=42, workers=worker_count(),
                        overrides=tuple(TEXT_PARAMS.items()))
    return result, time.perf_counter() - started


def test_case0_thousand_runs_within_a_minute(case0_long_run):
    result, elapsed = case0_long_run
    assert result.runs == 1000
    assert elapsed < 60.0, f"{elapsed:.1f}s"


def test_case0_unavailability_within_three_stderr(case0_long_run):
    result, _ = case0_long_run
    mean, stderr = result.fraction('heater0', 'Function.NOK')
    assert 0 < stderr < 0.01
    assert abs(mean - 1 / 11) < 3 * stderr


def test_case0_end_state_clusters(case0_long_run):
    result, _ = case0_long_run
    proportions = cluster_proportions(result.clusters, 'heater0.Function')
    p = steady_state_unavailability(0.01, 0.1)
    tolerance = 3 * math.sqrt(p * (1 - p) / result.runs)
    assert proportions['NOK'] == pytest.approx(p, abs=tolerance)
    assert proportions['OK'] == pytest.approx(1 - p, abs=tolerance)
    assert sum(c.count for c in result.clusters) == 1000


def test_stderr_shrinks_with_square_root_of_runs():
    result = experiment(CASES_DIR / 'case0.model', runs=1600, horizon=2000.0, seed=99, workers=worker_count(),
                        overrides=tuple(TEXT_PARAMS.items()), statistics=('occupancy',))
    nok = [s.fractions['heater0.Function.NOK'] for s in result.summaries]
    stderr = {runs: mean_and_stderr(nok[:runs])[1] for runs in (100, 400, 1600)}
    for runs in (100, 400):
        assert stderr[runs] * math.sqrt(runs / 1600) == pytest.approx(stderr[1600], rel=0.2)
    assert stderr[100] > stderr[400] > stderr[1600]


@pytest.mark.parametrize('case_id', ['2', '2a'])
def test_standby_zero_ok_fraction(case_id):
    result = experiment(CASES_DIR / f"case{case_id}.model", runs=100, horizon=1e4, seed=5, workers=worker_count(),
                        overrides=tuple(FIG2B_PARAMS.items()), statistics=('occupancy',))
    rates = [(FIG2B_PARAMS[f"heater{i}.lambda"], FIG2B_PARAMS[f"heater{i}.mu"]) for i in range(4)]
    expected = zero_ok_probability(rates)
    assert expected == pytest.approx(1 / 12)
    mean, stderr = result.fraction('*', 'Function.OK=0')
    assert stderr > 0
    assert abs(mean - expected) < 3 * stderr
