# -*- coding: utf-8 -*-
import math

import pytest

from heated_room import (FIG2B_PARAMS, HEATERS, NO_FAILURE, TEXT_PARAMS, CaseCatalog, HeaterParams, RoomParams,
                         build_case, closed_form_temperature, equilibrium_temperature, steady_state_unavailability,
                         thermostat_switch_times, time_to_reach, zero_ok_probability)
from model_dsl import load_model
from pdmp_engine import EngineConfig, run_replication

CATALOG = CaseCatalog()


def firing_keys(trace):
    return [(f.instance, f.automaton, f.transition, f.time) for f in trace.firings]


def assert_same_trace(a, b):
    assert [k[:3] for k in firing_keys(a)] == [k[:3] for k in firing_keys(b)]
    assert [k[3] for k in firing_keys(a)] == pytest.approx([k[3] for k in firing_keys(b)], abs=1e-6)
    assert [v for _, v in a.series('room.temperature')] == pytest.approx(
        [v for _, v in b.series('room.temperature')], abs=1e-6)


# ---------------------------------------------------------------------------
# 解析解
# ---------------------------------------------------------------------------

def test_equilibrium_temperatures():
    assert equilibrium_temperature(0) == pytest.approx(13.0)
    assert equilibrium_temperature(1) == pytest.approx(23.0)
    assert equilibrium_temperature(4) == pytest.approx(53.0)


def test_closed_form_identity_and_limit():
    assert closed_form_temperature(1, 17.0, 0.0) == pytest.approx(17.0)
    assert closed_form_temperature(1, 17.0, 1e4) == pytest.approx(23.0)
    assert closed_form_temperature(0, 22.0, 10 * math.log(4.5)) == pytest.approx(15.0)


def test_thermostat_switch_times():
    on_to_off, off_to_on = thermostat_switch_times(2)
    assert on_to_off == pytest.approx(17.91759469, abs=1e-8)
    assert off_to_on - on_to_off == pytest.approx(15.04077397, abs=1e-8)
    third = thermostat_switch_times(3)[2]
    assert third - off_to_on == pytest.approx(time_to_reach(22.0, 1, 15.0), abs=1e-12)


def test_unreachable_target_is_infinite():
    assert time_to_reach(30.0, 1, 17.0) == math.inf
    assert time_to_reach(17.0, 1, 17.0) == 0.0


def test_markov_oracles():
    assert steady_state_unavailability(0.01, 0.1) == pytest.approx(1 / 11)
    assert steady_state_unavailability(0.01, 0.01) == pytest.approx(0.5)
    assert steady_state_unavailability(0.02, 0.01) == pytest.approx(2 / 3)
    rates = [(0.02, 0.01), (0.01, 0.01), (0.01, 0.01), (0.01, 0.01)]
    assert zero_ok_probability(rates) == pytest.approx(1 / 12)


@pytest.mark.parametrize('kwargs', [
    dict(max_temperature=15.0, min_temperature=15.0),
    dict(power=0.0),
    dict(failure_rate=-0.1),
    dict(repair_rate=0.0),
])
def test_invalid_heater_params(kwargs):
    with pytest.raises(ValueError):
        HeaterParams(**kwargs)


def test_invalid_room_and_rates():
    with pytest.raises(ValueError):
        RoomParams(leakage=0.0)
    with pytest.raises(ValueError):
        steady_state_unavailability(0.01, 0.0)


def test_parameter_sets_name_existing_targets():
    assert set(TEXT_PARAMS) == {'Heater.lambda', 'Heater.mu'}
    assert {key.split('.')[0] for key in FIG2B_PARAMS} == set(HEATERS)


# ---------------------------------------------------------------------------
# 用例目录
# ---------------------------------------------------------------------------

def test_catalog_lookup():
    assert CATALOG.ids() == ('0', '1', '2', '0a', '1a', '2a')
    assert len(CATALOG) == 6
    assert CATALOG.get('2a').chain_length == 4
    assert CATALOG.path('1').name == 'case1.model'
    with pytest.raises(KeyError):
        CATALOG.get('3')
    with pytest.raises(KeyError):
        build_case('3')


@pytest.mark.parametrize('case_id', CATALOG.ids())
def test_files_exist(case_id):
    assert CATALOG.path(case_id).is_file()


# ---------------------------------------------------------------------------
# 构建器与 DSL 等价
# ---------------------------------------------------------------------------

@pytest.mark.parametrize('case_id', CATALOG.ids())
def test_builder_matches_dsl_structure(case_id):
    built = build_case(case_id)
    loaded = load_model(CATALOG.path(case_id))
    assert built.describe() == loaded.describe()
    assert built.parameters == loaded.parameters
    assert [str(c) for c in built.connections] == [str(c) for c in loaded.connections]
    assert built.backup_chains == loaded.backup_chains


@pytest.mark.parametrize('case_id', CATALOG.ids())
def test_builder_matches_dsl_behaviour(case_id):
    config = EngineConfig(horizon=120.0, seed=9, step_size=0.05, sample_step=5.0)
    built = run_replication(build_case(case_id, NO_FAILURE), config)
    loaded = run_replication(load_model(CATALOG.path(case_id), NO_FAILURE), config)
    assert_same_trace(built, loaded)


@pytest.mark.parametrize('original, alternative', [('0', '0a'), ('1', '1a'), ('2', '2a')])
def test_alternative_design_is_equivalent_without_failures(original, alternative):
    config = EngineConfig(horizon=150.0, seed=17, step_size=0.05, sample_step=5.0)
    a = run_replication(load_model(CATALOG.path(original), NO_FAILURE), config)
    b = run_replication(load_model(CATALOG.path(alternative), NO_FAILURE), config)
    assert a.firings
    assert_same_trace(a, b)


def test_mediator_keeps_random_behaviour_of_point_to_point_wiring():
    config = EngineConfig(horizon=300.0, seed=17, step_size=0.05, sample_step=5.0)
    a = run_replication(load_model(CATALOG.path('1'), TEXT_PARAMS), config)
    b = run_replication(load_model(CATALOG.path('1a'), TEXT_PARAMS), config)
    assert_same_trace(a, b)


@pytest.mark.parametrize('case_id', ['2', '2a'])
def test_standby_designs_power_at_most_one_heater(case_id):
    model = load_model(CATALOG.path(case_id), FIG2B_PARAMS)
    config = EngineConfig(horizon=400.0, seed=3, step_size=0.25, sample_step=None)
    for run in range(100):
        trace = run_replication(model, config, run=run)
        checkpoints = sorted({f.time for f in trace.firings} | {10.0 * k for k in range(41)})
        for t in checkpoints:
            states = trace.state_at(t)
            powered = [h for h in HEATERS if states[f"{h}.Power"] == 'ON']
            assert len(powered) <= 1, (run, t, powered)


def test_independent_heaters_all_start_on():
    trace = run_replication(load_model(CATALOG.path('1'), NO_FAILURE),
                            EngineConfig(horizon=1.0, step_size=0.1, sample_step=None))
    assert all(trace.state_at(0.0)[f"{h}.Power"] == 'ON' for h in HEATERS)


def crossing_times(trace):
    """恒温阈值穿越时刻：正常加热器的电源切换（t=0 也算）"""
    times = [0.0]
    for f in trace.firings:
        if f.automaton == 'Power' and trace.state_at(f.time)[f"{f.instance}.Function"] == 'OK':
            if f.time != times[-1]:
                times.append(f.time)
    return times


@pytest.mark.parametrize('case_id', ['1', '1a'])
def test_working_heaters_switch_in_phase(case_id):
    model = load_model(CATALOG.path(case_id), TEXT_PARAMS)
    config = EngineConfig(horizon=1000.0, seed=31, step_size=0.05, sample_step=None)
    checked = 0
    for run in range(10):
        trace = run_replication(model, config, run=run)
        crossings = crossing_times(trace)
        repairs_and_failures = [f.time for f in trace.firings if f.automaton == 'Function']
        checkpoints = sorted({f.time for f in trace.firings} | {5.0 * k for k in range(201)})
        for t in checkpoints:
            last = max(c for c in crossings if c <= t)
            if any(last < r <= t for r in repairs_and_failures):
                continue
            at_crossing = trace.state_at(last)
            working = [h for h in HEATERS if at_crossing[f"{h}.Function"] == 'OK']
            states = trace.state_at(t)
            assert len({states[f"{h}.Power"] for h in working}) <= 1, (run, t, working)
            checked += 1
    assert checked > 100
