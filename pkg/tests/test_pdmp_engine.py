# -*- coding: utf-8 -*-
import math

import pandas as pd
import pytest
from scipy.stats import ks_2samp

from errors import LawError, LivelockError, NumericError, ValidationError, ZenoError
from flow_kernel import flow_kernel
from heated_room import (FIG2B_PARAMS, NO_FAILURE, CASES_DIR, TEXT_PARAMS, RoomParams, closed_form_temperature,
                         equilibrium_temperature, thermostat_switch_times)
from kernel import ComponentBuilder, SystemBuilder, expo, inst
from model_dsl import elaborate, load_model, parse
from pdmp_engine import (EngineConfig, RandomStream, integrate_until_event, run_replication, sample_exponential,
                         write_trace)


def thermostat_config(horizon=40.0, sample_step=None, step_size=0.01):
    return EngineConfig(horizon=horizon, seed=42, step_size=step_size, sample_step=sample_step)


@pytest.fixture(scope='module')
def case0_deterministic():
    return load_model(CASES_DIR / 'case0.model', NO_FAILURE)


def power_firings(trace):
    return [f for f in trace.firings if f.automaton == 'Power']


def test_engine_config_validation():
    with pytest.raises(ValidationError):
        EngineConfig(step_size=0)
    with pytest.raises(ValidationError):
        EngineConfig(horizon=-1)
    with pytest.raises(ValidationError):
        EngineConfig(clock_policy='sometimes')
    config = EngineConfig.from_dict({'horizon': 5, 'unknown': 1, 'predicates': {'p': 'true'}})
    assert config.horizon == 5 and config.predicates == (('p', 'true'),)


def test_random_streams_are_reproducible_and_independent():
    a, b = RandomStream(7, 3), RandomStream(7, 3)
    assert [a.uniform() for _ in range(5)] == [b.uniform() for _ in range(5)]
    s0, s1 = RandomStream(7, 0), RandomStream(7, 1)
    assert [s0.uniform() for _ in range(5)] != [s1.uniform() for _ in range(5)]


def test_sample_exponential_inverse_transform():
    stream = RandomStream(1)
    assert sample_exponential(stream, 2.0, u=math.exp(-1)) == pytest.approx(0.5)
    with pytest.raises(LawError):
        sample_exponential(stream, 0.0)


def test_thermostat_switch_times_match_closed_form(case0_deterministic):
    trace = run_replication(case0_deterministic, thermostat_config())
    first_off, first_on = power_firings(trace)[:2]
    assert (first_off.source, first_off.target) == ('ON', 'OFF')
    assert (first_on.source, first_on.target) == ('OFF', 'ON')
    expected = thermostat_switch_times(2)
    assert expected[0] == pytest.approx(10 * math.log(6), abs=1e-12)
    assert first_off.time == pytest.approx(17.917595, abs=1e-6)
    # 10 ln6 + 10 ln4.5 = 32.9583687
    assert first_on.time == pytest.approx(32.95837, abs=1e-5)
    assert first_off.time == pytest.approx(expected[0], abs=1e-6)
    assert first_on.time == pytest.approx(expected[1], abs=1e-6)


def test_temperature_matches_closed_form_at_firings(case0_deterministic):
    trace = run_replication(case0_deterministic, thermostat_config(horizon=120.0))
    room = RoomParams()
    t_prev, temp_prev, on = 0.0, room.initial_temperature, True
    values = dict(trace.event_values)
    for firing in power_firings(trace):
        expected = closed_form_temperature(1 if on else 0, temp_prev, firing.time - t_prev, room)
        assert values[firing.time][0] == pytest.approx(expected, abs=1e-6)
        t_prev, temp_prev, on = firing.time, values[firing.time][0], firing.target == 'ON'


def test_temperature_stays_in_band_after_first_crossing(case0_deterministic):
    trace = run_replication(case0_deterministic, thermostat_config(horizon=200.0, sample_step=0.5))
    first = power_firings(trace)[0].time
    series = [(t, v) for t, v in trace.series('room.temperature') if t >= first]
    assert series
    assert all(15.0 - 1e-6 <= v <= 22.0 + 1e-6 for _, v in series)


def test_zero_horizon_gives_trivial_trace(case0_deterministic):
    trace = run_replication(case0_deterministic, thermostat_config(horizon=0.0, sample_step=0.1))
    assert trace.firings == []
    assert trace.samples == [(0.0, 'room.temperature', 17.0)]
    assert all(v == 0.0 for v in trace.fractions().values())


def test_sample_grid_is_regular(case0_deterministic):
    trace = run_replication(case0_deterministic, thermostat_config(horizon=10.0, sample_step=0.5, step_size=0.1))
    times = [t for t, _ in trace.series('room.temperature')]
    assert times == pytest.approx([0.5 * k for k in range(21)])
    assert trace.series('room.temperature')[4][1] == pytest.approx(
        closed_form_temperature(1, 17.0, 2.0), abs=1e-6)


def test_occupancy_fractions_sum_to_one(case0_deterministic):
    config = EngineConfig(horizon=60.0, seed=3, step_size=0.25, sample_step=None)
    model = load_model(CASES_DIR / 'case0.model', {'Heater.lambda': 0.05, 'Heater.mu': 0.2})
    fractions = run_replication(model, config).fractions()
    for automaton in ('heater0.Function', 'heater0.Power'):
        total = sum(v for k, v in fractions.items() if k.startswith(automaton + '.'))
        assert total == pytest.approx(1.0, abs=1e-9)
    assert fractions['Function.NOK=0'] + fractions['Function.NOK=1'] == pytest.approx(1.0, abs=1e-9)


def test_state_at_reconstructs_quiescent_state(case0_deterministic):
    trace = run_replication(case0_deterministic, thermostat_config())
    first_off = power_firings(trace)[0].time
    assert trace.state_at(first_off - 1e-3)['heater0.Power'] == 'ON'
    assert trace.state_at(first_off)['heater0.Power'] == 'OFF'
    assert trace.state_at(0.0) == {'heater0.Function': 'OK', 'heater0.Power': 'ON'}


def test_same_seed_gives_byte_identical_csv(tmp_path):
    model = load_model(CASES_DIR / 'case0.model', {'Heater.lambda': 0.05})
    config = EngineConfig(horizon=80.0, seed=11, step_size=0.25, sample_step=1.0)
    first = write_trace(run_replication(model, config), tmp_path / 'a')
    second = write_trace(run_replication(model, config), tmp_path / 'b')
    for key in ('firings', 'samples'):
        assert first[key].read_bytes() == second[key].read_bytes()
    assert first['firings'].read_bytes().startswith(b'run,time,instance,automaton,transition,from,to\n')


def test_parquet_samples(tmp_path, case0_deterministic):
    paths = write_trace(run_replication(case0_deterministic, thermostat_config(horizon=5.0, sample_step=1.0)),
                        tmp_path, samples_format='parquet')
    frame = pd.read_parquet(paths['samples'])
    assert list(frame.columns) == ['run', 'time', 'variable', 'value']
    assert len(frame) == 6


def test_zero_rate_clock_never_fires(failure_system):
    model = failure_system([(0.0, 0.1)])
    trace = run_replication(model, EngineConfig(horizon=1e4, seed=1, sample_step=None))
    assert trace.firings == []
    assert trace.fractions()['unit0.Function.OK'] == pytest.approx(1.0)


def test_negative_runtime_rate_raises_law_error():
    builder = ComponentBuilder('Drift').variable('rate', 'real', -1.0)
    builder.automaton('A', ['S', 'T'], 'S').transition('S', 'T', expo('rate'))
    model = SystemBuilder().instance('d', builder.build()).build()
    with pytest.raises(LawError):
        run_replication(model, EngineConfig(horizon=1.0, sample_step=None))


def test_instantaneous_cycle_is_livelock():
    builder = ComponentBuilder('Flip')
    (builder.automaton('A', ['S', 'T'], 'S')
     .transition('S', 'T', inst(1))
     .transition('T', 'S', inst(1)))
    model = SystemBuilder().instance('f', builder.build()).build()
    with pytest.raises(LivelockError):
        run_replication(model, EngineConfig(horizon=1.0, sample_step=None, max_cascade_iterations=50))


def test_event_budget_raises_zeno_error(failure_system):
    model = failure_system([(5.0, 5.0)])
    with pytest.raises(ZenoError):
        run_replication(model, EngineConfig(horizon=1e4, sample_step=None, max_events=100))


def test_instantaneous_weights_block_until_reenabled():
    builder = ComponentBuilder('Coin')
    builder.automaton('A', ['S', 'T'], 'S').transition('S', 'T', inst(0.5))
    model = SystemBuilder().instance('c', builder.build()).build()
    outcomes = {run_replication(model, EngineConfig(horizon=1.0, seed=5, sample_step=None), run=r)
                .end_state_signature for r in range(40)}
    assert outcomes == {('c.A.S',), ('c.A.T',)}


def test_integrate_until_event_locates_guard():
    model = load_model(CASES_DIR / 'case0.model', NO_FAILURE)
    state = model.initial_state()
    config = EngineConfig(step_size=0.01, event_time_tolerance=1e-10)
    slot = model.slot_index[('room', 'temperature')]
    guard = lambda s: s.values[slot] >= 20.0
    result = integrate_until_event(model, state, 0.0, 100.0, config, guards=[guard])
    expected = -10 * math.log((20.0 - equilibrium_temperature(1)) / (17.0 - equilibrium_temperature(1)))
    assert result.reason == 'guard'
    assert result.time == pytest.approx(expected, abs=1e-8)
    assert state.values[slot] >= 20.0


def first_failure_times(policy):
    """带一个高频无关自动机的组件：every_event 策略下故障时钟在每次事件后重抽"""
    builder = ComponentBuilder('Noisy')
    builder.automaton('Function', ['OK', 'NOK'], 'OK').transition('OK', 'NOK', expo(0.5))
    (builder.automaton('Ticker', ['A', 'B'], 'A')
     .transition('A', 'B', expo(2.0))
     .transition('B', 'A', expo(2.0)))
    model = SystemBuilder().instance('n', builder.build()).build()
    config = EngineConfig(horizon=60.0, seed=2024, sample_step=None, clock_policy=policy)
    times = []
    for run in range(300):
        trace = run_replication(model, config, run=run)
        times.extend(f.time for f in trace.firings if f.automaton == 'Function')
    return times


def test_clock_policies_agree_in_distribution():
    on_entry = first_failure_times('on_entry')
    every_event = first_failure_times('every_event')
    assert len(on_entry) == len(every_event) == 300
    assert ks_2samp(on_entry, every_event).pvalue > 0.001
    assert sum(on_entry) / len(on_entry) == pytest.approx(2.0, rel=0.2)


# ---------------------------------------------------------------------------
# 停止条件、启动钩子与数值错误
# ---------------------------------------------------------------------------

TANK = """
component Tank(target: real = 40) {
    var temperature: real = 0;
    hook preheat {
        temperature = 10;
    }
}

system Heating {
    instance tank: Tank();
    pdmp flow {
        ode tank.temperature;
        eq d(tank.temperature)/dt = RATE;
        stop temperature >= 20;
        START
    }
}
"""


def tank_model(rate='0.1 * (target - temperature)', start=''):
    return elaborate(parse(TANK.replace('RATE', rate).replace('START', start)))


def event_times(trace):
    return [t for t, _ in trace.event_values]


@pytest.mark.parametrize('compiled', [True, False])
def test_stop_condition_creates_event(compiled):
    config = EngineConfig(horizon=10.0, sample_step=None, compiled_flow=compiled)
    trace = run_replication(tank_model(), config)
    # 40 (1 - exp(-t/10)) = 20
    stops = [t for t in event_times(trace) if 0.0 < t < 10.0]
    assert stops == [pytest.approx(10 * math.log(2), abs=1e-6)]
    assert stops[0] == pytest.approx(6.9314718056, abs=1e-6)
    assert trace.firings == []


@pytest.mark.parametrize('compiled', [True, False])
def test_start_hook_runs_before_flow(compiled):
    config = EngineConfig(horizon=10.0, sample_step=1.0, compiled_flow=compiled)
    trace = run_replication(tank_model(start='start tank.preheat;'), config)
    assert trace.event_values[0] == (0.0, (10.0,))
    assert trace.series('tank.temperature')[0] == (0.0, 10.0)
    # 40 - 30 exp(-t/10) = 20
    stops = [t for t in event_times(trace) if 0.0 < t < 10.0]
    assert stops == [pytest.approx(10 * math.log(1.5), abs=1e-6)]


@pytest.mark.parametrize('compiled', [True, False])
def test_non_finite_derivative_raises_numeric_error(compiled):
    # dT/dt = (T + 1)^2 在 t=1 处爆破
    model = tank_model(rate='(temperature + 1) * (temperature + 1)')
    with pytest.raises(NumericError):
        run_replication(model, EngineConfig(horizon=5.0, sample_step=None, compiled_flow=compiled))


# ---------------------------------------------------------------------------
# 编译流与解释流
# ---------------------------------------------------------------------------

@pytest.mark.parametrize('case_id, overrides', [('0', NO_FAILURE), ('0', TEXT_PARAMS), ('2', FIG2B_PARAMS),
                                                ('1a', TEXT_PARAMS)])
def test_compiled_flow_matches_interpreted(case_id, overrides):
    model = load_model(CASES_DIR / f"case{case_id}.model", overrides)
    assert flow_kernel(model) is not None
    config = EngineConfig(horizon=300.0, seed=8, step_size=0.05, sample_step=2.0)
    compiled = run_replication(model, config, run=1)
    interpreted = run_replication(model, EngineConfig(horizon=300.0, seed=8, step_size=0.05, sample_step=2.0,
                                                      compiled_flow=False), run=1)
    assert [(f.instance, f.transition) for f in compiled.firings] == \
        [(f.instance, f.transition) for f in interpreted.firings]
    assert [f.time for f in compiled.firings] == pytest.approx([f.time for f in interpreted.firings], abs=1e-7)
    assert [v for _, _, v in compiled.samples] == pytest.approx([v for _, _, v in interpreted.samples], abs=1e-7)
    assert compiled.end_state_signature == interpreted.end_state_signature


FEED = """
component Source(level: real = 2) {
    msgbox feed {
        export level as level;
    }
}

component Sink(k: int = 0) {
    var x: real = 0;
    var slot: int = k;
    msgbox feed {
        import level;
    }
}

system Feed {
    instance source: Source();
    instance sink: Sink();
    connect source.feed <-> sink.feed;
    pdmp flow {
        ode sink.x;
        eq d(sink.x)/dt = level[slot];
    }
}
"""


def test_runtime_index_falls_back_to_interpreted_flow():
    model = elaborate(parse(FEED))
    assert flow_kernel(model) is None
    trace = run_replication(model, EngineConfig(horizon=3.0, sample_step=1.0))
    assert [v for _, v in trace.series('sink.x')] == pytest.approx([0.0, 2.0, 4.0, 6.0])
