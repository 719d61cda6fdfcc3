#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
PDMP 仿真引擎
事件之间按固定步长 RK4 推进连续变量，监控迁移条件与停止条件并二分定位翻转时刻；
指数时钟在进入源状态时抽样，事件时刻按确定顺序级联触发瞬时迁移直至静止
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from errors import LawError, LivelockError, NumericError, ValidationError, ZenoError
from expressions import Expr, as_expression, compile_expression, infer_type
from flow_kernel import CANDIDATE_REACHED, FLOW_FAILED, GUARD_FLIPPED, flow_kernel
from kernel import (ModelState, PdmpBinding, RuntimeTransition, SystemModel,
                    fire_notification_hooks)

logger = logging.getLogger(__name__)

__all__ = ['PdmpBinding', 'EngineConfig', 'RandomStream', 'sample_exponential', 'integrate_until_event',
           'run_replication', 'SimulationTrace', 'Firing', 'write_trace']

CANDIDATE, GUARD, STOP = 'candidate', 'guard', 'stop'
CLOCK_POLICIES = ('on_entry', 'every_event')


@dataclass(frozen=True)
class EngineConfig:
    """引擎参数；时间单位与模型一致"""
    horizon: float = 1000.0
    seed: int = 42
    step_size: float = 0.01
    event_time_tolerance: float = 1e-9
    max_cascade_iterations: int = 1000
    max_events: int = 1_000_000
    sample_step: Optional[float] = 0.1
    clock_policy: str = 'on_entry'
    compiled_flow: bool = True
    predicates: Tuple[Tuple[str, str], ...] = ()

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValidationError(f"step_size 必须大于 0: {self.step_size}")
        if not self.event_time_tolerance > 0:
            raise ValidationError(f"event_time_tolerance 必须大于 0: {self.event_time_tolerance}")
        if self.horizon < 0:
            raise ValidationError(f"horizon 不能为负: {self.horizon}")
        if self.sample_step is not None and self.sample_step <= 0:
            raise ValidationError(f"sample_step 必须大于 0: {self.sample_step}")
        if self.clock_policy not in CLOCK_POLICIES:
            raise ValidationError(f"clock_policy 必须是 {CLOCK_POLICIES} 之一: {self.clock_policy!r}")

    @classmethod
    def from_dict(cls, values: Dict) -> 'EngineConfig':
        known = {k: v for k, v in values.items() if k in cls.__dataclass_fields__}
        predicates = known.get('predicates')
        if isinstance(predicates, dict):
            known['predicates'] = tuple(predicates.items())
        elif predicates is not None:
            known['predicates'] = tuple(tuple(p) for p in predicates)
        return cls(**known)


class RandomStream:
    """可复现的随机流：(seed, index) 相同则抽样序列相同"""

    def __init__(self, seed: int, index: int = 0):
        self.seed = seed
        self.index = index
        self._rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(index,))))

    def uniform(self) -> float:
        """(0, 1) 上的均匀抽样"""
        u = self._rng.random()
        while u == 0.0:
            u = self._rng.random()
        return float(u)


def sample_exponential(stream: RandomStream, rate: float, u: Optional[float] = None) -> float:
    """逆变换抽样指数延迟 -ln(u)/rate"""
    if not rate > 0:
        raise LawError(f"指数分布速率必须为正: {rate}")
    if u is None:
        u = stream.uniform()
    return -math.log(u) / rate


# ---------------------------------------------------------------------------
# 连续流
# ---------------------------------------------------------------------------

@dataclass
class FlowResult:
    time: float
    reason: str
    state: ModelState


class SampleGrid:
    """固定采样网格 k*step (k>=0, 不超过 horizon)"""

    def __init__(self, step: Optional[float], horizon: float, names: Sequence[str]):
        self.step = step
        self.horizon = horizon
        self.names = tuple(names)
        self.k = 0
        self.samples: List[Tuple[float, str, float]] = []

    def _time_at(self, k: int) -> float:
        """第 k 个网格点的时刻，超出 horizon 时为 inf"""
        if self.step is None:
            return math.inf
        t = k * self.step
        if t <= self.horizon:
            return t
        # 浮点乘法可能略超 horizon
        return self.horizon if t - self.horizon <= 1e-9 * max(1.0, self.horizon) else math.inf

    @property
    def next_time(self) -> float:
        return self._time_at(self.k)

    def pending(self, until: float) -> List[float]:
        """不超过 until 的待采样时刻（不推进网格）"""
        times = []
        k = self.k
        while self._time_at(k) <= until:
            times.append(self._time_at(k))
            k += 1
        return times

    def record(self, t: float, values: Sequence[float]):
        """记录一个网格点并推进到下一点"""
        for name, value in zip(self.names, values):
            self.samples.append((t, name, float(value)))
        self.k += 1


def _derivatives(state: ModelState, slots, fns, y) -> List[float]:
    """把 y 写入变量槽后求全部导数，导数非有限时抛出 NumericError"""
    values = state.values
    for slot, v in zip(slots, y):
        values[slot] = v
    out = [f(state) for f in fns]
    for d in out:
        if not math.isfinite(d):
            raise NumericError(f"t={state.time:.9f} 处导数非有限: {out}")
    return out


def _rk4(state: ModelState, slots, fns, y0, dt: float) -> List[float]:
    """一个经典四阶 Runge-Kutta 步，结果同时写回状态"""
    k1 = _derivatives(state, slots, fns, y0)
    k2 = _derivatives(state, slots, fns, [y + 0.5 * dt * k for y, k in zip(y0, k1)])
    k3 = _derivatives(state, slots, fns, [y + 0.5 * dt * k for y, k in zip(y0, k2)])
    k4 = _derivatives(state, slots, fns, [y + dt * k for y, k in zip(y0, k3)])
    y1 = [y + dt / 6.0 * (a + 2 * b + 2 * c + d) for y, a, b, c, d in zip(y0, k1, k2, k3, k4)]
    for slot, v in zip(slots, y1):
        state.values[slot] = v
    return y1


def _flow_functions(model: SystemModel):
    """按 PDMP 声明顺序拼接的导数函数"""
    fns = []
    for binding in model.bindings:
        fns.extend(binding.derivatives)
    return fns


def integrate_until_event(model: SystemModel, state: ModelState, t_now: float, t_candidate: float,
                          config: EngineConfig, guards: Sequence[Callable[[ModelState], bool]] = (),
                          stops: Sequence[Callable[[ModelState], bool]] = (),
                          grid: Optional[SampleGrid] = None) -> FlowResult:
    """从 t_now 推进到 t_candidate，途中任一监控条件翻转则二分定位并提前返回

    返回时刻为条件已翻转的一侧，误差不超过 event_time_tolerance。
    """
    slots = model.ode_slots
    fns = _flow_functions(model)
    monitors = list(guards) + list(stops)
    state.time = t_now
    if not slots:
        if grid is not None:
            while grid.next_time <= t_candidate:
                grid.record(grid.next_time, ())
        state.time = t_candidate
        return FlowResult(t_candidate, CANDIDATE, state)

    h = config.step_size
    tol = config.event_time_tolerance
    y = [state.values[s] for s in slots]
    before = [m(state) for m in monitors]
    t = t_now
    while t < t_candidate:
        remaining = t_candidate - t
        dt = h if h < remaining else remaining
        y1 = _rk4(state, slots, fns, y, dt)
        after = [m(state) for m in monitors]
        if after != before:
            lo, hi = 0.0, dt
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                _rk4(state, slots, fns, y, mid)
                if [m(state) for m in monitors] != before:
                    hi = mid
                else:
                    lo = mid
            y_event = _rk4(state, slots, fns, y, hi)
            flipped = [i for i, m in enumerate(monitors) if m(state) != before[i]]
            reason = GUARD if any(i < len(guards) for i in flipped) else STOP
            t_event = t + hi
            _record_grid(grid, state, slots, fns, t, y, t_event, y_event)
            state.time = t_event
            logger.debug(f"t={t_event:.9f} 条件翻转 ({reason})")
            return FlowResult(t_event, reason, state)
        t_next = t_candidate if dt == remaining else t + dt
        _record_grid(grid, state, slots, fns, t, y, t_next, y1)
        t, y = t_next, y1
    state.time = t_candidate
    return FlowResult(t_candidate, CANDIDATE, state)


def _record_grid(grid: Optional[SampleGrid], state: ModelState, slots, fns, t0: float, y0, t1: float, y1):
    """记录落在 (t0, t1] 内的网格点，点间值从 y0 起积分得到"""
    if grid is None:
        return
    while grid.next_time <= t1:
        g = grid.next_time
        if g <= t0:
            grid.record(g, y0)
        elif g == t1:
            grid.record(g, y1)
        else:
            grid.record(g, _rk4(state, slots, fns, y0, g - t0))
    for slot, v in zip(slots, y1):
        state.values[slot] = v


# ---------------------------------------------------------------------------
# 重复仿真
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Firing:
    time: float
    instance: str
    automaton: str
    transition: str
    source: str
    target: str


@dataclass
class SimulationTrace:
    """一次重复仿真的完整记录"""
    run: int
    horizon: float
    variables: Tuple[str, ...]
    firings: List[Firing] = field(default_factory=list)
    samples: List[Tuple[float, str, float]] = field(default_factory=list)
    end_state_signature: Tuple[str, ...] = ()
    initial_states: Dict[str, str] = field(default_factory=dict)
    event_values: List[Tuple[float, Tuple[float, ...]]] = field(default_factory=list)
    occupancy: Dict[str, float] = field(default_factory=dict)

    def state_at(self, t: float) -> Dict[str, str]:
        """时刻 t 级联静止后的离散状态（'inst.Automaton' -> 状态名）"""
        states = dict(self.initial_states)
        for firing in self.firings:
            if firing.time > t:
                break
            states[f"{firing.instance}.{firing.automaton}"] = firing.target
        return states

    def fractions(self) -> Dict[str, float]:
        """各键的占用时间比例"""
        if self.horizon <= 0:
            return {key: 0.0 for key in self.occupancy}
        return {key: value / self.horizon for key, value in self.occupancy.items()}

    def series(self, variable: str) -> List[Tuple[float, float]]:
        """某个连续变量的 (时刻, 值) 序列"""
        return [(t, v) for t, name, v in self.samples if name == variable]


class _Replication:
    """单次重复仿真的可变上下文"""

    def __init__(self, model: SystemModel, config: EngineConfig, stream: RandomStream, run: int):
        self.model = model
        self.config = config
        self.stream = stream
        self.state = model.initial_state()
        self.clocks: Dict[int, Tuple[float, RuntimeTransition]] = {}
        self.blocked: set = set()
        self.stops = [stop for binding in model.bindings for stop in binding.stops]
        names = tuple('.'.join(model.slots[s]) for s in model.ode_slots)
        self.grid = SampleGrid(config.sample_step, config.horizon, names)
        self.trace = SimulationTrace(run, config.horizon, names)
        self.predicates = self._compile_predicates()
        self.counts = self._count_groups()
        self.kernel = flow_kernel(model) if config.compiled_flow else None
        # 各自动机各状态下带条件的出边编号；停止条件编号排在全部迁移之后
        self.guarded = [[tuple(tr.order for tr in out if tr.condition is not None) for out in a.outgoing]
                        for a in model.automata]
        first_stop = len(model.transitions)
        self.stop_ids = list(range(first_stop, first_stop + len(self.stops)))
        self.state_keys = [[f"{a.instance}.{a.name}.{s}" for s in a.states] for a in model.automata]
        self.count_keys = {group: [f"{group[0]}.{group[1]}={k}" for k in range(len(members) + 1)]
                           for group, members in self.counts.items()}
        self.occupancy: Dict[str, float] = {}
        for keys in self.state_keys:
            for key in keys:
                self.occupancy[key] = 0.0
        for keys in self.count_keys.values():
            for key in keys:
                self.occupancy[key] = 0.0
        for name, _ in self.predicates:
            self.occupancy[name] = 0.0
        self.predicate_values: List[bool] = []

    def _compile_predicates(self):
        """在第一个实例的作用域内编译用户谓词"""
        if not self.config.predicates:
            return []
        scope = self.model.scope(self.model.instances[0].name)
        compiled = []
        for name, text in self.config.predicates:
            expr = as_expression(text)
            infer_type(expr, scope)
            fn = compile_expression(expr, scope)
            compiled.append((name, lambda s, fn=fn: bool(fn(s, 0))))
        return compiled

    def _count_groups(self) -> Dict[Tuple[str, str], List[Tuple[int, int]]]:
        """按 (自动机名, 状态名) 归组，统计恰有 k 个实例处于该状态的时间"""
        groups: Dict[Tuple[str, str], List[Tuple[int, int]]] = {}
        for a in self.model.automata:
            for k, s in enumerate(a.states):
                groups.setdefault((a.name, s), []).append((a.index, k))
        return groups

    # 时钟 ------------------------------------------------------------------
    def _sample_clock(self, tr: RuntimeTransition, t: float):
        """按当前速率为指数迁移抽样到期时刻"""
        rate = tr.rate(self.state)
        if not math.isfinite(rate):
            raise NumericError(f"{tr.instance}.{tr.name} 的速率非有限: {rate}")
        if rate < 0:
            raise LawError(f"{tr.instance}.{tr.name} 的速率为负: {rate}")
        # 速率为 0 的时钟永不触发
        due = math.inf if rate == 0 else t + sample_exponential(self.stream, rate)
        self.clocks[tr.order] = (due, tr)

    def _refresh(self, t: float, resample_all: bool):
        """为新使能的指数迁移抽样，丢弃失效的时钟与阻塞标记"""
        s = self.state
        live = set()
        for a in self.model.automata:
            for tr in a.outgoing[s.active[a.index]]:
                enabled = tr.condition is None or tr.condition(s)
                if tr.stochastic:
                    if enabled:
                        live.add(tr.order)
                        if resample_all or tr.order not in self.clocks:
                            self._sample_clock(tr, t)
                elif enabled and tr.order in self.blocked:
                    live.add(tr.order)
        for order in [o for o in self.clocks if o not in live]:
            del self.clocks[order]
        self.blocked &= live

    def _next_clock(self) -> Tuple[float, Optional[RuntimeTransition]]:
        """最早到期的时钟；同时到期取编号小者"""
        best = (math.inf, None)
        for order in sorted(self.clocks):
            due, tr = self.clocks[order]
            if due < best[0]:
                best = (due, tr)
        return best

    # 触发 ------------------------------------------------------------------
    def _fire(self, tr: RuntimeTransition, t: float):
        """切换活动状态、执行通知钩子并记录触发"""
        s = self.state
        for old in self.model.automata[tr.automaton_index].outgoing[tr.source]:
            self.clocks.pop(old.order, None)
            self.blocked.discard(old.order)
        s.active[tr.automaton_index] = tr.target
        fire_notification_hooks(self.model, tr, s)
        self.trace.firings.append(Firing(t, tr.instance, tr.automaton, tr.name, tr.source_name, tr.target_name))
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug(f"t={t:.9f} {tr.instance}.{tr.automaton}.{tr.name}: {tr.source_name} -> {tr.target_name}")

    def _first_enabled(self) -> Optional[RuntimeTransition]:
        """按声明顺序找第一个使能且通过权重抽样的瞬时迁移"""
        s = self.state
        for a in self.model.automata:
            for tr in a.outgoing[s.active[a.index]]:
                if tr.stochastic or tr.order in self.blocked:
                    continue
                if tr.condition is not None and not tr.condition(s):
                    continue
                weight = tr.weight(s)
                if not 0 < weight <= 1:
                    raise LawError(f"{tr.instance}.{tr.name} 的权重 {weight} 不在 (0, 1] 内")
                if weight >= 1 or self.stream.uniform() < weight:
                    return tr
                self.blocked.add(tr.order)
        return None

    def _cascade(self, t: float):
        """同一时刻反复触发瞬时迁移直到静止"""
        fired = 0
        while True:
            tr = self._first_enabled()
            if tr is None:
                return
            fired += 1
            if fired > self.config.max_cascade_iterations:
                raise LivelockError(f"t={t:.9f} 处级联超过 {self.config.max_cascade_iterations} 次触发")
            self._fire(tr, t)

    # 统计 ------------------------------------------------------------------
    def _accumulate(self, t0: float, t1: float):
        """把 [t0, t1) 计入当前离散状态的占用时间"""
        dt = t1 - t0
        if dt <= 0:
            return
        active = self.state.active
        occupancy = self.occupancy
        for index, keys in enumerate(self.state_keys):
            occupancy[keys[active[index]]] += dt
        for group, members in self.counts.items():
            k = 0
            for index, target in members:
                if active[index] == target:
                    k += 1
            occupancy[self.count_keys[group][k]] += dt
        for (name, _), value in zip(self.predicates, self.predicate_values):
            if value:
                occupancy[name] += dt

    def _after_event(self, t: float):
        """事件后重抽时钟、重算谓词并记录连续状态"""
        self._refresh(t, resample_all=self.config.clock_policy == 'every_event')
        self.predicate_values = [fn(self.state) for _, fn in self.predicates]
        self.trace.event_values.append((t, tuple(self.state.values[s] for s in self.model.ode_slots)))

    def _monitors(self) -> List[Callable[[ModelState], bool]]:
        """当前各活动状态出边上的条件"""
        s = self.state
        return [tr.condition for a in self.model.automata
                for tr in a.outgoing[s.active[a.index]] if tr.condition is not None]

    # 连续流 ----------------------------------------------------------------
    def _flow(self, t0: float, candidate: float) -> FlowResult:
        """推进连续流；编译路径不能给出异常上下文，失败时由解释路径重算并抛出"""
        s = self.state
        if self.kernel is None:
            return integrate_until_event(self.model, s, t0, candidate, self.config,
                                         self._monitors(), self.stops, self.grid)
        guards = [order for index, orders in enumerate(self.guarded) for order in orders[s.active[index]]]
        times = self.grid.pending(candidate)
        values = np.array(s.values, dtype=np.float64)
        out = np.empty((len(times), len(self.model.ode_slots)))
        status, t_end, recorded = self.kernel.integrate(
            values, np.array(s.active, dtype=np.int64), np.array(guards + self.stop_ids, dtype=np.int64),
            len(guards), t0, candidate, self.config.step_size, self.config.event_time_tolerance,
            np.array(times, dtype=np.float64), out)
        if status == FLOW_FAILED:
            return integrate_until_event(self.model, s, t0, candidate, self.config,
                                         self._monitors(), self.stops, self.grid)
        for k in range(recorded):
            self.grid.record(times[k], out[k])
        for slot in self.model.ode_slots:
            s.values[slot] = float(values[slot])
        s.time = t_end
        if status == CANDIDATE_REACHED:
            return FlowResult(t_end, CANDIDATE, s)
        reason = GUARD if status == GUARD_FLIPPED else STOP
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug(f"t={t_end:.9f} 条件翻转 ({reason})")
        return FlowResult(t_end, reason, s)

    def run(self) -> SimulationTrace:
        s = self.state
        horizon = self.config.horizon
        for a in self.model.automata:
            self.trace.initial_states[f"{a.instance}.{a.name}"] = a.states[a.initial]
        for binding in self.model.bindings:
            for action in binding.start_actions:
                action(s)
        self._cascade(0.0)
        self._after_event(0.0)
        events = 0
        while s.time < horizon:
            due, tr = self._next_clock()
            candidate = min(due, horizon)
            t0 = s.time
            result = self._flow(t0, candidate)
            self._accumulate(t0, result.time)
            events += 1
            if events >= self.config.max_events:
                raise ZenoError(f"t={result.time:.9f} 前事件数达到 {self.config.max_events}")
            if result.reason == CANDIDATE and tr is not None and due <= result.time:
                self._fire(tr, result.time)
            self._cascade(result.time)
            self._after_event(result.time)
        if s.time == 0.0 and self.grid.next_time == 0.0:
            self.grid.record(0.0, [s.values[slot] for slot in self.model.ode_slots])
        self.trace.samples = self.grid.samples
        self.trace.occupancy = self.occupancy
        self.trace.end_state_signature = self.model.signature(s)
        return self.trace


def run_replication(model: SystemModel, config: EngineConfig, stream: Optional[RandomStream] = None,
                    run: int = 0) -> SimulationTrace:
    """执行一次重复仿真；(模型, 配置, 种子, 流编号) 相同则轨迹相同"""
    if stream is None:
        stream = RandomStream(config.seed, run)
    return _Replication(model, config, stream, run).run()


# ---------------------------------------------------------------------------
# 轨迹输出
# ---------------------------------------------------------------------------

FIRING_COLUMNS = ['run', 'time', 'instance', 'automaton', 'transition', 'from', 'to']
SAMPLE_COLUMNS = ['run', 'time', 'variable', 'value']


def firings_frame(traces: Sequence[SimulationTrace]) -> pd.DataFrame:
    """全部迁移触发记录的 DataFrame"""
    rows = [(tr.run, f.time, f.instance, f.automaton, f.transition, f.source, f.target)
            for tr in traces for f in tr.firings]
    return pd.DataFrame(rows, columns=FIRING_COLUMNS).astype({'time': float})


def samples_frame(traces: Sequence[SimulationTrace]) -> pd.DataFrame:
    """全部网格采样的长表 DataFrame"""
    rows = [(tr.run, t, name, value) for tr in traces for t, name, value in tr.samples]
    return pd.DataFrame(rows, columns=SAMPLE_COLUMNS).astype({'time': float, 'value': float})


def write_frame(frame: pd.DataFrame, path: Path):
    """固定格式写出 CSV：9 位小数、'\\n' 换行、无 BOM 的 UTF-8"""
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format='%.9f', lineterminator='\n', encoding='utf-8')


def write_trace(traces: Union[SimulationTrace, Sequence[SimulationTrace]], out_dir: Union[str, Path],
                samples_format: str = 'csv') -> Dict[str, Path]:
    """写出 firings.csv 与 samples.csv（或 samples.parquet）"""
    if isinstance(traces, SimulationTrace):
        traces = [traces]
    out_dir = Path(out_dir)
    paths = {'firings': out_dir / 'firings.csv'}
    write_frame(firings_frame(traces), paths['firings'])
    samples = samples_frame(traces)
    if samples_format == 'parquet':
        paths['samples'] = out_dir / 'samples.parquet'
        paths['samples'].parent.mkdir(parents=True, exist_ok=True)
        samples.to_parquet(paths['samples'], index=False, engine='pyarrow')
    else:
        paths['samples'] = out_dir / 'samples.csv'
        write_frame(samples, paths['samples'])
    logger.info(f"轨迹已写出: {', '.join(str(p) for p in paths.values())}")
    return paths
