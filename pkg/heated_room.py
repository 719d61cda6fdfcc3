#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
加热房间用例集
参数集、闭式解析解（用于测试对照）、六个用例的目录与构建器 API 版本
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple

from kernel import ComponentBuilder, ComponentDefinition, SystemBuilder, SystemModel, expo, inst

logger = logging.getLogger(__name__)

REPO_ROOT = Path(__file__).resolve().parent
CASES_DIR = REPO_ROOT / 'cases'
COMPONENTS_DIR = REPO_ROOT / 'components'

HEATERS = ('heater0', 'heater1', 'heater2', 'heater3')


@dataclass(frozen=True)
class HeaterParams:
    max_temperature: float = 22.0
    min_temperature: float = 15.0
    power: float = 1.0
    failure_rate: float = 0.01
    repair_rate: float = 0.1
    priority: int = 0

    def __post_init__(self):
        if not self.min_temperature < self.max_temperature:
            raise ValueError(f"温度阈值无效: min={self.min_temperature} max={self.max_temperature}")
        if self.power <= 0 or self.failure_rate < 0 or self.repair_rate <= 0:
            raise ValueError("加热功率与修复率必须为正，故障率不能为负")


@dataclass(frozen=True)
class RoomParams:
    initial_temperature: float = 17.0
    outside_temperature: float = 13.0
    leakage: float = 0.1

    def __post_init__(self):
        if self.leakage <= 0:
            raise ValueError(f"泄漏系数必须为正: {self.leakage}")

    def alpha(self) -> float:
        return -self.leakage

    def beta(self, heaters_on: int, power: float = 1.0) -> float:
        return self.leakage * self.outside_temperature + power * heaters_on


# 参数覆盖集，键为 'Type.param' 或 'instance.param'
TEXT_PARAMS: Dict[str, float] = {'Heater.lambda': 0.01, 'Heater.mu': 0.1}
FIG2A_PARAMS: Dict[str, float] = {'Heater.lambda': 0.001, 'Heater.mu': 0.01}
FIG2B_PARAMS: Dict[str, float] = {
    'heater0.lambda': 0.02, 'heater0.mu': 0.01,
    'heater1.lambda': 0.01, 'heater1.mu': 0.01,
    'heater2.lambda': 0.01, 'heater2.mu': 0.01,
    'heater3.lambda': 0.01, 'heater3.mu': 0.01,
}
NO_FAILURE: Dict[str, float] = {'Heater.lambda': 0.0}


# ---------------------------------------------------------------------------
# 解析解
# ---------------------------------------------------------------------------

def equilibrium_temperature(heaters_on: int, room: RoomParams = RoomParams(), power: float = 1.0) -> float:
    return room.outside_temperature + heaters_on * power / room.leakage


def closed_form_temperature(heaters_on: int, t_start: float, dt: float,
                            room: RoomParams = RoomParams(), power: float = 1.0) -> float:
    """dT/dt = -L (T - T_out) + n P 在 dt 时间后的温度"""
    t_eq = equilibrium_temperature(heaters_on, room, power)
    return t_eq + (t_start - t_eq) * math.exp(-room.leakage * dt)


def time_to_reach(target: float, heaters_on: int, t_start: float,
                  room: RoomParams = RoomParams(), power: float = 1.0) -> float:
    """从 t_start 出发到达 target 所需时间；不可达时返回 inf"""
    t_eq = equilibrium_temperature(heaters_on, room, power)
    if t_start == target:
        return 0.0
    ratio = (target - t_eq) / (t_start - t_eq) if t_start != t_eq else 0.0
    if ratio <= 0 or ratio > 1:
        return math.inf
    return -math.log(ratio) / room.leakage


def thermostat_switch_times(count: int, heater: HeaterParams = HeaterParams(),
                            room: RoomParams = RoomParams()) -> Tuple[float, ...]:
    """单加热器、无故障时前 count 次开关切换的时刻（从 ON 开始）"""
    times, t, temp, on = [], 0.0, room.initial_temperature, True
    for _ in range(count):
        target = heater.max_temperature if on else heater.min_temperature
        t += time_to_reach(target, 1 if on else 0, temp, room, heater.power)
        times.append(t)
        temp, on = target, not on
    return tuple(times)


def steady_state_unavailability(failure_rate: float, repair_rate: float) -> float:
    """两状态马尔可夫链的稳态不可用度 λ/(λ+μ)"""
    if failure_rate < 0 or repair_rate <= 0:
        raise ValueError(f"故障率/修复率无效: λ={failure_rate} μ={repair_rate}")
    return failure_rate / (failure_rate + repair_rate)


def zero_ok_probability(rates: Sequence[Tuple[float, float]]) -> float:
    """相互独立的组件全部故障的稳态概率"""
    return math.prod(steady_state_unavailability(lam, mu) for lam, mu in rates)


# ---------------------------------------------------------------------------
# 用例目录
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CaseSpec:
    case_id: str
    description: str
    design: str                 # original / alternative
    heaters: int
    instances: int
    connections: int
    mediator_groups: int = 0
    chain_length: int = 0

    @property
    def path(self) -> Path:
        return CASES_DIR / f"case{self.case_id}.model"


class CaseCatalog:
    """六个用例的文件与结构事实"""

    CASES = (
        CaseSpec('0', '1 个加热器 + 1 个房间', 'original', 1, 2, 1),
        CaseSpec('1', '4 个独立加热器 + 1 个房间', 'original', 4, 5, 4),
        CaseSpec('2', '4 个冷备加热器 + 1 个房间', 'original', 4, 5, 16),
        CaseSpec('0a', '用例 0 的中介者版本', 'alternative', 1, 3, 1, mediator_groups=1),
        CaseSpec('1a', '用例 1 的中介者版本', 'alternative', 4, 6, 4, mediator_groups=1),
        CaseSpec('2a', '用例 2 的中介者 + 观察者版本', 'alternative', 4, 6, 4,
                 mediator_groups=1, chain_length=4),
    )
    # 设计对比实验中的 (源, 目标) 版本对
    EVOLUTION_PAIRS = (('0', '1'), ('1', '2'), ('0a', '1a'), ('1a', '2a'))

    def __init__(self, cases_dir: Optional[Path] = None):
        self.cases_dir = Path(cases_dir) if cases_dir else CASES_DIR
        self._by_id = {c.case_id: c for c in self.CASES}

    def __iter__(self):
        return iter(self.CASES)

    def __len__(self):
        return len(self.CASES)

    def get(self, case_id: str) -> CaseSpec:
        if case_id not in self._by_id:
            raise KeyError(f"未知用例 {case_id!r}，可选: {', '.join(self._by_id)}")
        return self._by_id[case_id]

    def path(self, case_id: str) -> Path:
        return self.cases_dir / f"case{self.get(case_id).case_id}.model"

    def ids(self) -> Tuple[str, ...]:
        return tuple(self._by_id)


# ---------------------------------------------------------------------------
# 构建器 API 版本
# ---------------------------------------------------------------------------

def _heater_base(extra_params: Mapping[str, Tuple[str, object]] = ()) -> ComponentBuilder:
    builder = (ComponentBuilder('Heater')
               .parameter('lambda', 'real', 0.01)
               .parameter('mu', 'real', 0.1)
               .parameter('power', 'real', 1.0)
               .parameter('maxTemperature', 'real', 22)
               .parameter('minTemperature', 'real', 15))
    for name, (type_, default) in dict(extra_params).items():
        builder.parameter(name, type_, default)
    return builder


def _room_box(builder: ComponentBuilder):
    (builder.msgbox('mb_Room')
     .export('active(Power.ON)', 'heaterON')
     .export('power', 'heatingPower')
     .import_('temperature', 'roomTemperature'))


def heater_definition() -> ComponentDefinition:
    builder = _heater_base()
    (builder.automaton('Function', ['OK', 'NOK'], 'OK')
     .transition('OK', 'NOK', expo('lambda'))
     .transition('NOK', 'OK', expo('mu')))
    (builder.automaton('Power', ['ON', 'OFF'], 'ON')
     .transition('OFF', 'ON', inst(1), when='active(Function.OK) and roomTemperature <= minTemperature')
     .transition('ON', 'OFF', inst(1), when='roomTemperature >= maxTemperature or active(Function.NOK)'))
    _room_box(builder)
    return builder.build()


def standby_heater_definition() -> ComponentDefinition:
    builder = _heater_base({'priority': ('int', 0)})
    (builder.automaton('Function', ['OK', 'NOK'], 'OK')
     .transition('OK', 'NOK', expo('lambda'))
     .transition('NOK', 'OK', expo('mu')))
    (builder.automaton('Power', ['ON', 'OFF'], 'ON')
     .transition('OFF', 'ON', inst(1),
                 when='active(Function.OK) and roomTemperature <= minTemperature '
                      'and not any(otherOK and otherPriority > priority)')
     .transition('ON', 'OFF', inst(1),
                 when='roomTemperature >= maxTemperature or active(Function.NOK) '
                      'or any(otherOK and otherPriority > priority)'))
    _room_box(builder)
    builder.msgbox('mb_OtherH_O').export('priority', 'heaterPr').export('active(Function.OK)', 'heaterOK')
    builder.msgbox('mb_OtherH_I').import_('heaterPr', 'otherPriority').import_('heaterOK', 'otherOK')
    return builder.build()


def observer_heater_definition() -> ComponentDefinition:
    builder = _heater_base({'isMain': ('bool', True)})
    builder.variable('takeON', 'bool', 'isMain')
    (builder.automaton('Function', ['OK', 'NOK'], 'OK')
     .transition('OK', 'NOK', expo('lambda'), notify=['notifyFailure'])
     .transition('NOK', 'OK', expo('mu'), notify=['notifyRepair']))
    (builder.automaton('Power', ['ON', 'OFF'], 'ON')
     .transition('OFF', 'ON', inst(1),
                 when='active(Function.OK) and takeON and roomTemperature <= minTemperature',
                 notify=['notifySwitchOn'])
     .transition('ON', 'OFF', inst(1),
                 when='roomTemperature >= maxTemperature or active(Function.NOK) or not takeON'))
    _room_box(builder)
    builder.hook('notifyFailure', {'backups.takeON': True})
    builder.hook('notifyRepair', {'backups.takeON': False})
    builder.hook('notifySwitchOn', {'backups.takeON': False})
    return builder.build()


def room_definition() -> ComponentDefinition:
    builder = (ComponentBuilder('Room')
               .parameter('leakage', 'real', 0.1)
               .parameter('outside', 'real', 13)
               .parameter('initialTemperature', 'real', 17)
               .variable('temperature', 'real', 'initialTemperature'))
    builder.msgbox('mb_Heater').export('temperature', 'temperature').import_('heaterON').import_('heatingPower')
    return builder.build()


def mediator_definition() -> ComponentDefinition:
    builder = ComponentBuilder('Mediator')
    builder.msgbox('heater').import_('heaterON').import_('heatingPower').export('subject', 'temperature')
    return builder.build()


_POINT_TO_POINT = 'sum(heatingPower * heaterON) - leakage * (temperature - outside)'
_SINGLE = 'heatingPower[0] * heaterON[0] - leakage * (temperature - outside)'
_MEDIATED = 'sum(M.heatingPower * M.heaterON) - leakage * (temperature - outside)'
_FIG2B = {'heater0': dict(lambda_=0.02, mu=0.01), 'heater1': dict(lambda_=0.01, mu=0.01),
          'heater2': dict(lambda_=0.01, mu=0.01), 'heater3': dict(lambda_=0.01, mu=0.01)}
_PRIORITIES = {'heater0': 10, 'heater1': 6, 'heater2': 4, 'heater3': 2}


def _heater_args(name: str, **extra) -> Dict[str, object]:
    rates = _FIG2B[name]
    return {'lambda': rates['lambda_'], 'mu': rates['mu'], **extra}


def build_case(case_id: str, overrides: Optional[Mapping[str, object]] = None) -> SystemModel:
    """以构建器 API 装配用例，与 cases/ 下同名 DSL 文件等价"""
    builder = SystemBuilder()
    count = 1 if case_id.startswith('0') else 4
    names = HEATERS[:count]
    if case_id == '2':
        heater = standby_heater_definition()
        for name in names:
            builder.instance(name, heater, **_heater_args(name, priority=_PRIORITIES[name]))
    elif case_id == '2a':
        heater = observer_heater_definition()
        for name in names:
            builder.instance(name, heater, **_heater_args(name, isMain=name == 'heater0'))
    elif case_id in ('0', '1', '0a', '1a'):
        heater = heater_definition()
        for name in names:
            builder.instance(name, heater)
    else:
        raise KeyError(f"未知用例 {case_id!r}")
    builder.instance('room', room_definition())

    if case_id.endswith('a'):
        builder.mediator('M', mediator_definition(), ['room.temperature'],
                         {name: 'heater' for name in names})
        if case_id == '2a':
            builder.chain(*names)
        equation = _MEDIATED
    else:
        for name in names:
            builder.connect(f"{name}.mb_Room", 'room.mb_Heater')
        if case_id == '2':
            for src in names:
                for dst in names:
                    if src != dst:
                        builder.connect(f"{src}.mb_OtherH_O", f"{dst}.mb_OtherH_I")
        equation = _SINGLE if case_id == '0' else _POINT_TO_POINT
    builder.pdmp('pdmpTemperature', {'room.temperature': equation})
    model = builder.build(overrides)
    logger.debug(f"构建器用例 {case_id}: {model.describe()}")
    return model
