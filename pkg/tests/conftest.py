# -*- coding: utf-8 -*-
"""测试共用的路径与夹具"""

import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from kernel import ComponentBuilder, SystemBuilder, expo  # noqa: E402
from pdmp_engine import EngineConfig  # noqa: E402


@pytest.fixture(scope='session')
def repo_root() -> Path:
    return ROOT


@pytest.fixture(scope='session')
def cases_dir() -> Path:
    return ROOT / 'cases'


@pytest.fixture(scope='session')
def components_dir() -> Path:
    return ROOT / 'components'


@pytest.fixture
def fast_engine() -> EngineConfig:
    """粗步长、短时长，只用于结构性检查"""
    return EngineConfig(horizon=50.0, seed=42, step_size=0.5, sample_step=None)


def failure_only_component(name: str = 'Unit'):
    """只有故障/修复自动机的组件，没有连续变量，仿真直接跳到下一个时钟"""
    builder = ComponentBuilder(name).parameter('lambda', 'real', 0.01).parameter('mu', 'real', 0.1)
    (builder.automaton('Function', ['OK', 'NOK'], 'OK')
     .transition('OK', 'NOK', expo('lambda'))
     .transition('NOK', 'OK', expo('mu')))
    return builder.build()


def failure_only_system(rates=((0.01, 0.1),)):
    unit = failure_only_component()
    builder = SystemBuilder()
    for i, (lam, mu) in enumerate(rates):
        builder.instance(f"unit{i}", unit, **{'lambda': lam, 'mu': mu})
    return builder.build()


@pytest.fixture
def failure_only_model():
    return failure_only_system()


@pytest.fixture
def failure_system():
    return failure_only_system
