#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
连续流编译
把 PDMP 方程、迁移条件与停止条件生成为数组上的源码，再用 numba 编译出
固定步长 RK4 + 二分定位的积分循环；数值顺序与 pdmp_engine 的解释路径一致。

变量槽一律按 float64 存放（布尔为 0/1），参数放在单独的数组中，
因此结构相同、参数不同的模型共用同一份编译结果。
"""

import logging
import math
import weakref
from typing import Dict, List, Optional, Tuple

import numpy as np
from numba import njit

from expressions import Boolean, Call, Expr, Index, Name, Number, Unary, constant_value, iter_names
from kernel import SystemModel

logger = logging.getLogger(__name__)

__all__ = ['FlowKernel', 'flow_kernel', 'CANDIDATE_REACHED', 'GUARD_FLIPPED', 'STOP_FLIPPED', 'FLOW_FAILED']

CANDIDATE_REACHED, GUARD_FLIPPED, STOP_FLIPPED, FLOW_FAILED = 0, 1, 2, -1

_RELATIONS = ('<', '>', '<=', '>=', '==', '!=')


class NotCompilable(Exception):
    """表达式只能在解释路径上求值（运行期才能确定的下标、缺少连接等）"""


# ---------------------------------------------------------------------------
# 源码生成
# ---------------------------------------------------------------------------

class FlowSource:
    """为一个模型生成 derivs(v, a, p, out) 与 monitor(m, v, a, p) 的源码"""

    def __init__(self, model: SystemModel):
        self.model = model
        self.params: List[float] = []
        self._param_index: Dict[Tuple[str, str], int] = {}
        self.text = self._generate()

    def _param(self, instance: str, name: str) -> str:
        """参数在 p 数组中的位置，首次出现时登记"""
        key = (instance, name)
        if key not in self._param_index:
            self._param_index[key] = len(self.params)
            self.params.append(float(self.model.parameters[instance][name]))
        return f"p[{self._param_index[key]}]"

    def _import_sources(self, instance: str, parts) -> Optional[list]:
        """导入引用所连的 (实例, 导出) 列表；不是导入引用时为 None"""
        scope = self.model.scope(instance)
        symbol = scope.lookup(parts)
        if symbol is None or not symbol.is_import:
            return None
        target, local = scope.split(parts)
        return self.model.incoming[(target, local[0])]

    def emit(self, expr: Expr, instance: str, j: int = 0) -> str:
        """表达式 -> float64 源码；布尔值表示为 1.0/0.0"""
        if isinstance(expr, (Number, Boolean)):
            return repr(float(expr.value))
        if isinstance(expr, Name):
            return self._emit_name(expr, instance, j)
        if isinstance(expr, Index):
            k = constant_value(expr.index)
            sources = self._import_sources(instance, expr.target.parts)
            if sources is None or k is None or k != int(k) or not 0 <= k < len(sources):
                raise NotCompilable(f"连接下标 {expr.index} 需要运行期求值")
            return self._emit_name(expr.target, instance, int(k))
        if isinstance(expr, Call):
            return self._emit_call(expr, instance, j)
        if isinstance(expr, Unary):
            operand = self.emit(expr.operand, instance, j)
            if expr.op == 'not':
                return f"(1.0 if {operand} == 0.0 else 0.0)"
            return f"(-{operand})"
        left = self.emit(expr.left, instance, j)
        right = self.emit(expr.right, instance, j)
        if expr.op in ('and', 'or'):
            return f"(1.0 if ({left} != 0.0 {expr.op} {right} != 0.0) else 0.0)"
        if expr.op in _RELATIONS:
            return f"(1.0 if {left} {expr.op} {right} else 0.0)"
        return f"({left} {expr.op} {right})"

    def _emit_name(self, expr: Name, instance: str, j: int) -> str:
        """导入引用内联为对端导出表达式，其余名字映射到 v 或 p"""
        model = self.model
        scope = model.scope(instance)
        symbol = scope.lookup(expr.parts)
        if symbol is None:
            raise NotCompilable(f"无法解析 {expr.dotted!r}")
        target, local = scope.split(expr.parts)
        if symbol.is_import:
            sources = model.incoming[(target, local[0])]
            if j >= len(sources):
                raise NotCompilable(f"导入引用 {expr.dotted!r} 没有下标为 {j} 的连接")
            source, export = sources[j]
            return self.emit(export.expr, source, 0)
        if symbol.kind == 'subject':
            return f"v[{model.subject_slots[target]}]"
        if symbol.kind == 'param':
            return self._param(target, local[0])
        return f"v[{model.slot_index[(target, local[0])]}]"

    def _emit_call(self, expr: Call, instance: str, j: int) -> str:
        arg = expr.args[0]
        if expr.func == 'active':
            target, local = self.model.scope(instance).split(arg.parts)
            automaton, state = self.model.state_index[(target,) + local]
            return f"(1.0 if a[{automaton}] == {state} else 0.0)"
        if expr.func == 'count':
            return repr(float(len(self._import_sources(instance, arg.parts) or [])))
        counts = {len(s) for s in (self._import_sources(instance, n.parts) for n in iter_names(arg))
                  if s is not None}
        if len(counts) > 1:
            raise NotCompilable(f"{expr.func}() 中的导入引用连接数不一致")
        terms = [self.emit(arg, instance, i) for i in range(counts.pop() if counts else 0)]
        if expr.func == 'sum':
            return '(' + ' + '.join(['0.0'] + terms) + ')'
        if not terms:
            return '0.0' if expr.func == 'any' else '1.0'
        joiner = ' or ' if expr.func == 'any' else ' and '
        return f"(1.0 if ({joiner.join(f'{t} != 0.0' for t in terms)}) else 0.0)"

    def _generate(self) -> str:
        model = self.model
        lines = ['def derivs(v, a, p, out):']
        k = 0
        for binding in model.pdmp_managers:
            equations = {(inst, var): e for inst, var, e in binding.equations}
            for key in binding.ode_variables:
                lines.append(f"    out[{k}] = {self.emit(equations[key], key[0])}")
                k += 1
        lines += ['', 'def monitor(m, v, a, p):']
        order = 0
        for decl in model.instances:
            for automaton in decl.definition.automata:
                for t in automaton.transitions:
                    if t.condition is not None:
                        lines.append(f"    if m == {order}:")
                        lines.append(f"        return {self.emit(t.condition, decl.name)} != 0.0")
                    order += 1
        for binding in model.pdmp_managers:
            for expr in binding.stop_conditions:
                lines.append(f"    if m == {order}:")
                lines.append(f"        return {self.emit(expr, binding.ode_variables[0][0])} != 0.0")
                order += 1
        lines.append('    return False')
        return '\n'.join(lines) + '\n'


# ---------------------------------------------------------------------------
# 积分循环
# ---------------------------------------------------------------------------

def _build_integrator(derivs, monitor):
    """以编译好的 derivs/monitor 构造积分循环"""

    @njit
    def stage(v, a, p, slots, y, out):
        for i in range(slots.shape[0]):
            v[slots[i]] = y[i]
        derivs(v, a, p, out)
        for i in range(out.shape[0]):
            if not math.isfinite(out[i]):
                return False
        return True

    @njit
    def rk4(v, a, p, slots, y0, dt, y1, work):
        n = y0.shape[0]
        k1, k2, k3, k4, tmp = work[0], work[1], work[2], work[3], work[4]
        if not stage(v, a, p, slots, y0, k1):
            return False
        for i in range(n):
            tmp[i] = y0[i] + 0.5 * dt * k1[i]
        if not stage(v, a, p, slots, tmp, k2):
            return False
        for i in range(n):
            tmp[i] = y0[i] + 0.5 * dt * k2[i]
        if not stage(v, a, p, slots, tmp, k3):
            return False
        for i in range(n):
            tmp[i] = y0[i] + dt * k3[i]
        if not stage(v, a, p, slots, tmp, k4):
            return False
        for i in range(n):
            y1[i] = y0[i] + dt / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])
            v[slots[i]] = y1[i]
        return True

    @njit
    def flipped(v, a, p, monitors, before):
        for i in range(monitors.shape[0]):
            if monitor(monitors[i], v, a, p) != before[i]:
                return True
        return False

    @njit
    def record(v, a, p, slots, times, out, g, t0, y0, t1, y1, ytmp, work):
        while g < times.shape[0] and times[g] <= t1:
            if times[g] <= t0:
                out[g, :] = y0
            elif times[g] == t1:
                out[g, :] = y1
            else:
                if not rk4(v, a, p, slots, y0, times[g] - t0, ytmp, work):
                    return -1
                out[g, :] = ytmp
            g += 1
        for i in range(slots.shape[0]):
            v[slots[i]] = y1[i]
        return g

    @njit
    def integrate(v, a, p, slots, monitors, n_guards, t_now, t_candidate, h, tol, times, out, work):
        n = slots.shape[0]
        y = np.empty(n)
        y1 = np.empty(n)
        ytmp = np.empty(n)
        for i in range(n):
            y[i] = v[slots[i]]
        before = np.empty(monitors.shape[0], dtype=np.bool_)
        for i in range(monitors.shape[0]):
            before[i] = monitor(monitors[i], v, a, p)
        g = 0
        t = t_now
        while t < t_candidate:
            remaining = t_candidate - t
            dt = h if h < remaining else remaining
            if not rk4(v, a, p, slots, y, dt, y1, work):
                return -1, t, g
            if flipped(v, a, p, monitors, before):
                lo, hi = 0.0, dt
                while hi - lo > tol:
                    mid = 0.5 * (lo + hi)
                    if not rk4(v, a, p, slots, y, mid, ytmp, work):
                        return -1, t, g
                    if flipped(v, a, p, monitors, before):
                        hi = mid
                    else:
                        lo = mid
                if not rk4(v, a, p, slots, y, hi, ytmp, work):
                    return -1, t, g
                reason = 2
                for i in range(n_guards):
                    if monitor(monitors[i], v, a, p) != before[i]:
                        reason = 1
                        break
                t_event = t + hi
                g = record(v, a, p, slots, times, out, g, t, y, t_event, ytmp, y1, work)
                if g < 0:
                    return -1, t, 0
                return reason, t_event, g
            t_next = t_candidate if dt == remaining else t + dt
            g = record(v, a, p, slots, times, out, g, t, y, t_next, y1, ytmp, work)
            if g < 0:
                return -1, t, 0
            for i in range(n):
                y[i] = y1[i]
            t = t_next
        return 0, t_candidate, g

    return integrate


_INTEGRATORS: Dict[str, object] = {}


def _integrator_for(source: FlowSource):
    """按生成的源码缓存编译结果"""
    if source.text not in _INTEGRATORS:
        namespace: Dict[str, object] = {}
        exec(compile(source.text, '<flow>', 'exec'), namespace)
        _INTEGRATORS[source.text] = _build_integrator(njit(namespace['derivs']), njit(namespace['monitor']))
        logger.debug(f"编译连续流:\n{source.text}")
    return _INTEGRATORS[source.text]


class FlowKernel:
    """一个模型的编译连续流；integrate 的状态码见模块常量"""

    def __init__(self, model: SystemModel, source: FlowSource):
        self.slots = np.array(model.ode_slots, dtype=np.int64)
        self.params = np.array(source.params, dtype=np.float64)
        self.transition_count = len(model.transitions)
        self._integrate = _integrator_for(source)
        self.value_count = len(model.slots)
        self.automaton_count = len(model.automata)
        self._work = np.empty((5, len(model.ode_slots)))

    def integrate(self, values: np.ndarray, active: np.ndarray, monitors: np.ndarray, n_guards: int,
                  t_now: float, t_candidate: float, h: float, tol: float,
                  times: np.ndarray, out: np.ndarray) -> Tuple[int, float, int]:
        """返回 (状态码, 结束时刻, 已写入的网格采样数)；values 原地更新"""
        try:
            # 标量统一为 float，整数 horizon 不会触发另一份特化
            status, t_end, recorded = self._integrate(values, active, self.params, self.slots, monitors,
                                                      int(n_guards), float(t_now), float(t_candidate), float(h),
                                                      float(tol), times, out, self._work)
        except ZeroDivisionError:
            return FLOW_FAILED, t_now, 0
        return int(status), float(t_end), int(recorded)

    def warm_up(self):
        """以零长度区间触发编译，使 fork 出的子进程直接复用"""
        values = np.zeros(self.value_count)
        active = np.zeros(self.automaton_count, dtype=np.int64)
        self.integrate(values, active, np.zeros(0, dtype=np.int64), 0,
                       0.0, 0.0, 1.0, 1e-9, np.zeros(0), np.zeros((0, len(self.slots))))


_KERNELS: 'weakref.WeakKeyDictionary[SystemModel, Optional[FlowKernel]]' = weakref.WeakKeyDictionary()


def flow_kernel(model: SystemModel) -> Optional[FlowKernel]:
    """模型的编译连续流；没有连续变量或含只能解释求值的表达式时返回 None"""
    if model in _KERNELS:
        return _KERNELS[model]
    kernel = None
    if model.ode_slots:
        try:
            kernel = FlowKernel(model, FlowSource(model))
        except NotCompilable as e:
            logger.info(f"连续流改用解释执行: {e}")
    _KERNELS[model] = kernel
    return kernel
