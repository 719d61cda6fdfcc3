#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
随机混成自动机内核
组件定义、定义期校验、系统装配（连接、中介者、备份链、PDMP 绑定）、
运行状态、表达式求值与通知钩子
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from errors import (ArityError, ConditionTypeError, CyclicChainError, DanglingConnectionError,
                    DuplicateNameError, DuplicateOdeBindingError, LabelMismatchError,
                    LawDefinitionError, ModelError, PriorityTieError, UnresolvedIdentifierError,
                    UnresolvedStateError, ValidationError)
from expressions import (ANY, BOOL, NUM, SCALAR_TYPES, Boolean, Expr, Number, Symbol,
                         as_expression, compile_expression, constant_value, format_expression,
                         infer_type, parse_expression)

logger = logging.getLogger(__name__)

Scalar = Union[int, float, bool]


# ---------------------------------------------------------------------------
# 定义
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParameterDef:
    name: str
    type: str
    default: Expr


@dataclass(frozen=True)
class VariableDef:
    name: str
    type: str
    initial: Expr


@dataclass(frozen=True)
class ExponentialLaw:
    """指数分布律，rate 单位为每时间单位"""
    rate: Expr


@dataclass(frozen=True)
class InstantaneousLaw:
    weight: Expr = Number(1, '1')


TransitionLaw = Union[ExponentialLaw, InstantaneousLaw]


@dataclass(frozen=True)
class TransitionDef:
    name: str
    source: str
    target: str
    law: TransitionLaw
    condition: Optional[Expr] = None
    fire_hooks: Tuple[str, ...] = ()


@dataclass(frozen=True)
class AutomatonDef:
    name: str
    states: Tuple[str, ...]
    initial_state: str
    transitions: Tuple[TransitionDef, ...] = ()


@dataclass(frozen=True)
class ExportDef:
    expr: Expr
    label: str


@dataclass(frozen=True)
class ImportDef:
    label: str
    ref: str


@dataclass(frozen=True)
class MessageBoxDef:
    name: str
    exports: Tuple[ExportDef, ...] = ()
    imports: Tuple[ImportDef, ...] = ()

    @property
    def export_labels(self) -> Tuple[str, ...]:
        return tuple(e.label for e in self.exports)

    @property
    def import_labels(self) -> Tuple[str, ...]:
        return tuple(i.label for i in self.imports)


@dataclass(frozen=True)
class Assignment:
    """钩子中的一条赋值；on_backups 为真时作用于下游全部备份实例"""
    target: str
    expr: Expr
    on_backups: bool = False


@dataclass(frozen=True)
class HookDef:
    name: str
    assignments: Tuple[Assignment, ...] = ()


@dataclass(frozen=True)
class ComponentDefinition:
    name: str
    parameters: Tuple[ParameterDef, ...] = ()
    variables: Tuple[VariableDef, ...] = ()
    automata: Tuple[AutomatonDef, ...] = ()
    message_boxes: Tuple[MessageBoxDef, ...] = ()
    notification_hooks: Tuple[HookDef, ...] = ()

    def parameter(self, name: str) -> Optional[ParameterDef]:
        return next((p for p in self.parameters if p.name == name), None)

    def variable(self, name: str) -> Optional[VariableDef]:
        return next((v for v in self.variables if v.name == name), None)

    def automaton(self, name: str) -> Optional[AutomatonDef]:
        return next((a for a in self.automata if a.name == name), None)

    def message_box(self, name: str) -> Optional[MessageBoxDef]:
        return next((m for m in self.message_boxes if m.name == name), None)

    def hook(self, name: str) -> Optional[HookDef]:
        return next((h for h in self.notification_hooks if h.name == name), None)

    def imports(self) -> Iterable[Tuple[MessageBoxDef, ImportDef]]:
        for box in self.message_boxes:
            for imp in box.imports:
                yield box, imp


def _unique(names: Iterable[str], what: str):
    """名字重复时抛出 DuplicateNameError"""
    seen = set()
    for name in names:
        if name in seen:
            raise DuplicateNameError(f"{what} {name!r} 重复定义")
        seen.add(name)


class ComponentScope:
    """组件定义内部的符号表（用于定义期类型检查）"""

    def __init__(self, definition: ComponentDefinition):
        self.definition = definition
        self.symbols: Dict[str, Symbol] = {'subject': Symbol('subject', NUM)}
        for p in definition.parameters:
            self.symbols[p.name] = Symbol('param', SCALAR_TYPES[p.type])
        for v in definition.variables:
            self.symbols[v.name] = Symbol('var', SCALAR_TYPES[v.type])
        for _, imp in definition.imports():
            self.symbols[imp.ref] = Symbol('import', ANY)

    def lookup(self, parts: Tuple[str, ...]) -> Optional[Symbol]:
        return self.symbols.get(parts[0]) if len(parts) == 1 else None

    def has_state(self, parts: Tuple[str, ...]) -> bool:
        if len(parts) != 2:
            return False
        automaton = self.definition.automaton(parts[0])
        return automaton is not None and parts[1] in automaton.states


def define_component(definition: ComponentDefinition) -> ComponentDefinition:
    """校验组件定义：名字唯一、状态与标识符可解析、条件为布尔类型"""
    d = definition
    for p in d.parameters + d.variables:
        if p.type not in SCALAR_TYPES:
            raise ValidationError(f"{d.name}.{p.name} 的类型 {p.type!r} 未知")
    _unique([a.name for a in d.automata], f"{d.name} 的自动机")
    _unique([m.name for m in d.message_boxes], f"{d.name} 的消息盒")
    _unique([h.name for h in d.notification_hooks], f"{d.name} 的钩子")
    _unique([p.name for p in d.parameters] + [v.name for v in d.variables]
            + [imp.ref for _, imp in d.imports()], f"{d.name} 的变量")
    if 'subject' in [p.name for p in d.parameters] + [v.name for v in d.variables]:
        raise DuplicateNameError(f"{d.name}: 'subject' 为保留名")

    scope = ComponentScope(d)
    for p in d.parameters:
        if constant_value(p.default) is None:
            raise ValidationError(f"参数 {d.name}.{p.name} 的默认值必须是常量")
    for v in d.variables:
        _check_value_type(infer_type(v.initial, scope), v.type, f"{d.name}.{v.name} 的初值")
    for box in d.message_boxes:
        _unique(box.export_labels, f"消息盒 {d.name}.{box.name} 的导出标签")
        _unique(box.import_labels, f"消息盒 {d.name}.{box.name} 的导入标签")
        for exp in box.exports:
            infer_type(exp.expr, scope)
    for hook in d.notification_hooks:
        for assignment in hook.assignments:
            variable = d.variable(assignment.target)
            if variable is None:
                raise UnresolvedIdentifierError(f"钩子 {d.name}.{hook.name} 赋值目标 {assignment.target!r} 不是变量")
            _check_value_type(infer_type(assignment.expr, scope), variable.type,
                              f"钩子 {d.name}.{hook.name} 对 {assignment.target} 的赋值")
    for automaton in d.automata:
        _check_automaton(d, automaton, scope)
    logger.debug(f"组件 {d.name} 校验通过: {len(d.automata)} 个自动机, {len(d.variables)} 个变量")
    return d


def _check_value_type(actual: str, declared: str, context: str):
    """声明类型与推断类型不一致时报错；ANY 与任何类型相容"""
    expected = SCALAR_TYPES[declared]
    if actual != ANY and actual != expected:
        raise ConditionTypeError(f"{context} 类型不匹配: 期望 {declared}")


def _check_automaton(d: ComponentDefinition, automaton: AutomatonDef, scope: ComponentScope):
    """校验单个自动机：初始状态、迁移端点、钩子引用、条件类型与分布"""
    where = f"{d.name}.{automaton.name}"
    if not automaton.states:
        raise ValidationError(f"自动机 {where} 没有状态")
    _unique(automaton.states, f"自动机 {where} 的状态")
    if automaton.initial_state not in automaton.states:
        raise UnresolvedStateError(f"自动机 {where} 的初始状态 {automaton.initial_state!r} 不存在")
    _unique([t.name for t in automaton.transitions], f"自动机 {where} 的迁移")
    for t in automaton.transitions:
        for state in (t.source, t.target):
            if state not in automaton.states:
                raise UnresolvedStateError(f"迁移 {where}.{t.name} 引用了不存在的状态 {state!r}")
        for hook in t.fire_hooks:
            if d.hook(hook) is None:
                raise UnresolvedIdentifierError(f"迁移 {where}.{t.name} 通知了不存在的钩子 {hook!r}")
        if t.condition is not None and infer_type(t.condition, scope) == NUM:
            raise ConditionTypeError(f"迁移 {where}.{t.name} 的条件不是布尔表达式: {format_expression(t.condition)}")
        _check_law(where, t, scope)


def _check_law(where: str, t: TransitionDef, scope: ComponentScope):
    """指数速率须为非负数值，瞬时权重须落在 (0, 1]"""
    if isinstance(t.law, ExponentialLaw):
        if infer_type(t.law.rate, scope) == BOOL:
            raise LawDefinitionError(f"迁移 {where}.{t.name} 的速率必须是数值表达式")
        rate = constant_value(t.law.rate)
        if rate is not None and rate < 0:
            raise LawDefinitionError(f"迁移 {where}.{t.name} 的速率为负: {rate}")
    else:
        if infer_type(t.law.weight, scope) == BOOL:
            raise LawDefinitionError(f"迁移 {where}.{t.name} 的权重必须是数值表达式")
        weight = constant_value(t.law.weight)
        if weight is not None and not 0 < weight <= 1:
            raise LawDefinitionError(f"迁移 {where}.{t.name} 的权重 {weight} 不在 (0, 1] 内")


# ---------------------------------------------------------------------------
# 构建器 API
# ---------------------------------------------------------------------------

def expo(rate) -> ExponentialLaw:
    return ExponentialLaw(as_expression(rate))


def inst(weight=1) -> InstantaneousLaw:
    return InstantaneousLaw(as_expression(weight))


class AutomatonBuilder:
    def __init__(self, name: str, states: Sequence[str], initial: Optional[str]):
        self.name = name
        self.states = tuple(states)
        self.initial = initial if initial is not None else (self.states[0] if self.states else '')
        self.transitions: List[TransitionDef] = []

    def transition(self, source: str, target: str, law: TransitionLaw, when=None,
                   notify: Sequence[str] = (), name: Optional[str] = None) -> 'AutomatonBuilder':
        condition = as_expression(when) if when is not None else None
        self.transitions.append(TransitionDef(name or f"{source}_to_{target}", source, target,
                                              law, condition, tuple(notify)))
        return self

    def build(self) -> AutomatonDef:
        return AutomatonDef(self.name, self.states, self.initial, tuple(self.transitions))


class MessageBoxBuilder:
    def __init__(self, name: str):
        self.name = name
        self.exports: List[ExportDef] = []
        self.imports: List[ImportDef] = []

    def export(self, expr, label: str) -> 'MessageBoxBuilder':
        self.exports.append(ExportDef(as_expression(expr), label))
        return self

    def import_(self, label: str, ref: Optional[str] = None) -> 'MessageBoxBuilder':
        self.imports.append(ImportDef(label, ref or label))
        return self

    def build(self) -> MessageBoxDef:
        return MessageBoxDef(self.name, tuple(self.exports), tuple(self.imports))


class ComponentBuilder:
    """以代码方式定义组件，build() 时执行与 DSL 相同的校验"""

    def __init__(self, name: str):
        self.name = name
        self._parameters: List[ParameterDef] = []
        self._variables: List[VariableDef] = []
        self._automata: List[AutomatonBuilder] = []
        self._boxes: List[MessageBoxBuilder] = []
        self._hooks: List[HookDef] = []

    def parameter(self, name: str, type_: str = 'real', default=0) -> 'ComponentBuilder':
        self._parameters.append(ParameterDef(name, type_, as_expression(default)))
        return self

    def variable(self, name: str, type_: str = 'real', initial=0) -> 'ComponentBuilder':
        self._variables.append(VariableDef(name, type_, as_expression(initial)))
        return self

    def automaton(self, name: str, states: Sequence[str], initial: Optional[str] = None) -> AutomatonBuilder:
        builder = AutomatonBuilder(name, states, initial)
        self._automata.append(builder)
        return builder

    def msgbox(self, name: str) -> MessageBoxBuilder:
        builder = MessageBoxBuilder(name)
        self._boxes.append(builder)
        return builder

    def hook(self, name: str, assignments: Mapping[str, object]) -> 'ComponentBuilder':
        items = []
        for target, value in assignments.items():
            on_backups = target.startswith('backups.')
            items.append(Assignment(target.split('.', 1)[1] if on_backups else target,
                                    as_expression(value), on_backups))
        self._hooks.append(HookDef(name, tuple(items)))
        return self

    def build(self) -> ComponentDefinition:
        return define_component(ComponentDefinition(
            self.name, tuple(self._parameters), tuple(self._variables),
            tuple(a.build() for a in self._automata), tuple(b.build() for b in self._boxes),
            tuple(self._hooks)))


# ---------------------------------------------------------------------------
# 系统描述
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InstanceDecl:
    name: str
    definition: ComponentDefinition
    overrides: Tuple[Tuple[str, Scalar], ...] = ()


@dataclass(frozen=True)
class Connection:
    left: Tuple[str, str]
    right: Tuple[str, str]
    origin: str = 'connect'

    def __str__(self):
        return f"{'.'.join(self.left)} <-> {'.'.join(self.right)}"


@dataclass(frozen=True)
class MediatorGroup:
    """name 即中介者实例名"""
    name: str
    subjects: Tuple[Tuple[str, str], ...]
    active_components: Tuple[Tuple[str, str], ...]


@dataclass(frozen=True)
class PdmpBinding:
    name: str
    ode_variables: Tuple[Tuple[str, str], ...]
    equations: Tuple[Tuple[str, str, Expr], ...]
    stop_conditions: Tuple[Expr, ...] = ()
    start_hooks: Tuple[Tuple[str, str], ...] = ()


def bind_arguments(definition: ComponentDefinition, positional: Sequence[Scalar] = (),
                   named: Optional[Mapping[str, Scalar]] = None) -> Tuple[Tuple[str, Scalar], ...]:
    """把位置参数与命名参数映射到组件参数，未给出的参数取默认值"""
    named = dict(named or {})
    names = [p.name for p in definition.parameters]
    if len(positional) > len(names):
        raise ArityError(f"{definition.name} 最多接受 {len(names)} 个参数，实际给出 {len(positional)} 个")
    bound = dict(zip(names, positional))
    for key, value in named.items():
        if key not in names:
            raise ArityError(f"{definition.name} 没有参数 {key!r}")
        if key in bound:
            raise ArityError(f"{definition.name} 的参数 {key!r} 被重复给出")
        bound[key] = value
    return tuple((n, bound[n]) for n in names if n in bound)


def coerce_value(value: Scalar, type_: str, where: str) -> Scalar:
    """把外部给出的值转换为参数声明的类型，类型不符时抛出 ArityError"""
    if type_ == 'bool':
        if not isinstance(value, bool):
            raise ArityError(f"{where} 需要布尔值，实际为 {value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ArityError(f"{where} 需要数值，实际为 {value!r}")
    if type_ == 'int':
        if value != int(value):
            raise ArityError(f"{where} 需要整数，实际为 {value!r}")
        return int(value)
    return float(value)


def apply_overrides(instances: Sequence[InstanceDecl],
                    overrides: Optional[Mapping[str, Scalar]]) -> List[InstanceDecl]:
    """应用 'instance.param' / 'Type.param' 形式的参数覆盖，实例键优先于类型键"""
    if not overrides:
        return list(instances)
    names = {i.name for i in instances}
    types = {i.definition.name for i in instances}
    for key in overrides:
        head, _, param = key.partition('.')
        if not param or (head not in names and head not in types):
            raise ArityError(f"参数覆盖 {key!r} 无法匹配任何实例或组件类型")
    result = []
    for decl in instances:
        values = dict(decl.overrides)
        for key, value in overrides.items():
            head, _, param = key.partition('.')
            if head == decl.definition.name and head not in names:
                values[param] = value
        for key, value in overrides.items():
            head, _, param = key.partition('.')
            if head == decl.name:
                values[param] = value
        for param in values:
            if decl.definition.parameter(param) is None:
                raise ArityError(f"{decl.definition.name} 没有参数 {param!r}")
        ordered = tuple((p.name, values[p.name]) for p in decl.definition.parameters if p.name in values)
        result.append(InstanceDecl(decl.name, decl.definition, ordered))
    return result


# ---------------------------------------------------------------------------
# 运行期结构
# ---------------------------------------------------------------------------

class ModelState:
    """一次重复仿真的可变状态：时间、变量槽、各自动机的当前状态下标"""

    __slots__ = ('time', 'values', 'active')

    def __init__(self, time: float, values: List[Scalar], active: List[int]):
        self.time = time
        self.values = values
        self.active = active

    def copy(self) -> 'ModelState':
        """深拷贝变量槽与活动状态"""
        return ModelState(self.time, list(self.values), list(self.active))


@dataclass(frozen=True)
class RuntimeTransition:
    order: int
    instance: str
    automaton: str
    automaton_index: int
    name: str
    source: int
    target: int
    source_name: str
    target_name: str
    stochastic: bool
    rate: Optional[Callable[[ModelState], float]]
    weight: Optional[Callable[[ModelState], float]]
    condition: Optional[Callable[[ModelState], bool]]
    hooks: Tuple[str, ...]
    actions: Tuple[Callable[[ModelState], None], ...]


@dataclass(frozen=True)
class RuntimeAutomaton:
    index: int
    instance: str
    name: str
    states: Tuple[str, ...]
    initial: int
    outgoing: Tuple[Tuple[RuntimeTransition, ...], ...]


@dataclass(frozen=True)
class CompiledBinding:
    name: str
    slots: Tuple[int, ...]
    derivatives: Tuple[Callable[[ModelState], float], ...]
    stops: Tuple[Callable[[ModelState], bool], ...]
    start_actions: Tuple[Callable[[ModelState], None], ...]


class InstanceScope:
    """实例作用域：解析本地名与 'inst.name' 限定名，同时充当类型检查符号表与运行期绑定器"""

    def __init__(self, model: 'SystemModel', instance: str):
        self.model = model
        self.instance = instance

    def split(self, parts: Tuple[str, ...]) -> Tuple[str, Tuple[str, ...]]:
        """拆分出限定名的实例部分；首段不是实例名时归属当前实例"""
        if len(parts) > 1 and parts[0] in self.model.instance_index:
            return parts[0], parts[1:]
        return self.instance, parts

    def lookup(self, parts: Tuple[str, ...]) -> Optional[Symbol]:
        instance, local = self.split(parts)
        if len(local) != 1:
            return None
        if local[0] == 'subject':
            return Symbol('subject', NUM) if instance in self.model.subject_slots else None
        return self.model.symbols[instance].get(local[0])

    def has_state(self, parts: Tuple[str, ...]) -> bool:
        instance, local = self.split(parts)
        return len(local) == 2 and (instance,) + local in self.model.state_index

    def value_getter(self, parts: Tuple[str, ...]):
        """返回读取参数、变量或中介者观察对象的取值函数"""
        instance, local = self.split(parts)
        symbol = self.lookup(parts)
        if symbol is None:
            raise UnresolvedIdentifierError(f"实例 {self.instance} 中无法解析 {'.'.join(parts)!r}")
        if symbol.kind == 'subject':
            slot = self.model.subject_slots[instance]
            return lambda s: s.values[slot]
        if symbol.kind == 'param':
            value = self.model.parameters[instance][local[0]]
            return lambda s: value
        slot = self.model.slot_index[(instance, local[0])]
        return lambda s: s.values[slot]

    def import_getters(self, parts: Tuple[str, ...]):
        """导入引用返回每条连接各自的取值函数，其它符号返回 None"""
        instance, local = self.split(parts)
        symbol = self.lookup(parts)
        if symbol is None or not symbol.is_import:
            return None
        return self.model.import_getters(instance, local[0])

    def state_getter(self, parts: Tuple[str, ...]):
        """返回判断某状态是否活动的谓词"""
        instance, local = self.split(parts)
        automaton, state = self.model.state_index[(instance,) + local]
        return lambda s: s.active[automaton] == state


class SystemModel:
    """装配完成的系统模型；装配后不可变，可在线程间共享"""

    def __init__(self, instances: Sequence[InstanceDecl], connections: Sequence[Connection],
                 mediator_groups: Sequence[MediatorGroup], backup_chains: Sequence[Tuple[str, ...]],
                 pdmp_managers: Sequence[PdmpBinding]):
        self.instances = tuple(instances)
        self.connections = tuple(connections)
        self.mediator_groups = tuple(mediator_groups)
        self.backup_chains = tuple(tuple(c) for c in backup_chains)
        self.pdmp_managers = tuple(pdmp_managers)
        self.instance_index = {decl.name: decl for decl in self.instances}
        self.parameters: Dict[str, Dict[str, Scalar]] = {}
        self.symbols: Dict[str, Dict[str, Symbol]] = {}
        self.slots: List[Tuple[str, str]] = []
        self.slot_index: Dict[Tuple[str, str], int] = {}
        self.slot_types: List[str] = []
        self.state_index: Dict[Tuple[str, str, str], Tuple[int, int]] = {}
        self.subject_slots: Dict[str, int] = {}
        self.incoming: Dict[Tuple[str, str], List[Tuple[str, ExportDef]]] = {}
        self.downstream: Dict[str, Tuple[str, ...]] = {}
        self.automata: List[RuntimeAutomaton] = []
        self.transitions: List[RuntimeTransition] = []
        self.bindings: List[CompiledBinding] = []
        self.ode_slots: Tuple[int, ...] = ()
        self._export_cache: Dict[Tuple[str, str], Callable] = {}
        self._resolving: set = set()
        self._initial_values: List[Scalar] = []

    def scope(self, instance: str) -> InstanceScope:
        """实例作用域，实例不存在时抛出 ModelError"""
        if instance not in self.instance_index:
            raise ModelError(f"实例 {instance!r} 不存在")
        return InstanceScope(self, instance)

    def import_getters(self, instance: str, ref: str) -> List[Callable[[ModelState], Scalar]]:
        """按连接声明顺序返回导入引用所连导出的取值函数"""
        return [self._export_getter(source, export) for source, export in self.incoming[(instance, ref)]]

    def connection_count(self, instance: str, ref: str) -> int:
        """导入引用的连接数，未连接时为 0"""
        return len(self.incoming.get((instance, ref), ()))

    def _export_getter(self, source: str, export: ExportDef):
        """编译并缓存导出表达式，导出互相依赖成环时报错"""
        key = (source, export.label)
        if key not in self._export_cache:
            if key in self._resolving:
                raise ModelError(f"导出 {source}.{export.label} 的求值依赖自身")
            self._resolving.add(key)
            fn = compile_expression(export.expr, InstanceScope(self, source))
            self._resolving.discard(key)
            self._export_cache[key] = lambda s: fn(s, 0)
        return self._export_cache[key]

    def initial_state(self) -> ModelState:
        """t=0 时的初始状态"""
        return ModelState(0.0, list(self._initial_values), [a.initial for a in self.automata])

    def signature(self, state: ModelState) -> Tuple[str, ...]:
        """离散状态签名：排序后的全部活动状态"""
        return tuple(sorted(f"{a.instance}.{a.name}.{a.states[state.active[a.index]]}" for a in self.automata))

    def describe(self) -> Dict[str, int]:
        """模型规模统计"""
        return {
            'instances': len(self.instances),
            'connections': len(self.connections),
            'mediator_groups': len(self.mediator_groups),
            'backup_chains': len(self.backup_chains),
            'automata': len(self.automata),
            'transitions': len(self.transitions),
            'ode_variables': len(self.ode_slots),
        }


# ---------------------------------------------------------------------------
# 装配
# ---------------------------------------------------------------------------

def assemble_system(instances: Sequence[InstanceDecl], connections: Sequence[Connection] = (),
                    groups: Sequence[MediatorGroup] = (), chains: Sequence[Sequence[str]] = (),
                    pdmp_managers: Sequence[PdmpBinding] = ()) -> SystemModel:
    """装配系统：连接消息盒、展开中介者分组、检查备份链、编译 PDMP 绑定与迁移

    同样的输入（同样的顺序）得到结构相同的模型；每个导入引用按连接声明顺序
    记录其连接到的导出。
    """
    _unique([i.name for i in instances], "实例")
    model = SystemModel(instances, connections, groups, [tuple(c) for c in chains], pdmp_managers)
    _bind_parameters(model)
    _check_priorities(model)
    _allocate_slots(model)
    ode_owner = _collect_ode_variables(model)
    _bind_subjects(model, ode_owner)
    lowered = _lower_mediators(model)
    model.connections = tuple(connections) + tuple(lowered)
    _link_connections(model)
    _link_chains(model)
    _compile_initial_values(model)
    _compile_transitions(model)
    _compile_bindings(model, ode_owner)
    logger.debug(f"系统装配完成: {model.describe()}")
    return model


def _bind_parameters(model: SystemModel):
    """绑定各实例参数值（覆盖优先于默认值）并建立符号表"""
    for decl in model.instances:
        values = {}
        overrides = dict(decl.overrides)
        for p in decl.definition.parameters:
            raw = overrides.get(p.name, constant_value(p.default))
            values[p.name] = coerce_value(raw, p.type, f"{decl.name}.{p.name}")
        model.parameters[decl.name] = values
        symbols = ComponentScope(decl.definition).symbols
        symbols.pop('subject')
        model.symbols[decl.name] = symbols


def _check_priorities(model: SystemModel):
    """同一组件类型的实例优先级不得相同"""
    seen: Dict[Tuple[str, Scalar], str] = {}
    for decl in model.instances:
        if decl.definition.parameter('priority') is None:
            continue
        key = (decl.definition.name, model.parameters[decl.name]['priority'])
        if key in seen:
            raise PriorityTieError(f"实例 {seen[key]} 与 {decl.name} 的优先级相同: {key[1]}")
        seen[key] = decl.name


def _allocate_slots(model: SystemModel):
    """按实例声明顺序分配变量槽与自动机下标"""
    index = 0
    for decl in model.instances:
        for v in decl.definition.variables:
            model.slot_index[(decl.name, v.name)] = len(model.slots)
            model.slots.append((decl.name, v.name))
            model.slot_types.append(v.type)
        # 自动机下标与 _compile_transitions 的遍历顺序一致
        for automaton in decl.definition.automata:
            for k, state in enumerate(automaton.states):
                model.state_index[(decl.name, automaton.name, state)] = (index, k)
            index += 1


def _collect_ode_variables(model: SystemModel) -> Dict[Tuple[str, str], str]:
    """收集各 PDMP 管理的连续变量，一个变量只能属于一个 PDMP"""
    owner: Dict[Tuple[str, str], str] = {}
    for binding in model.pdmp_managers:
        for instance, variable in binding.ode_variables:
            key = (instance, variable)
            if key not in model.slot_index:
                raise ModelError(f"PDMP {binding.name} 的连续变量 {instance}.{variable} 不存在")
            if model.slot_types[model.slot_index[key]] == 'bool':
                raise ModelError(f"PDMP {binding.name} 的连续变量 {instance}.{variable} 不能是布尔类型")
            if key in owner:
                raise DuplicateOdeBindingError(
                    f"连续变量 {instance}.{variable} 同时绑定在 {owner[key]} 与 {binding.name}")
            owner[key] = binding.name
    return owner


def _bind_subjects(model: SystemModel, ode_owner: Mapping[Tuple[str, str], str]):
    """把中介者的 subject 绑定到第一个观察对象的变量槽"""
    for group in model.mediator_groups:
        if group.name not in model.instance_index:
            raise DanglingConnectionError(f"中介者实例 {group.name!r} 不存在")
        if not group.subjects:
            raise ModelError(f"中介者 {group.name} 没有观察对象")
        for subject in group.subjects:
            if subject not in ode_owner:
                raise ModelError(f"中介者 {group.name} 的观察对象 {'.'.join(subject)} 不是连续变量")
        model.subject_slots[group.name] = model.slot_index[group.subjects[0]]


def _lower_mediators(model: SystemModel) -> List[Connection]:
    """把中介者分组展开为中介者角色消息盒与活动组件消息盒之间的连接"""
    lowered = []
    for group in model.mediator_groups:
        mediator = model.instance_index[group.name].definition
        for active, role in group.active_components:
            if active not in model.instance_index:
                raise DanglingConnectionError(f"中介者 {group.name} 的活动组件 {active!r} 不存在")
            role_box = mediator.message_box(role)
            if role_box is None:
                raise ModelError(f"中介者类型 {mediator.name} 没有角色消息盒 {role!r}")
            wanted = set(role_box.import_labels)
            candidates = [box for box in model.instance_index[active].definition.message_boxes
                          if wanted <= set(box.export_labels)
                          and set(box.import_labels) <= set(role_box.export_labels)]
            if len(candidates) != 1:
                raise LabelMismatchError(
                    f"活动组件 {active} 中与角色 {role} 匹配的消息盒数量为 {len(candidates)}，应恰为 1")
            lowered.append(Connection((group.name, role), (active, candidates[0].name), 'mediator'))
    return lowered


def _link_connections(model: SystemModel):
    """按连接声明顺序把导入引用连到对端导出"""
    for decl in model.instances:
        for _, imp in decl.definition.imports():
            model.incoming[(decl.name, imp.ref)] = []
    for connection in model.connections:
        left = _endpoint(model, connection.left)
        right = _endpoint(model, connection.right)
        _link_side(model, connection, connection.left[0], left, connection.right[0], right)
        _link_side(model, connection, connection.right[0], right, connection.left[0], left)


def _endpoint(model: SystemModel, endpoint: Tuple[str, str]) -> MessageBoxDef:
    """解析连接端点对应的消息盒"""
    instance, box_name = endpoint
    decl = model.instance_index.get(instance)
    if decl is None:
        raise DanglingConnectionError(f"连接端点实例 {instance!r} 不存在")
    box = decl.definition.message_box(box_name)
    if box is None:
        raise DanglingConnectionError(f"实例 {instance} 没有消息盒 {box_name!r}")
    return box


def _link_side(model: SystemModel, connection: Connection, importer: str, import_box: MessageBoxDef,
               exporter: str, export_box: MessageBoxDef):
    """连接的一侧：导入标签必须在对端找到同名导出"""
    exports = {e.label: e for e in export_box.exports}
    for imp in import_box.imports:
        if imp.label not in exports:
            raise LabelMismatchError(f"连接 {connection}: {importer}.{import_box.name} 导入的标签 "
                                     f"{imp.label!r} 在 {exporter}.{export_box.name} 中没有导出")
        model.incoming[(importer, imp.ref)].append((exporter, exports[imp.label]))


def _link_chains(model: SystemModel):
    """校验备份链无环，并计算每个实例的全部下游备份"""
    successors: Dict[str, List[str]] = {decl.name: [] for decl in model.instances}
    for chain in model.backup_chains:
        for name in chain:
            if name not in model.instance_index:
                raise DanglingConnectionError(f"备份链中的实例 {name!r} 不存在")
        if len(set(chain)) != len(chain):
            raise CyclicChainError(f"备份链 {' -> '.join(chain)} 中存在重复实例")
        for head, tail in zip(chain, chain[1:]):
            if tail not in successors[head]:
                successors[head].append(tail)

    def visit(name: str, path: Tuple[str, ...]) -> List[str]:
        reached = []
        for nxt in successors[name]:
            if nxt in path:
                raise CyclicChainError(f"备份链成环: {' -> '.join(path + (nxt,))}")
            if nxt not in reached:
                reached.append(nxt)
            for further in visit(nxt, path + (nxt,)):
                if further not in reached:
                    reached.append(further)
        return reached

    for decl in model.instances:
        model.downstream[decl.name] = tuple(visit(decl.name, (decl.name,)))


def _compile_initial_values(model: SystemModel):
    """按槽顺序求出各变量初值"""
    state = ModelState(0.0, [0.0] * len(model.slots), [])
    for slot, (instance, variable) in enumerate(model.slots):
        definition = model.instance_index[instance].definition.variable(variable)
        fn = compile_expression(definition.initial, model.scope(instance))
        state.values[slot] = _coerce_slot(fn(state, 0), model.slot_types[slot])
    model._initial_values = state.values


def _coerce_slot(value: Scalar, type_: str) -> Scalar:
    """把求值结果转换为变量槽的类型"""
    if type_ == 'bool':
        return bool(value)
    if type_ == 'int':
        return int(value)
    return float(value)


def _compile_hook(model: SystemModel, instance: str, hook: HookDef) -> List[Callable[[ModelState], None]]:
    """把钩子的赋值编译为动作；on_backups 赋值写入全部下游备份"""
    actions = []
    scope = model.scope(instance)
    for assignment in hook.assignments:
        fn = compile_expression(assignment.expr, scope)
        targets = model.downstream[instance] if assignment.on_backups else (instance,)
        slots = []
        for target in targets:
            key = (target, assignment.target)
            if key not in model.slot_index:
                raise ModelError(f"钩子 {instance}.{hook.name} 的目标 {target}.{assignment.target} 不存在")
            slots.append(model.slot_index[key])
        type_ = model.instance_index[instance].definition.variable(assignment.target).type
        actions.append(_assign_action(fn, tuple(slots), type_))
    return actions


def _assign_action(fn, slots: Tuple[int, ...], type_: str):
    """求值一次，写入所有目标槽"""
    def assign(state: ModelState):
        value = _coerce_slot(fn(state, 0), type_)
        for slot in slots:
            state.values[slot] = value
    return assign


def _compile_transitions(model: SystemModel):
    """按声明顺序编译全部迁移，迁移序号即全局顺序"""
    for decl in model.instances:
        scope = model.scope(decl.name)
        for automaton in decl.definition.automata:
            index = len(model.automata)
            outgoing: List[List[RuntimeTransition]] = [[] for _ in automaton.states]
            for t in automaton.transitions:
                runtime = _compile_transition(model, scope, decl, automaton, index, t)
                model.transitions.append(runtime)
                outgoing[runtime.source].append(runtime)
            model.automata.append(RuntimeAutomaton(
                index, decl.name, automaton.name, automaton.states,
                automaton.states.index(automaton.initial_state), tuple(tuple(o) for o in outgoing)))


def _compile_transition(model: SystemModel, scope: InstanceScope, decl: InstanceDecl,
                        automaton: AutomatonDef, index: int, t: TransitionDef) -> RuntimeTransition:
    """编译单条迁移的条件、速率或权重及钩子动作"""
    condition = None
    if t.condition is not None:
        fn = compile_expression(t.condition, scope)
        condition = lambda s, fn=fn: bool(fn(s, 0))
    rate = weight = None
    stochastic = isinstance(t.law, ExponentialLaw)
    if stochastic:
        fn = compile_expression(t.law.rate, scope)
        rate = lambda s, fn=fn: float(fn(s, 0))
    else:
        fn = compile_expression(t.law.weight, scope)
        weight = lambda s, fn=fn: float(fn(s, 0))
    actions = []
    for hook_name in t.fire_hooks:
        actions.extend(_compile_hook(model, decl.name, decl.definition.hook(hook_name)))
    return RuntimeTransition(
        len(model.transitions), decl.name, automaton.name, index, t.name,
        automaton.states.index(t.source), automaton.states.index(t.target), t.source, t.target,
        stochastic, rate, weight, condition, t.fire_hooks, tuple(actions))


def _compile_bindings(model: SystemModel, ode_owner: Mapping[Tuple[str, str], str]):
    """编译 PDMP 的导数、停止条件与启动钩子"""
    all_slots = []
    for binding in model.pdmp_managers:
        equations: Dict[Tuple[str, str], Expr] = {}
        for instance, variable, expr in binding.equations:
            key = (instance, variable)
            if ode_owner.get(key) != binding.name:
                raise ModelError(f"PDMP {binding.name} 为未声明的连续变量 {instance}.{variable} 给出了方程")
            if key in equations:
                raise DuplicateOdeBindingError(f"连续变量 {instance}.{variable} 有多个方程")
            equations[key] = expr
        slots, derivatives = [], []
        for key in binding.ode_variables:
            if key not in equations:
                raise ModelError(f"PDMP {binding.name} 缺少 d({'.'.join(key)})/dt 的方程")
            scope = model.scope(key[0])
            if infer_type(equations[key], scope) == BOOL:
                raise ConditionTypeError(f"d({'.'.join(key)})/dt 必须是数值表达式")
            fn = compile_expression(equations[key], scope)
            slots.append(model.slot_index[key])
            derivatives.append(lambda s, fn=fn: float(fn(s, 0)))
        stops = []
        if binding.stop_conditions and not binding.ode_variables:
            raise ModelError(f"PDMP {binding.name} 没有连续变量，无法解析停止条件")
        for expr in binding.stop_conditions:
            scope = model.scope(binding.ode_variables[0][0])
            if infer_type(expr, scope) == NUM:
                raise ConditionTypeError(f"PDMP {binding.name} 的停止条件不是布尔表达式")
            fn = compile_expression(expr, scope)
            stops.append(lambda s, fn=fn: bool(fn(s, 0)))
        starts = []
        for instance, hook_name in binding.start_hooks:
            decl = model.instance_index.get(instance)
            hook = decl.definition.hook(hook_name) if decl else None
            if hook is None:
                raise ModelError(f"PDMP {binding.name} 的启动钩子 {instance}.{hook_name} 不存在")
            starts.extend(_compile_hook(model, instance, hook))
        model.bindings.append(CompiledBinding(binding.name, tuple(slots), tuple(derivatives),
                                              tuple(stops), tuple(starts)))
        all_slots.extend(slots)
    model.ode_slots = tuple(all_slots)


# ---------------------------------------------------------------------------
# 求值与钩子
# ---------------------------------------------------------------------------

def evaluate_expression(expr: Union[str, Expr], scope: InstanceScope, state: ModelState,
                        connection_index: int = 0) -> Scalar:
    """在实例作用域内对表达式求值（纯函数，不修改状态）"""
    if isinstance(expr, str):
        expr = parse_expression(expr)
    infer_type(expr, scope)
    return compile_expression(expr, scope)(state, connection_index)


def fire_notification_hooks(model: SystemModel, transition: RuntimeTransition,
                            state: ModelState) -> ModelState:
    """在迁移触发的同一时刻同步执行其通知钩子"""
    for action in transition.actions:
        action(state)
    if transition.hooks:
        logger.debug(f"{transition.instance}.{transition.name} 触发钩子 {', '.join(transition.hooks)}")
    return state


def find_transition(model: SystemModel, instance: str, automaton: str, name: str) -> RuntimeTransition:
    """按实例、自动机与迁移名查找运行期迁移"""
    for t in model.transitions:
        if (t.instance, t.automaton, t.name) == (instance, automaton, name):
            return t
    raise ModelError(f"迁移 {instance}.{automaton}.{name} 不存在")


def set_active(model: SystemModel, state: ModelState, instance: str, automaton: str, state_name: str):
    """直接设置某自动机的活动状态"""
    index, k = model.state_index[(instance, automaton, state_name)]
    state.active[index] = k


class SystemBuilder:
    """以代码方式描述系统拓扑，build() 调用 assemble_system"""

    def __init__(self):
        self._instances: List[InstanceDecl] = []
        self._connections: List[Connection] = []
        self._groups: List[MediatorGroup] = []
        self._chains: List[Tuple[str, ...]] = []
        self._bindings: List[PdmpBinding] = []

    def instance(self, name: str, definition: ComponentDefinition, *args, **kwargs) -> 'SystemBuilder':
        self._instances.append(InstanceDecl(name, definition, bind_arguments(definition, args, kwargs)))
        return self

    def connect(self, left: str, right: str) -> 'SystemBuilder':
        self._connections.append(Connection(_pair(left), _pair(right)))
        return self

    def mediator(self, name: str, definition: ComponentDefinition, subjects: Sequence[str],
                 actives: Mapping[str, str]) -> 'SystemBuilder':
        self._instances.append(InstanceDecl(name, definition))
        self._groups.append(MediatorGroup(name, tuple(_pair(s) for s in subjects), tuple(actives.items())))
        return self

    def chain(self, *names: str) -> 'SystemBuilder':
        self._chains.append(tuple(names))
        return self

    def pdmp(self, name: str, equations: Mapping[str, object], stop: Sequence[object] = (),
             start: Sequence[str] = ()) -> 'SystemBuilder':
        odes = tuple(_pair(key) for key in equations)
        eqs = tuple(_pair(key) + (as_expression(expr),) for key, expr in equations.items())
        self._bindings.append(PdmpBinding(name, odes, eqs, tuple(as_expression(s) for s in stop),
                                          tuple(_pair(s) for s in start)))
        return self

    def build(self, overrides: Optional[Mapping[str, Scalar]] = None) -> SystemModel:
        return assemble_system(apply_overrides(self._instances, overrides), self._connections,
                               self._groups, self._chains, self._bindings)


def _pair(dotted: str) -> Tuple[str, str]:
    """拆分 'instance.name'"""
    head, _, tail = dotted.partition('.')
    if not tail:
        raise ModelError(f"{dotted!r} 应为 'instance.name' 形式")
    return head, tail
