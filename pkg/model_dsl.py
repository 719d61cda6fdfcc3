#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
模型描述语言
.model 文件的解析、格式化输出、include 展开与展开为 SystemModel
完整语法见 docs/dsl.md
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

from errors import (ArityError, DslSyntaxError, DuplicateNameError, ModelError,
                    UnknownComponentTypeError, WorkbenchError)
from expressions import (Boolean, Expr, ExpressionParser, Name, Number, TokenStream,
                         constant_value, format_expression, tokenize)
from kernel import (Assignment, AutomatonDef, ComponentDefinition, Connection, ExponentialLaw,
                    ExportDef, HookDef, ImportDef, InstanceDecl, InstantaneousLaw, MediatorGroup,
                    MessageBoxDef, ParameterDef, PdmpBinding, SystemModel, TransitionDef,
                    VariableDef, apply_overrides, assemble_system, bind_arguments,
                    define_component)

logger = logging.getLogger(__name__)

MODEL_SUFFIX = '.model'
DEFAULT_MEDIATOR_TYPE = 'Mediator'
_TYPE_TOKENS = {'REAL': 'real', 'INT': 'int', 'BOOL': 'bool'}
_DEFAULTS = {'real': Number(0, '0'), 'int': Number(0, '0'), 'bool': Boolean(False)}


@dataclass(frozen=True)
class ModelSource:
    """一个 .model 源文件"""
    path: str
    text: str

    @classmethod
    def read(cls, path: Union[str, Path]) -> 'ModelSource':
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"模型文件不存在: {path}")
        return cls(str(path), path.read_text(encoding='utf-8'))

    @property
    def lines(self) -> List[str]:
        return self.text.splitlines()

    def line(self, number: int) -> str:
        """诊断用：返回第 number 行（从 1 开始）"""
        lines = self.lines
        return lines[number - 1] if 0 < number <= len(lines) else ''


# ---------------------------------------------------------------------------
# 语法树
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IncludeDecl:
    path: str
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class ComponentDecl:
    definition: ComponentDefinition
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class InstanceAst:
    name: str
    type_name: str
    positional: Tuple[Expr, ...] = ()
    named: Tuple[Tuple[str, Expr], ...] = ()
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class ConnectAst:
    left: Tuple[str, str]
    right: Tuple[str, str]
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class MediatorAst:
    name: str
    type_name: Optional[str]
    subjects: Tuple[Tuple[str, str], ...]
    actives: Tuple[Tuple[str, str], ...]
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class ChainAst:
    members: Tuple[str, ...]
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class PdmpAst:
    name: str
    odes: Tuple[Tuple[str, str], ...]
    equations: Tuple[Tuple[str, str, Expr], ...]
    stops: Tuple[Expr, ...] = ()
    starts: Tuple[Tuple[str, str], ...] = ()
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class SystemAst:
    name: Optional[str]
    instances: Tuple[InstanceAst, ...] = ()
    connects: Tuple[ConnectAst, ...] = ()
    mediators: Tuple[MediatorAst, ...] = ()
    chains: Tuple[ChainAst, ...] = ()
    pdmps: Tuple[PdmpAst, ...] = ()
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class ModelAst:
    path: Optional[str] = field(default=None, compare=False)
    includes: Tuple[IncludeDecl, ...] = ()
    components: Tuple[ComponentDecl, ...] = ()
    system: Optional[SystemAst] = None


# ---------------------------------------------------------------------------
# 解析
# ---------------------------------------------------------------------------

class ModelParser(ExpressionParser):
    """语句层的递归下降解析器，表达式部分复用 ExpressionParser"""

    def parse_file(self, path: Optional[str] = None) -> ModelAst:
        s = self.stream
        includes, components, system = [], [], None
        names = set()
        while not s.at('EOF'):
            tok = s.peek()
            if s.accept('INCLUDE'):
                target = s.expect('STRING', '文件路径字符串')
                s.expect(';', "';'")
                includes.append(IncludeDecl(target.value, tok.line))
            elif tok.type == 'COMPONENT':
                decl = self._component()
                if decl.definition.name in names:
                    raise DuplicateNameError(f"组件 {decl.definition.name!r} 重复定义",
                                             line=tok.line, column=tok.column)
                names.add(decl.definition.name)
                components.append(decl)
            elif tok.type == 'SYSTEM':
                if system is not None:
                    raise DuplicateNameError("同一文件中只能有一个 system 块", line=tok.line, column=tok.column)
                system = self._system()
            else:
                s.fail("期望 include、component 或 system")
        return ModelAst(path, tuple(includes), tuple(components), system)

    # 通用 ------------------------------------------------------------------
    def _ident(self, what: str = '标识符') -> str:
        return self.stream.expect('ID', what).value

    def _end_block(self):
        self.stream.expect('}', "'}'")
        self.stream.accept(';')

    def _type(self) -> str:
        tok = self.stream.accept(*_TYPE_TOKENS)
        if tok is None:
            self.stream.fail("期望类型 real、int 或 bool")
        return _TYPE_TOKENS[tok.type]

    def _qualified(self) -> Tuple[str, str]:
        head = self._ident('实例名')
        self.stream.expect('.', "'.'")
        return head, self._ident()

    # 组件 ------------------------------------------------------------------
    def _component(self) -> ComponentDecl:
        s = self.stream
        start = s.next()
        name = self._ident('组件名')
        parameters = []
        if s.accept('('):
            if not s.at(')'):
                parameters.append(self._typed(ParameterDef))
                while s.accept(','):
                    parameters.append(self._typed(ParameterDef))
            s.expect(')', "')'")
        s.expect('{', "'{'")
        variables, automata, boxes, hooks = [], [], [], []
        while not s.at('}'):
            if s.accept('VAR'):
                variables.append(self._typed(VariableDef))
                s.expect(';', "';'")
            elif s.at('AUTOMATON'):
                automata.append(self._automaton())
            elif s.at('MSGBOX'):
                boxes.append(self._msgbox())
            elif s.at('HOOK'):
                hooks.append(self._hook())
            else:
                s.fail("期望 var、automaton、msgbox 或 hook")
        self._end_block()
        definition = ComponentDefinition(name, tuple(parameters), tuple(variables), tuple(automata),
                                         tuple(boxes), tuple(hooks))
        return ComponentDecl(definition, start.line)

    def _typed(self, cls):
        name = self._ident()
        self.stream.expect(':', "':'")
        type_ = self._type()
        value = self.parse_expression() if self.stream.accept('=') else _DEFAULTS[type_]
        return cls(name, type_, value)

    def _automaton(self) -> AutomatonDef:
        s = self.stream
        start = s.next()
        name = self._ident('自动机名')
        s.expect('{', "'{'")
        states, initial, transitions = [], [], []
        while not s.at('}'):
            if s.accept('STATE'):
                states.append(self._ident('状态名'))
                if s.accept('INIT'):
                    initial.append(states[-1])
                s.expect(';', "';'")
            elif s.accept('TRANS'):
                transitions.append(self._transition())
            else:
                s.fail("期望 state 或 trans")
        self._end_block()
        if len(initial) != 1:
            raise DslSyntaxError(f"自动机 {name} 必须恰有一个 init 状态（实际 {len(initial)} 个）",
                                 line=start.line, column=start.column)
        return AutomatonDef(name, tuple(states), initial[0], tuple(transitions))

    def _transition(self) -> TransitionDef:
        s = self.stream
        name = None
        if s.peek(1).type == ':':
            name = self._ident()
            s.next()
        source = self._ident('源状态')
        s.expect('ARROW', "'->'")
        target = self._ident('目标状态')
        s.expect('LAW', "'law'")
        law_tok = s.accept('EXPO', 'INST')
        if law_tok is None:
            s.fail("期望 expo(...) 或 inst(...)")
        s.expect('(', "'('")
        arg = self.parse_expression()
        s.expect(')', "')'")
        law = ExponentialLaw(arg) if law_tok.type == 'EXPO' else InstantaneousLaw(arg)
        condition = self.parse_expression() if s.accept('WHEN') else None
        hooks = []
        if s.accept('NOTIFY'):
            hooks.append(self._ident('钩子名'))
            while s.accept(','):
                hooks.append(self._ident('钩子名'))
        s.expect(';', "';'")
        return TransitionDef(name or f"{source}_to_{target}", source, target, law, condition, tuple(hooks))

    def _msgbox(self) -> MessageBoxDef:
        s = self.stream
        s.next()
        name = self._ident('消息盒名')
        s.expect('{', "'{'")
        exports, imports = [], []
        while not s.at('}'):
            if s.accept('EXPORT'):
                expr = self.parse_expression()
                s.expect('AS', "'as'")
                exports.append(ExportDef(expr, self._ident('导出标签')))
            elif s.accept('IMPORT'):
                label = self._ident('导入标签')
                ref = self._ident('引用名') if s.accept('AS') else label
                imports.append(ImportDef(label, ref))
            else:
                s.fail("期望 export 或 import")
            s.expect(';', "';'")
        self._end_block()
        return MessageBoxDef(name, tuple(exports), tuple(imports))

    def _hook(self) -> HookDef:
        s = self.stream
        s.next()
        name = self._ident('钩子名')
        s.expect('{', "'{'")
        assignments = []
        while not s.at('}'):
            on_backups = bool(s.accept('BACKUPS'))
            if on_backups:
                s.expect('.', "'.'")
            target = self._ident('变量名')
            s.expect('=', "'='")
            assignments.append(Assignment(target, self.parse_expression(), on_backups))
            s.expect(';', "';'")
        self._end_block()
        return HookDef(name, tuple(assignments))

    # 系统 ------------------------------------------------------------------
    def _system(self) -> SystemAst:
        s = self.stream
        start = s.next()
        name = self._ident() if s.at('ID') else None
        s.expect('{', "'{'")
        instances, connects, mediators, chains, pdmps = [], [], [], [], []
        while not s.at('}'):
            tok = s.peek()
            if s.accept('INSTANCE'):
                instances.append(self._instance(tok))
            elif s.accept('CONNECT'):
                left = self._qualified()
                s.expect('BIARROW', "'<->'")
                right = self._qualified()
                s.expect(';', "';'")
                connects.append(ConnectAst(left, right, tok.line))
            elif s.accept('MEDIATOR'):
                mediators.append(self._mediator(tok))
            elif s.accept('CHAIN'):
                members = [self._ident('实例名')]
                while s.accept('ARROW'):
                    members.append(self._ident('实例名'))
                if len(members) < 2:
                    s.fail("备份链至少需要两个实例")
                s.expect(';', "';'")
                chains.append(ChainAst(tuple(members), tok.line))
            elif s.accept('PDMP'):
                pdmps.append(self._pdmp(tok))
            else:
                s.fail("期望 instance、connect、mediator、chain 或 pdmp")
        self._end_block()
        seen = set()
        for decl in instances:
            if decl.name in seen:
                raise DuplicateNameError(f"实例 {decl.name!r} 重复声明", line=decl.line)
            seen.add(decl.name)
        return SystemAst(name, tuple(instances), tuple(connects), tuple(mediators), tuple(chains),
                         tuple(pdmps), start.line)

    def _instance(self, tok) -> InstanceAst:
        s = self.stream
        name = self._ident('实例名')
        s.expect(':', "':'")
        type_name = self._ident('组件类型名')
        positional, named = [], []
        if s.accept('('):
            while not s.at(')'):
                if s.at('ID') and s.peek(1).type == '=':
                    key = self._ident()
                    s.next()
                    named.append((key, self.parse_expression()))
                else:
                    if named:
                        s.fail("位置参数必须位于命名参数之前")
                    positional.append(self.parse_expression())
                if not s.accept(','):
                    break
            s.expect(')', "')'")
        s.expect(';', "';'")
        return InstanceAst(name, type_name, tuple(positional), tuple(named), tok.line)

    def _mediator(self, tok) -> MediatorAst:
        s = self.stream
        name = self._ident('中介者名')
        type_name = self._ident('组件类型名') if s.accept(':') else None
        s.expect('{', "'{'")
        subjects, actives = [], []
        while not s.at('}'):
            if s.accept('SUBJECT'):
                subjects.append(self._qualified())
            elif s.accept('ACTIVE'):
                active = self._ident('实例名')
                s.expect('ROLE', "'role'")
                actives.append((active, self._ident('角色名')))
            else:
                s.fail("期望 subject 或 active")
            s.expect(';', "';'")
        self._end_block()
        return MediatorAst(name, type_name, tuple(subjects), tuple(actives), tok.line)

    def _pdmp(self, tok) -> PdmpAst:
        s = self.stream
        name = self._ident('PDMP 名')
        s.expect('{', "'{'")
        odes, equations, stops, starts = [], [], [], []
        while not s.at('}'):
            if s.accept('ODE'):
                odes.append(self._qualified())
            elif s.accept('EQ_KW'):
                self._keyword_id('d')
                s.expect('(', "'('")
                target = self._qualified()
                s.expect(')', "')'")
                s.expect('/', "'/'")
                self._keyword_id('dt')
                s.expect('=', "'='")
                equations.append(target + (self.parse_expression(),))
            elif s.accept('STOP'):
                stops.append(self.parse_expression())
            elif s.accept('START'):
                starts.append(self._qualified())
            else:
                s.fail("期望 ode、eq、stop 或 start")
            s.expect(';', "';'")
        self._end_block()
        return PdmpAst(name, tuple(odes), tuple(equations), tuple(stops), tuple(starts), tok.line)

    def _keyword_id(self, word: str):
        tok = self.stream.peek()
        if tok.type != 'ID' or tok.value != word:
            self.stream.fail(f"期望 {word!r}")
        self.stream.next()


def parse(source: Union[ModelSource, str]) -> ModelAst:
    """解析一个源文件；语法错误带文件名与行列号"""
    if isinstance(source, str):
        source = ModelSource('<string>', source)
    try:
        return ModelParser(TokenStream(tokenize(source.text))).parse_file(source.path)
    except WorkbenchError as e:
        raise e.with_path(source.path) if e.path is None else e


# ---------------------------------------------------------------------------
# 格式化输出
# ---------------------------------------------------------------------------

_INDENT = '    '


def format_model(ast: ModelAst) -> str:
    """规范格式输出；解析结果与原语法树相同"""
    blocks = []
    if ast.includes:
        blocks.append('\n'.join(f'include "{inc.path}";' for inc in ast.includes))
    for decl in ast.components:
        blocks.append(_format_component(decl.definition))
    if ast.system is not None:
        blocks.append(_format_system(ast.system))
    return '\n\n'.join(blocks) + '\n'


def _format_component(d: ComponentDefinition) -> str:
    params = ', '.join(f"{p.name}: {p.type} = {format_expression(p.default)}" for p in d.parameters)
    lines = [f"component {d.name}({params}) {{" if d.parameters else f"component {d.name} {{"]
    for v in d.variables:
        lines.append(f"{_INDENT}var {v.name}: {v.type} = {format_expression(v.initial)};")
    for a in d.automata:
        lines.append(f"{_INDENT}automaton {a.name} {{")
        for state in a.states:
            lines.append(f"{_INDENT * 2}state {state}{' init' if state == a.initial_state else ''};")
        for t in a.transitions:
            lines.append(_INDENT * 2 + _format_transition(t))
        lines.append(f"{_INDENT}}}")
    for box in d.message_boxes:
        lines.append(f"{_INDENT}msgbox {box.name} {{")
        for exp in box.exports:
            lines.append(f"{_INDENT * 2}export {format_expression(exp.expr)} as {exp.label};")
        for imp in box.imports:
            alias = f" as {imp.ref}" if imp.ref != imp.label else ''
            lines.append(f"{_INDENT * 2}import {imp.label}{alias};")
        lines.append(f"{_INDENT}}}")
    for hook in d.notification_hooks:
        lines.append(f"{_INDENT}hook {hook.name} {{")
        for a in hook.assignments:
            target = f"backups.{a.target}" if a.on_backups else a.target
            lines.append(f"{_INDENT * 2}{target} = {format_expression(a.expr)};")
        lines.append(f"{_INDENT}}}")
    lines.append('}')
    return '\n'.join(lines)


def _format_transition(t: TransitionDef) -> str:
    prefix = '' if t.name == f"{t.source}_to_{t.target}" else f"{t.name}: "
    if isinstance(t.law, ExponentialLaw):
        law = f"expo({format_expression(t.law.rate)})"
    else:
        law = f"inst({format_expression(t.law.weight)})"
    text = f"trans {prefix}{t.source} -> {t.target} law {law}"
    if t.condition is not None:
        text += f" when {format_expression(t.condition)}"
    if t.fire_hooks:
        text += f" notify {', '.join(t.fire_hooks)}"
    return text + ';'


def _format_system(system: SystemAst) -> str:
    lines = [f"system {system.name} {{" if system.name else "system {"]
    for decl in system.instances:
        args = [format_expression(e) for e in decl.positional]
        args += [f"{k} = {format_expression(e)}" for k, e in decl.named]
        lines.append(f"{_INDENT}instance {decl.name}: {decl.type_name}({', '.join(args)});")
    for c in system.connects:
        lines.append(f"{_INDENT}connect {'.'.join(c.left)} <-> {'.'.join(c.right)};")
    for m in system.mediators:
        header = f"{m.name}: {m.type_name}" if m.type_name else m.name
        lines.append(f"{_INDENT}mediator {header} {{")
        lines += [f"{_INDENT * 2}subject {'.'.join(sub)};" for sub in m.subjects]
        lines += [f"{_INDENT * 2}active {inst} role {role};" for inst, role in m.actives]
        lines.append(f"{_INDENT}}}")
    for chain in system.chains:
        lines.append(f"{_INDENT}chain {' -> '.join(chain.members)};")
    for p in system.pdmps:
        lines.append(f"{_INDENT}pdmp {p.name} {{")
        lines += [f"{_INDENT * 2}ode {'.'.join(v)};" for v in p.odes]
        lines += [f"{_INDENT * 2}eq d({i}.{v})/dt = {format_expression(e)};" for i, v, e in p.equations]
        lines += [f"{_INDENT * 2}stop {format_expression(e)};" for e in p.stops]
        lines += [f"{_INDENT * 2}start {'.'.join(h)};" for h in p.starts]
        lines.append(f"{_INDENT}}}")
    lines.append('}')
    return '\n'.join(lines)


# ---------------------------------------------------------------------------
# 文件集
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelFileSet:
    """一个用例的全部源文件：按 include 顺序展开，用例文件在最后"""
    sources: Tuple[ModelSource, ...]
    asts: Tuple[ModelAst, ...]

    @property
    def root(self) -> ModelSource:
        return self.sources[-1]

    @property
    def paths(self) -> List[str]:
        return [s.path for s in self.sources]


def load(path: Union[str, Path]) -> ModelFileSet:
    """读取模型文件并递归展开 include（相对于包含它的文件解析，每个文件只读一次）"""
    sources: List[ModelSource] = []
    asts: List[ModelAst] = []
    done: set = set()

    def visit(file: Path, stack: Tuple[Path, ...]):
        resolved = file.resolve()
        if resolved in stack:
            chain = ' -> '.join(str(p) for p in stack + (resolved,))
            raise ModelError(f"include 成环: {chain}", path=str(file))
        if resolved in done:
            return
        source = ModelSource.read(file)
        ast = parse(source)
        for inc in ast.includes:
            target = file.parent / inc.path
            if not target.exists():
                raise FileNotFoundError(f"{source.path}:{inc.line}: include 的文件不存在: {target}")
            visit(target, stack + (resolved,))
        done.add(resolved)
        sources.append(source)
        asts.append(ast)

    visit(Path(path), ())
    logger.info(f"模型已读取: {path}（共 {len(sources)} 个文件）")
    return ModelFileSet(tuple(sources), tuple(asts))


def file_set_paths(path: Union[str, Path]) -> List[str]:
    return load(path).paths


# ---------------------------------------------------------------------------
# 展开
# ---------------------------------------------------------------------------

def _located(error: WorkbenchError, path: Optional[str], line: int) -> WorkbenchError:
    if error.path is None:
        error.path = path
        if error.line is None and line:
            error.line = line
        error.args = (error._format(),)
    return error


def elaborate(ast: Union[ModelAst, ModelFileSet, Sequence[ModelAst]],
              overrides: Optional[Mapping[str, object]] = None) -> SystemModel:
    """解析名字、应用参数覆盖、展开中介者与备份链、挂接 PDMP 绑定"""
    if isinstance(ast, ModelFileSet):
        asts = list(ast.asts)
    elif isinstance(ast, ModelAst):
        asts = [ast]
    else:
        asts = list(ast)

    components: Dict[str, ComponentDefinition] = {}
    for tree in asts:
        for decl in tree.components:
            name = decl.definition.name
            if name in components:
                raise DuplicateNameError(f"组件类型 {name!r} 在文件集中重复定义", path=tree.path, line=decl.line)
            try:
                components[name] = define_component(decl.definition)
            except WorkbenchError as e:
                raise _located(e, tree.path, decl.line)

    systems = [(tree, tree.system) for tree in asts if tree.system is not None]
    if len(systems) != 1:
        raise ModelError(f"文件集中应恰有一个 system 块，实际 {len(systems)} 个",
                         path=asts[-1].path if asts else None)
    tree, system = systems[0]
    path = tree.path

    instances = []
    for decl in system.instances:
        definition = components.get(decl.type_name)
        if definition is None:
            raise UnknownComponentTypeError(f"未知组件类型 {decl.type_name!r}", path=path, line=decl.line)
        try:
            positional = [_constant(e, decl) for e in decl.positional]
            named = {k: _constant(e, decl) for k, e in decl.named}
            instances.append(InstanceDecl(decl.name, definition, bind_arguments(definition, positional, named)))
        except WorkbenchError as e:
            raise _located(e, path, decl.line)

    groups = []
    for m in system.mediators:
        type_name = m.type_name or DEFAULT_MEDIATOR_TYPE
        definition = components.get(type_name)
        if definition is None:
            raise UnknownComponentTypeError(f"未知中介者类型 {type_name!r}", path=path, line=m.line)
        if any(i.name == m.name for i in instances):
            raise DuplicateNameError(f"中介者 {m.name!r} 与实例重名", path=path, line=m.line)
        instances.append(InstanceDecl(m.name, definition))
        groups.append(MediatorGroup(m.name, m.subjects, m.actives))

    connections = [Connection(c.left, c.right) for c in system.connects]
    chains = [c.members for c in system.chains]
    bindings = [PdmpBinding(p.name, p.odes, p.equations, p.stops, p.starts) for p in system.pdmps]
    try:
        return assemble_system(apply_overrides(instances, overrides), connections, groups, chains, bindings)
    except WorkbenchError as e:
        raise _located(e, path, system.line)


def _constant(expr: Expr, decl: InstanceAst):
    value = constant_value(expr)
    if value is None:
        raise ArityError(f"实例 {decl.name} 的参数必须是常量: {format_expression(expr)}")
    return value


def load_model(path: Union[str, Path], overrides: Optional[Mapping[str, object]] = None) -> SystemModel:
    """读取并展开模型文件"""
    model = elaborate(load(path), overrides)
    logger.info(f"模型已展开: {path} {model.describe()}")
    return model
