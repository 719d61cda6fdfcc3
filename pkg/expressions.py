#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
表达式子系统
词法分析（ply）、表达式语法树、递归下降解析、静态类型检查、编译为闭包求值
模型 DSL 的解析器在此基础上扩展语句语法
"""

import logging
import operator
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple, Union

import ply.lex as lex

from errors import (ConditionTypeError, DslSyntaxError, EvaluationError,
                    UnresolvedIdentifierError, UnresolvedStateError, ValidationError)

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# 词法
# ---------------------------------------------------------------------------

RESERVED = {
    'component': 'COMPONENT', 'var': 'VAR', 'automaton': 'AUTOMATON', 'state': 'STATE',
    'init': 'INIT', 'trans': 'TRANS', 'law': 'LAW', 'expo': 'EXPO', 'inst': 'INST',
    'when': 'WHEN', 'notify': 'NOTIFY', 'msgbox': 'MSGBOX', 'export': 'EXPORT',
    'import': 'IMPORT', 'as': 'AS', 'hook': 'HOOK', 'backups': 'BACKUPS',
    'system': 'SYSTEM', 'instance': 'INSTANCE', 'connect': 'CONNECT',
    'mediator': 'MEDIATOR', 'subject': 'SUBJECT', 'active': 'ACTIVE', 'role': 'ROLE',
    'chain': 'CHAIN', 'pdmp': 'PDMP', 'ode': 'ODE', 'eq': 'EQ_KW', 'stop': 'STOP',
    'start': 'START', 'include': 'INCLUDE', 'and': 'AND', 'or': 'OR', 'not': 'NOT',
    'true': 'TRUE', 'false': 'FALSE', 'real': 'REAL', 'int': 'INT', 'bool': 'BOOL',
}


@dataclass(frozen=True)
class Token:
    type: str
    value: str
    line: int
    column: int


class ModelLexer:
    """DSL 与表达式共用的词法规则（ply 以实例方法形式收集规则）"""

    reserved = RESERVED
    tokens = ['NUMBER', 'ID', 'STRING', 'BIARROW', 'ARROW', 'LE', 'GE', 'EQEQ', 'NE'] \
        + sorted(set(RESERVED.values()))
    literals = ['+', '-', '*', '/', '(', ')', '{', '}', '[', ']', ',', ';', ':', '.', '=', '<', '>']

    t_ignore = ' \t\r'
    t_ignore_COMMENT = r'\#[^\n]*'
    t_BIARROW = r'<->'
    t_ARROW = r'->'
    t_LE = r'<='
    t_GE = r'>='
    t_EQEQ = r'=='
    t_NE = r'!='

    def t_NUMBER(self, t):
        r'(\d+\.\d*|\.\d+|\d+)([eE][-+]?\d+)?'
        return t

    def t_ID(self, t):
        r'[A-Za-z_][A-Za-z0-9_]*'
        t.type = self.reserved.get(t.value, 'ID')
        return t

    def t_STRING(self, t):
        r'"[^"\n]*"'
        t.value = t.value[1:-1]
        return t

    def t_newline(self, t):
        r'\n+'
        t.lexer.lineno += len(t.value)

    def t_error(self, t):
        text = t.lexer.lexdata
        column = t.lexpos - text.rfind('\n', 0, t.lexpos)
        raise DslSyntaxError(f"非法字符 {t.value[0]!r}", line=t.lexer.lineno, column=column)

    def build(self):
        self.lexer = lex.lex(module=self, errorlog=lex.NullLogger())
        return self.lexer


_LEXER = ModelLexer().build()


def tokenize(text: str) -> List[Token]:
    """把源文本切分为记号序列，末尾追加 EOF 记号"""
    lexer = _LEXER.clone()
    lexer.lineno = 1
    lexer.input(text)
    tokens = []
    for tok in iter(lexer.token, None):
        column = tok.lexpos - text.rfind('\n', 0, tok.lexpos)
        tokens.append(Token(tok.type, tok.value, tok.lineno, column))
    last_line = text.count('\n') + 1
    last_column = len(text) - text.rfind('\n') if text else 1
    tokens.append(Token('EOF', '', last_line, last_column))
    return tokens


# ---------------------------------------------------------------------------
# 语法树
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Number:
    value: Union[int, float]
    text: str


@dataclass(frozen=True)
class Boolean:
    value: bool


@dataclass(frozen=True)
class Name:
    parts: Tuple[str, ...]

    @property
    def dotted(self) -> str:
        return '.'.join(self.parts)


@dataclass(frozen=True)
class Index:
    target: Name
    index: 'Expr'


@dataclass(frozen=True)
class Unary:
    op: str
    operand: 'Expr'


@dataclass(frozen=True)
class Binary:
    op: str
    left: 'Expr'
    right: 'Expr'


@dataclass(frozen=True)
class Call:
    func: str
    args: Tuple['Expr', ...]


Expr = Union[Number, Boolean, Name, Index, Unary, Binary, Call]

AGGREGATES = ('sum', 'any', 'all', 'count')
COMPARISONS = {'<': '<', '>': '>', 'LE': '<=', 'GE': '>=', 'EQEQ': '==', 'NE': '!='}

# 运算符优先级（数值越大结合越紧）
_PRECEDENCE = {'or': 1, 'and': 2, 'not': 3,
               '<': 4, '>': 4, '<=': 4, '>=': 4, '==': 4, '!=': 4,
               '+': 5, '-': 5, '*': 6, '/': 6, 'neg': 7}


def number(value: Union[int, float]) -> Number:
    return Number(value, repr(value))


# ---------------------------------------------------------------------------
# 解析
# ---------------------------------------------------------------------------

_OPENERS = {'(': ')', '{': '}', '[': ']'}


class TokenStream:
    """带括号栈的记号流，文件意外结束时把错误定位到未闭合的左括号"""

    def __init__(self, tokens: Sequence[Token]):
        self.tokens = list(tokens)
        self.pos = 0
        self.open_stack: List[Token] = []

    def peek(self, offset: int = 0) -> Token:
        index = min(self.pos + offset, len(self.tokens) - 1)
        return self.tokens[index]

    def next(self) -> Token:
        tok = self.peek()
        if tok.type != 'EOF':
            self.pos += 1
        if tok.type in _OPENERS:
            self.open_stack.append(tok)
        elif self.open_stack and tok.type == _OPENERS[self.open_stack[-1].type]:
            self.open_stack.pop()
        return tok

    def at(self, *types: str) -> bool:
        return self.peek().type in types

    def accept(self, *types: str) -> Optional[Token]:
        if self.at(*types):
            return self.next()
        return None

    def expect(self, token_type: str, what: str) -> Token:
        if self.at(token_type):
            return self.next()
        self.fail(f"期望 {what}")

    def fail(self, message: str):
        tok = self.peek()
        if tok.type == 'EOF' and self.open_stack:
            anchor = self.open_stack[-1]
            raise DslSyntaxError(f"{message}，{anchor.type!r} 未闭合", line=anchor.line, column=anchor.column)
        shown = tok.value if tok.type != 'EOF' else '文件结束'
        raise DslSyntaxError(f"{message}，实际为 {shown!r}", line=tok.line, column=tok.column)


class ExpressionParser:
    """表达式的递归下降解析器"""

    def __init__(self, stream: TokenStream):
        self.stream = stream

    def parse_expression(self) -> Expr:
        return self._parse_or()

    def parse_name(self) -> Name:
        parts = [self._expect_identifier()]
        while self.stream.at('.') and self.stream.peek(1).type in ('ID', 'SUBJECT'):
            self.stream.next()
            parts.append(self._expect_identifier())
        return Name(tuple(parts))

    def _expect_identifier(self) -> str:
        tok = self.stream.accept('ID', 'SUBJECT')
        if tok is None:
            self.stream.fail("期望标识符")
        return tok.value

    def _parse_or(self) -> Expr:
        left = self._parse_and()
        while self.stream.accept('OR'):
            left = Binary('or', left, self._parse_and())
        return left

    def _parse_and(self) -> Expr:
        left = self._parse_not()
        while self.stream.accept('AND'):
            left = Binary('and', left, self._parse_not())
        return left

    def _parse_not(self) -> Expr:
        if self.stream.accept('NOT'):
            return Unary('not', self._parse_not())
        return self._parse_comparison()

    def _parse_comparison(self) -> Expr:
        left = self._parse_additive()
        tok = self.stream.accept(*COMPARISONS)
        if tok:
            left = Binary(COMPARISONS[tok.type], left, self._parse_additive())
        return left

    def _parse_additive(self) -> Expr:
        left = self._parse_multiplicative()
        while self.stream.at('+', '-'):
            op = self.stream.next().type
            left = Binary(op, left, self._parse_multiplicative())
        return left

    def _parse_multiplicative(self) -> Expr:
        left = self._parse_unary()
        while self.stream.at('*', '/'):
            op = self.stream.next().type
            left = Binary(op, left, self._parse_unary())
        return left

    def _parse_unary(self) -> Expr:
        if self.stream.accept('-'):
            return Unary('-', self._parse_unary())
        return self._parse_primary()

    def _parse_primary(self) -> Expr:
        s = self.stream
        tok = s.peek()
        if tok.type == 'NUMBER':
            s.next()
            text = tok.value
            is_float = any(c in text for c in '.eE')
            return Number(float(text) if is_float else int(text), text)
        if s.accept('TRUE'):
            return Boolean(True)
        if s.accept('FALSE'):
            return Boolean(False)
        if s.accept('('):
            inner = self.parse_expression()
            s.expect(')', "')'")
            return inner
        if s.accept('ACTIVE'):
            s.expect('(', "'('")
            target = self.parse_name()
            s.expect(')', "')'")
            return Call('active', (target,))
        if tok.type == 'ID' and tok.value in AGGREGATES and s.peek(1).type == '(':
            s.next()
            s.next()
            arg = self.parse_expression()
            s.expect(')', "')'")
            return Call(tok.value, (arg,))
        if tok.type in ('ID', 'SUBJECT'):
            name = self.parse_name()
            if s.accept('['):
                index = self.parse_expression()
                s.expect(']', "']'")
                return Index(name, index)
            return name
        s.fail("期望表达式")


def parse_expression(text: str) -> Expr:
    """解析独立的表达式文本（构建器 API 使用）"""
    stream = TokenStream(tokenize(text))
    expr = ExpressionParser(stream).parse_expression()
    if not stream.at('EOF'):
        stream.fail("表达式后存在多余内容")
    return expr


def as_expression(value: Union[str, int, float, bool, Expr]) -> Expr:
    """把构建器 API 的输入统一转换为语法树"""
    if isinstance(value, bool):
        return Boolean(value)
    if isinstance(value, (int, float)):
        return number(value)
    if isinstance(value, str):
        return parse_expression(value)
    return value


# ---------------------------------------------------------------------------
# 格式化
# ---------------------------------------------------------------------------

def format_expression(expr: Expr, parent: int = 0) -> str:
    """按优先级输出最少括号的表达式文本，解析后得到同一棵树"""
    if isinstance(expr, Number):
        return expr.text
    if isinstance(expr, Boolean):
        return 'true' if expr.value else 'false'
    if isinstance(expr, Name):
        return expr.dotted
    if isinstance(expr, Index):
        return f"{expr.target.dotted}[{format_expression(expr.index)}]"
    if isinstance(expr, Call):
        return f"{expr.func}({', '.join(format_expression(a) for a in expr.args)})"
    if isinstance(expr, Unary):
        if expr.op == 'not':
            prec, text = _PRECEDENCE['not'], 'not ' + format_expression(expr.operand, _PRECEDENCE['not'])
        else:
            prec, text = _PRECEDENCE['neg'], '-' + format_expression(expr.operand, _PRECEDENCE['neg'])
    else:
        prec = _PRECEDENCE[expr.op]
        # 比较运算不结合，两侧都需更高优先级
        left_min = prec + 1 if prec == 4 else prec
        text = f"{format_expression(expr.left, left_min)} {expr.op} {format_expression(expr.right, prec + 1)}"
    return f"({text})" if prec < parent else text


# ---------------------------------------------------------------------------
# 静态类型
# ---------------------------------------------------------------------------

NUM, BOOL, ANY = 'num', 'bool', 'any'
SCALAR_TYPES = {'real': NUM, 'int': NUM, 'bool': BOOL}


@dataclass(frozen=True)
class Symbol:
    kind: str   # param / var / import / subject
    type: str   # num / bool / any

    @property
    def is_import(self) -> bool:
        return self.kind == 'import'


class SymbolTable(Protocol):
    def lookup(self, parts: Tuple[str, ...]) -> Optional[Symbol]:
        ...

    def has_state(self, parts: Tuple[str, ...]) -> bool:
        ...


def _require(actual: str, expected: str, context: str):
    if actual != ANY and actual != expected:
        label = '布尔' if expected == BOOL else '数值'
        raise ConditionTypeError(f"{context} 需要{label}类型")


def infer_type(expr: Expr, table: SymbolTable) -> str:
    """推断表达式类型；标识符无法解析或类型不匹配时抛出校验异常"""
    if isinstance(expr, Number):
        return NUM
    if isinstance(expr, Boolean):
        return BOOL
    if isinstance(expr, Name):
        symbol = table.lookup(expr.parts)
        if symbol is None:
            raise UnresolvedIdentifierError(f"无法解析标识符 {expr.dotted!r}")
        return symbol.type
    if isinstance(expr, Index):
        symbol = table.lookup(expr.target.parts)
        if symbol is None:
            raise UnresolvedIdentifierError(f"无法解析标识符 {expr.target.dotted!r}")
        if not symbol.is_import:
            raise ValidationError(f"{expr.target.dotted!r} 不是导入引用，不能按连接下标访问")
        _require(infer_type(expr.index, table), NUM, "连接下标")
        return ANY
    if isinstance(expr, Call):
        return _infer_call(expr, table)
    if isinstance(expr, Unary):
        operand = infer_type(expr.operand, table)
        if expr.op == 'not':
            _require(operand, BOOL, "'not' 的操作数")
            return BOOL
        return NUM
    left = infer_type(expr.left, table)
    right = infer_type(expr.right, table)
    if expr.op in ('and', 'or'):
        _require(left, BOOL, f"'{expr.op}' 的左操作数")
        _require(right, BOOL, f"'{expr.op}' 的右操作数")
        return BOOL
    if expr.op in ('<', '>', '<=', '>=', '==', '!='):
        return BOOL
    return NUM


def _infer_call(expr: Call, table: SymbolTable) -> str:
    arg = expr.args[0]
    if expr.func == 'active':
        if not isinstance(arg, Name) or not table.has_state(arg.parts):
            shown = arg.dotted if isinstance(arg, Name) else format_expression(arg)
            raise UnresolvedStateError(f"active() 引用了不存在的状态 {shown!r}")
        return BOOL
    if expr.func == 'count':
        symbol = table.lookup(arg.parts) if isinstance(arg, Name) else None
        if symbol is None or not symbol.is_import:
            raise ValidationError("count() 的参数必须是导入引用")
        return NUM
    inner = infer_type(arg, table)
    if not any(table.lookup(n.parts) is not None and table.lookup(n.parts).is_import
               for n in iter_names(arg)):
        raise ValidationError(f"{expr.func}() 的参数中必须包含导入引用")
    if expr.func == 'sum':
        return NUM
    _require(inner, BOOL, f"{expr.func}() 的参数")
    return BOOL


def iter_names(expr: Expr):
    """遍历表达式中的所有名字（不含 active() 的状态路径）"""
    if isinstance(expr, Name):
        yield expr
    elif isinstance(expr, Index):
        yield expr.target
        yield from iter_names(expr.index)
    elif isinstance(expr, Unary):
        yield from iter_names(expr.operand)
    elif isinstance(expr, Binary):
        yield from iter_names(expr.left)
        yield from iter_names(expr.right)
    elif isinstance(expr, Call) and expr.func != 'active':
        for arg in expr.args:
            yield from iter_names(arg)


def constant_value(expr: Expr) -> Optional[Union[int, float, bool]]:
    """常量折叠：只含字面量的表达式返回其值，否则返回 None"""
    if isinstance(expr, (Number, Boolean)):
        return expr.value
    if isinstance(expr, Unary):
        value = constant_value(expr.operand)
        if value is None:
            return None
        return (not value) if expr.op == 'not' else -value
    if isinstance(expr, Binary) and expr.op in _ARITHMETIC:
        left, right = constant_value(expr.left), constant_value(expr.right)
        if left is None or right is None or (expr.op == '/' and right == 0):
            return None
        return _ARITHMETIC[expr.op](left, right)
    return None


# ---------------------------------------------------------------------------
# 编译求值
# ---------------------------------------------------------------------------

Compiled = Callable[[object, int], object]

_ARITHMETIC = {'+': operator.add, '-': operator.sub, '*': operator.mul, '/': operator.truediv}
_RELATIONS = {'<': operator.lt, '>': operator.gt, '<=': operator.le,
              '>=': operator.ge, '==': operator.eq, '!=': operator.ne}


class Binder(Protocol):
    """运行期名字绑定：把名字解析为读取运行状态的闭包"""

    def value_getter(self, parts: Tuple[str, ...]) -> Callable[[object], object]:
        ...

    def import_getters(self, parts: Tuple[str, ...]) -> Optional[List[Callable[[object], object]]]:
        ...

    def state_getter(self, parts: Tuple[str, ...]) -> Callable[[object], bool]:
        ...


def compile_expression(expr: Expr, binder: Binder) -> Compiled:
    """把语法树编译为 f(state, connection_index) 闭包

    聚合 sum/any/all 在所有连接下标上求值内部表达式，
    标量上下文中裸用的导入引用读取下标 connection_index（默认 0）。
    """
    if isinstance(expr, (Number, Boolean)):
        value = expr.value
        return lambda s, j: value
    if isinstance(expr, Name):
        return _compile_name(expr, binder)
    if isinstance(expr, Index):
        return _compile_index(expr, binder)
    if isinstance(expr, Call):
        return _compile_call(expr, binder)
    if isinstance(expr, Unary):
        operand = compile_expression(expr.operand, binder)
        if expr.op == 'not':
            return lambda s, j: not operand(s, j)
        return lambda s, j: -operand(s, j)
    left = compile_expression(expr.left, binder)
    right = compile_expression(expr.right, binder)
    if expr.op == 'and':
        return lambda s, j: bool(left(s, j)) and bool(right(s, j))
    if expr.op == 'or':
        return lambda s, j: bool(left(s, j)) or bool(right(s, j))
    if expr.op == '/':
        def divide(s, j):
            divisor = right(s, j)
            if divisor == 0:
                raise EvaluationError(f"除数为零: {format_expression(expr)}")
            return left(s, j) / divisor
        return divide
    fn = _ARITHMETIC.get(expr.op) or _RELATIONS[expr.op]
    return lambda s, j: fn(left(s, j), right(s, j))


def _compile_name(expr: Name, binder: Binder) -> Compiled:
    getters = binder.import_getters(expr.parts)
    if getters is None:
        getter = binder.value_getter(expr.parts)
        return lambda s, j: getter(s)
    label = expr.dotted

    def read_import(s, j):
        if j >= len(getters):
            raise EvaluationError(f"导入引用 {label!r} 没有下标为 {j} 的连接（共 {len(getters)} 个）")
        return getters[j](s)
    return read_import


def _compile_index(expr: Index, binder: Binder) -> Compiled:
    getters = binder.import_getters(expr.target.parts)
    if getters is None:
        raise EvaluationError(f"{expr.target.dotted!r} 不是导入引用")
    index = compile_expression(expr.index, binder)
    label = expr.target.dotted

    def read_indexed(s, j):
        k = index(s, j)
        if k != int(k) or not 0 <= k < len(getters):
            raise EvaluationError(f"导入引用 {label!r} 的连接下标 {k} 越界（共 {len(getters)} 个）")
        return getters[int(k)](s)
    return read_indexed


def _compile_call(expr: Call, binder: Binder) -> Compiled:
    arg = expr.args[0]
    if expr.func == 'active':
        getter = binder.state_getter(arg.parts)
        return lambda s, j: getter(s)
    if expr.func == 'count':
        n = len(binder.import_getters(arg.parts) or [])
        return lambda s, j: n
    counts = {len(g) for g in (binder.import_getters(n.parts) for n in iter_names(arg)) if g is not None}
    if len(counts) > 1:
        raise EvaluationError(f"{expr.func}() 中的导入引用连接数不一致: {sorted(counts)}")
    n = counts.pop() if counts else 0
    inner = compile_expression(arg, binder)
    if expr.func == 'sum':
        return lambda s, j: sum(inner(s, i) for i in range(n))
    if expr.func == 'any':
        return lambda s, j: any(inner(s, i) for i in range(n))
    return lambda s, j: all(inner(s, i) for i in range(n))
