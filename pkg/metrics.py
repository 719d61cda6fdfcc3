#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
可维护性度量
语言配置（profile）驱动的分词与行分类、Myers 行级差异、RLOC、Halstead、圈复杂度、
可维护性指数，以及六个用例的对比报表
"""

import configparser
import logging
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import pandas as pd
from tqdm import tqdm

from errors import ProfileError, ReportError, TokenError, UndefinedRatioError, WorkbenchError

logger = logging.getLogger(__name__)

PROFILE_ENV = 'HYBRIDSIM_PROFILE_PATH'
PROFILE_SUFFIX = '.profile'
REPO_PROFILES = Path(__file__).resolve().parent / 'profiles'
UNIT_MODES = ('keyword', 'toplevel-braces')

CODE, COMMENT, BLANK = 'code', 'comment', 'blank'


# ---------------------------------------------------------------------------
# 语言配置
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LanguageProfile:
    name: str
    extensions: Tuple[str, ...] = ()
    line_comments: Tuple[str, ...] = ()
    block_start: Optional[str] = None
    block_end: Optional[str] = None
    string_delimiters: Tuple[str, ...] = ()
    operators: Tuple[str, ...] = ()
    keywords: Tuple[str, ...] = ()
    decisions: Tuple[str, ...] = ()
    unit_mode: str = 'keyword'
    unit_starts: Tuple[str, ...] = ()
    unit_open: str = '{'
    unit_close: str = '}'

    def __post_init__(self):
        if not self.operators:
            raise ProfileError(f"语言配置 {self.name} 的运算符列表为空")
        stray = set(self.decisions) - set(self.operators) - set(self.keywords)
        if stray:
            raise ProfileError(f"语言配置 {self.name} 的判定记号不在运算符或关键字中: {sorted(stray)}")
        if self.unit_mode not in UNIT_MODES:
            raise ProfileError(f"语言配置 {self.name} 的单元划分方式无效: {self.unit_mode!r}")
        if bool(self.block_start) != bool(self.block_end):
            raise ProfileError(f"语言配置 {self.name} 的块注释定界符不成对")


def _tokens(section: configparser.SectionProxy, key: str) -> Tuple[str, ...]:
    return tuple(section.get(key, '').split())


def parse_profile(text: str, source: str = '<profile>') -> LanguageProfile:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ProfileError(f"语言配置格式错误: {e}", path=source)
    for section in ('profile', 'comments', 'operators', 'keywords', 'decision', 'units'):
        if not parser.has_section(section):
            raise ProfileError(f"语言配置缺少 [{section}] 段", path=source)
    comments, units = parser['comments'], parser['units']
    try:
        return LanguageProfile(
            name=parser['profile'].get('name', Path(source).stem),
            extensions=_tokens(parser['profile'], 'extensions'),
            line_comments=_tokens(comments, 'line'),
            block_start=comments.get('block_start') or None,
            block_end=comments.get('block_end') or None,
            string_delimiters=_tokens(comments, 'strings'),
            operators=_tokens(parser['operators'], 'tokens'),
            keywords=_tokens(parser['keywords'], 'tokens'),
            decisions=_tokens(parser['decision'], 'tokens'),
            unit_mode=units.get('mode', 'keyword'),
            unit_starts=_tokens(units, 'starts'),
            unit_open=units.get('open', '{'),
            unit_close=units.get('close', '}'),
        )
    except ProfileError as e:
        raise e.with_path(source)


def profile_search_path() -> List[Path]:
    """HYBRIDSIM_PROFILE_PATH 中的目录在前，仓库 profiles/ 在最后"""
    dirs = [Path(p) for p in os.environ.get(PROFILE_ENV, '').split(os.pathsep) if p]
    return dirs + [REPO_PROFILES]


def load_profile(name: Union[str, Path]) -> LanguageProfile:
    """按文件路径或名字加载语言配置"""
    candidate = Path(name)
    if candidate.suffix == PROFILE_SUFFIX and candidate.is_file():
        return parse_profile(candidate.read_text(encoding='utf-8'), str(candidate))
    for directory in profile_search_path():
        path = directory / f"{name}{PROFILE_SUFFIX}"
        if path.is_file():
            logger.debug(f"使用语言配置 {path}")
            return parse_profile(path.read_text(encoding='utf-8'), str(path))
    searched = ', '.join(str(d) for d in profile_search_path())
    raise ProfileError(f"找不到语言配置 {name!r}（已搜索: {searched}）")


# ---------------------------------------------------------------------------
# 行分类
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LineCounts:
    code: int = 0
    comment: int = 0
    blank: int = 0

    @property
    def total(self) -> int:
        return self.code + self.comment + self.blank

    def __add__(self, other: 'LineCounts') -> 'LineCounts':
        return LineCounts(self.code + other.code, self.comment + other.comment, self.blank + other.blank)


def _skip_string(line: str, i: int, delimiter: str) -> int:
    end = line.find(delimiter, i + len(delimiter))
    return len(line) if end < 0 else end + len(delimiter)


def line_kinds(text: str, profile: LanguageProfile) -> List[str]:
    """逐行分类：空白行、纯注释行、代码行（含行尾注释的代码行算代码）"""
    kinds = []
    in_block = False
    opened_at = 0
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            kinds.append(BLANK)
            continue
        has_code = has_comment = False
        i = 0
        while i < len(line):
            if in_block:
                end = line.find(profile.block_end, i)
                has_comment = True
                if end < 0:
                    break
                in_block = False
                i = end + len(profile.block_end)
                continue
            ch = line[i]
            if ch.isspace():
                i += 1
            elif any(line.startswith(m, i) for m in profile.line_comments):
                has_comment = True
                break
            elif profile.block_start and line.startswith(profile.block_start, i):
                in_block, opened_at, has_comment = True, number, True
                i += len(profile.block_start)
            else:
                delimiter = next((d for d in profile.string_delimiters if line.startswith(d, i)), None)
                has_code = True
                i = _skip_string(line, i, delimiter) if delimiter else i + 1
        kinds.append(CODE if has_code else COMMENT if has_comment else BLANK)
    if in_block:
        logger.warning(f"第 {opened_at} 行开始的块注释未闭合，按注释处理至文件末尾")
    return kinds


def classify_lines(text: str, profile: LanguageProfile) -> LineCounts:
    kinds = line_kinds(text, profile)
    return LineCounts(kinds.count(CODE), kinds.count(COMMENT), kinds.count(BLANK))


def code_lines(text: str, profile: LanguageProfile) -> List[str]:
    """代码行（去掉首尾空白），差异比较的输入"""
    return [line.strip() for line, kind in zip(text.splitlines(), line_kinds(text, profile)) if kind == CODE]


# ---------------------------------------------------------------------------
# 差异
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiffCounts:
    same: int = 0
    modified: int = 0
    added: int = 0
    removed: int = 0

    @property
    def changed(self) -> int:
        return self.modified + self.added + self.removed


class Myers:
    """Myers 最短编辑脚本；edits() 给出 ('eql'|'del'|'ins', 旧行号, 新行号) 序列"""

    def __init__(self, a: Sequence[str], b: Sequence[str]):
        self.a = a
        self.b = b

    def edits(self) -> List[Tuple[str, Optional[int], Optional[int]]]:
        result = []
        for prev_x, prev_y, x, y in self._backtrack():
            if x == prev_x:
                result.append(('ins', None, prev_y))
            elif y == prev_y:
                result.append(('del', prev_x, None))
            else:
                result.append(('eql', prev_x, prev_y))
        result.reverse()
        return result

    def _backtrack(self) -> Iterator[Tuple[int, int, int, int]]:
        trace = self._shortest_edit()
        x, y = len(self.a), len(self.b)
        for d in range(len(trace) - 1, -1, -1):
            v = trace[d]
            k = x - y
            if k == -d or (k != d and v.get(k - 1, 0) < v.get(k + 1, 0)):
                prev_k = k + 1
            else:
                prev_k = k - 1
            prev_x = v.get(prev_k, 0)
            prev_y = prev_x - prev_k
            while x > prev_x and y > prev_y:
                yield x - 1, y - 1, x, y
                x, y = x - 1, y - 1
            if d > 0:
                yield prev_x, prev_y, x, y
            x, y = prev_x, prev_y

    def _shortest_edit(self) -> List[Dict[int, int]]:
        n, m = len(self.a), len(self.b)
        v: Dict[int, int] = {1: 0}
        trace: List[Dict[int, int]] = []
        for d in range(n + m + 1):
            trace.append(v.copy())
            for k in range(-d, d + 1, 2):
                if k == -d or (k != d and v.get(k - 1, 0) < v.get(k + 1, 0)):
                    x = v.get(k + 1, 0)
                else:
                    x = v.get(k - 1, 0) + 1
                y = x - k
                while x < n and y < m and self.a[x] == self.b[y]:
                    x, y = x + 1, y + 1
                v[k] = x
                if x >= n and y >= m:
                    return trace
        return trace


def diff_lines(old: Sequence[str], new: Sequence[str]) -> DiffCounts:
    """按替换块配对：块内删除与新增按序配对计为修改，多出的计为新增或删除

    始终以字典序较小的一侧为旧版本计算编辑脚本，交换输入只交换新增与删除。
    """
    if tuple(old) > tuple(new):
        swapped = diff_lines(new, old)
        return DiffCounts(swapped.same, swapped.modified, swapped.removed, swapped.added)
    same = modified = added = removed = 0
    dels = ins = 0
    for kind, _, _ in Myers(list(old), list(new)).edits() + [('eql', None, None)]:
        if kind == 'del':
            dels += 1
        elif kind == 'ins':
            ins += 1
        else:
            paired = min(dels, ins)
            modified += paired
            added += ins - paired
            removed += dels - paired
            dels = ins = 0
            same += 1
    return DiffCounts(same - 1, modified, added, removed)


def diff_versions(old_text: str, new_text: str, profile: LanguageProfile) -> DiffCounts:
    return diff_lines(code_lines(old_text, profile), code_lines(new_text, profile))


def rloc(diff: DiffCounts, loc_target: int) -> float:
    """(修改 + 新增 + 删除) / 目标版本 LOC，返回百分比"""
    if loc_target <= 0:
        raise UndefinedRatioError(f"目标版本 LOC 为 {loc_target}，RLOC 无定义")
    return 100.0 * diff.changed / loc_target


def format_percent(value: float) -> str:
    return f"{value:.2f}"


# ---------------------------------------------------------------------------
# 分词
# ---------------------------------------------------------------------------

OPERATOR, KEYWORD, IDENTIFIER, LITERAL = 'operator', 'keyword', 'identifier', 'literal'

_IDENT = re.compile(r'[A-Za-z_][A-Za-z0-9_]*')
_NUMBER = re.compile(r'(\d+\.\d*|\.\d+|\d+)([eE][-+]?\d+)?')
_SPACE = re.compile(r'\s+')


@dataclass(frozen=True)
class SourceToken:
    kind: str
    text: str
    line: int
    column: int

    @property
    def is_operator(self) -> bool:
        return self.kind in (OPERATOR, KEYWORD)


def _operator_pattern(profile: LanguageProfile):
    ordered = sorted(profile.operators, key=len, reverse=True)
    return re.compile('|'.join(re.escape(op) for op in ordered))


def tokenize_source(text: str, profile: LanguageProfile) -> List[SourceToken]:
    """跳过空白与注释，切分为运算符/关键字/标识符/字面量；遇到无法识别的字符抛出 TokenError"""
    operators = _operator_pattern(profile)
    keywords = set(profile.keywords)
    tokens = []
    pos, line, line_start = 0, 1, 0
    n = len(text)

    def advance(to: int):
        nonlocal pos, line, line_start
        newlines = text.count('\n', pos, to)
        if newlines:
            line += newlines
            line_start = text.rfind('\n', pos, to) + 1
        pos = to

    while pos < n:
        column = pos - line_start + 1
        m = _SPACE.match(text, pos)
        if m:
            advance(m.end())
            continue
        if any(text.startswith(marker, pos) for marker in profile.line_comments):
            end = text.find('\n', pos)
            advance(n if end < 0 else end)
            continue
        if profile.block_start and text.startswith(profile.block_start, pos):
            end = text.find(profile.block_end, pos + len(profile.block_start))
            advance(n if end < 0 else end + len(profile.block_end))
            continue
        delimiter = next((d for d in profile.string_delimiters if text.startswith(d, pos)), None)
        if delimiter:
            end = text.find(delimiter, pos + len(delimiter))
            newline = text.find('\n', pos)
            if end < 0 or (0 <= newline < end):
                raise TokenError("字符串未闭合", line=line, column=column)
            tokens.append(SourceToken(LITERAL, text[pos:end + len(delimiter)], line, column))
            advance(end + len(delimiter))
            continue
        m = _NUMBER.match(text, pos)
        if m:
            tokens.append(SourceToken(LITERAL, m.group(), line, column))
            advance(m.end())
            continue
        m = _IDENT.match(text, pos)
        if m:
            word = m.group()
            tokens.append(SourceToken(KEYWORD if word in keywords else IDENTIFIER, word, line, column))
            advance(m.end())
            continue
        m = operators.match(text, pos)
        if m:
            tokens.append(SourceToken(OPERATOR, m.group(), line, column))
            advance(m.end())
            continue
        raise TokenError(f"无法识别的字符 {text[pos]!r}", line=line, column=column)
    return tokens


# ---------------------------------------------------------------------------
# Halstead / 圈复杂度 / 可维护性指数
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HalsteadMetrics:
    eta1: int
    eta2: int
    n1: int
    n2: int

    @property
    def length(self) -> int:
        return self.n1 + self.n2

    @property
    def vocabulary(self) -> int:
        return self.eta1 + self.eta2

    @property
    def volume(self) -> float:
        return self.length * math.log2(max(self.vocabulary, 1))

    @property
    def difficulty(self) -> float:
        if self.eta1 == 0 or self.eta2 == 0:
            return 0.0
        return (self.eta1 / 2) * (self.n2 / self.eta2)

    @property
    def effort(self) -> float:
        return self.difficulty * self.volume

    @property
    def bugs(self) -> float:
        return self.volume / 3000

    def as_row(self) -> Dict[str, float]:
        return {'eta1': self.eta1, 'eta2': self.eta2, 'N1': self.n1, 'N2': self.n2,
                'N': self.length, 'eta': self.vocabulary, 'volume': self.volume,
                'difficulty': self.difficulty, 'effort': self.effort, 'bugs': self.bugs}


def halstead_from_tokens(tokens: Sequence[SourceToken]) -> HalsteadMetrics:
    operators = [t.text for t in tokens if t.is_operator]
    operands = [t.text for t in tokens if not t.is_operator]
    return HalsteadMetrics(len(set(operators)), len(set(operands)), len(operators), len(operands))


def halstead(text: str, profile: LanguageProfile) -> HalsteadMetrics:
    return halstead_from_tokens(tokenize_source(text, profile))


def maintainability_index(volume: float, cc: float, loc: int) -> Tuple[float, float]:
    """MI = 171 - 5.2 ln V - 0.23 CC - 16.2 ln LOC；V、LOC 小于 1 时按 1 计"""
    raw = 171 - 5.2 * math.log(max(volume, 1)) - 0.23 * cc - 16.2 * math.log(max(loc, 1))
    return raw, max(0.0, 100 * raw / 171)


@dataclass(frozen=True)
class Unit:
    name: str
    start_line: int
    end_line: int
    tokens: Tuple[SourceToken, ...]


def split_units(tokens: Sequence[SourceToken], profile: LanguageProfile) -> List[Unit]:
    if profile.unit_mode == 'keyword':
        return _keyword_units(tokens, profile)
    return _brace_units(tokens, profile)


def _keyword_units(tokens: Sequence[SourceToken], profile: LanguageProfile) -> List[Unit]:
    units = []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if tok.text not in profile.unit_starts:
            i += 1
            continue
        name = tok.text
        if i + 1 < len(tokens) and tokens[i + 1].kind == IDENTIFIER:
            name = f"{tok.text} {tokens[i + 1].text}"
        depth, opened, j = 0, False, i
        while j < len(tokens):
            if tokens[j].text == profile.unit_open:
                depth, opened = depth + 1, True
            elif tokens[j].text == profile.unit_close:
                depth -= 1
            if opened and depth == 0:
                break
            j += 1
        end = min(j, len(tokens) - 1)
        units.append(Unit(name, tok.line, tokens[end].line, tuple(tokens[i:end + 1])))
        i = end + 1
    return units


def _brace_units(tokens: Sequence[SourceToken], profile: LanguageProfile) -> List[Unit]:
    units = []
    depth, header_start, start = 0, 0, None
    for i, tok in enumerate(tokens):
        if tok.text == profile.unit_open:
            if depth == 0:
                start = header_start
            depth += 1
        elif tok.text == profile.unit_close and depth > 0:
            depth -= 1
            if depth == 0:
                header = tokens[start:i + 1]
                names = [t.text for k, t in enumerate(header[:-1])
                         if t.kind == IDENTIFIER and header[k + 1].text == '(']
                name = names[0] if names else f"block@{tokens[start].line}"
                units.append(Unit(name, tokens[start].line, tok.line, tuple(header)))
                header_start = i + 1
        elif depth == 0 and tok.text == ';':
            header_start = i + 1
    return units


def cyclomatic_from_tokens(tokens: Sequence[SourceToken], profile: LanguageProfile) -> int:
    decisions = set(profile.decisions)
    return 1 + sum(1 for t in tokens if t.text in decisions)


def cyclomatic(text: str, profile: LanguageProfile) -> Tuple[List[Tuple[str, int]], float]:
    """每个单元的 CC 与平均值；没有单元时平均值为 0"""
    units = split_units(tokenize_source(text, profile), profile)
    values = [(u.name, cyclomatic_from_tokens(u.tokens, profile)) for u in units]
    average = sum(cc for _, cc in values) / len(values) if values else 0.0
    return values, average


# ---------------------------------------------------------------------------
# 文件与用例
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UnitMetrics:
    name: str
    loc: int
    halstead: HalsteadMetrics
    cc: int
    mi_raw: float
    mi_normalized: float


@dataclass(frozen=True)
class FileMetrics:
    path: str
    lines: LineCounts
    halstead: HalsteadMetrics
    cc: int
    mi_raw: float
    mi_normalized: float
    units: Tuple[UnitMetrics, ...] = ()
    tokens: Tuple[SourceToken, ...] = field(default=(), repr=False)
    code: Tuple[str, ...] = field(default=(), repr=False)


def analyze_text(text: str, profile: LanguageProfile, path: str = '<input>') -> FileMetrics:
    try:
        tokens = tokenize_source(text, profile)
    except WorkbenchError as e:
        raise e.with_path(path)
    kinds = line_kinds(text, profile)
    lines = LineCounts(kinds.count(CODE), kinds.count(COMMENT), kinds.count(BLANK))
    units = []
    for unit in split_units(tokens, profile):
        loc = kinds[unit.start_line - 1:unit.end_line].count(CODE)
        h = halstead_from_tokens(unit.tokens)
        cc = cyclomatic_from_tokens(unit.tokens, profile)
        units.append(UnitMetrics(unit.name, loc, h, cc, *maintainability_index(h.volume, cc, loc)))
    h = halstead_from_tokens(tokens)
    cc = cyclomatic_from_tokens(tokens, profile)
    code = tuple(line.strip() for line, kind in zip(text.splitlines(), kinds) if kind == CODE)
    return FileMetrics(path, lines, h, cc, *maintainability_index(h.volume, cc, lines.code),
                       tuple(units), tuple(tokens), code)


def analyze_file(path: Union[str, Path], profile: LanguageProfile) -> FileMetrics:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"源文件不存在: {path}")
    return analyze_text(path.read_text(encoding='utf-8'), profile, str(path))


@dataclass(frozen=True)
class CaseMetrics:
    """一个用例文件集（include 顺序，用例文件在最后）的度量"""
    case_id: str
    files: Tuple[FileMetrics, ...]

    @property
    def lines(self) -> LineCounts:
        total = LineCounts()
        for f in self.files:
            total = total + f.lines
        return total

    @property
    def code(self) -> List[str]:
        return [line for f in self.files for line in f.code]

    @property
    def halstead(self) -> HalsteadMetrics:
        return halstead_from_tokens([t for f in self.files for t in f.tokens])

    @property
    def units(self) -> List[Tuple[str, UnitMetrics]]:
        return [(f.path, u) for f in self.files for u in f.units]

    @property
    def cc(self) -> int:
        """文件集整体：1 + 全部判定记号数"""
        return 1 + sum(f.cc - 1 for f in self.files)

    def maintainability(self) -> Tuple[float, float]:
        return maintainability_index(self.halstead.volume, self.cc, self.lines.code)


def analyze_case(case_id: str, paths: Sequence[Union[str, Path]], profile: LanguageProfile) -> CaseMetrics:
    return CaseMetrics(case_id, tuple(analyze_file(p, profile) for p in paths))


def diff_cases(old: CaseMetrics, new: CaseMetrics) -> Tuple[DiffCounts, float]:
    """文件集拼接后逐行比较，返回差异计数与 RLOC 百分比（分母为目标版本 LOC）"""
    diff = diff_lines(old.code, new.code)
    return diff, rloc(diff, new.lines.code)


# ---------------------------------------------------------------------------
# 报表
# ---------------------------------------------------------------------------

REPORT_COLUMNS = {
    'loc_by_file': ['case', 'file', 'code', 'comment', 'blank'],
    'loc_total': ['case', 'code', 'comment', 'blank'],
    'rloc': ['source', 'target', 'same', 'modified', 'added', 'removed', 'target_loc', 'rloc_percent'],
    'cyclomatic': ['case', 'file', 'unit', 'cc'],
    'cyclomatic_summary': ['case', 'units', 'total', 'average'],
    'halstead': ['case', 'eta1', 'eta2', 'N1', 'N2', 'N', 'eta', 'volume', 'difficulty', 'effort', 'bugs'],
    'maintainability': ['case', 'file', 'unit', 'loc', 'volume', 'cc', 'mi_raw', 'mi_normalized'],
    'maintainability_summary': ['case', 'units', 'mi_raw_average', 'mi_normalized_average'],
}


@dataclass
class MetricsReport:
    tables: Dict[str, pd.DataFrame]
    cases: Dict[str, CaseMetrics]

    def __getitem__(self, name: str) -> pd.DataFrame:
        return self.tables[name]

    def rloc_percent(self, source: str, target: str) -> float:
        table = self.tables['rloc']
        row = table[(table['source'] == source) & (table['target'] == target)]
        if row.empty:
            raise KeyError(f"没有 {source} -> {target} 的 RLOC")
        return float(row.iloc[0]['rloc_percent'])

    def write(self, out_dir: Union[str, Path]) -> Dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {}
        for name, frame in self.tables.items():
            paths[name] = out_dir / f"{name}.csv"
            frame.to_csv(paths[name], index=False, float_format='%.6f', lineterminator='\n', encoding='utf-8')
        logger.info(f"度量报表已写出 {len(paths)} 个文件到 {out_dir}")
        return paths


def _relative(path: str) -> str:
    return Path(path).name


def report_experiment(case_sets: Mapping[str, Sequence[Union[str, Path]]], profile: LanguageProfile,
                      pairs: Sequence[Tuple[str, str]] = (), progress: bool = False) -> MetricsReport:
    """对各用例文件集计算 LOC/CC/Halstead/MI，并对给定的版本对计算 RLOC"""
    for case_id, paths in case_sets.items():
        missing = [str(p) for p in paths if not Path(p).is_file()]
        if not paths or missing:
            raise ReportError(f"用例 {case_id} 的文件缺失: {', '.join(missing) or '（空文件集）'}")
    cases: Dict[str, CaseMetrics] = {}
    for case_id, paths in tqdm(case_sets.items(), desc="度量用例", ncols=100, disable=None if progress else True):
        cases[case_id] = analyze_case(case_id, paths, profile)

    rows: Dict[str, list] = {name: [] for name in REPORT_COLUMNS}
    for case_id, case in cases.items():
        for f in case.files:
            rows['loc_by_file'].append((case_id, _relative(f.path), f.lines.code, f.lines.comment, f.lines.blank))
        total = case.lines
        rows['loc_total'].append((case_id, total.code, total.comment, total.blank))
        units = case.units
        for path, u in units:
            rows['cyclomatic'].append((case_id, _relative(path), u.name, u.cc))
            rows['maintainability'].append((case_id, _relative(path), u.name, u.loc, u.halstead.volume,
                                            u.cc, u.mi_raw, u.mi_normalized))
        ccs = [u.cc for _, u in units]
        rows['cyclomatic_summary'].append((case_id, len(ccs), sum(ccs), sum(ccs) / len(ccs) if ccs else 0.0))
        h = case.halstead.as_row()
        rows['halstead'].append((case_id,) + tuple(h[c] for c in REPORT_COLUMNS['halstead'][1:]))
        mis = [(u.mi_raw, u.mi_normalized) for _, u in units]
        rows['maintainability_summary'].append((
            case_id, len(mis),
            sum(m[0] for m in mis) / len(mis) if mis else 0.0,
            sum(m[1] for m in mis) / len(mis) if mis else 0.0))

    for source, target in pairs:
        if source not in cases or target not in cases:
            continue
        diff, ratio = diff_cases(cases[source], cases[target])
        rows['rloc'].append((source, target, diff.same, diff.modified, diff.added, diff.removed,
                             cases[target].lines.code, format_percent(ratio)))
        logger.info(f"RLOC {source} -> {target}: {format_percent(ratio)}%")

    tables = {name: pd.DataFrame(rows[name], columns=columns) for name, columns in REPORT_COLUMNS.items()}
    return MetricsReport(tables, cases)
