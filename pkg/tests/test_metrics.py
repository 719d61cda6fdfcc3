# -*- coding: utf-8 -*-
import math
import random

import pytest

from errors import ProfileError, ReportError, TokenError, UndefinedRatioError
from heated_room import COMPONENTS_DIR, CaseCatalog
from metrics import (PROFILE_ENV, REPORT_COLUMNS, DiffCounts, LineCounts, analyze_case, analyze_text,
                     classify_lines, code_lines, cyclomatic, diff_cases, diff_lines, format_percent, halstead,
                     load_profile, maintainability_index, parse_profile, report_experiment, rloc,
                     tokenize_source)
from model_dsl import file_set_paths

DSL = load_profile('model-dsl')
C_LIKE = load_profile('generic-c-like')
CATALOG = CaseCatalog()
SHIPPED = sorted(COMPONENTS_DIR.glob('*.model')) + [spec.path for spec in CATALOG]

MINIMAL_PROFILE = """
[profile]
name = tiny
[comments]
line = ;
[operators]
tokens = = +
[keywords]
tokens = if
[decision]
tokens = if
[units]
mode = keyword
starts = def
"""


def case_sets():
    return {c: file_set_paths(CATALOG.path(c)) for c in CATALOG.ids()}


def lcs_length(a, b):
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            table[i + 1][j + 1] = table[i][j] + 1 if x == y else max(table[i][j + 1], table[i + 1][j])
    return table[-1][-1]


# ---------------------------------------------------------------------------
# 语言配置
# ---------------------------------------------------------------------------

def test_shipped_profiles_load():
    assert DSL.name == 'model-dsl' and '.model' in DSL.extensions
    assert {'when', 'and', 'or'} == set(DSL.decisions)
    assert C_LIKE.block_start == '/*' and C_LIKE.unit_mode == 'toplevel-braces'


def test_profile_from_environment_path(tmp_path, monkeypatch):
    (tmp_path / 'tiny.profile').write_text(MINIMAL_PROFILE, encoding='utf-8')
    monkeypatch.setenv(PROFILE_ENV, str(tmp_path))
    assert load_profile('tiny').operators == ('=', '+')
    assert load_profile(tmp_path / 'tiny.profile').name == 'tiny'


def test_unknown_profile_rejected():
    with pytest.raises(ProfileError):
        load_profile('cobol-85')


@pytest.mark.parametrize('broken', [
    MINIMAL_PROFILE.replace('[units]', '[unit]'),
    MINIMAL_PROFILE.replace('tokens = = +', 'tokens ='),
    MINIMAL_PROFILE.replace('[decision]\ntokens = if', '[decision]\ntokens = while'),
    MINIMAL_PROFILE.replace('mode = keyword', 'mode = indentation'),
    MINIMAL_PROFILE.replace('line = ;', 'line = ;\nblock_start = (*'),
    'not an ini file',
])
def test_invalid_profiles_rejected(broken):
    with pytest.raises(ProfileError):
        parse_profile(broken)


# ---------------------------------------------------------------------------
# 行分类与差异
# ---------------------------------------------------------------------------

def test_classify_model_lines():
    text = '# header\n\ncomponent A {  # trailing\n    var x: real = 1;\n   \n}\n'
    assert classify_lines(text, DSL) == LineCounts(code=3, comment=1, blank=2)
    assert code_lines(text, DSL) == ['component A {  # trailing', 'var x: real = 1;', '}']


def test_classify_block_comments_and_strings():
    text = '/* a\n   b */\nint x; // c\nchar *s = "/* not a comment";\n'
    counts = classify_lines(text, C_LIKE)
    assert counts == LineCounts(code=2, comment=2, blank=0)
    assert counts.total == 4


def test_diff_example():
    assert diff_lines(['a', 'b', 'c'], ['a', 'x', 'c', 'd']) == DiffCounts(same=2, modified=1, added=1, removed=0)
    assert diff_lines([], ['a']) == DiffCounts(added=1)
    assert diff_lines(['a'], []) == DiffCounts(removed=1)


def test_diff_identities_on_random_inputs():
    rng = random.Random(1234)
    for _ in range(1000):
        old = [rng.choice('abcd') for _ in range(rng.randint(0, 8))]
        new = [rng.choice('abcd') for _ in range(rng.randint(0, 8))]
        d = diff_lines(old, new)
        assert d.same + d.modified + d.removed == len(old)
        assert d.same + d.modified + d.added == len(new)
        assert d.same == lcs_length(old, new)
        back = diff_lines(new, old)
        assert (back.same, back.modified, back.added, back.removed) == (d.same, d.modified, d.removed, d.added)
        assert diff_lines(old, old).changed == 0


def test_pure_append_rloc():
    old = [f"line {i}" for i in range(30)]
    new = old + [f"extra {i}" for i in range(10)]
    d = diff_lines(old, new)
    assert d == DiffCounts(same=30, added=10)
    assert rloc(d, len(new)) == pytest.approx(100 * 10 / 40)


def test_rloc_and_format():
    assert format_percent(rloc(DiffCounts(same=14, modified=2, added=3, removed=1), 20)) == '30.00'
    with pytest.raises(UndefinedRatioError):
        rloc(DiffCounts(removed=3), 0)


# ---------------------------------------------------------------------------
# 分词与复杂度
# ---------------------------------------------------------------------------

def test_halstead_example():
    h = halstead('a = b + b * 2', DSL)
    assert (h.eta1, h.eta2, h.n1, h.n2) == (3, 3, 3, 4)
    assert h.volume == pytest.approx(7 * math.log2(6))
    assert h.difficulty == pytest.approx(1.5 * 4 / 3)
    assert h.effort == pytest.approx(h.difficulty * h.volume)
    assert h.bugs == pytest.approx(h.volume / 3000)


def test_halstead_degenerate_input():
    h = halstead('a', DSL)
    assert (h.eta1, h.eta2, h.n1, h.n2) == (0, 1, 0, 1)
    assert h.volume == 0.0 and h.difficulty == 0.0


def test_maintainability_index():
    raw, normalized = maintainability_index(100, 5, 50)
    assert raw == pytest.approx(82.528, abs=1e-3)
    assert normalized == pytest.approx(100 * raw / 171)
    assert maintainability_index(1, 0, 1) == (171.0, 100.0)
    assert maintainability_index(0, 0, 0) == (171.0, 100.0)
    assert maintainability_index(1e12, 500, 10 ** 9)[1] == 0.0


def test_token_error_is_located():
    with pytest.raises(TokenError) as info:
        tokenize_source('a = 1;\n  $', DSL)
    assert (info.value.line, info.value.column) == (2, 3)
    with pytest.raises(TokenError):
        tokenize_source('include "unterminated;\n', DSL)
    with pytest.raises(TokenError) as info:
        analyze_text('x = `', DSL, 'odd.model')
    assert info.value.path == 'odd.model'


def test_cyclomatic_of_heater_component():
    units, average = cyclomatic((COMPONENTS_DIR / 'heater.model').read_text(encoding='utf-8'), DSL)
    assert units == [('component Heater', 5)]
    assert average == 5


def test_each_decision_token_counts():
    units, _ = cyclomatic('component X { trans S -> T law inst(1) when a or b and c; }', DSL)
    assert units == [('component X', 4)]
    assert cyclomatic('# nothing here\n', DSL) == ([], 0.0)


def test_cyclomatic_with_brace_units():
    source = 'int f(int x) {\n  if (x > 0 && x < 10) return 1;\n  return 0;\n}\nint g() { return 2; }\n'
    units, average = cyclomatic(source, C_LIKE)
    assert units == [('f', 3), ('g', 1)]
    assert average == 2.0


@pytest.mark.parametrize('seed', range(100))
def test_comments_and_blank_lines_do_not_change_metrics(seed):
    rng = random.Random(seed)
    path = SHIPPED[seed % len(SHIPPED)]
    text = path.read_text(encoding='utf-8')
    lines = text.splitlines()
    for _ in range(rng.randint(1, 10)):
        lines.insert(rng.randint(0, len(lines)), rng.choice(['', '   ', '# 说明', '    # note: -> { }']))
    mutated = '\n'.join(lines) + '\n'
    before, after = analyze_text(text, DSL), analyze_text(mutated, DSL)
    assert before.code == after.code
    assert before.lines.code == after.lines.code
    assert before.halstead == after.halstead
    assert before.cc == after.cc
    assert [(u.name, u.cc, u.loc) for u in before.units] == [(u.name, u.cc, u.loc) for u in after.units]
    assert diff_lines(list(before.code), list(after.code)).changed == 0


# ---------------------------------------------------------------------------
# 用例对比
# ---------------------------------------------------------------------------

@pytest.fixture(scope='module')
def cases():
    return {c: analyze_case(c, paths, DSL) for c, paths in case_sets().items()}


def test_case_loc(cases):
    loc = {c: m.lines.code for c, m in cases.items()}
    assert loc == {'0': 48, '1': 54, '2': 75, '0a': 59, '1a': 65, '2a': 77}
    assert loc['0a'] > loc['0']


def test_alternative_design_evolves_with_less_change(cases):
    ratio = {pair: diff_cases(cases[pair[0]], cases[pair[1]])[1] for pair in CaseCatalog.EVOLUTION_PAIRS}
    assert ratio[('0a', '1a')] < ratio[('0', '1')]
    assert ratio[('1a', '2a')] < ratio[('1', '2')]
    assert format_percent(ratio[('0', '1')]) == '12.96'
    assert format_percent(ratio[('0a', '1a')]) == '9.23'


def test_case_maintainability_is_finite(cases):
    for case in cases.values():
        raw, normalized = case.maintainability()
        assert math.isfinite(raw) and 0.0 <= normalized <= 100.0
        assert case.cc >= 1


def test_report_tables_and_files(tmp_path):
    report = report_experiment(case_sets(), DSL, CaseCatalog.EVOLUTION_PAIRS)
    for name, columns in REPORT_COLUMNS.items():
        assert list(report[name].columns) == columns
    assert len(report['loc_total']) == 6
    assert len(report['rloc']) == 4
    assert report.rloc_percent('1', '2') > report.rloc_percent('1a', '2a')
    with pytest.raises(KeyError):
        report.rloc_percent('2', '0')
    heater_rows = report['cyclomatic'][(report['cyclomatic']['case'] == '0')
                                       & (report['cyclomatic']['unit'] == 'component Heater')]
    assert heater_rows['cc'].tolist() == [5]
    paths = report.write(tmp_path)
    assert set(paths) == set(REPORT_COLUMNS)
    header = paths['rloc'].read_text(encoding='utf-8').splitlines()[0]
    assert header == ','.join(REPORT_COLUMNS['rloc'])


def test_report_rejects_missing_files(tmp_path):
    sets = case_sets()
    sets['0'] = [tmp_path / 'gone.model']
    with pytest.raises(ReportError):
        report_experiment(sets, DSL)
    with pytest.raises(ReportError):
        report_experiment({'0': []}, DSL)
