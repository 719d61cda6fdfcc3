#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
度量工作流
单文件（集）度量、两个版本的差异与 RLOC、六个用例的对比报表
"""

from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd

from errors import ReportError
from heated_room import CaseCatalog
from metrics import (LanguageProfile, analyze_case, diff_cases, format_percent, load_profile,
                     report_experiment)
from model_dsl import MODEL_SUFFIX, file_set_paths
from workbench import Workbench

METRICS_COLUMNS = ['path', 'files', 'code', 'comment', 'blank', 'eta1', 'eta2', 'N1', 'N2',
                   'volume', 'difficulty', 'effort', 'bugs', 'cc', 'mi_raw', 'mi_normalized']
DIFF_COLUMNS = ['old', 'new', 'same', 'modified', 'added', 'removed', 'target_loc', 'rloc_percent']


class MetricsRunner(Workbench):
    """可维护性度量"""

    def profile(self, name: Optional[str] = None) -> LanguageProfile:
        return load_profile(name or self.config['metrics']['profile'])

    def file_set(self, path: str, includes: bool = True) -> List[Path]:
        """.model 文件默认展开 include，其他文件只度量自身"""
        if includes and Path(path).suffix == MODEL_SUFFIX:
            return [Path(p) for p in file_set_paths(path)]
        if not Path(path).is_file():
            raise FileNotFoundError(f"源文件不存在: {path}")
        return [Path(path)]

    def metrics(self, paths: Sequence[str], profile: Optional[str] = None, out: Optional[str] = None,
                includes: bool = True) -> pd.DataFrame:
        """每个输入（含其 include 文件集）一行 LOC/Halstead/CC/MI"""
        lang = self.profile(profile)
        rows = []
        for path in paths:
            case = analyze_case(str(path), self.file_set(path, includes), lang)
            h, lines = case.halstead, case.lines
            mi_raw, mi_normalized = case.maintainability()
            rows.append((str(path), len(case.files), lines.code, lines.comment, lines.blank,
                         h.eta1, h.eta2, h.n1, h.n2, h.volume, h.difficulty, h.effort, h.bugs,
                         case.cc, mi_raw, mi_normalized))
        table = pd.DataFrame(rows, columns=METRICS_COLUMNS)
        self._save_dataframe(table, self.output_dir(out, 'metrics') / 'metrics.csv')
        return table

    def diff(self, old: str, new: str, profile: Optional[str] = None, out: Optional[str] = None,
             includes: bool = True) -> pd.DataFrame:
        lang = self.profile(profile)
        old_case = analyze_case(old, self.file_set(old, includes), lang)
        new_case = analyze_case(new, self.file_set(new, includes), lang)
        counts, ratio = diff_cases(old_case, new_case)
        self.logger.info(f"{old} -> {new}: 相同 {counts.same}, 修改 {counts.modified}, 新增 {counts.added}, "
                         f"删除 {counts.removed}, RLOC {format_percent(ratio)}%")
        table = pd.DataFrame([(old, new, counts.same, counts.modified, counts.added, counts.removed,
                               new_case.lines.code, format_percent(ratio))], columns=DIFF_COLUMNS)
        self._save_dataframe(table, self.output_dir(out, 'diff') / 'diff.csv')
        return table

    def report(self, cases_dir: str, profile: Optional[str] = None, out: Optional[str] = None,
               progress: bool = False) -> Dict[str, Path]:
        """六个用例的对比报表；任一用例文件缺失则报错"""
        catalog = CaseCatalog(Path(cases_dir))
        missing = [str(catalog.path(c)) for c in catalog.ids() if not catalog.path(c).is_file()]
        if missing:
            raise ReportError(f"用例文件缺失: {', '.join(missing)}", path=cases_dir)
        case_sets = {c: self.file_set(str(catalog.path(c))) for c in catalog.ids()}
        report = report_experiment(case_sets, self.profile(profile), CaseCatalog.EVOLUTION_PAIRS, progress)
        return report.write(self.output_dir(out, 'report'))
