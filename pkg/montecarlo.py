#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
蒙特卡洛实验
重复仿真调度（可多进程）、占用时间比例的均值与标准误差、轨迹统计、终态序列聚类
"""

import logging
import math
import multiprocessing
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from errors import EvaluationError, ReplicationError, SimulationError, ValidationError
from kernel import SystemModel
from model_dsl import load_model
from flow_kernel import flow_kernel
from pdmp_engine import EngineConfig, SimulationTrace, run_replication, write_frame

logger = logging.getLogger(__name__)

STATISTICS = ('occupancy', 'clusters', 'trajectory')
RESULT_COLUMNS = ['statistic', 'instance', 'key', 'mean', 'stderr', 'runs']
CLUSTER_COLUMNS = ['signature', 'count']
TRAJECTORY_COLUMNS = ['time', 'variable', 'mean', 'min', 'max', 'runs']
SYSTEM_LEVEL = '*'


@dataclass(frozen=True)
class ExperimentSpec:
    """一次蒙特卡洛实验的参数；model 为模型文件路径或已装配的模型"""
    model: Union[str, Path, SystemModel]
    runs: int = 100
    horizon: float = 1000.0
    seed: int = 42
    sample_step: Optional[float] = None
    statistics: Tuple[str, ...] = ('occupancy', 'clusters')
    engine: EngineConfig = field(default_factory=EngineConfig)
    overrides: Tuple[Tuple[str, object], ...] = ()
    predicates: Tuple[Tuple[str, str], ...] = ()
    workers: int = 1

    def __post_init__(self):
        if self.runs < 1:
            raise ValidationError(f"重复次数必须至少为 1: {self.runs}")
        if self.workers < 1:
            raise ValidationError(f"workers 必须至少为 1: {self.workers}")
        unknown = set(self.statistics) - set(STATISTICS)
        if unknown:
            raise ValidationError(f"未知统计量 {sorted(unknown)}，可选: {STATISTICS}")
        if 'trajectory' in self.statistics and self.sample_step is None:
            raise ValidationError("统计轨迹需要指定 sample_step")

    def engine_config(self) -> EngineConfig:
        sample_step = self.sample_step if 'trajectory' in self.statistics else None
        return replace(self.engine, horizon=self.horizon, seed=self.seed, sample_step=sample_step,
                       predicates=tuple(self.predicates))


@dataclass(frozen=True)
class ReplicationSummary:
    """单次重复仿真的压缩结果（跨进程传递用）"""
    run: int
    fractions: Dict[str, float]
    signature: Tuple[str, ...]
    samples: Tuple[Tuple[float, str, float], ...] = ()


@dataclass(frozen=True)
class Cluster:
    signature: Tuple[str, ...]
    count: int
    representative: int

    @property
    def label(self) -> str:
        return ';'.join(self.signature)


@dataclass
class ExperimentResult:
    runs: int
    horizon: float
    statistics: pd.DataFrame
    clusters: List[Cluster]
    trajectory: pd.DataFrame
    summaries: List[ReplicationSummary]

    def fraction(self, instance: str, key: str) -> Tuple[float, float]:
        """返回 (均值, 标准误差)"""
        rows = self.statistics[(self.statistics['instance'] == instance) & (self.statistics['key'] == key)]
        if rows.empty:
            raise KeyError(f"没有统计量 {instance}/{key}")
        row = rows.iloc[0]
        return float(row['mean']), float(row['stderr'])

    def cluster_frame(self) -> pd.DataFrame:
        return pd.DataFrame([(c.label, c.count) for c in self.clusters], columns=CLUSTER_COLUMNS)


def summarize(trace: SimulationTrace, keep_samples: bool = False) -> ReplicationSummary:
    return ReplicationSummary(trace.run, dict(trace.fractions()), tuple(trace.end_state_signature),
                              tuple(trace.samples) if keep_samples else ())


# ---------------------------------------------------------------------------
# 调度
# ---------------------------------------------------------------------------

# 子进程通过 fork 继承，SystemModel 含闭包无法 pickle
_WORKER_MODEL: Optional[SystemModel] = None
_WORKER_CONFIG: Optional[EngineConfig] = None
_WORKER_SAMPLES = False


def _init_worker(model: SystemModel, config: EngineConfig, keep_samples: bool):
    global _WORKER_MODEL, _WORKER_CONFIG, _WORKER_SAMPLES
    _WORKER_MODEL, _WORKER_CONFIG, _WORKER_SAMPLES = model, config, keep_samples


def _run_one(run: int):
    try:
        trace = run_replication(_WORKER_MODEL, _WORKER_CONFIG, run=run)
    except (SimulationError, EvaluationError) as e:
        return run, None, e
    return run, summarize(trace, _WORKER_SAMPLES), None


def _fork_context():
    try:
        return multiprocessing.get_context('fork')
    except ValueError:
        return None


def _replicate(model: SystemModel, config: EngineConfig, runs: int, workers: int,
               keep_samples: bool, progress: bool) -> List[ReplicationSummary]:
    context = _fork_context() if workers > 1 else None
    if workers > 1 and context is None:
        logger.warning("当前平台不支持 fork，改为在本进程内顺序执行")
    bar = tqdm(total=runs, desc="重复仿真", ncols=100, disable=None if progress else True)
    summaries = []
    try:
        if context is None:
            _init_worker(model, config, keep_samples)
            outcomes: Iterable = (_run_one(run) for run in range(runs))
            summaries = _collect(outcomes, bar, stop_at_first=True)
        else:
            with context.Pool(workers, initializer=_init_worker,
                              initargs=(model, config, keep_samples)) as pool:
                chunk = max(1, runs // (workers * 8))
                summaries = _collect(pool.imap_unordered(_run_one, range(runs), chunksize=chunk), bar,
                                     stop_at_first=False)
    finally:
        bar.close()
    return summaries


def _collect(outcomes: Iterable, bar, stop_at_first: bool) -> List[ReplicationSummary]:
    """收集结果；有失败时报告编号最小的一次

    顺序执行时第一个失败即编号最小者；并行完成顺序不定，需收齐后再选。
    """
    summaries, failures = [], []
    for run, summary, error in outcomes:
        bar.update(1)
        if error is not None:
            failures.append((run, error))
            if stop_at_first:
                break
            continue
        summaries.append(summary)
    if failures:
        run, error = min(failures, key=lambda f: f[0])
        raise ReplicationError(run, error)
    return summaries


def run_experiment(spec: ExperimentSpec, progress: bool = True) -> ExperimentResult:
    """执行 R 次重复仿真（随机流 0..R-1）并汇总；结果与 workers 数无关"""
    model = spec.model
    if not isinstance(model, SystemModel):
        model = load_model(model, dict(spec.overrides))
    config = spec.engine_config()
    if config.compiled_flow:
        kernel = flow_kernel(model)
        if kernel is not None:
            # 在 fork 之前编译，子进程直接继承
            kernel.warm_up()
    keep_samples = 'trajectory' in spec.statistics
    logger.info(f"开始实验: {spec.runs} 次重复, horizon={spec.horizon}, seed={spec.seed}, workers={spec.workers}")
    summaries = _replicate(model, config, spec.runs, spec.workers, keep_samples, progress)
    result = aggregate(summaries, spec.horizon, [name for name, _ in spec.predicates],
                       'clusters' in spec.statistics)
    logger.info(f"实验完成: {len(result.clusters)} 个终态聚类")
    return result


# ---------------------------------------------------------------------------
# 汇总
# ---------------------------------------------------------------------------

def _classify(key: str, predicates: Sequence[str]) -> Tuple[str, str, str]:
    if key in predicates:
        return 'predicate', SYSTEM_LEVEL, key
    if '=' in key:
        return 'count_fraction', SYSTEM_LEVEL, key
    instance, _, local = key.partition('.')
    return 'time_fraction', instance, local


def mean_and_stderr(values: Sequence[float]) -> Tuple[float, float]:
    data = np.asarray(values, dtype=float)
    if data.size == 0:
        return math.nan, math.nan
    if data.size == 1:
        return float(data[0]), 0.0
    return float(data.mean()), float(data.std(ddof=1) / math.sqrt(data.size))


def aggregate(summaries: Sequence[ReplicationSummary], horizon: float,
              predicates: Sequence[str] = (), with_clusters: bool = True) -> ExperimentResult:
    """汇总与完成顺序无关：先按重复编号排序"""
    ordered = sorted(summaries, key=lambda s: s.run)
    runs = len(ordered)
    frame = pd.DataFrame([s.fractions for s in ordered])
    rows = []
    for key in frame.columns:
        statistic, instance, local = _classify(key, predicates)
        mean, stderr = mean_and_stderr(frame[key].to_numpy())
        rows.append((statistic, instance, local, mean, stderr, runs))
    statistics = pd.DataFrame(rows, columns=RESULT_COLUMNS)
    statistics = statistics.sort_values(['statistic', 'instance', 'key'], kind='mergesort').reset_index(drop=True)
    clusters = cluster_sequences(ordered) if with_clusters else []
    return ExperimentResult(runs, horizon, statistics, clusters, trajectory_statistics(ordered), list(ordered))


def trajectory_statistics(summaries: Sequence[ReplicationSummary]) -> pd.DataFrame:
    rows = [(s.run, t, name, v) for s in summaries for t, name, v in s.samples]
    if not rows:
        return pd.DataFrame(columns=TRAJECTORY_COLUMNS)
    samples = pd.DataFrame(rows, columns=['run', 'time', 'variable', 'value'])
    grouped = samples.groupby(['time', 'variable'], sort=True)['value']
    table = grouped.agg(['mean', 'min', 'max', 'count']).reset_index()
    table = table.rename(columns={'count': 'runs'})
    return table[TRAJECTORY_COLUMNS]


def cluster_sequences(traces: Sequence[Union[SimulationTrace, ReplicationSummary]]) -> List[Cluster]:
    """按终态签名精确分组；代表轨迹取编号最小的一次"""
    groups: Dict[Tuple[str, ...], List[int]] = {}
    for trace in traces:
        signature = trace.end_state_signature if isinstance(trace, SimulationTrace) else trace.signature
        groups.setdefault(tuple(signature), []).append(trace.run)
    clusters = [Cluster(sig, len(members), min(members)) for sig, members in groups.items()]
    clusters.sort(key=lambda c: (-c.count, c.signature))
    return clusters


def cluster_proportions(clusters: Sequence[Cluster], component: str) -> Dict[str, float]:
    """某个 'instance.Automaton' 在各终态上的比例"""
    total = sum(c.count for c in clusters)
    prefix = component + '.'
    proportions: Dict[str, float] = {}
    for c in clusters:
        for entry in c.signature:
            if entry.startswith(prefix):
                state = entry[len(prefix):]
                proportions[state] = proportions.get(state, 0.0) + c.count / total
    return proportions


def write_result(result: ExperimentResult, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """写出 results.csv、clusters.csv 与（若有）trajectory.csv"""
    out_dir = Path(out_dir)
    paths = {'results': out_dir / 'results.csv', 'clusters': out_dir / 'clusters.csv'}
    write_frame(result.statistics, paths['results'])
    write_frame(result.cluster_frame(), paths['clusters'])
    if not result.trajectory.empty:
        paths['trajectory'] = out_dir / 'trajectory.csv'
        write_frame(result.trajectory, paths['trajectory'])
    logger.info(f"实验结果已写出: {', '.join(str(p) for p in paths.values())}")
    return paths
