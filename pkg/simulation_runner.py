#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
仿真工作流
单次仿真输出轨迹，蒙特卡洛实验输出统计、聚类与轨迹包络
"""

from pathlib import Path
from typing import Dict, Mapping, Optional

from model_dsl import load_model
from montecarlo import ExperimentResult, ExperimentSpec, run_experiment, write_result
from pdmp_engine import run_replication, write_trace
from workbench import Workbench


class SimulationRunner(Workbench):
    """仿真与实验"""

    def simulate(self, model_path: str, horizon: Optional[float] = None, seed: Optional[int] = None,
                 grid: Optional[float] = None, out: Optional[str] = None,
                 overrides: Optional[Mapping[str, object]] = None,
                 samples_format: Optional[str] = None, **engine) -> Dict[str, Path]:
        """执行一次仿真并写出 firings.csv / samples.csv"""
        model = load_model(model_path, overrides)
        experiment = self.config['experiment']
        config = self.engine_config(
            horizon=horizon if horizon is not None else experiment['horizon'],
            seed=seed if seed is not None else experiment['seed'],
            sample_step=grid, **engine)
        self.logger.info(f"开始仿真 {model_path}: horizon={config.horizon}, seed={config.seed}")
        trace = run_replication(model, config, run=0)
        self.logger.info(f"仿真完成: {len(trace.firings)} 次迁移触发, 终态 {', '.join(trace.end_state_signature)}")
        fmt = samples_format or self.config['output']['samples_format']
        return write_trace(trace, self.output_dir(out, 'simulate'), fmt)

    def experiment(self, model_path: str, runs: Optional[int] = None, horizon: Optional[float] = None,
                   seed: Optional[int] = None, workers: Optional[int] = None, grid: Optional[float] = None,
                   out: Optional[str] = None, overrides: Optional[Mapping[str, object]] = None,
                   predicates: Optional[Mapping[str, str]] = None, progress: bool = True,
                   **engine) -> ExperimentResult:
        """执行蒙特卡洛实验并写出 results.csv / clusters.csv（给出 grid 时另写 trajectory.csv）"""
        defaults = self.config['experiment']
        statistics = ('occupancy', 'clusters', 'trajectory') if grid else ('occupancy', 'clusters')
        spec = ExperimentSpec(
            model=model_path,
            runs=runs if runs is not None else defaults['runs'],
            horizon=horizon if horizon is not None else defaults['horizon'],
            seed=seed if seed is not None else defaults['seed'],
            sample_step=grid,
            statistics=statistics,
            engine=self.engine_config(**engine),
            overrides=tuple((overrides or {}).items()),
            predicates=tuple((predicates or defaults.get('predicates') or {}).items()),
            workers=workers if workers is not None else defaults.get('workers', 1),
        )
        result = run_experiment(spec, progress=progress)
        write_result(result, self.output_dir(out, 'experiment'))
        return result
