#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
混成系统可信性工作台主入口
仿真、蒙特卡洛实验、可维护性度量三类工作流的命令行界面
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

from errors import INPUT_ERRORS, RUNTIME_ERRORS
from metrics_runner import MetricsRunner
from simulation_runner import SimulationRunner
from workbench import CONFIG_FILE

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 2, 3

logger = logging.getLogger(__name__)


class MainWorkbench:
    """主工作台，整合仿真与度量"""

    def __init__(self, config_file: str = CONFIG_FILE):
        self.config_file = config_file
        self.simulation = SimulationRunner(config_file)
        self.metrics = MetricsRunner(config_file)
        self.logger = self.simulation.logger

    def run(self, args: argparse.Namespace):
        if args.command == 'simulate':
            engine = {'step_size': args.step, 'clock_policy': args.clock_policy}
            self.simulation.simulate(args.model, args.horizon, args.seed, args.grid, args.out,
                                     dict(args.set), args.format, **engine)
        elif args.command == 'experiment':
            engine = {'step_size': args.step, 'clock_policy': args.clock_policy}
            result = self.simulation.experiment(args.model, args.runs, args.horizon, args.seed, args.workers,
                                                args.grid, args.out, dict(args.set), dict(args.predicate),
                                                progress=not args.no_progress, **engine)
            for row in result.statistics.itertuples():
                self.logger.info(f"{row.statistic} {row.instance} {row.key}: {row.mean:.6f} ± {row.stderr:.6f}")
        elif args.command == 'metrics':
            self.metrics.metrics(args.paths, args.profile, args.out, not args.no_includes)
        elif args.command == 'diff':
            self.metrics.diff(args.old, args.new, args.profile, args.out, not args.no_includes)
        elif args.command == 'report':
            self.metrics.report(args.cases, args.profile, args.out)


def _scalar(text: str):
    """--set 的取值：true/false、整数、实数"""
    lowered = text.strip().lower()
    if lowered in ('true', 'false'):
        return lowered == 'true'
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        raise argparse.ArgumentTypeError(f"无法解析参数值 {text!r}")


def _assignment(text: str):
    key, sep, value = text.partition('=')
    if not sep or not key.strip():
        raise argparse.ArgumentTypeError(f"应为 KEY=VALUE 形式: {text!r}")
    parsed = _scalar(value)
    if not isinstance(parsed, (bool, int, float)):
        raise argparse.ArgumentTypeError(f"参数值必须是数值或布尔值: {text!r}")
    return key.strip(), parsed


def _predicate(text: str):
    name, sep, expr = text.partition('=')
    if not sep or not name.strip() or not expr.strip():
        raise argparse.ArgumentTypeError(f"应为 NAME=EXPR 形式: {text!r}")
    return name.strip(), expr.strip()


def _add_engine_options(parser: argparse.ArgumentParser):
    parser.add_argument('--horizon', type=float, help='仿真时长')
    parser.add_argument('--seed', type=int, help='随机种子')
    parser.add_argument('--step', type=float, help='RK4 固定步长 (默认取配置 engine.step_size)')
    parser.add_argument('--clock-policy', choices=['on_entry', 'every_event'], help='指数时钟抽样策略')
    parser.add_argument('--set', action='append', type=_assignment, default=[], metavar='KEY=VALUE',
                        help="参数覆盖，KEY 为 'instance.param' 或 'Type.param'，可重复")
    parser.add_argument('--out', '-o', help='输出目录 (默认: output_root/<子命令>)')


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """解析命令行参数"""
    parser = argparse.ArgumentParser(description='混成系统可信性工作台：仿真、蒙特卡洛实验与可维护性度量')
    parser.add_argument('--config', '-c', default=CONFIG_FILE, help='配置文件路径 (默认: config.json)')
    sub = parser.add_subparsers(dest='command', required=True)

    simulate = sub.add_parser('simulate', help='单次仿真，输出迁移与采样轨迹')
    simulate.add_argument('model', help='.model 文件')
    _add_engine_options(simulate)
    simulate.add_argument('--grid', type=float, help='采样网格步长')
    simulate.add_argument('--format', choices=['csv', 'parquet'], help='采样文件格式')

    experiment = sub.add_parser('experiment', help='蒙特卡洛实验')
    experiment.add_argument('model', help='.model 文件')
    _add_engine_options(experiment)
    experiment.add_argument('--runs', '-r', type=int, help='重复次数')
    experiment.add_argument('--workers', '-w', type=int, help='并行进程数')
    experiment.add_argument('--grid', type=float, help='给出时统计轨迹均值与包络')
    experiment.add_argument('--predicate', action='append', type=_predicate, default=[], metavar='NAME=EXPR',
                            help='统计布尔表达式成立的时间比例，可重复')
    experiment.add_argument('--no-progress', action='store_true', help='不显示进度条')

    for name, help_text in (('metrics', '计算 LOC/Halstead/CC/MI'), ('diff', '两个版本的差异与 RLOC')):
        p = sub.add_parser(name, help=help_text)
        if name == 'metrics':
            p.add_argument('paths', nargs='+', help='源文件')
        else:
            p.add_argument('old', help='旧版本')
            p.add_argument('new', help='新版本')
        p.add_argument('--profile', '-p', help='语言配置名或 .profile 文件 (默认取配置 metrics.profile)')
        p.add_argument('--no-includes', action='store_true', help='不展开 .model 文件的 include')
        p.add_argument('--out', '-o', help='输出目录')

    report = sub.add_parser('report', help='六个用例的对比报表')
    report.add_argument('--cases', default='cases', help='用例目录 (默认: cases)')
    report.add_argument('--profile', '-p', help='语言配置名或 .profile 文件')
    report.add_argument('--out', '-o', help='输出目录')

    return parser.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    """主函数，返回退出码"""
    args = parse_arguments(argv)
    try:
        MainWorkbench(args.config).run(args)
    except INPUT_ERRORS as e:
        logger.error(f"输入错误: {e}")
        return EXIT_INPUT
    except RUNTIME_ERRORS as e:
        logger.error(f"运行错误: {e}")
        return EXIT_RUNTIME
    except ValueError as e:
        logger.error(f"配置错误: {e}")
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
