#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
工作台基类
配置加载（内置默认值 + config.json + 命令行覆盖）、日志、输出目录与 DataFrame 保存
"""

import copy
import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Dict, Mapping, Optional

import pandas as pd

from pdmp_engine import EngineConfig, write_frame

CONFIG_FILE = 'config.json'
LOG_DIR = Path('logs')

DEFAULT_CONFIG: Dict = {
    'output_root': './output',
    'engine': {
        'step_size': 0.01,
        'event_time_tolerance': 1e-9,
        'max_cascade_iterations': 1000,
        'max_events': 1000000,
        'sample_step': 0.1,
        'clock_policy': 'on_entry',
        'compiled_flow': True,
    },
    'experiment': {
        'runs': 100,
        'horizon': 1000.0,
        'seed': 42,
        'workers': 1,
    },
    'metrics': {
        'profile': 'model-dsl',
    },
    'output': {
        'samples_format': 'csv',
    },
    'logging': {
        'level': 'INFO',
        'format': '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        'file_enabled': True,
    },
}


def deep_merge(base: Mapping, update: Mapping) -> Dict:
    """递归合并字典，update 中的值优先"""
    merged = copy.deepcopy(dict(base))
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


class Workbench:
    """各工作流共用的基类"""

    def __init__(self, config_file: str = CONFIG_FILE, overrides: Optional[Mapping] = None):
        self.config_file = config_file
        self.config = self._load_config(config_file)
        if overrides:
            self.config = deep_merge(self.config, overrides)
        self._setup_logging()
        self._setup_directories()

    def _load_config(self, config_file: str) -> Dict:
        """加载配置文件；文件不存在时使用内置默认值"""
        path = Path(config_file)
        if not path.exists():
            logging.getLogger(__name__).info(f"配置文件 {config_file} 不存在，使用内置默认配置")
            return copy.deepcopy(DEFAULT_CONFIG)
        try:
            with open(path, 'r', encoding='utf-8') as f:
                loaded = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"配置文件 {config_file} 格式错误: {e}")
        if not isinstance(loaded, dict):
            raise ValueError(f"配置文件 {config_file} 顶层必须是对象")
        return deep_merge(DEFAULT_CONFIG, loaded)

    def _setup_logging(self):
        """设置日志"""
        log_config = self.config.get('logging', {})
        fmt = log_config.get('format', DEFAULT_CONFIG['logging']['format'])
        level = getattr(logging, str(log_config.get('level', 'INFO')).upper(), logging.INFO)
        logging.basicConfig(level=level, format=fmt)
        root = logging.getLogger()
        root.setLevel(level)
        self.logger = logging.getLogger(type(self).__module__)

        if not log_config.get('file_enabled', True):
            return
        LOG_DIR.mkdir(exist_ok=True)
        log_file = (LOG_DIR / f"{datetime.now().strftime('%Y%m%d')}_workbench.log").resolve()
        # 同一进程内多个工作台共用一个文件处理器
        if any(getattr(h, 'baseFilename', None) == str(log_file) for h in root.handlers):
            return
        file_handler = logging.FileHandler(log_file, encoding='utf-8')
        file_handler.setFormatter(logging.Formatter(fmt))
        root.addHandler(file_handler)

    def _setup_directories(self):
        """创建输出根目录"""
        self.output_root = Path(self.config.get('output_root', './output'))
        self.output_root.mkdir(parents=True, exist_ok=True)
        self.logger.debug(f"输出目录: {self.output_root}")

    def output_dir(self, out: Optional[str], workflow: str) -> Path:
        """命令行给出 --out 时用之，否则为 output_root/<workflow>"""
        path = Path(out) if out else self.output_root / workflow
        path.mkdir(parents=True, exist_ok=True)
        return path

    def engine_config(self, **overrides) -> EngineConfig:
        values = dict(self.config.get('engine', {}))
        values.update({k: v for k, v in overrides.items() if v is not None})
        return EngineConfig.from_dict(values)

    def _save_dataframe(self, data: pd.DataFrame, file_path: Path, data_format: str = 'csv'):
        """按格式保存 DataFrame（csv 或 parquet）"""
        file_path.parent.mkdir(parents=True, exist_ok=True)
        if data_format == 'parquet':
            data.to_parquet(file_path, index=False, engine='pyarrow')
        else:
            write_frame(data, file_path)
        self.logger.info(f"已保存 {file_path}（{len(data)} 行）")
