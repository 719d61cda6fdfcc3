#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
异常体系
建模、仿真、度量三条流水线共用的异常类型，CLI 依据异常族映射退出码
"""

from typing import Optional


class WorkbenchError(Exception):
    """所有工作台异常的基类，可携带源文件位置"""

    def __init__(self, message: str, path: Optional[str] = None,
                 line: Optional[int] = None, column: Optional[int] = None):
        self.message = message
        self.path = path
        self.line = line
        self.column = column
        super().__init__(self._format())

    def __reduce__(self):
        return self.__class__, (self.message, self.path, self.line, self.column)

    def _format(self) -> str:
        if self.path is None and self.line is None:
            return self.message
        location = self.path or '<input>'
        if self.line is not None:
            location += f":{self.line}"
            if self.column is not None:
                location += f":{self.column}"
        return f"{location}: {self.message}"

    def with_path(self, path: str) -> 'WorkbenchError':
        """补充文件路径（解析器只知道行列号）"""
        self.path = path
        self.args = (self._format(),)
        return self


# 定义期校验
class ValidationError(WorkbenchError):
    pass


class DuplicateNameError(ValidationError):
    pass


class UnresolvedStateError(ValidationError):
    pass


class UnresolvedIdentifierError(ValidationError):
    pass


class ConditionTypeError(ValidationError):
    pass


class LawDefinitionError(ValidationError):
    pass


# 装配 / 展开期
class ModelError(WorkbenchError):
    pass


class DanglingConnectionError(ModelError):
    pass


class LabelMismatchError(ModelError):
    pass


class CyclicChainError(ModelError):
    pass


class UnknownComponentTypeError(ModelError):
    pass


class ArityError(ModelError):
    pass


class DuplicateOdeBindingError(ModelError):
    pass


class PriorityTieError(ModelError):
    pass


# 解析期
class DslSyntaxError(WorkbenchError):
    pass


# 运行期
class EvaluationError(WorkbenchError):
    pass


class SimulationError(WorkbenchError):
    pass


class LawError(SimulationError):
    pass


class NumericError(SimulationError):
    pass


class LivelockError(SimulationError):
    pass


class ZenoError(SimulationError):
    pass


class ReplicationError(SimulationError):
    """实验中某次重复仿真失败，保留重复编号"""

    def __init__(self, run: int, cause: Exception):
        self.run = run
        self.cause = cause
        super().__init__(f"第 {run} 次重复仿真失败: {cause}")

    def __reduce__(self):
        return self.__class__, (self.run, self.cause)


# 度量
class MetricsError(WorkbenchError):
    pass


class TokenError(MetricsError):
    pass


class UndefinedRatioError(MetricsError):
    pass


class ReportError(MetricsError):
    pass


class ProfileError(MetricsError):
    pass


# CLI 退出码
INPUT_ERRORS = (ValidationError, ModelError, DslSyntaxError, MetricsError, FileNotFoundError)
RUNTIME_ERRORS = (SimulationError, EvaluationError)
