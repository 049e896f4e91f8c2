# -*- coding: utf-8 -*-
"""实验室统一异常层级。"""

from __future__ import annotations

from typing import List, Sequence, Tuple


class LabError(Exception):
    """所有主动抛出异常的基类。"""


class DomainError(LabError, ValueError):
    """数学定义域错误：d <= 1、delta < 0、K_nu 的 t <= 0、Kato 引理前提不满足等。"""


class GridSizeError(LabError, ValueError):
    """网格样本数不足。"""


class SolverError(LabError, RuntimeError):
    """积分器失败（例如特征函数出现非正值）。"""


class FitError(LabError, ValueError):
    """拟合点数不足、自变量退化或重复。"""


class ConfigError(LabError):
    """配置校验失败；issues 为 (字段路径, 说明) 列表。"""

    def __init__(self, issues: Sequence[Tuple[str, str]]):
        self.issues: List[Tuple[str, str]] = list(issues)
        super().__init__(self.format())

    def format(self) -> str:
        return "\n".join(f"{field}: {msg}" for field, msg in self.issues)
