# -*- coding: utf-8 -*-
"""对数-对数最小二乘拟合：所有“拟合斜率/指数”都经由这里。"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Tuple

import numpy as np
from scipy import stats

from .errors import FitError

logger = logging.getLogger(__name__)

# 至少需要的点数
MIN_POINTS = 3

# 判断 x 重复时的相对容差
DUPLICATE_RTOL = 1e-12


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    r_squared: float
    stderr: float = 0.0
    n_points: int = 0
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    @property
    def max_abs_residual(self) -> float:
        return float(np.max(np.abs(self.residuals))) if self.residuals.size else 0.0

    def as_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "stderr": self.stderr,
            "n_points": self.n_points,
            "max_abs_residual": self.max_abs_residual,
        }


def _validate_x(x: np.ndarray) -> None:
    if x.size < MIN_POINTS:
        raise FitError(f"拟合至少需要 {MIN_POINTS} 个点, 得到 {x.size}")
    order = np.sort(x)
    gaps = np.diff(order)
    if np.any(gaps <= DUPLICATE_RTOL * np.abs(order[1:])):
        raise FitError("自变量存在重复值, 拟合退化")


def fit_linear(x: Sequence[float], y: Sequence[float]) -> FitResult:
    """y = slope * x + intercept 的普通最小二乘。"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise FitError(f"x 与 y 长度不一致: {x.shape} vs {y.shape}")
    _validate_x(x)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise FitError("拟合数据含非有限值")
    res = stats.linregress(x, y)
    predicted = res.slope * x + res.intercept
    residuals = y - predicted
    r2 = float(res.rvalue ** 2) if np.ptp(y) > 0 else 1.0
    return FitResult(
        slope=float(res.slope),
        intercept=float(res.intercept),
        r_squared=r2,
        stderr=float(res.stderr),
        n_points=int(x.size),
        residuals=residuals,
    )


def fit_power_law(points: Iterable[Tuple[float, float]]) -> FitResult:
    """在 (log x, log y) 上做最小二乘：y ≈ e^{intercept} x^{slope}。"""
    pts: List[Tuple[float, float]] = [(float(a), float(b)) for a, b in points]
    if len(pts) < MIN_POINTS:
        raise FitError(f"拟合至少需要 {MIN_POINTS} 个点, 得到 {len(pts)}")
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    if np.any(x <= 0) or np.any(y <= 0):
        raise FitError("幂律拟合要求 x > 0, y > 0")
    fit = fit_linear(np.log(x), np.log(y))
    logger.debug("幂律拟合: slope=%.6g r2=%.6g n=%d", fit.slope, fit.r_squared, fit.n_points)
    return fit


def fit_log_growth(x: Sequence[float], y: Sequence[float]) -> FitResult:
    """y ≈ slope * ln(1/x) + intercept，用于检验 T1 ~ C3 ln(1/eps)。"""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise FitError("对数增长拟合要求 x > 0")
    return fit_linear(np.log(1.0 / x), y)


def relative_gap(measured: float, predicted: float) -> float:
    if predicted == 0:
        return math.inf if measured != 0 else 0.0
    return abs(measured - predicted) / abs(predicted)
