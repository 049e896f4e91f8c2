# -*- coding: utf-8 -*-
"""仅数据的绘图列：每种图对应一组列名，写成带 # 表头的 .dat 文本。"""

from __future__ import annotations

from typing import Dict, Sequence

import numpy as np

from .fitting import FitResult
from .functionals import FunctionalTrace
from .kato_ode import KatoSweep
from .records import SnapshotBundle, SweepRecord
from .special_functions import EigenfunctionResult, PsiDecayTable

# 图名 -> 列名；docs/csv_schemas.md 同步维护
PLOT_LAYOUTS = {
    "lifespan": ("inv_eps", "T_num", "T_fit"),
    "kato": ("inv_delta", "one_plus_T", "fit"),
    "psi_decay": ("one_plus_t", "integral", "fit"),
    "eigenfunction": ("r", "phi", "lower", "upper"),
    "functionals": ("t", "F", "G1", "G2", "H", "L", "N"),
    "snapshot": ("r", "u", "v"),
}

Columns = Dict[str, np.ndarray]


def _fit_curve(fit: FitResult, x: np.ndarray) -> np.ndarray:
    """幂律拟合在 x 处的值 e^{intercept} x^{slope}。"""
    return np.exp(fit.intercept) * np.asarray(x, dtype=float) ** fit.slope


def _layout(name: str, values: Sequence[np.ndarray]) -> Columns:
    names = PLOT_LAYOUTS[name]
    if len(names) != len(values):
        raise ValueError(f"{name}: 需要 {len(names)} 列, 得到 {len(values)}")
    return {col: np.asarray(v, dtype=float) for col, v in zip(names, values)}


def lifespan_columns(records: Sequence[SweepRecord], fit: FitResult) -> Columns:
    usable = sorted((r for r in records if r.usable), key=lambda r: r.epsilon)
    inv_eps = np.array([1.0 / r.epsilon for r in usable])
    T = np.array([r.T_num for r in usable])
    return _layout("lifespan", (inv_eps, T, _fit_curve(fit, inv_eps)))


def kato_columns(sweep: KatoSweep) -> Columns:
    pts = [p for p in sweep.points if p.T_num is not None]
    inv_delta = np.array([1.0 / p.delta for p in pts])
    one_plus_T = np.array([1.0 + p.T_num for p in pts])
    return _layout("kato", (inv_delta, one_plus_T, _fit_curve(sweep.fit, inv_delta)))


def psi_columns(table: PsiDecayTable) -> Columns:
    x = 1.0 + table.times
    return _layout("psi_decay", (x, table.values, _fit_curve(table.fit, x)))


def eigen_columns(result: EigenfunctionResult) -> Columns:
    r = result.phi.r
    env = result.envelope if result.envelope is not None else np.full_like(r, np.nan)
    c0 = result.fitted_c0
    # 界为 c0 <= φ <= 包络 / c0
    upper = env / c0 if c0 > 0 else np.full_like(r, np.nan)
    return _layout("eigenfunction", (r, result.phi.values, np.full_like(r, c0), upper))


def trace_columns(trace: FunctionalTrace) -> Columns:
    return _layout("functionals", tuple(trace.as_columns().values()))


def snapshot_columns(bundle: SnapshotBundle, index: int) -> Columns:
    return _layout("snapshot", (bundle.r, bundle.u[index], bundle.v[index]))
