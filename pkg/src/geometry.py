# -*- coding: utf-8 -*-
"""径向渐近欧氏度量 g1 = K(r)^2 dr^2 + r^2 dω^2：剖面、测地半径、体积元、
Laplace–Beltrami 算子的有限体积离散与传播锥。

短程扰动 g2 取为 0（求解器是径向的）。
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import integrate, optimize, special

from .errors import DomainError, GridSizeError

logger = logging.getLogger(__name__)

# 检查多项式衰减界与椭圆常数时使用的工作区间
CHECK_R_MAX = 1.0e3
CHECK_SAMPLES = 20001

# 未给出 delta0 时，在工作区间上取 min(min K, 1/max K) 再乘以此因子
DELTA0_SAFETY = 0.99


class OuterBoundary(str, Enum):
    EXTRAPOLATE = "extrapolate"
    DIRICHLET = "dirichlet"


class ProfileKind(str, Enum):
    FLAT = "flat"
    LONG_RANGE = "long_range"
    TABULATED = "tabulated"


@dataclass(frozen=True, eq=False)
class RadialMetric:
    """径向度量剖面 K(r) 及其导数。构造后不可变，可在并发扫描中共享。"""

    n: int
    profile: ProfileKind = ProfileKind.FLAT
    kappa: float = 0.0
    decay_rho: float = 1.0
    delta0: Optional[float] = None
    table: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = field(
        default=None, repr=False
    )

    def __post_init__(self) -> None:
        if self.n < 2:
            raise DomainError(f"维数 n 必须 >= 2, 得到 {self.n}")
        if self.profile == ProfileKind.LONG_RANGE and self.decay_rho <= 0:
            raise DomainError(f"decay_rho 必须为正, 得到 {self.decay_rho}")
        if self.profile == ProfileKind.TABULATED:
            if self.table is None:
                raise DomainError("tabulated 剖面需要 (r, K, K', K'') 表")
            r = self.table[0]
            if r[0] != 0.0 or np.any(np.diff(r) <= 0):
                raise DomainError("tabulated 剖面的 r 必须从 0 开始严格递增")
        k_min, k_max = self._k_range()
        if k_min <= 0:
            raise DomainError(f"K 必须为正, 工作区间上 min K = {k_min:g}")
        if self.delta0 is None:
            object.__setattr__(self, "delta0", DELTA0_SAFETY * min(k_min, 1.0 / k_max))
        elif not (0 < self.delta0 < 1):
            raise DomainError(f"delta0 必须在 (0, 1) 内, 得到 {self.delta0}")
        elif not (self.delta0 < k_min and k_max < 1.0 / self.delta0):
            raise DomainError(
                f"K 超出 (delta0, 1/delta0): K ∈ [{k_min:g}, {k_max:g}], delta0={self.delta0:g}"
            )

    # ---- 构造 ----
    @classmethod
    def flat(cls, n: int, delta0: Optional[float] = None) -> "RadialMetric":
        return cls(n=n, profile=ProfileKind.FLAT, delta0=delta0)

    @classmethod
    def long_range(
        cls, n: int, kappa: float, decay_rho: float, delta0: Optional[float] = None
    ) -> "RadialMetric":
        return cls(n=n, profile=ProfileKind.LONG_RANGE, kappa=kappa, decay_rho=decay_rho, delta0=delta0)

    @classmethod
    def tabulated(
        cls,
        n: int,
        r: np.ndarray,
        k: np.ndarray,
        dk: np.ndarray,
        d2k: np.ndarray,
        decay_rho: float = 1.0,
        delta0: Optional[float] = None,
    ) -> "RadialMetric":
        arrays = tuple(np.asarray(a, dtype=float) for a in (r, k, dk, d2k))
        if len({a.shape for a in arrays}) != 1:
            raise DomainError("tabulated 剖面的 r, K, K', K'' 长度必须一致")
        return cls(n=n, profile=ProfileKind.TABULATED, decay_rho=decay_rho, delta0=delta0, table=arrays)

    # ---- 剖面 ----
    def K(self, r):
        r = np.asarray(r, dtype=float)
        if self.profile == ProfileKind.FLAT:
            return np.ones_like(r)
        if self.profile == ProfileKind.LONG_RANGE:
            return 1.0 + self.kappa * (1.0 + r * r) ** (-self.decay_rho / 2)
        return np.interp(r, self.table[0], self.table[1])

    def dK(self, r):
        r = np.asarray(r, dtype=float)
        if self.profile == ProfileKind.FLAT:
            return np.zeros_like(r)
        if self.profile == ProfileKind.LONG_RANGE:
            rho = self.decay_rho
            return -self.kappa * rho * r * (1.0 + r * r) ** (-rho / 2 - 1)
        return np.interp(r, self.table[0], self.table[2], right=0.0)

    def d2K(self, r):
        r = np.asarray(r, dtype=float)
        if self.profile == ProfileKind.FLAT:
            return np.zeros_like(r)
        if self.profile == ProfileKind.LONG_RANGE:
            rho = self.decay_rho
            s = 1.0 + r * r
            return -self.kappa * rho * (s ** (-rho / 2 - 1) - (rho + 2) * r * r * s ** (-rho / 2 - 2))
        return np.interp(r, self.table[0], self.table[3], right=0.0)

    def _k_range(self) -> Tuple[float, float]:
        k = self.K(np.linspace(0.0, CHECK_R_MAX, CHECK_SAMPLES))
        if self.profile == ProfileKind.TABULATED:
            k = np.concatenate([k, self.table[1]])
        return float(k.min()), float(k.max())

    def geodesic_radius_array(self, r) -> np.ndarray:
        """向量化的测地半径 r~(r) = ∫_0^r K dτ（闭式或表上累积积分）。"""
        r = np.asarray(r, dtype=float)
        if self.profile == ProfileKind.FLAT:
            return r.copy()
        if self.profile == ProfileKind.LONG_RANGE:
            rho = self.decay_rho
            if rho == 1.0:
                tail = np.arcsinh(r)
            elif rho == 2.0:
                tail = np.arctan(r)
            else:
                tail = r * special.hyp2f1(0.5, rho / 2, 1.5, -r * r)
            return r + self.kappa * tail
        tr, tk = self.table[0], self.table[1]
        cum = integrate.cumulative_trapezoid(tk, tr, initial=0.0)
        # 表外按最后一个 K 值线性延伸
        inside = np.interp(r, tr, cum)
        beyond = np.clip(r - tr[-1], 0.0, None) * tk[-1]
        return inside + beyond


@dataclass(frozen=True)
class GridFunction:
    """均匀径向网格 r_j = j*dr (j = 0..J) 上的采样函数。"""

    r_max: float
    dr: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.dr <= 0:
            raise GridSizeError(f"dr 必须为正, 得到 {self.dr}")
        j = int(round(self.r_max / self.dr))
        if not math.isclose(j * self.dr, self.r_max, rel_tol=1e-9, abs_tol=1e-12):
            raise GridSizeError(f"r_max={self.r_max} 不是 dr={self.dr} 的整数倍")
        values = np.asarray(self.values, dtype=float)
        if values.shape != (j + 1,):
            raise GridSizeError(f"样本数 {values.shape} 与 J+1={j + 1} 不一致")
        object.__setattr__(self, "values", values)

    @classmethod
    def sample(cls, func, r_max: float, dr: float) -> "GridFunction":
        j = int(round(r_max / dr))
        r = np.arange(j + 1) * dr
        return cls(r_max=j * dr, dr=dr, values=np.asarray(func(r), dtype=float) * np.ones_like(r))

    @property
    def J(self) -> int:
        return self.values.size - 1

    @property
    def r(self) -> np.ndarray:
        return np.arange(self.values.size) * self.dr

    def with_values(self, values: np.ndarray) -> "GridFunction":
        return GridFunction(self.r_max, self.dr, values)

    def integrate(self, metric: RadialMetric) -> float:
        """梯形公式乘体积权重，即 ∫ f dv_g。"""
        return float(np.dot(quadrature_weights(metric, self.r, self.dr), self.values))


def sphere_area(n: int) -> float:
    """S^{n-1} 的面积 ω_{n-1} = 2 π^{n/2} / Γ(n/2)。"""
    return 2.0 * math.pi ** (n / 2) / special.gamma(n / 2)


def volume_weight(metric: RadialMetric, r):
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError("volume_weight 要求 r >= 0")
    w = sphere_area(metric.n) * metric.K(r) * r ** (metric.n - 1)
    return float(w) if w.ndim == 0 else w


def quadrature_weights(metric: RadialMetric, r: np.ndarray, dr: float) -> np.ndarray:
    """梯形权重 × 体积密度；端点权重减半。"""
    w = volume_weight(metric, r) * dr
    w = np.array(w, dtype=float, copy=True)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def geodesic_radius(metric: RadialMetric, r: float) -> float:
    """r~(r) = ∫_0^r K(τ) dτ，自适应求积。"""
    if r < 0:
        raise DomainError(f"geodesic_radius 要求 r >= 0, 得到 {r}")
    if r == 0:
        return 0.0
    if metric.profile == ProfileKind.FLAT:
        return float(r)
    points = None
    if metric.profile == ProfileKind.TABULATED:
        tr = metric.table[0]
        points = tr[(tr > 0) & (tr < r)][:: max(1, tr.size // 50)]
    val, _ = integrate.quad(lambda x: float(metric.K(x)), 0.0, r, epsabs=1e-13, epsrel=1e-12, limit=200, points=points)
    return float(val)


def cone_radius(metric: RadialMetric, t: float, R1: float) -> float:
    """求 r*，使 r~(r*) = t + R1；解支集落在 {r <= r*} 内 (有限传播速度)。"""
    target = t + R1
    if target <= 0:
        return 0.0
    if metric.profile == ProfileKind.FLAT:
        return float(target)
    lo, hi = metric.delta0 * target, target / metric.delta0

    def gap(x: float) -> float:
        return float(metric.geodesic_radius_array(x)) - target

    return float(optimize.brentq(gap, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps))


def tightest_r1(metric: RadialMetric, R0: float) -> float:
    """R1 = ∫_0^{R0} K dτ（最紧的锥；更大的 R1 同样可行）。"""
    return geodesic_radius(metric, R0)


class LaplaceBeltrami:
    """Δ_g φ = (K r^{n-1})^{-1} ∂_r( r^{n-1} K^{-1} ∂_r φ ) 的守恒型二阶离散。

    单元 j 的体积密度 w_j 取 [r_{j-1/2}, r_{j+1/2}] 上 r^{n-1} 的精确积分
    乘 K(r_j)，通量系数 a_{j+1/2} = r_{j+1/2}^{n-1} / K(r_{j+1/2})。
    r = 0 处单元为 [0, dr/2]，对平坦度量恰为对称极限 n φ''(0)/K(0)^2；
    K'(0) != 0 时 a_{1/2} 中的 K(dr/2) 提供 O(dr) 修正。

    外端两种处理：EXTRAPOLATE 用二次外推的幽灵点，常数与 r^2 均被精确处理，
    只适合一次性求值（该行对角元为正，不能用于时间推进）；DIRICHLET 取
    幽灵点为 0，矩阵在 w 加权内积下对称负定，求解器使用这一种。
    """

    def __init__(
        self,
        metric: RadialMetric,
        dr: float,
        J: int,
        outer: OuterBoundary = OuterBoundary.EXTRAPOLATE,
    ):
        if J < 2:
            raise GridSizeError(f"Laplace–Beltrami 至少需要 3 个样本, 得到 {J + 1}")
        n = metric.n
        self.metric = metric
        self.dr = dr
        self.J = J
        self.outer = OuterBoundary(outer)
        r = np.arange(J + 1) * dr
        r_half = (np.arange(J + 1) + 0.5) * dr
        self.a_half = r_half ** (n - 1) / metric.K(r_half)
        upper = r_half ** n
        lower = np.concatenate([[0.0], upper[:-1]])
        self.w = metric.K(r) * (upper - lower) / (n * dr)
        self._inv = 1.0 / (dr * dr * self.w)

    def apply(self, u: np.ndarray, m: Optional[int] = None, out: Optional[np.ndarray] = None) -> np.ndarray:
        """作用于 u[0:m+1]（默认整个网格）；返回同长度数组。

        DIRICHLET 下 m 处截断等价于 u[m+1:] ≡ 0。
        """
        m = self.J if m is None else min(m, self.J)
        u = u[: m + 1]
        if out is None:
            out = np.empty(m + 1)
        flux = np.empty(m + 1)
        flux[:-1] = self.a_half[:m] * (u[1:] - u[:-1])
        if self.outer == OuterBoundary.DIRICHLET:
            ghost = 0.0
        else:
            ghost = 3.0 * u[m] - 3.0 * u[m - 1] + u[m - 2]
        flux[-1] = self.a_half[m] * (ghost - u[m])
        out[0] = flux[0]
        out[1:] = flux[1:] - flux[:-1]
        out *= self._inv[: m + 1]
        return out

    def spectral_bound(self) -> float:
        """-Δ_g 离散矩阵的 Gershgorin 上界（外推模式下不含外端行）。"""
        left = np.concatenate([[0.0], self.a_half[:-1]])
        rows = 2.0 * (left + self.a_half) * self._inv
        if self.outer == OuterBoundary.DIRICHLET:
            return float(np.max(rows))
        return float(np.max(rows[:-1]))


def laplace_beltrami(metric: RadialMetric, phi: GridFunction) -> GridFunction:
    if phi.values.size < 3:
        raise GridSizeError(f"Laplace–Beltrami 至少需要 3 个样本, 得到 {phi.values.size}")
    op = LaplaceBeltrami(metric, phi.dr, phi.J)
    return phi.with_values(op.apply(phi.values))


def decay_fit(metric: RadialMetric, r_max: float = CHECK_R_MAX, samples: int = CHECK_SAMPLES) -> Dict[str, float]:
    """多项式衰减界的拟合常数 C_m = max |∂^m (K-1)| <r>^{m+ρ}，m = 0, 1, 2。"""
    r = np.linspace(0.0, r_max, samples)
    bracket = np.sqrt(1.0 + r * r)
    rho = metric.decay_rho
    derivs = (metric.K(r) - 1.0, metric.dK(r), metric.d2K(r))
    report = {f"C{m}": float(np.max(np.abs(d) * bracket ** (m + rho))) for m, d in enumerate(derivs)}
    k = metric.K(r)
    report.update(
        delta0=float(metric.delta0),
        K_min=float(k.min()),
        K_max=float(k.max()),
        decay_rho=float(rho),
        r_max=float(r_max),
    )
    logger.debug("衰减常数拟合: %s", report)
    return report
