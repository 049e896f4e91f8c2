# -*- coding: utf-8 -*-
"""修正 Bessel 函数 K_ν、时间因子 ρ(t)、椭圆特征函数 φ_λ、检验函数
ψ = ρ φ_λ1 以及它们渐近界的数值验证。
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, optimize, special

from .errors import DomainError, SolverError
from .fitting import FitResult, fit_power_law
from .geometry import GridFunction, LaplaceBeltrami, RadialMetric, cone_radius, volume_weight

logger = logging.getLogger(__name__)

# K_ν(t) 与首项渐近式 sqrt(π/2t) e^{-t} 的相对偏差在此以内时视为进入衰减区
T_STAR_RTOL = 0.05

# 特征函数 ODE 的容差与起始半径
EIGEN_RTOL = 1e-12
EIGEN_ATOL = 1e-14
EIGEN_R_START = 1e-4

# K_ν 两个分支在切换点的相对差上限
BESSEL_SEAM_RTOL = 1e-9

# c0 的最小可接受值；低于此值不视为包络界成立
C0_FLOOR = 0.05

# c0 取最大可行值再乘以 (1 - C0_MARGIN)，保证严格不等式
C0_MARGIN = 1e-9

# L^m 拟合窗口起点：λ1 (t + R1) 至少为此值，锥边界层的指数修正才可以忽略
PSI_ONSET = 12.0


def bessel_switch_point(nu: float) -> float:
    return max(10.0, 2.0 * nu * nu)


@functools.lru_cache(maxsize=128)
def bessel_seam_gap(nu: float) -> float:
    """切换点处直接分支与缩放分支的相对差；每个 ν 只算一次，超过 BESSEL_SEAM_RTOL 时报错。"""
    t = bessel_switch_point(nu)
    direct = float(special.kv(nu, t))
    scaled = float(special.kve(nu, t)) * math.exp(-t)
    if direct == 0.0 and scaled == 0.0:
        # 两个分支都下溢，调用方应改用 log_bessel_k
        return 0.0
    gap = abs(direct - scaled) / max(abs(direct), abs(scaled))
    if not gap <= BESSEL_SEAM_RTOL:
        raise SolverError(f"K_ν 分支在切换点 t={t:g} 不一致 (nu={nu}, 相对差 {gap:.3g})")
    logger.debug("K_ν 切换点检查: nu=%g, t=%g, 相对差 %.3g", nu, t, gap)
    return gap


def bessel_k(nu, t):
    """K_ν(t)。小 t 直接计算，大 t 经指数缩放的 kve 计算，切换点 max(10, 2ν²)。"""
    nu = np.abs(np.asarray(nu, dtype=float))
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("bessel_k 要求 t > 0")
    for value in np.unique(nu):
        bessel_seam_gap(float(value))
    switch = np.maximum(10.0, 2.0 * nu * nu)
    small = special.kv(nu, t)
    large = special.kve(nu, t) * np.exp(-t)
    out = np.where(t < switch, small, large)
    return float(out) if out.ndim == 0 else out


def log_bessel_k(nu, t):
    """log K_ν(t)，大 t 时不下溢。"""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("log_bessel_k 要求 t > 0")
    out = np.log(special.kve(np.abs(nu), t)) - t
    return float(out) if np.ndim(out) == 0 else out


def bessel_asymptotic_ratio(nu: float, t):
    """K_ν(t) / (sqrt(π/2t) e^{-t})，t → ∞ 时趋于 1。"""
    t = np.asarray(t, dtype=float)
    return special.kve(abs(nu), t) * np.sqrt(2.0 * t / math.pi)


def _nu_from(mu1: float, mu2: float) -> float:
    delta = (mu1 - 1) ** 2 - 4 * mu2
    if delta < 0:
        raise DomainError(f"delta = {delta:g} < 0, ρ(t) 无定义")
    return math.sqrt(delta) / 2


def rho_factor(t, lambda1: float, mu1: float, mu2: float):
    """ρ(t) = (1+t)^{(μ1+1)/2} K_{√δ/2}(λ1 (1+t))。"""
    nu = _nu_from(mu1, mu2)
    if lambda1 <= 0:
        raise DomainError(f"lambda1 必须为正, 得到 {lambda1}")
    s = 1.0 + np.asarray(t, dtype=float)
    return s ** ((mu1 + 1) / 2) * bessel_k(nu, lambda1 * s)


def log_rho_factor(t, lambda1: float, mu1: float, mu2: float):
    nu = _nu_from(mu1, mu2)
    s = 1.0 + np.asarray(t, dtype=float)
    return (mu1 + 1) / 2 * np.log(s) + log_bessel_k(nu, lambda1 * s)


def t_star(lambda1: float, mu1: float, mu2: float, rtol: float = T_STAR_RTOL) -> float:
    """最小的 t >= 1，使 K_ν(λ1(1+t)) 与首项渐近式的相对偏差不超过 rtol。"""
    nu = _nu_from(mu1, mu2)

    def gap(t: float) -> float:
        return abs(float(bessel_asymptotic_ratio(nu, lambda1 * (1 + t))) - 1.0) - rtol

    if gap(1.0) <= 0:
        return 1.0
    hi = 2.0
    while gap(hi) > 0:
        hi *= 2.0
        if hi > 1e12:
            raise DomainError(f"T_* 搜索失败 (nu={nu}, lambda1={lambda1})")
    return float(optimize.brentq(gap, hi / 2 if hi > 2 else 1.0, hi, xtol=1e-10))


@dataclass(frozen=True)
class EigenfunctionResult:
    """Δ_g φ = λ² φ 的径向正解及双侧包络拟合结果。"""

    lam: float
    phi: GridFunction
    fitted_c0: float
    bound_holds: bool
    lower_margin: float = 0.0
    upper_margin: float = 0.0
    envelope: Optional[np.ndarray] = field(default=None, repr=False)
    solution: object = field(default=None, repr=False, compare=False)
    series_coeff: float = 0.0
    r_start: float = 0.0

    def phi_at(self, r):
        """任意 r 处取值；r 小于积分起点时用级数 1 + c r²。"""
        r = np.asarray(r, dtype=float)
        if self.solution is None:
            out = np.interp(r, self.phi.r, self.phi.values)
        else:
            inner = 1.0 + self.series_coeff * r * r
            outer = self.solution.sol(np.maximum(r, self.r_start))[0]
            out = np.where(r < self.r_start, inner, outer)
        return float(out) if out.ndim == 0 else out


def phi_envelope(metric: RadialMetric, lam: float, r) -> np.ndarray:
    """包络界去掉 c0 后的形状 <λr>^{-(n-1)/2} exp(λ r~(r))。"""
    r = np.asarray(r, dtype=float)
    return (1.0 + (lam * r) ** 2) ** (-(metric.n - 1) / 4) * np.exp(lam * metric.geodesic_radius_array(r))


def solve_eigenfunction(
    metric: RadialMetric,
    lam: float,
    r_max: float,
    dr: float = 0.01,
    c0_floor: float = C0_FLOOR,
) -> EigenfunctionResult:
    """从 φ(0)=1, φ'(0)=0 向外积分 (r^{n-1} K^{-1} φ')' = λ² K r^{n-1} φ。

    状态取 (φ, χ)，χ = r^{n-1} K^{-1} φ' 为通量；起点处用级数 φ ≈ 1 + λ²K(0)² r²/(2n)。
    """
    if lam <= 0:
        raise DomainError(f"lambda 必须为正, 得到 {lam}")
    if not math.isfinite(r_max) or r_max <= 0:
        raise DomainError(f"r_max 必须为有限正数, 得到 {r_max}")
    n = metric.n
    k0 = float(metric.K(0.0))
    coeff = lam * lam * k0 * k0 / (2 * n)
    r0 = min(EIGEN_R_START, dr / 10)

    def rhs(r, y):
        k = float(metric.K(r))
        rn1 = r ** (n - 1)
        return [k * y[1] / rn1, lam * lam * k * rn1 * y[0]]

    phi0 = 1.0 + coeff * r0 * r0
    chi0 = r0 ** (n - 1) / k0 * 2.0 * coeff * r0
    grid = GridFunction.sample(lambda r: np.zeros_like(r), r_max, dr)
    r = grid.r
    sol = integrate.solve_ivp(
        rhs,
        (r0, r[-1]),
        [phi0, chi0],
        method="DOP853",
        t_eval=r[1:],
        dense_output=True,
        rtol=EIGEN_RTOL,
        atol=EIGEN_ATOL,
    )
    if not sol.success:
        raise SolverError(f"特征函数积分失败: {sol.message}")
    values = np.concatenate([[1.0], sol.y[0]])
    if np.any(values <= 0) or not np.all(np.isfinite(values)):
        raise SolverError(f"φ_λ 出现非正或非有限值 (lambda={lam}), 检查度量或步长设置")
    phi = grid.with_values(values)

    envelope = phi_envelope(metric, lam, r)
    c_star = min(float(values.min()), float(np.min(envelope / values)), 1.0)
    c0 = c_star * (1.0 - C0_MARGIN)
    lower_margin = float(values.min() - c0)
    upper_margin = float(np.min(envelope / c0 - values) / values.max())
    holds = bool(c0 >= c0_floor and lower_margin > 0 and upper_margin > 0)
    logger.debug("φ_λ: lambda=%g c0=%.6g holds=%s", lam, c0, holds)
    return EigenfunctionResult(
        lam=lam,
        phi=phi,
        fitted_c0=c0,
        bound_holds=holds,
        lower_margin=lower_margin,
        upper_margin=upper_margin,
        envelope=envelope,
        solution=sol,
        series_coeff=coeff,
        r_start=r0,
    )


@dataclass(frozen=True)
class CertifiedFamily:
    lambda0: float
    c0: float
    results: List[EigenfunctionResult] = field(repr=False)


def certify_lambda_family(
    metric: RadialMetric,
    lambdas: Iterable[float],
    r_max: float,
    dr: float = 0.01,
    c0_floor: float = C0_FLOOR,
) -> CertifiedFamily:
    """在 λ 网格上用同一个 c0 认证包络界；λ0 取连续认证成功的最大 λ。"""
    results: List[EigenfunctionResult] = []
    lambda0, c0 = 0.0, 1.0
    for lam in sorted(lambdas):
        res = solve_eigenfunction(metric, lam, r_max, dr, c0_floor)
        results.append(res)
        if not res.bound_holds or min(c0, res.fitted_c0) < c0_floor:
            break
        lambda0, c0 = lam, min(c0, res.fitted_c0)
    if lambda0 == 0.0:
        c0 = 0.0
    logger.info("λ 族认证: lambda0=%g, 共同 c0=%.6g", lambda0, c0)
    return CertifiedFamily(lambda0=lambda0, c0=c0, results=results)


@dataclass(frozen=True)
class TestFunction:
    """ψ(t, r) = ρ(t) φ_λ1(r)，对偶方程的正解。"""

    __test__ = False

    lambda1: float
    mu1: float
    mu2: float
    eigen: EigenfunctionResult = field(repr=False)
    T_star: float = 1.0

    def rho(self, t):
        return rho_factor(t, self.lambda1, self.mu1, self.mu2)

    def log_rho(self, t):
        return log_rho_factor(t, self.lambda1, self.mu1, self.mu2)

    def psi(self, t, r):
        return self.rho(t) * self.eigen.phi_at(r)

    @property
    def r_max(self) -> float:
        return self.eigen.phi.r_max


def make_test_function(
    metric: RadialMetric,
    lambda1: float,
    mu1: float,
    mu2: float,
    r_max: float,
    dr: float = 0.01,
) -> TestFunction:
    eigen = solve_eigenfunction(metric, lambda1, r_max, dr)
    return TestFunction(lambda1, mu1, mu2, eigen, t_star(lambda1, mu1, mu2))


def psi_lm_integral(
    tf: TestFunction,
    metric: RadialMetric,
    m: float,
    t: float,
    R1: float,
    dr: float = 0.01,
) -> float:
    """∫_{r~ <= t+R1} ψ(t, r)^m dv_g，锥截面上的梯形求积。"""
    if m <= 1:
        raise DomainError(f"m 必须 > 1, 得到 {m}")
    if t < 0:
        raise DomainError(f"t 必须 >= 0, 得到 {t}")
    r_star = cone_radius(metric, t, R1)
    if r_star > tf.r_max * (1 + 1e-12):
        raise DomainError(f"锥半径 {r_star:g} 超出特征函数网格 r_max={tf.r_max:g}")
    if r_star == 0:
        return 0.0
    count = max(200, int(math.ceil(r_star / dr)) + 1)
    r = np.linspace(0.0, min(r_star, tf.r_max), count)
    log_psi = tf.log_rho(t) + np.log(tf.eigen.phi_at(r))
    integrand = np.exp(m * log_psi) * volume_weight(metric, r)
    return float(integrate.trapezoid(integrand, r))


def psi_fit_window(tf: TestFunction, R1: float, onset: float = PSI_ONSET) -> Tuple[float, float]:
    """L^m 增长指数拟合窗口 [T, 4T]，T = max(T_*, 使 λ1(t+R1) = onset 的 t)。"""
    t_on = onset / tf.lambda1 - R1
    start = max(tf.T_star, t_on)
    return start, 4.0 * start


def lm_exponent(n: int, mu1: float, m: float) -> float:
    """引理中的增长指数 n - 1 - (n - 1 - μ1) m / 2。"""
    return n - 1 - (n - 1 - mu1) * m / 2


@dataclass(frozen=True)
class PsiDecayTable:
    times: np.ndarray
    values: np.ndarray
    fit: FitResult
    predicted: float
    window: Tuple[float, float]


def psi_decay(
    tf: TestFunction,
    metric: RadialMetric,
    m: float,
    R1: float,
    samples: int = 16,
    window: Optional[Tuple[float, float]] = None,
    dr: float = 0.01,
) -> PsiDecayTable:
    """窗口内对数等距采样 t，拟合 log ∫ψ^m 对 log(1+t) 的斜率。"""
    t_lo, t_hi = window or psi_fit_window(tf, R1)
    times = np.geomspace(t_lo, t_hi, samples)
    values = np.array([psi_lm_integral(tf, metric, m, t, R1, dr) for t in times])
    fit = fit_power_law(list(zip(1.0 + times, values)))
    predicted = lm_exponent(metric.n, tf.mu1, m)
    logger.info("ψ^%g 增长指数: 拟合 %.4f, 引理 %.4f", m, fit.slope, predicted)
    return PsiDecayTable(times, values, fit, predicted, (t_lo, t_hi))


def dual_residual(
    tf: TestFunction,
    metric: RadialMetric,
    dr: float,
    dt: float,
    t: float,
    R1: float,
    psi_shift: float = 0.0,
) -> float:
    """离散对偶算子 ∂_t²ψ - Δ_gψ - ∂_t(μ1 ψ/(1+t)) + μ2 ψ/(1+t)² 在锥截面上的最大范数。

    时间用中心差分，空间用 LaplaceBeltrami；psi_shift 给 ψ 加常数（检验用）。
    """
    if t - dt < 0:
        raise DomainError(f"需要 t >= dt, 得到 t={t}, dt={dt}")
    r_star = cone_radius(metric, t, R1)
    j_cone = int(math.floor(r_star / dr + 1e-9))
    J = j_cone + 3
    r = np.arange(J + 1) * dr
    if r[-1] > tf.r_max:
        raise DomainError(f"网格 r={r[-1]:g} 超出特征函数范围 r_max={tf.r_max:g}")
    phi = tf.eigen.phi_at(r)
    mu1, mu2 = tf.mu1, tf.mu2

    def psi(s: float) -> np.ndarray:
        return tf.rho(s) * phi + psi_shift

    pm, p0, pp = psi(t - dt), psi(t), psi(t + dt)
    psi_tt = (pp - 2.0 * p0 + pm) / (dt * dt)
    damp_t = (mu1 * pp / (1 + t + dt) - mu1 * pm / (1 + t - dt)) / (2 * dt)
    lap = LaplaceBeltrami(metric, dr, J).apply(p0)
    res = psi_tt - lap - damp_t + mu2 / (1 + t) ** 2 * p0
    return float(np.max(np.abs(res[: j_cone + 1])))
