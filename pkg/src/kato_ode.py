# -*- coding: utf-8 -*-
"""Kato 型爆破引理的可执行版本：积分极值 ODE、检测有限时间爆破、
在 δ 上做寿命标度扫描。

极值方程 F'' = k(1+t)^{-α} F^β + δ a(a-1)(1+t)^{a-2}，初值 F(0)=δ、F'(0)=δa：
F - δ(1+t)^a 的二阶导非负且初值为 0，所以两个引理前提沿轨道都成立；
a = 1 时附加项为 0，即饱和后的不等式本身。
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy import integrate, optimize

from .errors import DomainError, FitError
from .exponents import ProblemParams, derive
from .fitting import FitResult, fit_power_law

logger = logging.getLogger(__name__)

# F 超过此值即判定爆破
F_BLOWUP = 1e12

# 外推所用的最后增长区间：F ∈ [F_BLOWUP / 10^EXTRAP_DECADES, F_BLOWUP]
EXTRAP_DECADES = 1.0
EXTRAP_SAMPLES = 64

DEFAULT_RTOL = 1e-10

# 重参数化时间 τ 的积分上限；实际由事件终止
TAU_SPAN = 1e15


@dataclass(frozen=True)
class KatoParams:
    beta: float
    a: float
    kato_alpha: float
    k: float = 1.0
    delta_small: float = 1.0
    F0: Optional[float] = None
    F0p: Optional[float] = None

    def __post_init__(self) -> None:
        if self.k < 0:
            raise DomainError(f"k 必须非负, 得到 {self.k}")
        if self.delta_small <= 0:
            raise DomainError(f"delta 必须为正, 得到 {self.delta_small}")
        if self.F0 is None:
            object.__setattr__(self, "F0", self.delta_small)
        if self.F0p is None:
            object.__setattr__(self, "F0p", self.delta_small * self.a)

    def hypothesis_issues(self) -> List[str]:
        issues = []
        if not self.beta > 1:
            issues.append(f"beta={self.beta} 不满足 beta > 1")
        if not self.a >= 1:
            issues.append(f"a={self.a} 不满足 a >= 1")
        if not (self.beta - 1) * self.a > self.kato_alpha - 2:
            issues.append(
                f"(beta-1)a={(self.beta - 1) * self.a:g} 不满足 > alpha-2={self.kato_alpha - 2:g}"
            )
        if self.F0 < self.delta_small:
            issues.append(f"F0={self.F0} < delta={self.delta_small}")
        return issues

    def hypotheses_hold(self) -> bool:
        return not self.hypothesis_issues()

    def with_delta(self, delta: float) -> "KatoParams":
        """按扫描约定重设 F(0)=δ, F'(0)=δa。"""
        return replace(self, delta_small=delta, F0=delta, F0p=delta * self.a)


@dataclass(frozen=True)
class BlowupReport:
    blew_up: bool
    T_num: Optional[float]
    t_end: float
    F_end: float
    precision_flag: bool = False
    steps: int = 0
    flags: tuple = ()


def predicted_bound_exponent(params: KatoParams) -> float:
    """T <= c δ^{-γ} 中的 γ = (β-1)/((β-1)a - α + 2)。"""
    issues = params.hypothesis_issues()
    if issues:
        raise DomainError("Kato 引理前提不满足: " + "; ".join(issues))
    b1 = params.beta - 1
    return b1 / (b1 * params.a - params.kato_alpha + 2)


def _extrapolate_blowup_time(sol, tau_end: float, beta: float, f_max: float) -> Optional[float]:
    """在最后一个增长量级上拟合 F^{-(β-1)/2} 对 t 的直线，取零点为 T。

    爆破点附近主导平衡给出 F ~ A (T - t)^{-2/(β-1)}。
    """
    f_lo = f_max / 10.0 ** EXTRAP_DECADES

    def gap(tau: float) -> float:
        return float(sol.sol(tau)[1]) - f_lo

    tau_grid = sol.t
    below = tau_grid[sol.y[1] < f_lo]
    if below.size == 0:
        return None
    tau_a = float(below[-1])
    if gap(tau_a) < 0 < gap(tau_end):
        tau_a = optimize.brentq(gap, tau_a, tau_end, xtol=1e-14)
    taus = np.linspace(tau_a, tau_end, EXTRAP_SAMPLES)
    states = sol.sol(taus)
    t, F = states[0], states[1]
    z = F ** (-(beta - 1) / 2)
    slope, intercept = np.polyfit(t, z, 1)
    if slope >= 0:
        return None
    return float(-intercept / slope)


def integrate_blowup(
    params: KatoParams,
    t_cap: float,
    rtol: float = DEFAULT_RTOL,
    f_max: float = F_BLOWUP,
    envelope_forcing: bool = True,
) -> BlowupReport:
    """积分极值 ODE 直到 F > f_max 或 t >= t_cap。

    以 τ 为自变量，dt/dτ = (1 + F)^{-(β-1)/2}：等距 τ 步对应 dt ∝ F^{-(β-1)/2}，
    爆破时间 T 对应 τ → ∞，积分在 τ 中保持光滑。
    """
    if params.F0 <= 0 or params.F0p < 0:
        raise DomainError(f"需要 F(0) > 0, F'(0) >= 0, 得到 {params.F0}, {params.F0p}")
    issues = params.hypothesis_issues()
    if issues:
        logger.warning("Kato 前提不满足，结果仅作观察: %s", "; ".join(issues))
    beta, k, alpha_k, a, delta = params.beta, params.k, params.kato_alpha, params.a, params.delta_small
    shrink = (beta - 1) / 2
    forcing = envelope_forcing and a != 1

    def rhs(tau, y):
        t, F, G = y
        w = (1.0 + abs(F)) ** (-shrink)
        s = 1.0 + t
        acc = k * s ** (-alpha_k) * max(F, 0.0) ** beta
        if forcing:
            acc += delta * a * (a - 1) * s ** (a - 2)
        return [w, w * G, w * acc]

    def hit_fmax(tau, y):
        return y[1] - f_max

    def hit_cap(tau, y):
        return y[0] - t_cap

    hit_fmax.terminal = True
    hit_fmax.direction = 1
    hit_cap.terminal = True
    hit_cap.direction = 1

    sol = integrate.solve_ivp(
        rhs,
        (0.0, TAU_SPAN),
        [0.0, params.F0, params.F0p],
        method="DOP853",
        rtol=rtol,
        atol=rtol * 1e-3 * params.F0,
        events=(hit_fmax, hit_cap),
        dense_output=True,
    )
    t_end, F_end = float(sol.y[0, -1]), float(sol.y[1, -1])
    steps = int(sol.t.size)

    if sol.status == -1:
        # 步长下溢：按爆破处理，T 取当前时间并标记精度
        logger.warning("步长下溢于 t=%.6g (F=%.3g): %s", t_end, F_end, sol.message)
        return BlowupReport(True, t_end, t_end, F_end, precision_flag=True, steps=steps, flags=("step-underflow",))

    if sol.t_events[0].size:
        tau_end = float(sol.t_events[0][0])
        T = _extrapolate_blowup_time(sol, tau_end, beta, f_max)
        flags: tuple = ()
        if T is None or T < t_end:
            T, flags = t_end, ("extrapolation-failed",)
        logger.debug("爆破: T=%.10g (穿越 %.10g), steps=%d", T, t_end, steps)
        return BlowupReport(True, T, t_end, F_end, steps=steps, flags=flags)

    reason = "t-cap" if sol.t_events[1].size else "tau-span"
    return BlowupReport(False, None, t_end, F_end, steps=steps, flags=(reason,))


@dataclass(frozen=True)
class KatoSweepPoint:
    delta: float
    T_num: Optional[float]
    flags: tuple = ()


@dataclass(frozen=True)
class KatoSweep:
    points: List[KatoSweepPoint]
    fit: FitResult
    raw_fit: FitResult
    predicted: float

    @property
    def slope(self) -> float:
        return self.fit.slope


def scaling_sweep(
    params: KatoParams,
    delta_list: Sequence[float],
    t_cap: float = 1e6,
    rtol: float = DEFAULT_RTOL,
    map_fn: Callable = map,
) -> KatoSweep:
    """对每个 δ 积分并拟合 log(1+T) 对 log(1/δ) 的斜率；同时给出 log T 的原始斜率。"""
    deltas = sorted(float(d) for d in delta_list)
    if len(deltas) < 3:
        raise FitError(f"标度拟合至少需要 3 个 δ, 得到 {len(deltas)}")
    if len(set(deltas)) != len(deltas):
        raise FitError("δ 列表存在重复值")
    predicted = predicted_bound_exponent(params)
    jobs = [params.with_delta(d) for d in deltas]
    reports = list(map_fn(_sweep_job, jobs, [t_cap] * len(jobs), [rtol] * len(jobs)))

    points: List[KatoSweepPoint] = []
    for d, rep in sorted(zip(deltas, reports), key=lambda item: item[0]):
        flags = rep.flags
        if not rep.blew_up:
            flags = flags + ("excluded: no blow-up",)
            logger.warning("δ=%g 在 t_cap 前未爆破, 已排除", d)
        points.append(KatoSweepPoint(d, rep.T_num if rep.blew_up else None, flags))

    usable = [p for p in points if p.T_num is not None]
    if len(usable) < 3:
        raise FitError(f"可用于拟合的点不足 3 个 (剩余 {len(usable)})")
    fit = fit_power_law((1.0 / p.delta, 1.0 + p.T_num) for p in usable)
    raw_fit = fit_power_law((1.0 / p.delta, p.T_num) for p in usable)
    logger.info("Kato 扫描: 斜率 %.4f (原始 %.4f), 预测 %.4f", fit.slope, raw_fit.slope, predicted)
    return KatoSweep(points=points, fit=fit, raw_fit=raw_fit, predicted=predicted)


def _sweep_job(params: KatoParams, t_cap: float, rtol: float) -> BlowupReport:
    return integrate_blowup(params, t_cap, rtol)


def kato_reduction(params: ProblemParams, k: float = 1.0, delta_small: float = 1.0) -> KatoParams:
    """把 L 满足的二阶微分不等式映射为 Kato 参数。

    δ >= 1: β=q, a=(1+√δ)/2, α=(n+μ1/2)(q-1)；δ < 1: β=q, a=1, α=(n+α+1)(q-1)。
    两个分支的 predicted_bound_exponent 都等于 (q-1)/(2-(q-1)(n+α))。
    """
    if params.q is None:
        raise DomainError("kato_reduction 需要 q (c2 > 0)")
    derived = derive(params)
    q = params.q
    if derived.delta >= 1:
        a = (1 + derived.sqrt_delta) / 2
        alpha_k = (params.n + params.mu1 / 2) * (q - 1)
    else:
        a = 1.0
        alpha_k = (params.n + derived.alpha + 1) * (q - 1)
    return KatoParams(beta=q, a=a, kato_alpha=alpha_k, k=k, delta_small=delta_small)
