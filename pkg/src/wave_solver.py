# -*- coding: utf-8 -*-
"""径向有限体积求解器：带时间依赖阻尼与势的半线性波动方程

    u_tt - Δ_g u + μ1/(1+t) u_t + μ2/(1+t)^2 u = c1 |u_t|^p + c2 |u|^q,

小初值爆破检测、寿命测量与 ε 扫描。
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, FitError
from .exponents import LifespanPrediction, ProblemParams, classify, derive, sign_condition
from .fitting import FitResult, fit_power_law
from .geometry import (
    LaplaceBeltrami,
    OuterBoundary,
    RadialMetric,
    cone_radius,
    quadrature_weights,
    sphere_area,
    tightest_r1,
)
from .records import SnapshotBundle, SweepRecord

logger = logging.getLogger(__name__)

DT_POLICY = "cfl-nonlinear-timescale"

# Verlet 型格式的线性稳定上限为 2/sqrt(λ_max)，再乘此安全因子
STABILITY_SAFETY = 0.9

# 积分初值矩与符号条件时使用的细网格
MOMENT_DR = 1e-3

SLOW_BLOWUP_FLAG = "slow blow-up / under-resolved"


class BumpShape(str, Enum):
    EXP = "exp"
    POLY = "poly"


def bump(r, R0: float, shape: BumpShape = BumpShape.EXP) -> np.ndarray:
    """峰值为 1、支集 [0, R0] 的光滑鼓包。

    exp: exp(1 - 1/(1 - x^2))，C^∞；poly: (1 - x^2)^4，C^3。
    """
    x = np.asarray(r, dtype=float) / R0
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    s = 1.0 - x[inside] ** 2
    if BumpShape(shape) == BumpShape.EXP:
        out[inside] = np.exp(1.0 - 1.0 / s)
    else:
        out[inside] = s ** 4
    return out


@dataclass(frozen=True)
class InitialData:
    """u(0) = ε a0 bump0, u_t(0) = ε a1 bump1，支集在 {r <= R0}。"""

    epsilon: float
    R0: float = 1.0
    u0_shape: BumpShape = BumpShape.EXP
    u1_shape: BumpShape = BumpShape.EXP
    u0_amp: float = 1.0
    u1_amp: float = 1.0
    R1: Optional[float] = None
    # 负振幅只允许用于假设之外的探针
    allow_out_of_hypothesis: bool = False

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise DomainError(f"epsilon 必须为正, 得到 {self.epsilon}")
        if not self.R0 > 0:
            raise DomainError(f"R0 必须为正, 得到 {self.R0}")
        if self.u0_amp == 0 and self.u1_amp == 0:
            raise DomainError("u0 与 u1 不能同时为零")
        if not self.allow_out_of_hypothesis and (self.u0_amp < 0 or self.u1_amp < 0):
            raise DomainError(
                f"初值须非负 (u0_amp={self.u0_amp}, u1_amp={self.u1_amp})；探针运行请设 allow_out_of_hypothesis"
            )
        object.__setattr__(self, "u0_shape", BumpShape(self.u0_shape))
        object.__setattr__(self, "u1_shape", BumpShape(self.u1_shape))

    def with_epsilon(self, epsilon: float) -> "InitialData":
        return replace(self, epsilon=epsilon)

    def resolved(self, metric: RadialMetric) -> "InitialData":
        """补全 R1：默认取最紧的 ∫_0^{R0} K dτ；显式给出时不得小于它。"""
        tight = tightest_r1(metric, self.R0)
        if self.R1 is None:
            return replace(self, R1=tight)
        if self.R1 < tight * (1 - 1e-12):
            raise DomainError(f"R1={self.R1} 小于 ∫_0^R0 K = {tight}")
        return self

    def profiles(self, r) -> Tuple[np.ndarray, np.ndarray]:
        """不含 ε 的 (u0, u1)。"""
        return (
            self.u0_amp * bump(r, self.R0, self.u0_shape),
            self.u1_amp * bump(r, self.R0, self.u1_shape),
        )

    def sample(self, r) -> Tuple[np.ndarray, np.ndarray]:
        u0, u1 = self.profiles(r)
        return self.epsilon * u0, self.epsilon * u1

    def moments(self, metric: RadialMetric, dr: float = MOMENT_DR) -> Tuple[float, float]:
        """(∫u0 dv_g, ∫u1 dv_g)，不含 ε。"""
        j = int(math.ceil(self.R0 / dr))
        r = np.arange(j + 1) * dr
        weights = quadrature_weights(metric, r, dr)
        u0, u1 = self.profiles(r)
        return float(weights @ u0), float(weights @ u1)

    def satisfies_sign_condition(self, metric: RadialMetric, params: ProblemParams) -> bool:
        int_u0, int_u1 = self.moments(metric)
        return sign_condition(derive(params).alpha, int_u0, int_u1)


@dataclass(frozen=True)
class SolverConfig:
    dr: float = 0.01
    cfl: float = 0.5
    blowup_threshold: float = 1e6
    robustness_factor: float = 100.0
    robustness_rtol: float = 0.02
    t_cap: float = 100.0
    nonlinear_safety: float = 0.1
    window_pad: int = 4
    support_rel_tol: float = 1e-3
    support_check_every: int = 1
    dt_floor: float = 1e-13

    def __post_init__(self) -> None:
        if not self.dr > 0:
            raise DomainError(f"dr 必须为正, 得到 {self.dr}")
        if not 0 < self.cfl <= 1:
            raise DomainError(f"cfl 必须在 (0, 1] 内, 得到 {self.cfl}")
        if not self.blowup_threshold > 0:
            raise DomainError(f"blowup_threshold 必须为正, 得到 {self.blowup_threshold}")
        if not self.robustness_factor > 1:
            raise DomainError(f"robustness_factor 必须 > 1, 得到 {self.robustness_factor}")
        if not self.t_cap > 0:
            raise DomainError(f"t_cap 必须为正, 得到 {self.t_cap}")
        if not 0 < self.nonlinear_safety <= 1:
            raise DomainError(f"nonlinear_safety 必须在 (0, 1] 内, 得到 {self.nonlinear_safety}")
        if self.window_pad < 3:
            raise DomainError(f"window_pad 至少为 3, 得到 {self.window_pad}")

    def refined(self, factor: float = 2.0) -> "SolverConfig":
        return replace(self, dr=self.dr / factor)


@dataclass
class WaveState:
    t: float
    u: np.ndarray
    v: np.ndarray
    dr: float

    @classmethod
    def zeros(cls, J: int, dr: float, t: float = 0.0) -> "WaveState":
        return cls(t, np.zeros(J + 1), np.zeros(J + 1), dr)

    @property
    def r(self) -> np.ndarray:
        return np.arange(self.u.size) * self.dr

    @property
    def sup_norm(self) -> float:
        return max(float(np.max(np.abs(self.u))), float(np.max(np.abs(self.v))))

    def support_edge(self, rel_tol: float = 1e-3) -> float:
        """|u| > rel_tol * sup|u| 的最大网格半径；u ≡ 0 时为 0。"""
        return _support_edge(self.u, self.dr, rel_tol)

    def copy(self) -> "WaveState":
        return WaveState(self.t, self.u.copy(), self.v.copy(), self.dr)


def _support_edge(u: np.ndarray, dr: float, rel_tol: float) -> float:
    peak = float(np.max(np.abs(u))) if u.size else 0.0
    if peak == 0.0:
        return 0.0
    idx = np.flatnonzero(np.abs(u) > rel_tol * peak)
    return float(idx[-1] * dr)


def _last_nonzero(a: np.ndarray) -> int:
    idx = np.flatnonzero(a)
    return int(idx[-1]) if idx.size else -1


def _advance_fronts(fu: int, fv: int) -> Tuple[int, int]:
    """一步 kick-drift-kick 后 u、v 非零区的最远格点：每次 kick 外扩一格。"""
    return max(fu + 1, fv), max(fu + 2, fv + 1)


def energy(state: WaveState, metric: RadialMetric, lap: Optional[LaplaceBeltrami] = None) -> float:
    """自由波能量 ∫(v^2 + |∂_r u|^2 / K^2) dv_g，与离散算子同一内积。"""
    J = state.u.size - 1
    lap = lap or LaplaceBeltrami(metric, state.dr, J)
    kinetic = float(np.dot(lap.w, state.v ** 2)) * state.dr
    grad = float(np.dot(lap.a_half[:J], np.diff(state.u) ** 2)) / state.dr
    return sphere_area(metric.n) * (kinetic + grad)


class RadialWaveSolver:
    """固定网格上的推进器：只在数值依赖域加 pad 的窗口内计算。

    窗口外端取 Dirichlet 条件；窗口始终包含所有非零格点，因此截断
    与在整个网格上推进结果一致。
    """

    def __init__(self, metric: RadialMetric, params: ProblemParams, config: SolverConfig, R1: float, J: int):
        self.metric = metric
        self.params = params
        self.config = config
        self.R1 = R1
        self.J = J
        self.dr = config.dr
        self.lap = LaplaceBeltrami(metric, config.dr, J, OuterBoundary.DIRICHLET)
        self.r = np.arange(J + 1) * config.dr
        self.r_tilde = metric.geodesic_radius_array(self.r)
        self.dt_linear = min(
            config.cfl * config.dr * metric.delta0,
            STABILITY_SAFETY * 2.0 / math.sqrt(self.lap.spectral_bound()),
        )

    @classmethod
    def for_run(cls, metric: RadialMetric, params: ProblemParams, config: SolverConfig, R1: float) -> "RadialWaveSolver":
        """计算域取 cone_radius(t_cap) + 10 dr，解的物理支集不会触及外边界。"""
        r_dom = cone_radius(metric, config.t_cap, R1) + 10 * config.dr
        J = int(math.ceil(r_dom / config.dr))
        return cls(metric, params, config, R1, J)

    def cone_radius(self, t: float) -> float:
        return float(np.interp(t + self.R1, self.r_tilde, self.r))

    def window(self, front: int) -> int:
        """数值依赖域前沿 front 之外再留 window_pad 格。"""
        return min(self.J, max(front + self.config.window_pad, 2))

    def dt_for(self, u: np.ndarray, v: np.ndarray) -> float:
        """min(线性 CFL, safety * 非线性时间尺度)；非线性尺度取 (c2|u|^{q-1})^{-1/2} 与 (c1|v|^{p-1})^{-1}。"""
        p = self.params
        dt = self.dt_linear
        scales = []
        if p.c2 > 0:
            rate = p.c2 * float(np.max(np.abs(u))) ** (p.q - 1)
            if rate > 0:
                scales.append(rate ** -0.5)
        if p.c1 > 0:
            rate = p.c1 * float(np.max(np.abs(v))) ** (p.p - 1)
            if rate > 0:
                scales.append(1.0 / rate)
        if scales:
            dt = min(dt, self.config.nonlinear_safety * min(scales))
        return dt

    def _base_force(self, u: np.ndarray, t: float, m: int) -> np.ndarray:
        p = self.params
        g = self.lap.apply(u, m)
        if p.mu2:
            g -= p.mu2 / (1.0 + t) ** 2 * u
        if p.c2 > 0:
            g += p.c2 * np.abs(u) ** p.q
        return g

    def _add_derivative_term(self, g: np.ndarray, v: np.ndarray) -> np.ndarray:
        if self.params.c1 > 0:
            return g + self.params.c1 * np.abs(v) ** self.params.p
        return g

    def advance(self, u: np.ndarray, v: np.ndarray, t: float, dt: float, m: Optional[int] = None) -> None:
        """原地推进 u[0:m+1], v[0:m+1] 一步。

        半步精确阻尼 → 半步 kick → drift → 半步 kick（|v|^p 项用预估值取梯形）→ 半步精确阻尼。
        """
        m = self.J if m is None else m
        mu1 = self.params.mu1
        uw = u[: m + 1]
        vw = v[: m + 1]
        half = 0.5 * dt
        if mu1:
            vw *= ((1.0 + t) / (1.0 + t + half)) ** mu1
        vw += half * self._add_derivative_term(self._base_force(uw, t, m), vw)
        uw += dt * vw
        g = self._base_force(uw, t + dt, m)
        if self.params.c1 > 0:
            predictor = vw + half * self._add_derivative_term(g, vw)
            vw += half * self._add_derivative_term(g, predictor)
        else:
            vw += half * g
        if mu1:
            vw *= ((1.0 + t + half) / (1.0 + t + dt)) ** mu1


def step(
    state: WaveState,
    metric: RadialMetric,
    params: ProblemParams,
    dt: float,
    lap: Optional[LaplaceBeltrami] = None,
) -> WaveState:
    """在整个网格上推进一步，返回新状态（输入不变）。"""
    J = state.u.size - 1
    config = SolverConfig(dr=state.dr, t_cap=max(state.t + dt, 1e-12))
    solver = RadialWaveSolver(metric, params, config, R1=0.0, J=J)
    if lap is not None:
        solver.lap = lap
    if dt > solver.dt_linear * (1 + 1e-12):
        raise DomainError(f"dt={dt:g} 超过线性稳定上限 {solver.dt_linear:g}")
    new = state.copy()
    solver.advance(new.u, new.v, state.t, dt)
    new.t = state.t + dt
    return new


@dataclass
class LifespanReport:
    epsilon: float
    T_num: Optional[float]
    T_num_high: Optional[float]
    reason: str
    flags: tuple = ()
    steps: int = 0
    t_end: float = 0.0
    sup_norm_end: float = 0.0
    support_excess: float = -math.inf
    wall_seconds: float = 0.0
    history: Optional[SnapshotBundle] = None
    final_state: Optional[WaveState] = field(default=None, repr=False)

    @property
    def blew_up(self) -> bool:
        return self.T_num is not None


def _crossing_time(t0: float, t1: float, s0: float, s1: float, level: float) -> float:
    """在 log(sup) 上线性插值的穿越时刻。"""
    if s0 <= 0 or s1 <= s0 or s0 >= level:
        return t1
    frac = (math.log(level) - math.log(s0)) / (math.log(s1) - math.log(s0))
    return t0 + frac * (t1 - t0)


def measure_lifespan(
    data: InitialData,
    metric: RadialMetric,
    params: ProblemParams,
    config: SolverConfig,
    sample_times: Optional[Sequence[float]] = None,
) -> LifespanReport:
    """推进直到 sup_norm >= robustness_factor * M 或 t >= t_cap。

    T_num 是 sup_norm 首次穿越 M 的时刻；继续推进到 100 M 得到 T_num_high，
    两者相对差 >= robustness_rtol 时标记为慢爆破或分辨率不足。
    sample_times 给出时在这些时刻落步并记录快照（供泛函检查使用）。
    """
    wall0 = time.perf_counter()
    data = data.resolved(metric)
    solver = RadialWaveSolver.for_run(metric, params, config, data.R1)
    u, v = data.sample(solver.r)
    fu, fv = _last_nonzero(u), _last_nonzero(v)
    t = 0.0
    M = config.blowup_threshold
    M_high = M * config.robustness_factor
    samples = sorted(s for s in (sample_times or ()) if 0 <= s <= config.t_cap)
    sample_idx = 0
    recorded: List[Tuple[float, np.ndarray, np.ndarray]] = []
    flags: List[str] = []
    T_low: Optional[float] = None
    T_high: Optional[float] = None
    steps = 0
    excess = -math.inf
    sup_prev = max(float(np.max(np.abs(u))), float(np.max(np.abs(v))))
    keep_prev_above = math.sqrt(M)

    def record(at: float, m: int) -> None:
        recorded.append((at, u[: m + 1].copy(), v[: m + 1].copy()))

    if not data.satisfies_sign_condition(metric, params):
        flags.append("sign-condition-violated")
        logger.warning("初值不满足符号条件 α∫u0 + ∫u1 >= 0，结果仅作观察")

    while sample_idx < len(samples) and samples[sample_idx] <= 0.0:
        record(0.0, solver.window(max(fu, fv)))
        sample_idx += 1

    reason = "no blow-up before cap"
    logger.debug("开始: eps=%g, J=%d, dt_linear=%.3g", data.epsilon, solver.J, solver.dt_linear)
    while t < config.t_cap * (1 - 1e-14):
        next_u, next_v = _advance_fronts(fu, fv)
        m = solver.window(next_v)
        dt = solver.dt_for(u[: m + 1], v[: m + 1])
        target = config.t_cap
        if sample_idx < len(samples):
            target = min(target, samples[sample_idx])
        landed = False
        if t + dt >= target - 1e-12 * max(1.0, target):
            dt = target - t
            landed = True
        if landed and dt < config.dt_floor * (1.0 + t) and target < config.t_cap:
            # 舍入误差使 t 已落在采样时刻上
            record(samples[sample_idx], m)
            sample_idx += 1
            continue
        if dt < config.dt_floor * (1.0 + t):
            flags.append("dt-underflow")
            reason = "dt underflow"
            logger.warning("时间步下溢于 t=%.6g (sup=%.3g)", t, sup_prev)
            break
        prev = (u[: m + 1].copy(), v[: m + 1].copy()) if sup_prev > keep_prev_above else None
        solver.advance(u, v, t, dt, m)
        steps += 1
        fu, fv = min(next_u, solver.J), min(next_v, solver.J)
        t_new = t + dt
        if not (np.all(np.isfinite(u[: m + 1])) and np.all(np.isfinite(v[: m + 1]))):
            if prev is not None:
                u[: m + 1], v[: m + 1] = prev
            flags.append("non-finite")
            reason = "blow-up"
            T_low = T_low if T_low is not None else t
            logger.warning("出现非有限值于 t=%.6g，保留最后有限状态", t_new)
            break
        sup = max(float(np.max(np.abs(u[: m + 1]))), float(np.max(np.abs(v[: m + 1]))))
        if T_low is None and sup >= M:
            T_low = _crossing_time(t, t_new, sup_prev, sup, M)
            logger.debug("穿越 M=%g 于 t=%.8g", M, T_low)
        if sup >= M_high:
            T_high = _crossing_time(t, t_new, sup_prev, sup, M_high)
            t, sup_prev = t_new, sup
            reason = "blow-up"
            break
        if landed and sample_idx < len(samples) and math.isclose(t_new, samples[sample_idx], rel_tol=1e-12, abs_tol=1e-12):
            record(samples[sample_idx], m)
            sample_idx += 1
        if steps % config.support_check_every == 0:
            edge = _support_edge(u[: m + 1], config.dr, config.support_rel_tol)
            excess = max(excess, (edge - solver.cone_radius(t_new)) / config.dr)
        t, sup_prev = t_new, sup

    if T_low is not None:
        reason = "blow-up"
        if T_high is None:
            T_high = t
            flags.append("high-threshold-not-reached")
        if (T_high - T_low) / T_low >= config.robustness_rtol:
            flags.append(SLOW_BLOWUP_FLAG)
    if excess > 2.0:
        flags.append("finite-speed-violated")
        logger.warning("支集超出传播锥 %.1f 个网格", excess)

    history = None
    if recorded:
        width = max(item[1].size for item in recorded)
        us = np.zeros((len(recorded), width))
        vs = np.zeros((len(recorded), width))
        for i, (_, uu, vv) in enumerate(recorded):
            us[i, : uu.size] = uu
            vs[i, : vv.size] = vv
        history = SnapshotBundle(
            times=np.array([item[0] for item in recorded]),
            r=solver.r[:width],
            u=us,
            v=vs,
            metadata={
                "epsilon": data.epsilon,
                "R1": data.R1,
                "dr": config.dr,
                "n": params.n,
            },
        )

    wall = time.perf_counter() - wall0
    state = WaveState(t, u, v, config.dr)
    if T_low is None:
        logger.info("eps=%g: t_cap=%g 前未爆破 (%d 步)", data.epsilon, config.t_cap, steps)
    else:
        logger.info("eps=%g: T=%.6g (高阈值 %.6g), %d 步, %.1fs", data.epsilon, T_low, T_high, steps, wall)
    return LifespanReport(
        epsilon=data.epsilon,
        T_num=T_low,
        T_num_high=T_high,
        reason=reason,
        flags=tuple(flags),
        steps=steps,
        t_end=t,
        sup_norm_end=sup_prev,
        support_excess=excess,
        wall_seconds=wall,
        history=history,
        final_state=state,
    )


@dataclass(frozen=True)
class LifespanSweep:
    records: List[SweepRecord]
    fit: FitResult
    prediction: Optional[LifespanPrediction]

    @property
    def slope(self) -> float:
        return self.fit.slope

    @property
    def predicted_slope(self) -> float:
        return self.prediction.slope if self.prediction is not None else math.nan


def _lifespan_job(data: InitialData, metric: RadialMetric, params: ProblemParams, config: SolverConfig) -> LifespanReport:
    report = measure_lifespan(data, metric, params, config)
    # 进程间只回传标量结果
    report.final_state = None
    return report


def validate_eps_list(eps_list: Sequence[float], minimum: int = 4) -> List[float]:
    eps = [float(e) for e in eps_list]
    if any(not e > 0 for e in eps):
        raise FitError("ε 必须全部为正")
    if len(set(eps)) != len(eps):
        raise FitError("ε 列表存在重复值")
    if len(eps) < minimum:
        raise FitError(f"ε 扫描至少需要 {minimum} 个值, 得到 {len(eps)}")
    return sorted(eps)


def epsilon_sweep(
    data: InitialData,
    metric: RadialMetric,
    params: ProblemParams,
    config: SolverConfig,
    eps_list: Sequence[float],
    map_fn: Callable = map,
    config_hash: str = "",
) -> LifespanSweep:
    """对每个 ε 测量寿命，拟合 log T 对 log(1/ε) 的斜率并与分类预测并列。"""
    eps = validate_eps_list(eps_list)
    prediction = classify(params).dominant
    regime = prediction.regime.value if prediction is not None else ""
    exponent = prediction.exponent if prediction is not None else math.nan
    jobs = [data.with_epsilon(e) for e in eps]
    n = len(jobs)
    reports = list(map_fn(_lifespan_job, jobs, [metric] * n, [params] * n, [config] * n))

    records: List[SweepRecord] = []
    for rep in sorted(reports, key=lambda item: item.epsilon):
        flags = rep.flags
        if not rep.blew_up:
            flags = flags + ("excluded: no blow-up",)
            logger.warning("eps=%g 在 t_cap 前未爆破, 已排除", rep.epsilon)
        records.append(
            SweepRecord(
                epsilon=rep.epsilon,
                T_num=rep.T_num,
                threshold=config.blowup_threshold,
                dr=config.dr,
                dt_policy=DT_POLICY,
                flags=tuple(flags),
                regime=regime,
                predicted_exponent=exponent,
                T_num_high=rep.T_num_high,
                steps=rep.steps,
                wall_seconds=rep.wall_seconds,
                config_hash=config_hash,
            )
        )

    usable = [rec for rec in records if rec.usable]
    if len(usable) < 3:
        raise FitError(f"可用于拟合的点不足 3 个 (剩余 {len(usable)})")
    fit = fit_power_law((1.0 / rec.epsilon, rec.T_num) for rec in usable)
    logger.info(
        "寿命扫描: 斜率 %.4f (r2=%.4f), 预测 %s 斜率 %.4f",
        fit.slope,
        fit.r_squared,
        regime or "-",
        -exponent,
    )
    return LifespanSweep(records=records, fit=fit, prediction=prediction)
