# -*- coding: utf-8 -*-
"""沿数值解计算 F, G1, G2, H, L, N，并逐时刻检查可检验的不等式链。

    F = G1 = ∫u dv_g,  G2 = ∫u_t dv_g,  N = ∫(c1|u_t|^p + c2|u|^q) dv_g,
    H = (1+t)^α F,     L = (1+t)^{a_L} H,  a_L = (1+√δ)/2 (δ >= 1) 或 1 (δ < 1).

检查结果是判定（名称、通过与否、裕量、容差），不是异常。
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, FitError, GridSizeError
from .exponents import ProblemParams, derive
from .fitting import FitResult, fit_log_growth
from .geometry import RadialMetric, quadrature_weights
from .records import SnapshotBundle

logger = logging.getLogger(__name__)

# τ_q = QUAD_TOL_FACTOR * (dr^2 + Δt^2) * 量级
QUAD_TOL_FACTOR = 10.0

MIN_IDENTITY_SAMPLES = 5

# 下界平台：取每个 ε 在前半段的下包络，再乘此因子作为公共 C1/C2
PLATEAU_FRACTION = 0.5

# T1 对 ln(1/ε) 的局部斜率相对拟合斜率 C3 的允许偏差
LOG_SLOPE_RTOL = 0.3

BRANCH_UPPER = "delta>=1"
BRANCH_LOWER = "delta<1"


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    margin: float
    tolerance: float
    note: str = ""

    def as_dict(self) -> Dict[str, object]:
        return {
            "name": self.name,
            "verdict": "pass" if self.passed else "FAIL",
            "margin": self.margin,
            "tolerance": self.tolerance,
            "note": self.note,
        }


@dataclass
class CheckReport:
    results: List[CheckResult] = field(default_factory=list)
    details: Dict[str, object] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def get(self, name: str) -> CheckResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def extend(self, other: "CheckReport") -> "CheckReport":
        self.results.extend(other.results)
        self.details.update(other.details)
        return self


@dataclass(frozen=True)
class FunctionalTrace:
    times: np.ndarray
    F: np.ndarray
    G1: np.ndarray
    G2: np.ndarray
    H: np.ndarray
    L: np.ndarray
    N: np.ndarray
    branch: str
    delta: float
    alpha: float
    a_L: float
    epsilon: float
    dr: float
    constants: Dict[str, float] = field(default_factory=dict)

    @property
    def dt_sample(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    @property
    def tolerance_factor(self) -> float:
        return QUAD_TOL_FACTOR * (self.dr ** 2 + self.dt_sample ** 2)

    @property
    def H_prime(self) -> np.ndarray:
        """H' = α(1+t)^{α-1} F + (1+t)^α G2，由样本解析得到。"""
        s = 1.0 + self.times
        return self.alpha * s ** (self.alpha - 1) * self.F + s ** self.alpha * self.G2

    def as_columns(self) -> Dict[str, np.ndarray]:
        return {
            "t": self.times,
            "F": self.F,
            "G1": self.G1,
            "G2": self.G2,
            "H": self.H,
            "L": self.L,
            "N": self.N,
        }


def compute_trace(
    history: SnapshotBundle,
    metric: RadialMetric,
    params: ProblemParams,
    epsilon: Optional[float] = None,
) -> FunctionalTrace:
    if len(history) < 2:
        raise GridSizeError(f"compute_trace 至少需要 2 个快照, 得到 {len(history)}")
    steps = np.diff(history.times)
    if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-6, atol=1e-12):
        raise DomainError("快照时刻必须等距递增")
    derived = derive(params)
    weights = quadrature_weights(metric, history.r, history.dr)
    u, v = history.u, history.v
    F = u @ weights
    G2 = v @ weights
    density = np.zeros_like(u)
    if params.c2 > 0:
        density += params.c2 * np.abs(u) ** params.q
    if params.c1 > 0:
        density += params.c1 * np.abs(v) ** params.p
    N = density @ weights
    s = 1.0 + history.times
    H = s ** derived.alpha * F
    if derived.delta >= 1:
        branch, a_L = BRANCH_UPPER, (1.0 + derived.sqrt_delta) / 2
    else:
        branch, a_L = BRANCH_LOWER, 1.0
    L = s ** a_L * H
    eps = epsilon if epsilon is not None else float(history.metadata.get("epsilon", math.nan))
    logger.debug("trace: %d 个样本, 分支 %s, α=%g", len(history), branch, derived.alpha)
    return FunctionalTrace(
        times=history.times.copy(),
        F=F,
        G1=F.copy(),
        G2=G2,
        H=H,
        L=L,
        N=N,
        branch=branch,
        delta=derived.delta,
        alpha=derived.alpha,
        a_L=a_L,
        epsilon=eps,
        dr=history.dr,
    )


@dataclass(frozen=True)
class IdentityResidual:
    times: np.ndarray
    residual: np.ndarray
    scale: float

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.residual))) if self.residual.size else 0.0

    @property
    def relative(self) -> float:
        return self.max_abs / self.scale if self.scale > 0 else 0.0


def second_difference(y: np.ndarray, h: float) -> np.ndarray:
    """内点上的中心二阶差分，长度 len(y) - 2。"""
    return (y[2:] - 2.0 * y[1:-1] + y[:-2]) / (h * h)


def check_ode_identity(trace: FunctionalTrace, params: ProblemParams, include_nonlinear: bool = True) -> IdentityResidual:
    """F'' + μ1/(1+t) F' + μ2/(1+t)^2 F - N 在内点上的残差。

    include_nonlinear=False 时去掉 N，残差应随 N(t) 增长。
    """
    if trace.times.size < MIN_IDENTITY_SAMPLES:
        raise GridSizeError(f"恒等式检查至少需要 {MIN_IDENTITY_SAMPLES} 个样本, 得到 {trace.times.size}")
    h = trace.dt_sample
    t = trace.times[1:-1]
    s = 1.0 + t
    F_dd = second_difference(trace.F, h)
    residual = F_dd + params.mu1 / s * trace.G2[1:-1] + params.mu2 / s ** 2 * trace.F[1:-1]
    if include_nonlinear:
        residual = residual - trace.N[1:-1]
    scale = max(float(np.max(np.abs(F_dd))), float(np.max(np.abs(trace.N))), float(np.max(np.abs(trace.F))))
    return IdentityResidual(times=t, residual=residual, scale=scale)


def _nondecreasing(name: str, values: np.ndarray, tol_factor: float, note: str = "") -> CheckResult:
    scale = float(np.max(np.abs(values))) if values.size else 0.0
    tol = tol_factor * scale
    worst = float(np.min(np.diff(values))) if values.size > 1 else 0.0
    return CheckResult(name, worst >= -tol, worst, tol, note)


def check_monotonicity(trace: FunctionalTrace, params: ProblemParams, hypothesis_ok: bool = True) -> CheckReport:
    """(i) (1+t)^{1+√δ} H' 不减；(ii) H(t) >= H(0)(1 - tol)；(iii) L 不减；
    (iv) L(t) >= c ε (1+t)^{a_L}，报告拟合的 c。"""
    report = CheckReport()
    tol = trace.tolerance_factor
    note = "" if hypothesis_ok else "out-of-hypothesis"
    s = 1.0 + trace.times
    H0 = float(trace.H[0])
    trivial = H0 == 0.0 and not np.any(trace.H)
    if trivial:
        note = "trivial data"

    weighted = s ** (1.0 + math.sqrt(trace.delta)) * trace.H_prime
    report.results.append(_nondecreasing("(1+t)^(1+sqrt(delta)) H' nondecreasing", weighted, tol, note))

    h_gap = float(np.min(trace.H) - H0)
    report.results.append(CheckResult("H(t) >= H(0)", h_gap >= -tol * abs(H0), h_gap, tol * abs(H0), note))

    report.results.append(_nondecreasing("L nondecreasing", trace.L, tol, note))

    if trivial or not trace.epsilon > 0:
        c_fit = 0.0
        passed = trivial
    else:
        c_fit = float(np.min(trace.L / (trace.epsilon * s ** trace.a_L)))
        passed = c_fit > 0
    report.results.append(CheckResult("L lower envelope", passed, c_fit, 0.0, note))
    report.details["lower_envelope_c"] = c_fit
    for r in report.results:
        if not r.passed:
            logger.warning("不等式未通过: %s (margin=%.3g, tol=%.3g) %s", r.name, r.margin, r.tolerance, r.note)
    return report


def check_l_convexity(trace: FunctionalTrace) -> CheckResult:
    """L'' >= (1+t)^{α+a_L} N（Kato 不等式的来源）。

    容差 = τ_q * |L''| + 由四阶差分估计的差分截断误差。
    """
    k = trace.times.size
    if k < MIN_IDENTITY_SAMPLES:
        raise GridSizeError(f"L 凸性检查至少需要 {MIN_IDENTITY_SAMPLES} 个样本, 得到 {k}")
    h = trace.dt_sample
    L = trace.L
    L_dd = second_difference(L, h)[1:-1]
    idx = slice(2, k - 2)
    s = 1.0 + trace.times[idx]
    rhs = s ** (trace.alpha + trace.a_L) * trace.N[idx]
    fourth = (L[4:] - 4 * L[3:-1] + 6 * L[2:-2] - 4 * L[1:-3] + L[:-4]) / (12.0 * h * h)
    tol = trace.tolerance_factor * np.maximum(np.abs(L_dd), np.abs(rhs)) + np.abs(fourth)
    gap = L_dd - rhs + tol
    i = int(np.argmin(gap))
    margin = float(L_dd[i] - rhs[i])
    return CheckResult("L-convexity", bool(gap[i] >= 0), margin, float(tol[i]))


def _lower_envelope(values: np.ndarray) -> np.ndarray:
    """e(T_i) = min_{j >= i} values[j]。"""
    return np.minimum.accumulate(values[::-1])[::-1]


@dataclass(frozen=True)
class LowerBoundRow:
    epsilon: float
    T0: float
    T1: float
    envelope_G1: float
    envelope_G2: float


def _first_time_above(times: np.ndarray, envelope: np.ndarray, level: float) -> float:
    idx = np.flatnonzero(envelope >= level)
    return float(times[idx[0]]) if idx.size else math.inf


def _check_log_growth(eps: np.ndarray, T1: np.ndarray, dt_sample: float) -> Tuple[CheckResult, Optional[FitResult]]:
    """T1 = a + C3 ln(1/ε)：C3 > 0 且相邻 ε 的局部斜率与 C3 相差不超过 LOG_SLOPE_RTOL。

    T1 只在快照时刻上取值，局部斜率额外允许两个快照间隔的量化误差。
    所有 T1 在量化误差内相同时视为有界，直接通过。
    """
    name = "T1 grows at most like ln(1/eps)"
    if not np.all(np.isfinite(T1)):
        return CheckResult(name, False, math.nan, 0.0, "T1 未在运行区间内出现"), None
    quantum = 2.0 * dt_sample
    if float(np.max(T1) - np.min(T1)) <= quantum:
        return CheckResult(name, True, 0.0, quantum, "T1 bounded"), None
    fit = fit_log_growth(eps, T1)
    x = np.log(1.0 / eps)
    order = np.argsort(x)
    dx = np.diff(x[order])
    local = np.diff(T1[order]) / dx
    tol = LOG_SLOPE_RTOL * abs(fit.slope) + quantum / float(np.min(dx))
    spread = float(np.max(np.abs(local - fit.slope)))
    ok = fit.slope > 0 and spread <= tol
    note = "local slopes " + ", ".join(f"{s:.3g}" for s in local)
    return CheckResult(name, ok, fit.slope, tol, note), fit


def check_lower_bounds(traces: Sequence[FunctionalTrace], params: ProblemParams) -> CheckReport:
    """对一族 ε 测量 G1 >= C1 ε (t >= T0) 与 G2 >= C2 ε (t >= T1)，并检验 T1 至多对数增长。

    C_k 取各 ε 前半段下包络的最小值乘 PLATEAU_FRACTION；T_k(ε) 为包络首次达到 C_k 的时刻。
    """
    if len(traces) < 3:
        raise FitError(f"下界检查至少需要 3 个 ε, 得到 {len(traces)}")
    ordered = sorted(traces, key=lambda tr: tr.epsilon)
    envelopes = []
    plateaus = {"G1": [], "G2": []}
    for tr in ordered:
        e1 = _lower_envelope(tr.G1 / tr.epsilon)
        e2 = _lower_envelope(tr.G2 / tr.epsilon)
        mid = int(np.searchsorted(tr.times, tr.times[-1] / 2))
        mid = min(mid, tr.times.size - 1)
        plateaus["G1"].append(e1[mid])
        plateaus["G2"].append(e2[mid])
        envelopes.append((tr, e1, e2))
    C1 = PLATEAU_FRACTION * float(min(plateaus["G1"]))
    C2 = PLATEAU_FRACTION * float(min(plateaus["G2"]))

    rows: List[LowerBoundRow] = []
    for tr, e1, e2 in envelopes:
        rows.append(
            LowerBoundRow(
                epsilon=tr.epsilon,
                T0=_first_time_above(tr.times, e1, C1),
                T1=_first_time_above(tr.times, e2, C2),
                envelope_G1=float(e1[0]),
                envelope_G2=float(e2[0]),
            )
        )

    report = CheckReport()
    report.results.append(CheckResult("G1 >= C1 eps after T0", C1 > 0, C1, 0.0))
    report.results.append(CheckResult("G2 >= C2 eps after T1", C2 > 0, C2, 0.0))

    eps = np.array([row.epsilon for row in rows])
    T1 = np.array([row.T1 for row in rows])
    dt_sample = max(tr.dt_sample for tr in ordered)
    result, fit = _check_log_growth(eps, T1, dt_sample)
    report.results.append(result)
    C3 = fit.slope if fit is not None else (0.0 if result.passed else math.nan)
    report.details.update({"C1": C1, "C2": C2, "C3": C3, "rows": rows})
    logger.info("下界: C1=%.4g C2=%.4g C3=%.4g", C1, C2, C3)
    return report


def check_holder_chain(trace: FunctionalTrace, params: ProblemParams, R: float) -> CheckResult:
    """N(t) (t+R)^{n(q-1)} >= κ |F(t)|^q，报告最小的 κ。"""
    if not params.c2 > 0:
        raise DomainError("Hölder 链需要 c2 > 0")
    q = params.q
    absF = np.abs(trace.F)
    mask = absF > 0
    if not np.any(mask):
        return CheckResult("Hoelder chain", True, 0.0, 0.0, "trivial data")
    ratio = trace.N[mask] * (trace.times[mask] + R) ** (params.n * (q - 1)) / absF[mask] ** q
    kappa = float(np.min(ratio))
    return CheckResult("Hoelder chain", kappa > 0, kappa, 0.0)


def holder_radius(R1: float, metric: RadialMetric) -> float:
    """放大欧氏锥的半径 R = R1/δ0。"""
    return R1 / metric.delta0


def run_checks(
    trace: FunctionalTrace,
    params: ProblemParams,
    metric: RadialMetric,
    R1: float,
    hypothesis_ok: bool = True,
) -> CheckReport:
    """单条 trace 上的全部逐时检查（下界检查需要多个 ε，另行调用）。"""
    report = check_monotonicity(trace, params, hypothesis_ok)
    if trace.times.size >= MIN_IDENTITY_SAMPLES:
        report.results.append(check_l_convexity(trace))
        residual = check_ode_identity(trace, params)
        report.details["ode_identity_max"] = residual.max_abs
        report.details["ode_identity_relative"] = residual.relative
    if params.c2 > 0:
        report.results.append(check_holder_chain(trace, params, holder_radius(R1, metric)))
    return report
