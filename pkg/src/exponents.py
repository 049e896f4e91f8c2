# -*- coding: utf-8 -*-
"""临界指数、判别式/平移代数与 寿命区间分类。

所有函数均为纯函数，可在并发环境下任意调用。维数参数 d 允许取实数
（n + mu1、n + alpha 一般不是整数）。
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional

from .errors import DomainError

logger = logging.getLogger(__name__)

# 判断 p = p_G、q = q_S 等边界点时的相对容差
BOUNDARY_RTOL = 1e-12

# 重叠区间比较主导预测时使用的 epsilon
DOMINANCE_EPSILON = 1e-3


class Regime(str, Enum):
    GLASSEY = "Glassey"
    STRAUSS = "Strauss"
    FUJITA = "Fujita"
    MIXED = "Mixed"
    CRITICAL_GLASSEY = "Critical-Glassey"
    CRITICAL_STRAUSS = "Critical-Strauss"
    NO_PREDICTION = "NoPrediction"


class LifespanForm(str, Enum):
    POWER = "power"
    EXPONENTIAL = "exponential"


# 重叠时的并列裁决顺序：越靠前越优先
_TIE_ORDER = {
    Regime.MIXED: 0,
    Regime.STRAUSS: 1,
    Regime.FUJITA: 2,
    Regime.GLASSEY: 3,
    Regime.CRITICAL_STRAUSS: 4,
    Regime.CRITICAL_GLASSEY: 5,
    Regime.NO_PREDICTION: 6,
}

# 输出顺序: Glassey, Strauss, Fujita, Mixed
_REPORT_ORDER = {
    Regime.GLASSEY: 0,
    Regime.CRITICAL_GLASSEY: 1,
    Regime.STRAUSS: 2,
    Regime.CRITICAL_STRAUSS: 3,
    Regime.FUJITA: 4,
    Regime.MIXED: 5,
    Regime.NO_PREDICTION: 6,
}


@dataclass(frozen=True)
class ProblemParams:
    """半线性波动方程的完整参数 (n, mu1, mu2, p, q, c1, c2)。"""

    n: int
    mu1: float = 0.0
    mu2: float = 0.0
    p: Optional[float] = None
    q: Optional[float] = None
    c1: float = 0.0
    c2: float = 0.0
    # 线性探针运行 (c1 = c2 = 0) 只用于求解器与泛函的对照检查
    probe: bool = False

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 2:
            raise DomainError(f"n 必须为 >= 2 的整数, 得到 {self.n}")
        if self.c1 < 0 or self.c2 < 0:
            raise DomainError(f"c1, c2 必须非负, 得到 c1={self.c1}, c2={self.c2}")
        if self.c1 + self.c2 <= 0 and not self.probe:
            raise DomainError("c1 + c2 必须为正 (线性对照需显式 probe=True)")
        if self.c1 > 0 and (self.p is None or self.p <= 1):
            raise DomainError(f"c1 > 0 时需要 p > 1, 得到 p={self.p}")
        if self.c2 > 0 and (self.q is None or self.q <= 1):
            raise DomainError(f"c2 > 0 时需要 q > 1, 得到 q={self.q}")

    def with_changes(self, **kwargs) -> "ProblemParams":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class DerivedParams:
    delta: float
    alpha: float
    d_glassey_strauss: float
    d_fujita: float

    @property
    def sqrt_delta(self) -> float:
        return math.sqrt(self.delta)


@dataclass(frozen=True)
class LifespanPrediction:
    """单个爆破情形的寿命上界预测。

    power 形式: T <= C0 * eps**exponent（exponent < 0）；
    exponential 形式: T <= exp(C0 * eps**exponent)。
    """

    regime: Regime
    form: LifespanForm
    exponent: float
    source_dimension: float
    dominant: bool = False
    asserted: bool = True
    note: str = ""

    @property
    def slope(self) -> float:
        """log T 对 log(1/eps) 的预测斜率（仅 power 形式有意义）。"""
        return -self.exponent


@dataclass(frozen=True)
class Classification:
    params: ProblemParams
    derived: DerivedParams
    predictions: List[LifespanPrediction] = field(default_factory=list)

    @property
    def dominant(self) -> Optional[LifespanPrediction]:
        for pred in self.predictions:
            if pred.dominant:
                return pred
        return None

    def find(self, regime: Regime) -> Optional[LifespanPrediction]:
        for pred in self.predictions:
            if pred.regime == regime:
                return pred
        return None


def strauss_exponent(d: float) -> float:
    """(d-1)q^2 - (d+1)q - 2 = 0 的正根 q_S(d)。"""
    if d <= 1:
        raise DomainError(f"Strauss 指数要求 d > 1, 得到 d={d}")
    return ((d + 1) + math.sqrt((d + 1) ** 2 + 8 * (d - 1))) / (2 * (d - 1))


def glassey_exponent(d: float) -> float:
    if d <= 1:
        raise DomainError(f"Glassey 指数要求 d > 1, 得到 d={d}")
    return 1 + 2 / (d - 1)


def fujita_exponent(d: float) -> float:
    """gamma_F(q, d) = 0 的根 1 + 2/d。"""
    if d <= 0:
        raise DomainError(f"Fujita 指数要求 d > 0, 得到 d={d}")
    return 1 + 2 / d


def gamma_fujita(q: float, d: float) -> float:
    return 2 - d * (q - 1)


def lambda_curve(p: float, q: float, d: float) -> float:
    """混合非线性临界曲线 lambda(p, q, d) = (q-1)((d-1)p-2)。"""
    return (q - 1) * ((d - 1) * p - 2)


def strauss_quadratic(q: float, d: float) -> float:
    return (d - 1) * q * q - (d + 1) * q - 2


def derive(params: ProblemParams) -> DerivedParams:
    delta = (params.mu1 - 1) ** 2 - 4 * params.mu2
    if delta < 0:
        raise DomainError(
            f"delta = {delta:g} < 0, 超出分类适用范围 (需要 delta >= 0)"
        )
    alpha = (params.mu1 - 1 - math.sqrt(delta)) / 2
    return DerivedParams(
        delta=delta,
        alpha=alpha,
        d_glassey_strauss=params.n + params.mu1,
        d_fujita=params.n + alpha,
    )


def _threshold(func, d: float) -> float:
    # 维数平移后 d 落到定义域外时，对应指数视为 +inf（所有幂次都在亚临界区）
    try:
        return func(d)
    except DomainError:
        return math.inf


def _is_boundary(x: float, threshold: float) -> bool:
    return math.isfinite(threshold) and math.isclose(x, threshold, rel_tol=BOUNDARY_RTOL)


def _log_bound(pred: LifespanPrediction, eps: float) -> float:
    if pred.form == LifespanForm.POWER:
        return pred.exponent * math.log(eps)
    return eps ** pred.exponent


def predicted_lifespan(pred: LifespanPrediction, eps: float, c0: float = 1.0) -> float:
    """在给定 eps 处取值（C0 默认 1）。指数形式可能溢出为 inf。"""
    if pred.form == LifespanForm.POWER:
        return c0 * eps ** pred.exponent
    try:
        return math.exp(c0 * eps ** pred.exponent)
    except OverflowError:
        return math.inf


def mixed_euclidean_region(p: float, q: float, d: float) -> bool:
    """混合区间的附加限制 p <= 2d/(d-1), q < 2d/(d-2)。

    欧氏情形 d = n；带阻尼时传入有效维数 d = n + mu1。
    """
    q_cap = math.inf if d <= 2 else 2 * d / (d - 2)
    return p <= 2 * d / (d - 1) and q < q_cap


def _glassey_case(params: ProblemParams, d: float) -> Optional[LifespanPrediction]:
    p = params.p
    p_g = _threshold(glassey_exponent, d)
    if _is_boundary(p, p_g):
        return LifespanPrediction(Regime.GLASSEY, LifespanForm.EXPONENTIAL, -(p - 1), d)
    if 1 < p < p_g:
        exponent = -2 * (p - 1) / (2 - (d - 1) * (p - 1))
        return LifespanPrediction(Regime.GLASSEY, LifespanForm.POWER, exponent, d)
    return None


def _strauss_case(params: ProblemParams, d: float) -> Optional[LifespanPrediction]:
    q = params.q
    q_s = _threshold(strauss_exponent, d)
    if _is_boundary(q, q_s):
        return LifespanPrediction(
            Regime.CRITICAL_STRAUSS,
            LifespanForm.EXPONENTIAL,
            -q * (q - 1),
            d,
            asserted=False,
            note="boundary: critical case, lifespan form not asserted",
        )
    if 1 < q < q_s:
        exponent = 2 * q * (q - 1) / strauss_quadratic(q, d)
        return LifespanPrediction(Regime.STRAUSS, LifespanForm.POWER, exponent, d)
    return None


def _fujita_case(params: ProblemParams, d: float) -> Optional[LifespanPrediction]:
    q = params.q
    q_f = _threshold(fujita_exponent, d)
    if 1 < q < q_f and not _is_boundary(q, q_f):
        exponent = -(q - 1) / gamma_fujita(q, d)
        return LifespanPrediction(Regime.FUJITA, LifespanForm.POWER, exponent, d)
    return None


def _mixed_case(params: ProblemParams, d: float) -> Optional[LifespanPrediction]:
    p, q = params.p, params.q
    lam = lambda_curve(p, q, d)
    if lam < 4 and not math.isclose(lam, 4.0, rel_tol=BOUNDARY_RTOL):
        exponent = -2 * p * (q - 1) / (4 - lam)
        note = "" if mixed_euclidean_region(p, q, d) else f"outside p<=2d/(d-1), q<2d/(d-2) region at d={d:g}"
        return LifespanPrediction(Regime.MIXED, LifespanForm.POWER, exponent, d, note=note)
    return None


def classify(params: ProblemParams) -> Classification:
    """返回所有适用的爆破情形；重叠时在 eps=1e-3 比较上界，最小者为主导。"""
    derived = derive(params)
    d_gs = derived.d_glassey_strauss
    cases: List[Optional[LifespanPrediction]] = []
    if params.c1 > 0:
        cases.append(_glassey_case(params, d_gs))
    if params.c2 > 0:
        cases.append(_strauss_case(params, d_gs))
        cases.append(_fujita_case(params, derived.d_fujita))
    if params.c1 > 0 and params.c2 > 0:
        cases.append(_mixed_case(params, d_gs))
    preds = sorted((c for c in cases if c is not None), key=lambda c: _REPORT_ORDER[c.regime])

    if not preds:
        logger.debug("参数 %s 不落入任一爆破情形", params)
        none = LifespanPrediction(Regime.NO_PREDICTION, LifespanForm.POWER, math.nan, d_gs)
        return Classification(params, derived, [none])

    # 只在被断言的情形中挑选主导；全部为边界点时退回全部
    pool = [c for c in preds if c.asserted] or preds
    best = min(
        pool,
        key=lambda c: (round(_log_bound(c, DOMINANCE_EPSILON), 12), _TIE_ORDER[c.regime]),
    )
    preds = [replace(c, dominant=(c is best)) for c in preds]
    return Classification(params, derived, preds)


def critical_power(params: ProblemParams) -> float:
    """q_cri = max{q_F(n+alpha), q_S(n+mu1)}：低于此幂次 c2 项必然爆破。"""
    derived = derive(params)
    return max(
        _threshold(fujita_exponent, derived.d_fujita),
        _threshold(strauss_exponent, derived.d_glassey_strauss),
    )


def blows_up(params: ProblemParams) -> bool:
    preds = classify(params).predictions
    return any(p.asserted and p.regime != Regime.NO_PREDICTION for p in preds)


def sign_condition(alpha: float, int_u0: float, int_u1: float) -> bool:
    """与 eps 无关的初值条件 alpha * int(u0) + int(u1) >= 0。

    定理陈述中写作 alpha*int(u0) + eps*int(u1)，证明中为
    eps*alpha*int(u0) + eps*int(u1)；这里采用后者约去 eps 的形式。
    """
    return alpha * int_u0 + int_u1 >= 0


def exponent_summary(params: ProblemParams) -> Dict[str, float]:
    """CLI 表格用的临界指数汇总。"""
    derived = derive(params)
    d_gs, d_f = derived.d_glassey_strauss, derived.d_fujita
    return {
        "n": float(params.n),
        "mu1": params.mu1,
        "mu2": params.mu2,
        "delta": derived.delta,
        "alpha": derived.alpha,
        "n_plus_mu1": d_gs,
        "n_plus_alpha": d_f,
        "q_S": _threshold(strauss_exponent, d_gs),
        "p_G": _threshold(glassey_exponent, d_gs),
        "q_F": _threshold(fujita_exponent, d_f),
        "q_cri": critical_power(params),
    }
