# -*- coding: utf-8 -*-
"""实验配置：TOML 文件 → pydantic 模型 → 领域对象。

每个 TOML 段对应一个模型（extra="forbid"），跨字段约束用 model_validator；
校验失败统一转为 ConfigError，逐条给出字段路径与约束。
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .exponents import ProblemParams
from .geometry import RadialMetric
from .kato_ode import KatoParams, kato_reduction
from .wave_solver import InitialData, SolverConfig

logger = logging.getLogger(__name__)

STAGES = (
    "exponents",
    "geometry",
    "eigenfunction",
    "psi-decay",
    "kato",
    "simulate",
    "lifespan-sweep",
    "functionals",
)

Stage = Literal[
    "exponents",
    "geometry",
    "eigenfunction",
    "psi-decay",
    "kato",
    "simulate",
    "lifespan-sweep",
    "functionals",
]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ProblemSection(_Section):
    n: int = Field(3, ge=2)
    mu1: float = 0.0
    mu2: float = 0.0
    p: Optional[float] = Field(None, gt=1)
    q: Optional[float] = Field(None, gt=1)
    c1: float = Field(0.0, ge=0)
    c2: float = Field(1.0, ge=0)
    probe: bool = False

    @model_validator(mode="after")
    def _powers_present(self) -> "ProblemSection":
        if self.c2 > 0 and self.q is None:
            raise ValueError("q: c2 > 0 时必须给出 q")
        if self.c1 > 0 and self.p is None:
            raise ValueError("p: c1 > 0 时必须给出 p")
        if self.c1 + self.c2 <= 0 and not self.probe:
            raise ValueError("c2: c1 + c2 必须为正 (线性对照请设 probe = true)")
        if (self.mu1 - 1) ** 2 - 4 * self.mu2 < 0:
            raise ValueError("mu2: 判别式 (mu1-1)^2 - 4 mu2 必须 >= 0")
        return self

    def to_params(self) -> ProblemParams:
        return ProblemParams(
            n=self.n, mu1=self.mu1, mu2=self.mu2, p=self.p, q=self.q, c1=self.c1, c2=self.c2, probe=self.probe
        )


class MetricSection(_Section):
    profile: Literal["flat", "long_range", "tabulated"] = "flat"
    kappa: float = 0.0
    decay_rho: float = Field(1.0, gt=0)
    delta0: Optional[float] = Field(None, gt=0, lt=1)
    # tabulated: CSV 列 r, K, dK, d2K
    table: Optional[str] = None

    @model_validator(mode="after")
    def _table_for_tabulated(self) -> "MetricSection":
        if self.profile == "tabulated" and not self.table:
            raise ValueError("table: profile = 'tabulated' 需要 table (CSV 路径)")
        if self.profile == "long_range" and self.kappa <= -1:
            raise ValueError("kappa: long_range 需要 kappa > -1 以保证 K > 0")
        return self

    def to_metric(self, n: int) -> RadialMetric:
        if self.profile == "flat":
            return RadialMetric.flat(n, self.delta0)
        if self.profile == "long_range":
            return RadialMetric.long_range(n, self.kappa, self.decay_rho, self.delta0)
        path = Path(self.table)
        if not path.exists():
            raise ConfigError([("metric.table", f"度量表不存在: {path}")])
        frame = pd.read_csv(path)
        return RadialMetric.tabulated(
            n,
            frame["r"].to_numpy(),
            frame["K"].to_numpy(),
            frame["dK"].to_numpy(),
            frame["d2K"].to_numpy(),
            decay_rho=self.decay_rho,
            delta0=self.delta0,
        )


class DataSection(_Section):
    epsilon: float = Field(0.3, gt=0)
    R0: float = Field(1.0, gt=0)
    R1: Optional[float] = Field(None, gt=0)
    u0_shape: Literal["exp", "poly"] = "exp"
    u1_shape: Literal["exp", "poly"] = "exp"
    u0_amp: float = Field(1.0, ge=0)
    u1_amp: float = Field(1.0, ge=0)

    def to_data(self, epsilon: Optional[float] = None) -> InitialData:
        return InitialData(
            epsilon=epsilon if epsilon is not None else self.epsilon,
            R0=self.R0,
            u0_shape=self.u0_shape,
            u1_shape=self.u1_shape,
            u0_amp=self.u0_amp,
            u1_amp=self.u1_amp,
            R1=self.R1,
        )


class SolverSection(_Section):
    dr: float = Field(0.01, gt=0)
    cfl: float = Field(0.5, gt=0, le=1)
    blowup_threshold: float = Field(1e6, gt=0)
    robustness_factor: float = Field(100.0, gt=1)
    robustness_rtol: float = Field(0.02, gt=0)
    t_cap: float = Field(100.0, gt=0)
    nonlinear_safety: float = Field(0.1, gt=0, le=1)
    window_pad: int = Field(4, ge=3)
    support_rel_tol: float = Field(1e-3, gt=0, lt=1)
    # simulate 的快照时刻；functionals 用等距采样间隔 sample_dt
    snapshot_times: List[float] = Field(default_factory=list)
    sample_dt: float = Field(0.05, gt=0)

    def to_config(self) -> SolverConfig:
        return SolverConfig(
            dr=self.dr,
            cfl=self.cfl,
            blowup_threshold=self.blowup_threshold,
            robustness_factor=self.robustness_factor,
            robustness_rtol=self.robustness_rtol,
            t_cap=self.t_cap,
            nonlinear_safety=self.nonlinear_safety,
            window_pad=self.window_pad,
            support_rel_tol=self.support_rel_tol,
        )


class SweepSection(_Section):
    eps: Optional[List[float]] = None
    eps_min: float = Field(0.1, gt=0)
    eps_max: float = Field(0.4, gt=0)
    count: int = Field(5, ge=4)
    max_workers: int = Field(1, ge=1)
    # functionals 下界检查所用的 ε 族（至少 3 个）
    lower_bound_eps: List[float] = Field(default_factory=lambda: [0.4, 0.3, 0.2])
    # 临界幂次没有被断言的寿命形式；与之比较的亚临界参考幂次
    reference_q: Optional[float] = Field(None, gt=1)
    reference_p: Optional[float] = Field(None, gt=1)

    @model_validator(mode="after")
    def _valid_ladder(self) -> "SweepSection":
        values = self.values()
        if any(e <= 0 for e in values):
            raise ValueError("eps: 必须全部为正")
        if len(set(values)) != len(values):
            raise ValueError("eps: 存在重复值")
        if len(values) < 4:
            raise ValueError(f"eps: 至少需要 4 个不同的值, 得到 {len(values)}")
        if self.eps is None and not self.eps_min < self.eps_max:
            raise ValueError("eps_max: 需要 eps_min < eps_max")
        if len(set(self.lower_bound_eps)) < 3:
            raise ValueError("lower_bound_eps: 至少需要 3 个不同的值")
        return self

    def values(self) -> List[float]:
        if self.eps is not None:
            return sorted(float(e) for e in self.eps)
        return [float(e) for e in np.geomspace(self.eps_min, self.eps_max, self.count)]


class KatoSection(_Section):
    beta: float = Field(2.0, gt=1)
    a: float = Field(1.0, ge=1)
    kato_alpha: float = 1.0
    k: float = Field(1.0, ge=0)
    deltas: List[float] = Field(default_factory=lambda: [float(d) for d in np.geomspace(1e-1, 1e-3, 5)])
    t_cap: float = Field(1e6, gt=0)
    rtol: float = Field(1e-10, gt=0)
    # true: 由 [problem] 经 kato_reduction 得到 β, a, α
    from_problem: bool = False

    @model_validator(mode="after")
    def _enough_deltas(self) -> "KatoSection":
        if len(set(self.deltas)) < 3 or any(d <= 0 for d in self.deltas):
            raise ValueError("deltas: 至少需要 3 个不同的正数")
        return self

    def to_params(self, problem: Optional[ProblemParams] = None) -> KatoParams:
        if self.from_problem:
            if problem is None:
                raise ValueError("from_problem 需要 [problem] 段")
            return kato_reduction(problem, k=self.k)
        return KatoParams(beta=self.beta, a=self.a, kato_alpha=self.kato_alpha, k=self.k)


class EigenSection(_Section):
    lambdas: List[float] = Field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5])
    r_max: float = Field(20.0, gt=0)
    dr: float = Field(0.01, gt=0)
    # 未给出时取 LAMBDA1_FRACTION × λ0（λ0 为已认证的最大 λ，未运行 eigenfunction 阶段时取 max(lambdas)）
    lambda1: Optional[float] = Field(None, gt=0)
    m: float = Field(2.0, gt=1)
    samples: int = Field(16, ge=3)


class OutputsSection(_Section):
    directory: str = "out"
    formats: List[Literal["csv", "jsonl", "dat", "npz"]] = Field(
        default_factory=lambda: ["csv", "jsonl", "dat", "npz"]
    )


class ExperimentConfig(_Section):
    pipeline: List[Stage] = Field(default_factory=lambda: ["exponents"])
    problem: ProblemSection = Field(default_factory=lambda: ProblemSection(q=2.0))
    metric: MetricSection = Field(default_factory=MetricSection)
    data: DataSection = Field(default_factory=DataSection)
    solver: SolverSection = Field(default_factory=SolverSection)
    sweep: SweepSection = Field(default_factory=SweepSection)
    kato: KatoSection = Field(default_factory=KatoSection)
    eigen: EigenSection = Field(default_factory=EigenSection)
    outputs: OutputsSection = Field(default_factory=OutputsSection)

    def wants(self, fmt: str) -> bool:
        return fmt in self.outputs.formats


def _issues_from(exc: ValidationError) -> List[tuple]:
    issues = []
    for err in exc.errors():
        path = ".".join(str(part) for part in err["loc"]) or "<root>"
        msg = err["msg"]
        if msg.startswith("Value error, "):
            msg = msg[len("Value error, "):]
            # 跨字段校验的消息以 "字段: " 开头，并入路径
            head, sep, rest = msg.partition(": ")
            if sep and head.isidentifier():
                path, msg = f"{path}.{head}" if path != "<root>" else head, rest
        issues.append((path, msg))
    return issues


def _parse_value(text: str) -> Any:
    """把 --set 的值按 TOML 字面量解析；失败时当作字符串。"""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(raw: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """section.field=value 形式的覆盖，返回新的原始字典。"""
    merged = json.loads(json.dumps(raw))
    issues = []
    for item in overrides:
        if "=" not in item:
            issues.append((item, "覆盖格式应为 section.field=value"))
            continue
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = merged
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                issues.append((key, "不是配置段"))
                break
        else:
            node[parts[-1]] = _parse_value(value.strip())
    if issues:
        raise ConfigError(issues)
    return merged


def build_config(raw: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_issues_from(exc)) from exc


def load_config(path: Optional[str | Path] = None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """读取 TOML（path 为 None 时取全部默认值）并应用覆盖。"""
    raw: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError([("<file>", f"配置文件不存在: {path}")])
        try:
            with path.open("rb") as fh:
                raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError([("<file>", f"TOML 解析失败: {exc}")]) from exc
    if overrides:
        raw = apply_overrides(raw, overrides)
    config = build_config(raw)
    logger.debug("配置已校验: pipeline=%s", config.pipeline)
    return config


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _toml_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        if isinstance(value, float) and not math.isfinite(value):
            return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"无法写成 TOML: {value!r}")


def dump_config(config: ExperimentConfig) -> str:
    """完整默认值的 TOML 文本（print-config 子命令）。None 字段以注释列出。"""
    data = config.model_dump(mode="json")
    lines = [f"pipeline = {_toml_value(data.pop('pipeline'))}", ""]
    for section, fields in data.items():
        lines.append(f"[{section}]")
        for key, value in fields.items():
            if value is None:
                lines.append(f"# {key} =")
            else:
                lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    return "\n".join(lines)
