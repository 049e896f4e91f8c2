# -*- coding: utf-8 -*-
"""run_experiment：按配置中的 pipeline 依次执行各阶段，写出产物与 report.txt。

退出码：0 全部通过；2 有检查未通过；1 配置错误（由 CLI 处理）。
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import plot_data
from .config import ExperimentConfig, config_hash
from .errors import FitError
from .exponents import (
    LifespanForm,
    LifespanPrediction,
    ProblemParams,
    Regime,
    blows_up,
    classify,
    exponent_summary,
    predicted_lifespan,
)
from .fitting import fit_power_law, relative_gap
from .functionals import (
    CheckReport,
    CheckResult,
    FunctionalTrace,
    check_lower_bounds,
    check_ode_identity,
    compute_trace,
    run_checks,
)
from .geometry import RadialMetric, cone_radius, decay_fit
from .kato_ode import scaling_sweep
from .records import (
    SweepRecord,
    load_snapshots,
    save_snapshots,
    write_csv,
    write_dat,
    write_jsonl,
    write_sweep_csv,
    write_text,
)
from .special_functions import (
    PSI_ONSET,
    certify_lambda_family,
    make_test_function,
    psi_decay,
    t_star,
)
from .sweep_worker import ProgressCallback, SweepWorker
from .wave_solver import SLOW_BLOWUP_FLAG, epsilon_sweep, measure_lifespan

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CHECK_FAILED = 2

# 各阶段“与理论一致”的相对容差
PSI_SLOPE_ATOL = 0.1
KATO_SLOPE_RTOL = 0.10
LIFESPAN_SLOPE_RTOL = 0.25

# 测试函数默认取 λ1 = 0.9 λ0
LAMBDA1_FRACTION = 0.9


@dataclass
class ExperimentResult:
    out_dir: Path
    checks: List[CheckResult] = field(default_factory=list)
    artifacts: List[Path] = field(default_factory=list)
    lines: List[str] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return EXIT_OK if all(c.passed for c in self.checks) else EXIT_CHECK_FAILED


class _Context:
    """阶段之间共享的已构造对象。"""

    def __init__(self, config: ExperimentConfig, out_dir: Path, progress: Optional[ProgressCallback]):
        self.config = config
        self.out_dir = out_dir
        self.params = config.problem.to_params()
        self.metric: RadialMetric = config.metric.to_metric(self.params.n)
        self.data = config.data.to_data().resolved(self.metric)
        self.solver = config.solver.to_config()
        self.hash = config_hash(config)
        self.progress = progress
        self.result = ExperimentResult(out_dir)
        self.lambda0: Optional[float] = None

    def worker(self, label: str) -> SweepWorker:
        return SweepWorker(self.config.sweep.max_workers, self.progress, label)

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def emit(self, fmt: str, name: str, writer: Callable[[Path], Path]) -> None:
        if self.config.wants(fmt):
            self.result.artifacts.append(writer(self.path(name)))

    def line(self, text: str) -> None:
        self.result.lines.append(text)

    def check(self, result: CheckResult) -> None:
        self.result.checks.append(result)


def _stage_exponents(ctx: _Context) -> None:
    classification = classify(ctx.params)
    summary = exponent_summary(ctx.params)
    rows = [
        {
            "regime": pred.regime.value,
            "form": pred.form.value,
            "exponent": pred.exponent,
            "slope": pred.slope,
            "source_dimension": pred.source_dimension,
            "dominant": pred.dominant,
            "asserted": pred.asserted,
            "note": pred.note,
        }
        for pred in classification.predictions
    ]
    ctx.emit("csv", "exponents.csv", lambda p: write_csv(p, rows))
    ctx.emit("jsonl", "exponents.jsonl", lambda p: write_jsonl(p, [summary]))
    ctx.line("== exponents ==")
    ctx.line("  " + "  ".join(f"{k}={v:.6g}" for k, v in summary.items()))
    for row in rows:
        mark = "*" if row["dominant"] else " "
        ctx.line(f" {mark} {row['regime']:<16} {row['form']:<11} exponent={row['exponent']:.6g} {row['note']}")


def _stage_geometry(ctx: _Context) -> None:
    fit = decay_fit(ctx.metric)
    ctx.emit("jsonl", "geometry.jsonl", lambda p: write_jsonl(p, [fit]))
    ctx.line("== geometry ==")
    ctx.line("  " + "  ".join(f"{k}={v:.6g}" for k, v in fit.items()))
    finite = all(math.isfinite(fit[k]) for k in ("C0", "C1", "C2"))
    ctx.check(CheckResult("metric decay constants finite", finite, max(fit["C0"], fit["C1"], fit["C2"]), math.inf))
    inside = fit["delta0"] < fit["K_min"] and fit["K_max"] < 1.0 / fit["delta0"]
    ctx.check(CheckResult("K in (delta0, 1/delta0)", inside, fit["K_min"] - fit["delta0"], 0.0))


def _stage_eigenfunction(ctx: _Context) -> None:
    eig = ctx.config.eigen
    family = certify_lambda_family(ctx.metric, eig.lambdas, eig.r_max, eig.dr)
    rows = [
        {
            "lambda": res.lam,
            "fitted_c0": res.fitted_c0,
            "bound_holds": res.bound_holds,
            "lower_margin": res.lower_margin,
            "upper_margin": res.upper_margin,
        }
        for res in family.results
    ]
    ctx.emit("csv", "eigenfunction.csv", lambda p: write_csv(p, rows))
    for res in family.results:
        ctx.emit("dat", f"eigenfunction_lambda{res.lam:g}.dat", lambda p, res=res: write_dat(p, plot_data.eigen_columns(res)))
    ctx.line("== eigenfunction ==")
    ctx.line(f"  lambda0={family.lambda0:g}  common c0={family.c0:.6g}")
    ctx.lambda0 = family.lambda0
    certified = family.lambda0 >= max(eig.lambdas)
    ctx.check(CheckResult("eigenfunction envelope certified", certified, family.c0, 0.0, f"lambda0={family.lambda0:g}"))


def _default_lambda1(ctx: _Context) -> float:
    eig = ctx.config.eigen
    if eig.lambda1 is not None:
        return eig.lambda1
    lambda0 = ctx.lambda0 if ctx.lambda0 is not None else max(eig.lambdas)
    return LAMBDA1_FRACTION * lambda0


def _stage_psi_decay(ctx: _Context) -> None:
    eig = ctx.config.eigen
    p = ctx.params
    R1 = ctx.data.R1
    lambda1 = _default_lambda1(ctx)
    start = max(t_star(lambda1, p.mu1, p.mu2), PSI_ONSET / lambda1 - R1)
    r_need = cone_radius(ctx.metric, 4.0 * start, R1) + 1.0
    tf = make_test_function(ctx.metric, lambda1, p.mu1, p.mu2, r_need, eig.dr)
    table = psi_decay(tf, ctx.metric, eig.m, R1, samples=eig.samples, dr=eig.dr)
    rows = [{"t": t, "integral": v} for t, v in zip(table.times, table.values)]
    ctx.emit("csv", "psi_decay.csv", lambda path: write_csv(path, rows))
    ctx.emit("dat", "psi_decay.dat", lambda path: write_dat(path, plot_data.psi_columns(table)))
    gap = abs(table.fit.slope - table.predicted)
    ctx.line("== psi-decay ==")
    ctx.line(
        f"  lambda1={lambda1:g}  window=[{table.window[0]:.4g}, {table.window[1]:.4g}]  slope={table.fit.slope:.4f}  "
        f"predicted={table.predicted:.4f}  T_*={tf.T_star:.4g}"
    )
    ctx.check(CheckResult("psi L^m growth exponent", gap <= PSI_SLOPE_ATOL, gap, PSI_SLOPE_ATOL))


def _stage_kato(ctx: _Context) -> None:
    kato = ctx.config.kato
    params = kato.to_params(ctx.params)
    sweep = scaling_sweep(params, kato.deltas, kato.t_cap, kato.rtol, map_fn=ctx.worker("Kato 扫描").map)
    rows = [{"delta": pt.delta, "T_num": pt.T_num, "flags": ";".join(pt.flags)} for pt in sweep.points]
    summary = {
        "beta": params.beta,
        "a": params.a,
        "kato_alpha": params.kato_alpha,
        "slope": sweep.slope,
        "raw_slope": sweep.raw_fit.slope,
        "predicted": sweep.predicted,
        "r_squared": sweep.fit.r_squared,
    }
    ctx.emit("csv", "kato.csv", lambda p: write_csv(p, rows))
    ctx.emit("jsonl", "kato.jsonl", lambda p: write_jsonl(p, [summary]))
    ctx.emit("dat", "kato.dat", lambda p: write_dat(p, plot_data.kato_columns(sweep)))
    gap = relative_gap(sweep.slope, sweep.predicted)
    ctx.line("== kato ==")
    ctx.line(
        f"  beta={params.beta:g} a={params.a:g} alpha={params.kato_alpha:g}  "
        f"slope log(1+T)={sweep.slope:.4f}  raw log T={sweep.raw_fit.slope:.4f}  predicted={sweep.predicted:.4f}"
    )
    raw_gap = relative_gap(sweep.raw_fit.slope, sweep.predicted)
    ctx.check(
        CheckResult(
            "Kato scaling slope (log(1+T) vs log(1/delta))",
            gap <= KATO_SLOPE_RTOL,
            gap,
            KATO_SLOPE_RTOL,
            f"raw log T gap {raw_gap:.3g}",
        )
    )


def _stage_simulate(ctx: _Context) -> None:
    report = measure_lifespan(ctx.data, ctx.metric, ctx.params, ctx.solver, ctx.config.solver.snapshot_times)
    summary = {
        "epsilon": report.epsilon,
        "T_num": report.T_num,
        "T_num_high": report.T_num_high,
        "reason": report.reason,
        "flags": list(report.flags),
        "steps": report.steps,
        "t_end": report.t_end,
        "support_excess_cells": report.support_excess,
        "config_hash": ctx.hash,
    }
    ctx.emit("jsonl", "simulate.jsonl", lambda p: write_jsonl(p, [summary]))
    if report.history is not None:
        bundle = report.history
        ctx.emit("npz", "simulate_snapshots.npz", lambda p: save_snapshots(p, bundle))
        for i, t in enumerate(bundle.times):
            ctx.emit("dat", f"snapshot_t{t:g}.dat", lambda p, i=i: write_dat(p, plot_data.snapshot_columns(bundle, i)))
    ctx.line("== simulate ==")
    T = "none" if report.T_num is None else f"{report.T_num:.6g}"
    ctx.line(f"  eps={report.epsilon:g}  T_num={T}  reason={report.reason}  flags={','.join(report.flags) or '-'}")
    ctx.check(CheckResult("finite speed of propagation", "finite-speed-violated" not in report.flags, report.support_excess, 2.0))


def reference_predictions(
    params: ProblemParams,
    reference_q: Optional[float] = None,
    reference_p: Optional[float] = None,
) -> List[LifespanPrediction]:
    """被断言的幂律预测；给出 reference_q / reference_p 时先替换幂次再分类。"""
    ref = params
    if reference_q is not None and ref.c2 > 0:
        ref = ref.with_changes(q=reference_q)
    if reference_p is not None and ref.c1 > 0:
        ref = ref.with_changes(p=reference_p)
    if not blows_up(ref):
        return []
    return [pred for pred in classify(ref).predictions if pred.asserted and pred.form == LifespanForm.POWER]


def is_critical_run(params: ProblemParams) -> bool:
    """分类中出现指数形式或未断言的边界情形。"""
    return any(
        pred.form == LifespanForm.EXPONENTIAL or not pred.asserted
        for pred in classify(params).predictions
        if pred.regime != Regime.NO_PREDICTION
    )


def compare_with_predictions(
    records: Sequence[SweepRecord],
    params: ProblemParams,
    t_cap: float,
    reference_q: Optional[float] = None,
    reference_p: Optional[float] = None,
) -> Tuple[List[Dict[str, float]], List[CheckResult]]:
    """逐个 ε 把 T_num 与 predicted_lifespan（C0 = 1）并列。

    临界参数：未爆破的记录以 t_cap 作为寿命下界，要求 T 不小于每个亚临界预测；
    亚临界参数：log(T_num / min T_pred) 对 log(1/ε) 的斜率应接近 0。
    """
    predictions = reference_predictions(params, reference_q, reference_p)
    bounds = [[predicted_lifespan(pred, rec.epsilon) for pred in predictions] for rec in records]
    rows: List[Dict[str, float]] = []
    for rec, values in zip(records, bounds):
        row = {
            "epsilon": rec.epsilon,
            "T_num": rec.T_num if rec.T_num is not None else math.nan,
            "T_pred_min": min(values) if values else math.nan,
        }
        row.update({f"T_pred_{pred.regime.value}": value for pred, value in zip(predictions, values)})
        rows.append(row)
    if not predictions:
        return rows, []

    if is_critical_run(params):
        margins = [
            math.log((rec.T_num if rec.T_num is not None else t_cap) / max(values))
            for rec, values in zip(records, bounds)
        ]
        worst = min(margins)
        check = CheckResult("critical lifespan exceeds subcritical predictions", worst >= 0, worst, 0.0)
        return rows, [check]

    usable = [(rec, row) for rec, row in zip(records, rows) if rec.usable]
    if len(usable) < 3:
        raise FitError(f"可用于比较的点不足 3 个 (剩余 {len(usable)})")
    predicted = fit_power_law((1.0 / rec.epsilon, row["T_pred_min"]) for rec, row in usable)
    drift = fit_power_law((1.0 / rec.epsilon, rec.T_num / row["T_pred_min"]) for rec, row in usable)
    tol = LIFESPAN_SLOPE_RTOL * abs(predicted.slope)
    check = CheckResult(
        "predicted lifespan tracks T_num",
        abs(drift.slope) <= tol,
        drift.slope,
        tol,
        f"C0 ~ {math.exp(drift.intercept):.3g}",
    )
    return rows, [check]


def _stage_lifespan_sweep(ctx: _Context) -> None:
    sweep = epsilon_sweep(
        ctx.data,
        ctx.metric,
        ctx.params,
        ctx.solver,
        ctx.config.sweep.values(),
        map_fn=ctx.worker("寿命扫描").map,
        config_hash=ctx.hash,
    )
    pred = sweep.prediction
    summary = {
        "slope": sweep.slope,
        "r_squared": sweep.fit.r_squared,
        "stderr": sweep.fit.stderr,
        "n_points": sweep.fit.n_points,
        "regime": pred.regime.value if pred else None,
        "predicted_exponent": pred.exponent if pred else None,
        "predicted_slope": sweep.predicted_slope,
        "config_hash": ctx.hash,
    }
    ctx.emit("csv", "lifespan_sweep.csv", lambda p: write_sweep_csv(p, sweep.records))
    ctx.emit("jsonl", "lifespan_sweep.jsonl", lambda p: write_jsonl(p, [*(r.as_row() for r in sweep.records), summary]))
    ctx.emit("dat", "lifespan.dat", lambda p: write_dat(p, plot_data.lifespan_columns(sweep.records, sweep.fit)))
    ctx.line("== lifespan-sweep ==")
    for rec in sweep.records:
        T = "none" if rec.T_num is None else f"{rec.T_num:.6g}"
        ctx.line(f"  eps={rec.epsilon:<10.4g} T={T:<12} flags={';'.join(rec.flags) or '-'}")
    ctx.line(
        f"  slope={sweep.slope:.4f} (r2={sweep.fit.r_squared:.4f})  predicted {summary['regime']} "
        f"slope={sweep.predicted_slope:.4f}  [consistency with an upper bound, not sharpness]"
    )
    if math.isfinite(sweep.predicted_slope):
        gap = relative_gap(sweep.slope, sweep.predicted_slope)
        ctx.check(CheckResult("lifespan slope consistency", gap <= LIFESPAN_SLOPE_RTOL, gap, LIFESPAN_SLOPE_RTOL))
    robust = not any(SLOW_BLOWUP_FLAG in rec.flags for rec in sweep.records)
    ctx.check(CheckResult("threshold robustness", robust, 0.0, ctx.solver.robustness_rtol))
    sweep_cfg = ctx.config.sweep
    try:
        rows, checks = compare_with_predictions(
            sweep.records, ctx.params, ctx.solver.t_cap, sweep_cfg.reference_q, sweep_cfg.reference_p
        )
    except FitError as exc:
        logger.warning("寿命预测比较跳过: %s", exc)
        return
    ctx.emit("csv", "lifespan_vs_prediction.csv", lambda p: write_csv(p, rows))
    for check in checks:
        ctx.line(f"  {check.name}: margin={check.margin:.4g} tol={check.tolerance:.4g} {check.note}".rstrip())
        ctx.check(check)


def _trace_checks(ctx: _Context, trace: FunctionalTrace, hypothesis_ok: bool) -> CheckReport:
    checks = run_checks(trace, ctx.params, ctx.metric, ctx.data.R1, hypothesis_ok)
    identity = check_ode_identity(trace, ctx.params)
    columns = trace.as_columns()
    rows = [dict(zip(columns, row)) for row in zip(*columns.values())]
    ctx.emit("csv", "functionals.csv", lambda p: write_csv(p, rows))
    ctx.emit("dat", "functionals.dat", lambda p: write_dat(p, plot_data.trace_columns(trace)))
    ctx.line("== functionals ==")
    ctx.line(
        f"  samples={trace.times.size} branch={trace.branch} "
        f"ODE identity max residual={identity.max_abs:.3g} (relative {identity.relative:.3g})"
    )
    return checks


def _record_checks(ctx: _Context, checks: CheckReport) -> None:
    for res in checks.results:
        ctx.check(res)
        ctx.line(f"  [{'pass' if res.passed else 'FAIL'}] {res.name}: margin={res.margin:.4g} tol={res.tolerance:.3g} {res.note}")


def _stage_functionals(ctx: _Context) -> None:
    bundle = _sampled_history(ctx.data, ctx.metric, ctx.params, ctx.solver, ctx.config.solver.sample_dt)
    trace = compute_trace(bundle, ctx.metric, ctx.params, epsilon=ctx.data.epsilon)
    hypothesis_ok = ctx.data.satisfies_sign_condition(ctx.metric, ctx.params)
    checks = _trace_checks(ctx, trace, hypothesis_ok)
    ctx.emit("npz", "functionals_snapshots.npz", lambda p: save_snapshots(p, bundle))

    if ctx.params.c1 + ctx.params.c2 > 0 and len(ctx.config.sweep.lower_bound_eps) >= 3:
        eps_list = sorted(set(ctx.config.sweep.lower_bound_eps))
        k = len(eps_list)
        runs = ctx.worker("下界扫描").map(
            _sampled_history,
            [ctx.data.with_epsilon(e) for e in eps_list],
            [ctx.metric] * k,
            [ctx.params] * k,
            [ctx.solver] * k,
            [ctx.config.solver.sample_dt] * k,
        )
        traces = [compute_trace(b, ctx.metric, ctx.params) for b in runs]
        lower = check_lower_bounds(traces, ctx.params)
        checks.extend(lower)
        rows = [vars(row) for row in lower.details["rows"]]
        ctx.emit("csv", "lower_bounds.csv", lambda p: write_csv(p, rows))
        ctx.line(f"  C1={lower.details['C1']:.4g} C2={lower.details['C2']:.4g} C3={lower.details['C3']:.4g}")

    _record_checks(ctx, checks)


def _sampled_history(data, metric, params, solver, sample_dt):
    times = np.arange(0.0, solver.t_cap + 0.5 * sample_dt, sample_dt)
    return measure_lifespan(data, metric, params, solver, list(times)).history


STAGE_RUNNERS: Dict[str, Callable[[_Context], None]] = {
    "exponents": _stage_exponents,
    "geometry": _stage_geometry,
    "eigenfunction": _stage_eigenfunction,
    "psi-decay": _stage_psi_decay,
    "kato": _stage_kato,
    "simulate": _stage_simulate,
    "lifespan-sweep": _stage_lifespan_sweep,
    "functionals": _stage_functionals,
}


def _render_report(ctx: _Context) -> str:
    out = [f"config sha256: {ctx.hash}", f"pipeline: {', '.join(ctx.config.pipeline)}", ""]
    out.extend(ctx.result.lines)
    out.append("")
    out.append("== verdicts ==")
    for c in ctx.result.checks:
        out.append(f"  {'pass' if c.passed else 'FAIL':<4}  {c.name:<42} margin={c.margin:.4g}  tol={c.tolerance:.3g}  {c.note}")
    out.append(f"exit code: {ctx.result.exit_code}")
    return "\n".join(out) + "\n"


def run_experiment(
    config: ExperimentConfig,
    out_dir: Optional[str | Path] = None,
    progress: Optional[ProgressCallback] = None,
) -> ExperimentResult:
    out = Path(out_dir or config.outputs.directory)
    ctx = _Context(config, out, progress)
    for stage in config.pipeline:
        logger.info("阶段 %s 开始", stage)
        STAGE_RUNNERS[stage](ctx)
    return _finish(ctx)


def analyse_snapshots(
    config: ExperimentConfig,
    snapshot_path: str | Path,
    out_dir: Optional[str | Path] = None,
) -> ExperimentResult:
    """对已保存的快照文件计算泛函轨迹并执行检查（不重新求解）。

    快照须为均匀采样；sign 条件按配置中的初值判断。
    """
    out = Path(out_dir or config.outputs.directory)
    ctx = _Context(config, out, None)
    bundle = load_snapshots(snapshot_path)
    logger.info("读取快照 %s: %d 帧", snapshot_path, len(bundle))
    trace = compute_trace(bundle, ctx.metric, ctx.params)
    hypothesis_ok = ctx.data.satisfies_sign_condition(ctx.metric, ctx.params)
    _record_checks(ctx, _trace_checks(ctx, trace, hypothesis_ok))
    return _finish(ctx)


def _finish(ctx: _Context) -> ExperimentResult:
    ctx.result.artifacts.append(write_text(ctx.path("report.txt"), _render_report(ctx)))
    logger.info("完成: %d 项检查, 退出码 %d", len(ctx.result.checks), ctx.result.exit_code)
    return ctx.result
