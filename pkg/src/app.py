# -*- coding: utf-8 -*-
"""命令行入口：每个子命令对应 pipeline 中的一个阶段，run 执行配置里的完整 pipeline。

退出码：0 全部检查通过；1 配置或输入错误（消息中带字段路径）；2 至少一项检查未通过。
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Callable, List, NoReturn, Optional, Sequence

import click

from .config import dump_config, load_config
from .errors import ConfigError, LabError
from .experiment import EXIT_CONFIG, ExperimentResult, analyse_snapshots, run_experiment

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"


def _setup_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def _config_options(fn: Callable) -> Callable:
    """所有子命令共用的 --config / --set / --out。"""
    fn = click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None, help="输出目录（默认取 [outputs].directory）")(fn)
    fn = click.option("--set", "sets", multiple=True, metavar="SECTION.FIELD=VALUE", help="覆盖配置项，可重复")(fn)
    fn = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="TOML 配置文件")(fn)
    return fn


def _override(section: str, **values) -> List[str]:
    """把命令行专用选项翻译成 --set 形式；None 与空元组表示未给出。"""
    out = []
    for key, value in values.items():
        if value is None or value == ():
            continue
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, (tuple, list)):
            text = "[" + ", ".join(repr(float(v)) for v in value) + "]"
        elif isinstance(value, str):
            text = f"'{value}'"
        else:
            text = repr(value)
        out.append(f"{section}.{key}={text}")
    return out


def _fail(message: str) -> NoReturn:
    click.echo(message, err=True)
    raise click.exceptions.Exit(EXIT_CONFIG)


def _finish(result: ExperimentResult) -> None:
    click.echo("\n".join(result.lines))
    for check in result.checks:
        if not check.passed:
            click.echo(f"FAIL {check.name}: margin={check.margin:.4g} tol={check.tolerance:.3g} {check.note}", err=True)
    click.echo(f"报告: {Path(result.out_dir) / 'report.txt'}")
    raise click.exceptions.Exit(result.exit_code)


def _progress(current: int, total: int, label: str) -> None:
    logger.info(label)


def _run_stage(
    config_path: Optional[str],
    sets: Sequence[str],
    out_dir: Optional[str],
    pipeline: Optional[Sequence[str]],
    extra: Sequence[str] = (),
) -> None:
    overrides = list(extra) + list(sets)
    if pipeline is not None:
        overrides.insert(0, "pipeline=[" + ", ".join(f'"{s}"' for s in pipeline) + "]")
    try:
        config = load_config(config_path, overrides)
        result = run_experiment(config, out_dir, progress=_progress)
    except ConfigError as exc:
        _fail("配置错误:\n" + exc.format())
    except LabError as exc:
        _fail(f"{type(exc).__name__}: {exc}")
    _finish(result)


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("-v", "--verbose", is_flag=True, help="输出调试日志")
@click.option("-q", "--quiet", is_flag=True, help="只输出警告及以上")
def cli(verbose: bool, quiet: bool) -> None:
    """半线性波动方程爆破的数值实验室。"""
    _setup_logging(verbose, quiet)


@cli.command()
@_config_options
@click.option("--n", type=int, default=None)
@click.option("--mu1", type=float, default=None)
@click.option("--mu2", type=float, default=None)
@click.option("--p", type=float, default=None)
@click.option("--q", type=float, default=None)
@click.option("--c1", type=float, default=None)
@click.option("--c2", type=float, default=None)
def exponents(config_path, sets, out_dir, n, mu1, mu2, p, q, c1, c2):
    """临界指数、寿命估计与主导区域。"""
    extra = _override("problem", n=n, mu1=mu1, mu2=mu2, p=p, q=q, c1=c1, c2=c2)
    _run_stage(config_path, sets, out_dir, ["exponents"], extra)


@cli.group()
def geometry():
    """度量相关的检查。"""


@geometry.command("check")
@_config_options
@click.option("--profile", type=click.Choice(["flat", "long_range", "tabulated"]), default=None)
@click.option("--kappa", type=float, default=None)
@click.option("--decay-rho", type=float, default=None)
@click.option("--table", type=click.Path(dir_okay=False), default=None, help="列为 r,K,dK,d2K 的 CSV")
def geometry_check(config_path, sets, out_dir, profile, kappa, decay_rho, table):
    """拟合度量的衰减常数并检查 K 的上下界。"""
    extra = _override("metric", profile=profile, kappa=kappa, decay_rho=decay_rho, table=table)
    _run_stage(config_path, sets, out_dir, ["geometry"], extra)


@cli.command()
@_config_options
@click.option("--lambda", "lambdas", type=float, multiple=True)
@click.option("--r-max", type=float, default=None)
@click.option("--dr", type=float, default=None)
def eigenfunction(config_path, sets, out_dir, lambdas, r_max, dr):
    """求解广义特征函数并检验包络界。"""
    extra = _override("eigen", lambdas=lambdas, r_max=r_max, dr=dr)
    _run_stage(config_path, sets, out_dir, ["eigenfunction"], extra)


@cli.command("psi-decay")
@_config_options
@click.option("--lambda1", type=float, default=None)
@click.option("--m", type=float, default=None)
def psi_decay(config_path, sets, out_dir, lambda1, m):
    """测试函数 L^m 积分的增长指数。"""
    extra = _override("eigen", lambda1=lambda1, m=m)
    _run_stage(config_path, sets, out_dir, ["psi-decay"], extra)


@cli.command()
@_config_options
@click.option("--beta", type=float, default=None)
@click.option("--a", type=float, default=None)
@click.option("--alpha", "kato_alpha", type=float, default=None)
@click.option("--k", type=float, default=None)
@click.option("--delta", "deltas", type=float, multiple=True)
@click.option("--from-problem", is_flag=True, help="由 [problem] 推出 Kato 参数")
def kato(config_path, sets, out_dir, beta, a, kato_alpha, k, deltas, from_problem):
    """Kato 型常微分不等式的爆破时间标度。"""
    extra = _override("kato", beta=beta, a=a, kato_alpha=kato_alpha, k=k, deltas=deltas, from_problem=from_problem or None)
    _run_stage(config_path, sets, out_dir, ["kato"], extra)


@cli.command()
@_config_options
@click.option("--eps", "epsilon", type=float, default=None)
@click.option("--dr", type=float, default=None)
@click.option("--t-cap", type=float, default=None)
@click.option("--snapshot", "snapshot_times", type=float, multiple=True, help="保存快照的时刻，可重复")
def simulate(config_path, sets, out_dir, epsilon, dr, t_cap, snapshot_times):
    """单次求解，记录寿命与快照。"""
    extra = _override("data", epsilon=epsilon) + _override("solver", dr=dr, t_cap=t_cap, snapshot_times=snapshot_times)
    _run_stage(config_path, sets, out_dir, ["simulate"], extra)


@cli.command("lifespan-sweep")
@_config_options
@click.option("--eps", "eps", type=float, multiple=True)
@click.option("--dr", type=float, default=None)
@click.option("--t-cap", type=float, default=None)
@click.option("--workers", "max_workers", type=int, default=None)
def lifespan_sweep(config_path, sets, out_dir, eps, dr, t_cap, max_workers):
    """对一组 epsilon 测量寿命并拟合标度律。"""
    extra = _override("sweep", eps=eps, max_workers=max_workers) + _override("solver", dr=dr, t_cap=t_cap)
    _run_stage(config_path, sets, out_dir, ["lifespan-sweep"], extra)


@cli.command()
@_config_options
@click.option("--snapshots", "snapshot_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="已保存的快照 .npz；不给出时按配置重新求解")
@click.option("--eps", "epsilon", type=float, default=None)
def functionals(config_path, sets, out_dir, snapshot_path, epsilon):
    """积分泛函轨迹及其单调性、凸性、下界检查。"""
    extra = _override("data", epsilon=epsilon)
    if snapshot_path is None:
        _run_stage(config_path, sets, out_dir, ["functionals"], extra)
        return
    try:
        config = load_config(config_path, extra + list(sets))
        result = analyse_snapshots(config, snapshot_path, out_dir)
    except ConfigError as exc:
        _fail("配置错误:\n" + exc.format())
    except LabError as exc:
        _fail(f"{type(exc).__name__}: {exc}")
    _finish(result)


@cli.command("print-config")
@_config_options
def print_config(config_path, sets, out_dir):
    """打印校验后的完整配置（含默认值）。"""
    try:
        config = load_config(config_path, sets)
    except ConfigError as exc:
        _fail("配置错误:\n" + exc.format())
    click.echo(dump_config(config), nl=False)


@cli.command()
@_config_options
def run(config_path, sets, out_dir):
    """按配置文件中的 pipeline 依次执行全部阶段。"""
    _run_stage(config_path, sets, out_dir, None)


def run_app(argv: Optional[Sequence[str]] = None) -> int:
    try:
        code = cli.main(args=list(argv) if argv is not None else None, prog_name="blowup-lab", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("已中止", err=True)
        return EXIT_CONFIG
    except click.ClickException as exc:
        exc.show()
        return EXIT_CONFIG
    return code if isinstance(code, int) else 0
