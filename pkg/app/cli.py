"""
命令行入口

子命令:
  solve           单个问题 / 离散 / 求解器
  convergence     网格加密的收敛性研究
  compare         经典离散与 Hadamard 离散并排对比
  jacobian-check  解析 Jacobian 与有限差分核对

退出码: 0 成功, 1 未收敛或核对失败, 2 参数错误。报告写到 stdout 或 --output, 日志写到 stderr。
"""
import logging
import sys
from enum import Enum
from typing import List, Optional

import typer

from app.config import (
    DEFAULT_DAMPING,
    DEFAULT_FD_STEP,
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    LOG_LEVEL,
    NO_COLOR,
)
from app.services import benchmarks, report_writer
from app.services.assembly import BoundaryMode
from app.services.discretization import BasisKind
from app.services.solvers import SolverConfig, SolverMethod
from app.services.system_forms import Formulation, PicardFreeze
from app.utils.errors import GalerkinError

logger = logging.getLogger("hadamard-galerkin")

PROG_NAME = "hadamard-galerkin"
JACOBIAN_TOL = 1e-6

cli = typer.Typer(
    name=PROG_NAME,
    add_completion=False,
    no_args_is_help=True,
    help="一维二次非线性问题的 Galerkin / 有限元求解: 经典离散与 Hadamard 积离散",
)


class SolverChoice(str, Enum):
    NEWTON_SJT = "newton-sjt"
    NEWTON_FD = "newton-fd"
    PICARD = "picard"


class ReportFormat(str, Enum):
    JSON = "json"
    CSV = "csv"


# ======================== Option parsing ========================

def _check_problem(name: str) -> str:
    names = benchmarks.problem_names()
    if name not in names:
        raise typer.BadParameter(f"unknown problem '{name}', choose from {', '.join(names)}")
    return name


def _parse_n_list(text: str) -> List[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise typer.BadParameter(f"expected comma-separated integers, got '{text}'")
    if not values or any(v < 1 for v in values):
        raise typer.BadParameter(f"expected positive integers, got '{text}'")
    if any(b <= a for a, b in zip(values[:-1], values[1:])):
        raise typer.BadParameter(f"n values must be strictly ascending, got '{text}'")
    return values


PROBLEM = typer.Option("burgers", "--problem", callback=_check_problem, help="内置问题名")
BASIS = typer.Option(BasisKind.FE_HAT, "--basis", help="fe_hat: n 为单元数; modal_poly: n 为模态数")
N = typer.Option(16, "--n", min=1, help="单元数或模态数")
FORMULATION = typer.Option(Formulation.HADAMARD, "--formulation")
SOLVER = typer.Option(SolverChoice.NEWTON_SJT, "--solver")
TOL = typer.Option(DEFAULT_TOL, "--tol", help="残差 ∞ 范数目标")
MAX_ITER = typer.Option(DEFAULT_MAX_ITER, "--max-iter")
DAMPING = typer.Option(DEFAULT_DAMPING, "--damping", help="更新阻尼, (0, 1]")
FD_STEP = typer.Option(DEFAULT_FD_STEP, "--fd-step", help="有限差分相对步长")
FREEZE = typer.Option(PicardFreeze.FREEZE_P, "--picard-freeze")
BOUNDARY_MODE = typer.Option(BoundaryMode.ELIMINATE, "--boundary-mode")
OUTPUT = typer.Option(None, "--output", help="报告路径, 默认写到 stdout")
FORMAT = typer.Option(ReportFormat.JSON, "--format")


def _config(solver: SolverChoice, tol: float, max_iter: int, damping: float,
            fd_step: float, freeze: PicardFreeze) -> SolverConfig:
    return SolverConfig(
        method=SolverMethod.parse(solver.value),
        tol=tol,
        max_iter=max_iter,
        damping=damping,
        fd_step=fd_step,
        picard_freeze=freeze,
    )


def _secho(message: str, **styles):
    typer.secho(message, err=True, color=False if NO_COLOR else None, **styles)


def _usage_error(e: GalerkinError) -> typer.Exit:
    _secho(f"Error [{e.code}]: {e}", fg=typer.colors.RED)
    return typer.Exit(code=2)


def _emit(command: str, records, fmt: ReportFormat, output: Optional[str],
          extra_meta=None, columns=None):
    report = report_writer.build_report(command, records, extra_meta)
    report_writer.write_output(report_writer.render(report, fmt.value, columns), output)


def _status(converged: bool, what: str):
    if converged:
        _secho(f"{what}: 收敛", fg=typer.colors.GREEN)
    else:
        _secho(f"{what}: 未收敛", fg=typer.colors.YELLOW)


# ======================== Commands ========================

@cli.command()
def solve(
    problem: str = PROBLEM,
    basis: BasisKind = BASIS,
    n: int = N,
    formulation: Formulation = FORMULATION,
    solver: SolverChoice = SOLVER,
    tol: float = TOL,
    max_iter: int = MAX_ITER,
    damping: float = DAMPING,
    fd_step: float = FD_STEP,
    picard_freeze: PicardFreeze = FREEZE,
    boundary_mode: BoundaryMode = BOUNDARY_MODE,
    output: Optional[str] = OUTPUT,
    format: ReportFormat = FORMAT,
):
    """求解一个内置问题"""
    try:
        cfg = _config(solver, tol, max_iter, damping, fd_step, picard_freeze)
        record = benchmarks.run_single(benchmarks.get_problem(problem), basis, n,
                                       formulation, cfg, boundary_mode)
    except GalerkinError as e:
        raise _usage_error(e)

    _emit("solve", [report_writer.record_dict(record)], format, output)
    _status(record.converged, f"{problem} {formulation.value} n={n}")
    raise typer.Exit(code=0 if record.converged else 1)


@cli.command()
def convergence(
    problem: str = PROBLEM,
    basis: BasisKind = BASIS,
    n_list: str = typer.Option("8,16,32,64", "--n-list", help="逗号分隔, 严格递增"),
    formulation: Formulation = FORMULATION,
    solver: SolverChoice = SOLVER,
    tol: float = TOL,
    max_iter: int = MAX_ITER,
    damping: float = DAMPING,
    fd_step: float = FD_STEP,
    picard_freeze: PicardFreeze = FREEZE,
    boundary_mode: BoundaryMode = BOUNDARY_MODE,
    output: Optional[str] = OUTPUT,
    format: ReportFormat = FORMAT,
):
    """网格加密研究, 给出相邻 n 之间的 L² 收敛阶"""
    sizes = _parse_n_list(n_list)
    try:
        cfg = _config(solver, tol, max_iter, damping, fd_step, picard_freeze)
        records = benchmarks.run_study(benchmarks.get_problem(problem), basis, sizes,
                                       formulation, cfg, boundary_mode)
    except GalerkinError as e:
        raise _usage_error(e)

    _emit("convergence", [report_writer.record_dict(r) for r in records], format, output)
    for r in records:
        order = "-" if r.observed_order is None else f"{r.observed_order:.3f}"
        logger.info(f"n={r.n}: L2={r.error_l2}, order={order}")
    converged = all(r.converged for r in records)
    _status(converged, f"{problem} convergence {formulation.value}")
    raise typer.Exit(code=0 if converged else 1)


def _compare_table(records) -> str:
    header = f"{'formulation':<12}{'converged':>10}{'iterates':>9}{'error_l2':>14}{'error_max':>14}" \
             f"{'quad_asm':>10}{'quad_iter':>11}"
    lines = [header, "-" * len(header)]
    for r in records:
        l2 = "-" if r.error_l2 is None else f"{r.error_l2:.4e}"
        mx = "-" if r.error_max is None else f"{r.error_max:.4e}"
        lines.append(f"{r.formulation.value:<12}{str(r.converged):>10}{r.report.iterates:>9}{l2:>14}{mx:>14}"
                     f"{r.report.quad_evals_assembly:>10}{r.report.quad_evals_iteration:>11}")
    return "\n".join(lines)


@cli.command()
def compare(
    problem: str = PROBLEM,
    basis: BasisKind = BASIS,
    n: int = N,
    solver: SolverChoice = SOLVER,
    tol: float = TOL,
    max_iter: int = MAX_ITER,
    damping: float = DAMPING,
    fd_step: float = FD_STEP,
    picard_freeze: PicardFreeze = FREEZE,
    boundary_mode: BoundaryMode = BOUNDARY_MODE,
    output: Optional[str] = OUTPUT,
    format: ReportFormat = FORMAT,
):
    """经典离散 vs Hadamard 离散"""
    try:
        cfg = _config(solver, tol, max_iter, damping, fd_step, picard_freeze)
        records, gap = benchmarks.compare(benchmarks.get_problem(problem), basis, n, cfg, boundary_mode)
    except GalerkinError as e:
        raise _usage_error(e)

    _emit("compare", [report_writer.record_dict(r) for r in records], format, output,
          extra_meta={"solution_gap_inf": gap})
    table = _compare_table(records)
    if output:
        typer.echo(table)
    else:
        typer.echo(table, err=True)
    _secho(f"‖x_hadamard − x_classical‖∞ = {gap:.6e}")
    converged = all(r.converged for r in records)
    raise typer.Exit(code=0 if converged else 1)


@cli.command("jacobian-check")
def jacobian_check(
    problem: str = PROBLEM,
    basis: BasisKind = BASIS,
    n: int = typer.Option(8, "--n", min=1, help="单元数或模态数"),
    samples: int = typer.Option(20, "--samples", min=1, help="随机点个数"),
    seed: int = typer.Option(0, "--seed"),
    fd_step: float = FD_STEP,
    boundary_mode: BoundaryMode = BOUNDARY_MODE,
    output: Optional[str] = OUTPUT,
    format: ReportFormat = FORMAT,
):
    """解析 Jacobian (hadamard / kronecker / classical) 与中心差分的相对误差"""
    try:
        checks = benchmarks.jacobian_check(benchmarks.get_problem(problem), basis, n,
                                           samples, seed, fd_step, boundary_mode)
    except GalerkinError as e:
        raise _usage_error(e)

    worst = max(c.rel_error for c in checks)
    _emit("jacobian-check", [report_writer.check_dict(c) for c in checks], format, output,
          extra_meta={"max_rel_error": worst, "tolerance": JACOBIAN_TOL},
          columns=["system", "sample", "rel_error"])
    passed = worst <= JACOBIAN_TOL
    _secho(f"jacobian-check 最大相对误差 {worst:.3e} ({'通过' if passed else '未通过'})",
           fg=typer.colors.GREEN if passed else typer.colors.RED)
    raise typer.Exit(code=0 if passed else 1)


# ======================== Entry ========================

def cli_main(argv: Optional[List[str]] = None) -> int:
    """运行命令行, 返回退出码 (不调用 sys.exit)

    以 standalone 模式运行, 参数错误、typer.Exit 与中断都由命令行框架转成 SystemExit,
    这里只取退出码。
    """
    logging.basicConfig(
        level=getattr(logging, LOG_LEVEL, logging.WARNING),
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        stream=sys.stderr,
    )
    args = list(sys.argv[1:] if argv is None else argv)
    command = typer.main.get_command(cli)
    try:
        command.main(args=args, prog_name=PROG_NAME, standalone_mode=True)
    except SystemExit as e:
        if e.code is None:
            return 0
        return e.code if isinstance(e.code, int) else 1
    return 0
