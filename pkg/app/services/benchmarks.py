"""
基准问题与数值研究

内置制造解问题、收敛性研究 (网格加密)、经典/Hadamard 两种离散的对比,
以及解析 Jacobian 与有限差分的核对。独立的计算通过 asyncio 线程池并发执行,
结果按输入顺序返回。
"""
import asyncio
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.config import (
    DEFAULT_FD_STEP,
    ERROR_QUAD_ORDER,
    MAX_KRONECKER_N,
    PICARD_FALLBACK_DAMPING,
    STUDY_WORKERS,
)
from app.services.assembly import (
    BoundaryCondition,
    BoundaryMode,
    BoundarySpec,
    LinearOperatorSpec,
    ProblemSpec,
    QuadCounter,
    TrialSpace,
)
from app.services.discretization import (
    BasisKind,
    BasisSet,
    Domain1D,
    eval_uhat,
    gauss_rule,
    make_basis,
)
from app.services.solvers import SolveReport, SolverConfig, SolverMethod, solve
from app.services.system_forms import (
    Formulation,
    assemble_hadamard_system,
    assemble_kronecker_system,
    assemble_system,
    finite_difference_jacobian,
)
from app.utils.errors import GalerkinError, ParameterError

logger = logging.getLogger(__name__)

MANUFACTURED_CHECK_POINTS = 50
MANUFACTURED_CHECK_TOL = 1e-10
MAX_NORM_SAMPLES = 1001
BURGERS_VISCOSITY = 0.1


# ======================== Problems ========================

@dataclass(frozen=True)
class ManufacturedSolution:
    """制造解 u 及其一、二阶导数"""
    u: Callable[[np.ndarray], np.ndarray]
    du: Callable[[np.ndarray], np.ndarray]
    d2u: Callable[[np.ndarray], np.ndarray]

    def derivatives(self) -> Tuple[Callable, Callable, Callable]:
        return self.u, self.du, self.d2u

    def __call__(self, x):
        return self.u(np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class BenchmarkProblem:
    name: str
    spec: ProblemSpec
    exact: Optional[ManufacturedSolution] = None
    notes: str = ""

    def __post_init__(self):
        if self.exact is not None:
            self.check_manufactured()

    def operator_residual(self, x: np.ndarray) -> np.ndarray:
        """p(u)·q(u) + L(u) − f 在点集 x 上的值 (u 为制造解)"""
        derivs = self.exact.derivatives()
        spec = self.spec
        nonlinear = spec.p.apply_exact(derivs, x) * spec.q.apply_exact(derivs, x)
        return nonlinear + spec.L.apply_exact(derivs, x) - spec.source(x)

    def check_manufactured(self):
        x = np.linspace(self.spec.domain.a, self.spec.domain.b, MANUFACTURED_CHECK_POINTS)
        worst = float(np.max(np.abs(self.operator_residual(x))))
        if worst > MANUFACTURED_CHECK_TOL:
            raise ParameterError(f"manufactured solution of {self.name} is off by {worst:.3e}")

    def with_mode(self, mode: Union[BoundaryMode, str, None]) -> "BenchmarkProblem":
        if mode is None:
            return self
        return BenchmarkProblem(self.name, self.spec.with_mode(mode), self.exact, self.notes)


def _burgers(nu: float = BURGERS_VISCOSITY) -> BenchmarkProblem:
    pi = np.pi
    exact = ManufacturedSolution(
        u=lambda x: np.sin(pi * x),
        du=lambda x: pi * np.cos(pi * x),
        d2u=lambda x: -pi ** 2 * np.sin(pi * x),
    )
    spec = ProblemSpec(
        p=LinearOperatorSpec.identity(),
        q=LinearOperatorSpec.derivative(1),
        L=LinearOperatorSpec.derivative(2, -nu),
        f=lambda x: pi * np.sin(pi * x) * np.cos(pi * x) + nu * pi ** 2 * np.sin(pi * x),
        domain=Domain1D(0.0, 1.0),
        bc=BoundarySpec(BoundaryCondition.dirichlet(0.0), BoundaryCondition.dirichlet(0.0)),
    )
    return BenchmarkProblem("burgers", spec, exact, f"steady Burgers u·u' − νu'' = f, ν = {nu}")


def _reaction() -> BenchmarkProblem:
    exact = ManufacturedSolution(
        u=lambda x: x * (1.0 - x),
        du=lambda x: 1.0 - 2.0 * x,
        d2u=lambda x: np.full(np.shape(x), -2.0),
    )
    spec = ProblemSpec(
        p=LinearOperatorSpec.identity(),
        q=LinearOperatorSpec.identity(),
        L=LinearOperatorSpec.identity() + LinearOperatorSpec.derivative(2, -1.0),
        f=lambda x: (x * (1.0 - x)) ** 2 + x * (1.0 - x) + 2.0,
    )
    return BenchmarkProblem("reaction", spec, exact, "quadratic reaction u² + u − u'' = f")


def _poisson() -> BenchmarkProblem:
    exact = ManufacturedSolution(
        u=lambda x: x * (1.0 - x),
        du=lambda x: 1.0 - 2.0 * x,
        d2u=lambda x: np.full(np.shape(x), -2.0),
    )
    spec = ProblemSpec(
        p=LinearOperatorSpec.zero(),
        q=LinearOperatorSpec.identity(),
        L=LinearOperatorSpec.derivative(2, -1.0),
        f=lambda x: np.full(np.shape(x), 2.0),
    )
    return BenchmarkProblem("poisson", spec, exact, "linear control case −u'' = 2")


def _reaction_mixed() -> BenchmarkProblem:
    exact = ManufacturedSolution(
        u=lambda x: 1.0 + x ** 2,
        du=lambda x: 2.0 * x,
        d2u=lambda x: np.full(np.shape(x), 2.0),
    )
    spec = ProblemSpec(
        p=LinearOperatorSpec.identity(),
        q=LinearOperatorSpec.identity(),
        L=LinearOperatorSpec.identity() + LinearOperatorSpec.derivative(2, -1.0),
        f=lambda x: (1.0 + x ** 2) ** 2 + (1.0 + x ** 2) - 2.0,
        bc=BoundarySpec(BoundaryCondition.dirichlet(1.0), BoundaryCondition.neumann(2.0)),
    )
    return BenchmarkProblem("reaction_mixed", spec, exact,
                            "u² + u − u'' = f, u(0) = 1, ∂u/∂n(1) = 2")


def builtin_problems() -> List[BenchmarkProblem]:
    """内置问题; 构造时校验制造解"""
    return [_burgers(), _reaction(), _poisson(), _reaction_mixed()]


def get_problem(name: str) -> BenchmarkProblem:
    problems = {p.name: p for p in builtin_problems()}
    if name not in problems:
        raise ParameterError(f"unknown problem '{name}', choose from {', '.join(problems)}")
    return problems[name]


def problem_names() -> List[str]:
    return [p.name for p in builtin_problems()]


# ======================== Errors ========================

def error_norms(basis: BasisSet, space: TrialSpace, y: np.ndarray,
                exact: ManufacturedSolution) -> Tuple[float, float]:
    """(L² 误差, 最大误差); L² 每个积分单元用 ERROR_QUAD_ORDER 点 Gauss 规则"""
    coeffs = space.full(y)
    total = 0.0
    for panel in basis.panels(gauss_rule(ERROR_QUAD_ORDER)):
        diff = panel.values @ coeffs[panel.active] - exact(panel.x)
        total += float(np.dot(panel.w, diff ** 2))

    samples = np.linspace(basis.domain.a, basis.domain.b, MAX_NORM_SAMPLES)
    if basis.mesh_nodes is not None:
        samples = np.union1d(samples, basis.mesh_nodes)
    max_err = float(np.max(np.abs(eval_uhat(basis, coeffs, samples) - exact(samples))))
    return math.sqrt(total), max_err


# ======================== Runs ========================

@dataclass
class RunRecord:
    problem: str
    basis: BasisKind
    n: int
    formulation: Formulation
    solver: SolverMethod
    report: SolveReport
    coefficients: np.ndarray
    error_l2: Optional[float] = None
    error_max: Optional[float] = None
    observed_order: Optional[float] = None
    notes: List[str] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.report.converged


def _failed_report(cfg: SolverConfig, reason: str) -> SolveReport:
    return SolveReport(converged=False, iterates=0, residual_history=[float("nan")],
                       solution=np.zeros(0), method=cfg.method, failure_reason=reason)


def _combine_attempts(first: SolveReport, retry: SolveReport) -> SolveReport:
    """失败尝试与重试合并为一份报告: 迭代次数、积分计数与耗时累加

    两次尝试从同一初值出发, 重试的初始残差不重复记入历史。
    """
    return SolveReport(
        converged=retry.converged,
        iterates=first.iterates + retry.iterates,
        residual_history=first.residual_history + retry.residual_history[1:],
        solution=retry.solution,
        method=retry.method,
        quad_evals_assembly=retry.quad_evals_assembly,
        quad_evals_iteration=first.quad_evals_iteration + retry.quad_evals_iteration,
        wall_time=first.wall_time + retry.wall_time,
        failure_reason=retry.failure_reason,
        notes=first.notes + retry.notes,
    )


def run_single(problem: BenchmarkProblem, basis_kind: Union[BasisKind, str], n: int,
               formulation: Union[Formulation, str], cfg: SolverConfig,
               boundary_mode: Union[BoundaryMode, str, None] = None) -> RunRecord:
    """组装 (计数) → 求解 → 与制造解比较误差"""
    problem = problem.with_mode(boundary_mode)
    basis_kind, formulation = BasisKind(basis_kind), Formulation(formulation)
    basis = make_basis(basis_kind, problem.spec.domain, n)
    counter = QuadCounter()
    system = assemble_system(problem.spec, basis, formulation, counter=counter)
    notes = list(system.notes)
    if problem.notes:
        notes.insert(0, f"benchmark choice: {problem.notes}")
    if problem.spec.bc.mode == BoundaryMode.WEAK:
        notes.append("weak boundary terms use the printed signs without penalty; Neumann-end sign unverified")

    report = solve(system, None, cfg, counter)
    if not report.converged and cfg.method == SolverMethod.PICARD and cfg.damping > PICARD_FALLBACK_DAMPING:
        logger.warning(f"{problem.name} n={n} {formulation.value}: Picard 未收敛, "
                       f"改用阻尼 {PICARD_FALLBACK_DAMPING} 重试")
        retry = solve(system, None, cfg.with_damping(PICARD_FALLBACK_DAMPING), counter)
        report = _combine_attempts(report, retry)
        notes.append(f"picard fallback damping {PICARD_FALLBACK_DAMPING}")
    report.notes.extend(notes)

    coefficients = system.space.full(report.solution)
    record = RunRecord(problem.name, basis_kind, n, formulation, cfg.method, report,
                       coefficients, notes=notes)
    if problem.exact is not None and np.all(np.isfinite(coefficients)):
        record.error_l2, record.error_max = error_norms(basis, system.space, report.solution, problem.exact)
    logger.info(f"{problem.name} {basis_kind.value} n={n} {formulation.value}: "
                f"converged={report.converged}, iterates={report.iterates}, L2={record.error_l2}")
    return record


def _guarded_run(problem: BenchmarkProblem, basis_kind, n: int, formulation, cfg: SolverConfig,
                 boundary_mode) -> RunRecord:
    """研究中单个 n 的失败记入结果, 不中断整个研究"""
    try:
        return run_single(problem, basis_kind, n, formulation, cfg, boundary_mode)
    except GalerkinError as e:
        logger.warning(f"{problem.name} n={n} 运行失败: {e}")
        report = _failed_report(cfg, str(e))
        return RunRecord(problem.name, BasisKind(basis_kind), n, Formulation(formulation), cfg.method,
                         report, np.zeros(0), notes=[str(e)])


async def _run_concurrently(jobs: Sequence[Dict]) -> List[RunRecord]:
    semaphore = asyncio.Semaphore(max(1, STUDY_WORKERS))

    async def _one(job: Dict) -> RunRecord:
        async with semaphore:
            return await asyncio.to_thread(_guarded_run, **job)

    return list(await asyncio.gather(*(_one(job) for job in jobs)))


def observed_orders(records: List[RunRecord]):
    """相邻两次加密之间的 L² 收敛阶 log(e_prev/e) / log(n/n_prev)"""
    for prev, cur in zip(records[:-1], records[1:]):
        if prev.error_l2 and cur.error_l2 and cur.n > prev.n:
            cur.observed_order = math.log(prev.error_l2 / cur.error_l2) / math.log(cur.n / prev.n)


def run_study(problem: BenchmarkProblem, basis_kind: Union[BasisKind, str], n_list: Sequence[int],
              formulation: Union[Formulation, str], cfg: SolverConfig,
              boundary_mode: Union[BoundaryMode, str, None] = None) -> List[RunRecord]:
    """收敛性研究: 对每个 n 组装、求解、计算误差, 并给出相邻 n 之间的收敛阶"""
    n_list = [int(n) for n in n_list]
    if not n_list:
        raise ParameterError("n_list is empty")
    if any(b <= a for a, b in zip(n_list[:-1], n_list[1:])):
        raise ParameterError(f"n_list must be strictly ascending, got {n_list}")

    jobs = [dict(problem=problem, basis_kind=basis_kind, n=n, formulation=formulation,
                 cfg=cfg, boundary_mode=boundary_mode) for n in n_list]
    records = asyncio.run(_run_concurrently(jobs))
    observed_orders(records)
    return records


def compare(problem: BenchmarkProblem, basis_kind: Union[BasisKind, str], n: int, cfg: SolverConfig,
            boundary_mode: Union[BoundaryMode, str, None] = None) -> Tuple[List[RunRecord], float]:
    """同一问题的经典离散与 Hadamard 离散并排求解, 返回记录与 ‖x_hadamard − x_classical‖∞"""
    jobs = [dict(problem=problem, basis_kind=basis_kind, n=n, formulation=formulation,
                 cfg=cfg, boundary_mode=boundary_mode)
            for formulation in (Formulation.CLASSICAL, Formulation.HADAMARD)]
    classical, hadamard = asyncio.run(_run_concurrently(jobs))
    if classical.coefficients.size and hadamard.coefficients.size:
        gap = float(np.max(np.abs(hadamard.coefficients - classical.coefficients)))
    else:
        gap = float("nan")
    return [classical, hadamard], gap


# ======================== Jacobian check ========================

@dataclass
class JacobianCheck:
    system: str
    sample: int
    rel_error: float


def _rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(1.0, float(np.max(np.abs(analytic))))
    return float(np.max(np.abs(analytic - numeric))) / scale


def jacobian_check(problem: BenchmarkProblem, basis_kind: Union[BasisKind, str], n: int,
                   samples: int = 20, seed: int = 0, fd_step: float = DEFAULT_FD_STEP,
                   boundary_mode: Union[BoundaryMode, str, None] = None) -> List[JacobianCheck]:
    """在随机点上比较解析 Jacobian 与中心差分 Jacobian (相对误差)"""
    if n > MAX_KRONECKER_N:
        raise ParameterError(f"jacobian-check builds the Kronecker tensor, n must be <= {MAX_KRONECKER_N}")
    if samples < 1:
        raise ParameterError(f"samples must be at least 1, got {samples}")
    problem = problem.with_mode(boundary_mode)
    basis = make_basis(basis_kind, problem.spec.domain, n)
    systems = {
        "hadamard": assemble_hadamard_system(problem.spec, basis),
        "kronecker": assemble_kronecker_system(problem.spec, basis),
        "classical": assemble_system(problem.spec, basis, Formulation.CLASSICAL),
    }
    rng = np.random.default_rng(seed)
    size = systems["hadamard"].n
    points = [rng.standard_normal(size) for _ in range(samples)]

    checks = []
    for name, system in systems.items():
        for i, x in enumerate(points):
            numeric = finite_difference_jacobian(system.residual, x, fd_step)
            checks.append(JacobianCheck(name, i, _rel_error(system.jacobian(x), numeric)))
    worst = max(c.rel_error for c in checks)
    logger.info(f"jacobian-check {problem.name} n={n}: 最大相对误差 {worst:.3e}")
    return checks
