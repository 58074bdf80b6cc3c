"""
非线性迭代求解器: Newton-Raphson (解析 / 有限差分 Jacobian) 与 Picard 简单迭代

求解器不抛出奇异矩阵或发散异常, 统一返回 SolveReport (converged=False, failure_reason)。
"""
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Union

import numpy as np

from app.config import DEFAULT_DAMPING, DEFAULT_FD_STEP, DEFAULT_MAX_ITER, DEFAULT_TOL
from app.services.assembly import QuadCounter
from app.services.system_forms import NonlinearSystem, PicardFreeze, finite_difference_jacobian
from app.utils.errors import NonFiniteError, ParameterError, ShapeError, SingularMatrixError
from app.utils.hadamard_algebra import as_vector, lu_solve

logger = logging.getLogger(__name__)


class SolverMethod(str, Enum):
    NEWTON_SJT = "newton_sjt"
    NEWTON_FD = "newton_fd"
    PICARD = "picard"

    @classmethod
    def parse(cls, name: Union[str, "SolverMethod"]) -> "SolverMethod":
        """接受枚举成员、CLI 写法 newton-sjt 与枚举写法 newton_sjt"""
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).replace("-", "_"))
        except ValueError:
            raise ParameterError(f"unknown solver: {name}")


@dataclass(frozen=True)
class SolverConfig:
    method: SolverMethod = SolverMethod.NEWTON_SJT
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    damping: float = DEFAULT_DAMPING
    fd_step: float = DEFAULT_FD_STEP
    picard_freeze: PicardFreeze = PicardFreeze.FREEZE_P

    def __post_init__(self):
        object.__setattr__(self, "method", SolverMethod.parse(self.method))
        object.__setattr__(self, "picard_freeze", PicardFreeze(self.picard_freeze))
        if not (np.isfinite(self.tol) and self.tol > 0):
            raise ParameterError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ParameterError(f"max_iter must be at least 1, got {self.max_iter}")
        if not 0.0 < self.damping <= 1.0:
            raise ParameterError(f"damping must be in (0, 1], got {self.damping}")
        if not (np.isfinite(self.fd_step) and self.fd_step > 0):
            raise ParameterError(f"fd_step must be positive, got {self.fd_step}")

    def with_damping(self, damping: float) -> "SolverConfig":
        return SolverConfig(self.method, self.tol, self.max_iter, damping, self.fd_step, self.picard_freeze)


@dataclass
class SolveReport:
    converged: bool
    iterates: int
    residual_history: List[float]
    solution: np.ndarray
    method: SolverMethod
    quad_evals_assembly: int = 0
    quad_evals_iteration: int = 0
    wall_time: float = 0.0
    failure_reason: Optional[str] = None
    notes: List[str] = field(default_factory=list)

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else float("nan")


# ======================== Helpers ========================

def _norm(r: np.ndarray) -> float:
    return float(np.max(np.abs(r))) if r.size else 0.0


def default_initial_guess(system: NonlinearSystem) -> np.ndarray:
    """线性部分 D x = b 的解; D 奇异时为零向量"""
    d, b = system.linear_part()
    try:
        return lu_solve(d, b)
    except SingularMatrixError as e:
        logger.info(f"线性部分奇异 (pivot {e.pivot_index}), 初值取零向量")
        return np.zeros(system.n)


def _start(system: NonlinearSystem, x0) -> np.ndarray:
    if x0 is None:
        return default_initial_guess(system)
    x = as_vector(x0, "x0")
    if x.shape[0] != system.n:
        raise ShapeError(f"x0 has length {x.shape[0]}, system size is {system.n}")
    return x.copy()


def _iteration_evals(system: NonlinearSystem, before: int) -> int:
    counter = getattr(system, "iteration_counter", None)
    return 0 if counter is None else counter.integrand_evals - before


class _Run:
    """单次求解的可变状态: 迭代点、残差历史、计时"""

    def __init__(self, system: NonlinearSystem, x0, cfg: SolverConfig,
                 counter: Optional[QuadCounter]):
        self.system = system
        self.cfg = cfg
        self.assembly_evals = counter.integrand_evals if counter is not None else 0
        iteration_counter = getattr(system, "iteration_counter", None)
        self.evals_before = iteration_counter.integrand_evals if iteration_counter is not None else 0
        self.started = time.perf_counter()
        self.x = _start(system, x0)
        self.r = system.residual(self.x)
        self.history = [_norm(self.r)]
        self.iterates = 0

    def report(self, converged: bool, failure_reason: Optional[str] = None) -> SolveReport:
        if failure_reason:
            logger.warning(f"{self.cfg.method.value} 未收敛: {failure_reason}")
        return SolveReport(
            converged=converged,
            iterates=self.iterates,
            residual_history=list(self.history),
            solution=self.x.copy(),
            method=self.cfg.method,
            quad_evals_assembly=self.assembly_evals,
            quad_evals_iteration=_iteration_evals(self.system, self.evals_before),
            wall_time=time.perf_counter() - self.started,
            failure_reason=failure_reason,
        )

    def advance(self, x_new: np.ndarray) -> Optional[str]:
        """接受新迭代点; 出现 NaN/Inf 时返回失败原因"""
        self.iterates += 1
        if not np.all(np.isfinite(x_new)):
            self.history.append(float("nan"))
            return f"non-finite iterate at iteration {self.iterates}"
        self.x = x_new
        try:
            self.r = self.system.residual(self.x)
        except NonFiniteError as e:
            self.history.append(float("nan"))
            return f"non-finite residual at iteration {self.iterates}: {e.message}"
        norm = _norm(self.r)
        self.history.append(norm)
        logger.debug(f"{self.cfg.method.value} 第 {self.iterates} 步: |r| = {norm:.3e}")
        if not np.isfinite(norm):
            return f"non-finite residual at iteration {self.iterates}"
        return None

    @property
    def converged(self) -> bool:
        return self.iterates >= 1 and self.history[-1] <= self.cfg.tol


# ======================== Solvers ========================

def newton_solve(system: NonlinearSystem, x0=None, cfg: Optional[SolverConfig] = None,
                 counter: Optional[QuadCounter] = None) -> SolveReport:
    """x_{k+1} = x_k − damping · J(x_k)⁻¹ r(x_k)

    newton_sjt 使用系统自带的解析 Jacobian, newton_fd 使用中心差分。
    至少迭代一次再判断收敛, 因此线性问题报告 iterates = 1。
    """
    cfg = cfg or SolverConfig()
    if cfg.method not in (SolverMethod.NEWTON_SJT, SolverMethod.NEWTON_FD):
        raise ParameterError(f"newton_solve cannot run method {cfg.method.value}")
    run = _Run(system, x0, cfg, counter)

    while run.iterates < cfg.max_iter:
        if cfg.method == SolverMethod.NEWTON_SJT:
            jac = system.jacobian(run.x)
        else:
            jac = finite_difference_jacobian(system.residual, run.x, cfg.fd_step)
        try:
            step = lu_solve(jac, run.r)
        except SingularMatrixError as e:
            return run.report(False, f"singular Jacobian at iteration {run.iterates + 1}: {e.message}")
        except NonFiniteError as e:
            return run.report(False, f"non-finite Newton system at iteration {run.iterates + 1}: {e.message}")
        failure = run.advance(run.x - cfg.damping * step)
        if failure:
            return run.report(False, failure)
        if run.converged:
            return run.report(True)

    return run.report(False, f"max_iter {cfg.max_iter} reached, |r| = {run.history[-1]:.3e}")


def picard_solve(system: NonlinearSystem, x0=None, cfg: Optional[SolverConfig] = None,
                 counter: Optional[QuadCounter] = None) -> SolveReport:
    """Picard 迭代: 冻结一个因子, 每步解线性系统 M(x_k) x = rhs(x_k)

    阻尼更新 x ← (1 − damping)·x_k + damping·x_{k+1}。
    """
    cfg = cfg or SolverConfig(method=SolverMethod.PICARD)
    if cfg.method != SolverMethod.PICARD:
        raise ParameterError(f"picard_solve cannot run method {cfg.method.value}")
    run = _Run(system, x0, cfg, counter)

    while run.iterates < cfg.max_iter:
        matrix, rhs = system.frozen(run.x, cfg.picard_freeze)
        try:
            x_next = lu_solve(matrix, rhs)
        except SingularMatrixError as e:
            return run.report(False, f"singular frozen matrix at iteration {run.iterates + 1}: {e.message}")
        except NonFiniteError as e:
            return run.report(False, f"non-finite frozen matrix at iteration {run.iterates + 1}: {e.message}")
        failure = run.advance((1.0 - cfg.damping) * run.x + cfg.damping * x_next)
        if failure:
            return run.report(False, failure)
        if run.converged:
            return run.report(True)

    return run.report(False, f"max_iter {cfg.max_iter} reached, |r| = {run.history[-1]:.3e}")


def solve(system: NonlinearSystem, x0=None, cfg: Optional[SolverConfig] = None,
          counter: Optional[QuadCounter] = None) -> SolveReport:
    cfg = cfg or SolverConfig()
    if cfg.method == SolverMethod.PICARD:
        return picard_solve(system, x0, cfg, counter)
    return newton_solve(system, x0, cfg, counter)


def quadratic_rate(errors: Sequence[float]) -> Optional[float]:
    """拟合 e_{k+1} ≤ C·e_k² 中的 C (取各步比值的最大值)"""
    ratios = [e1 / e0 ** 2 for e0, e1 in zip(errors[:-1], errors[1:]) if e0 > 0 and e1 > 0]
    return max(ratios) if ratios else None
