"""
代数系统: Hadamard 形式 (Ax)∘(Bx) + Dx = b 与经典 Kronecker 形式 Dx + G(x⊗x) = b,
及其残差、解析 Jacobian、Picard 线性化。另提供每次重新积分的经典参考路径。
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Protocol, Tuple

import numpy as np

from app.config import DEFAULT_FD_STEP
from app.services.assembly import (
    ProblemSpec,
    QuadCounter,
    TrialSpace,
    assemble_boundary_operator,
    assemble_kron_G,
    assemble_load,
    assemble_weighted,
    boundary_load,
    ibp_flux_matrix,
    trial_space,
)
from app.services.discretization import BasisSet, QuadratureRule, default_rule
from app.utils.errors import ShapeError
from app.utils.hadamard_algebra import (
    as_matrix,
    as_vector,
    frozen,
    hadamard,
    matvec_kron,
    sjt_scale,
)

logger = logging.getLogger(__name__)


class Formulation(str, Enum):
    CLASSICAL = "classical"
    HADAMARD = "hadamard"


class PicardFreeze(str, Enum):
    FREEZE_P = "freeze_p"
    FREEZE_Q = "freeze_q"


class NonlinearSystem(Protocol):
    """求解器所需的系统接口"""
    n: int
    iteration_counter: Optional[QuadCounter]

    def residual(self, x: np.ndarray) -> np.ndarray: ...

    def jacobian(self, x: np.ndarray) -> np.ndarray: ...

    def frozen(self, x: np.ndarray, freeze: PicardFreeze) -> Tuple[np.ndarray, np.ndarray]: ...

    def linear_part(self) -> Tuple[np.ndarray, np.ndarray]: ...


def _square(matrix, name: str, n: int) -> np.ndarray:
    matrix = as_matrix(matrix, name)
    if matrix.shape != (n, n):
        raise ShapeError(f"{name} has shape {matrix.shape}, expected ({n}, {n})")
    return frozen(matrix)


def _sized(vector, name: str, n: int) -> np.ndarray:
    vector = as_vector(vector, name)
    if vector.shape[0] != n:
        raise ShapeError(f"{name} has length {vector.shape[0]}, expected {n}")
    return frozen(vector)


# ======================== Hadamard form ========================

@dataclass(frozen=True, eq=False)
class HadamardSystem:
    """(A x + a0) ∘ (B x + b0) + D x = b; a0 = b0 = 0 时即 (Ax)∘(Bx) + Dx = b"""
    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    b: np.ndarray
    a0: Optional[np.ndarray] = None
    b0: Optional[np.ndarray] = None
    space: Optional[TrialSpace] = None
    notes: Tuple[str, ...] = ()
    iteration_counter: Optional[QuadCounter] = field(default=None, init=False)

    def __post_init__(self):
        n = as_vector(self.b, "b").shape[0]
        object.__setattr__(self, "A", _square(self.A, "A", n))
        object.__setattr__(self, "B", _square(self.B, "B", n))
        object.__setattr__(self, "D", _square(self.D, "D", n))
        object.__setattr__(self, "b", _sized(self.b, "b", n))
        object.__setattr__(self, "a0", _sized(np.zeros(n) if self.a0 is None else self.a0, "a0", n))
        object.__setattr__(self, "b0", _sized(np.zeros(n) if self.b0 is None else self.b0, "b0", n))

    @property
    def n(self) -> int:
        return self.b.shape[0]

    def residual(self, x):
        return residual_hadamard(self, x)

    def jacobian(self, x):
        return jacobian_hadamard(self, x)

    def frozen(self, x, freeze: PicardFreeze):
        """Picard 线性化: 冻结一个因子后得到 (M, rhs)"""
        x = _state(self.n, x)
        if PicardFreeze(freeze) == PicardFreeze.FREEZE_P:
            held = self.A @ x + self.a0
            return sjt_scale(self.B, held) + self.D, self.b - held * self.b0
        held = self.B @ x + self.b0
        return sjt_scale(self.A, held) + self.D, self.b - held * self.a0

    def linear_part(self):
        return self.D, self.b


def _state(n: int, x) -> np.ndarray:
    x = as_vector(x, "x")
    if x.shape[0] != n:
        raise ShapeError(f"x has length {x.shape[0]}, system size is {n}")
    return x


def residual_hadamard(system: HadamardSystem, x) -> np.ndarray:
    """r = (A x) ∘ (B x) + D x − b"""
    x = _state(system.n, x)
    return hadamard(system.A @ x + system.a0, system.B @ x + system.b0) + system.D @ x - system.b


def jacobian_hadamard(system: HadamardSystem, x) -> np.ndarray:
    """J = diag(Bx)·A + diag(Ax)·B + D, 纯代数, 不触发积分"""
    x = _state(system.n, x)
    ax = system.A @ x + system.a0
    bx = system.B @ x + system.b0
    return sjt_scale(system.A, bx) + sjt_scale(system.B, ax) + system.D


# ======================== Kronecker form ========================

@dataclass(frozen=True, eq=False)
class KroneckerSystem:
    """D x + G (x⊗x) = b, G 的列按 (i, k) -> i*n + k 排列"""
    D: np.ndarray
    G: np.ndarray
    b: np.ndarray
    space: Optional[TrialSpace] = None
    notes: Tuple[str, ...] = ()
    iteration_counter: Optional[QuadCounter] = field(default=None, init=False)

    def __post_init__(self):
        n = as_vector(self.b, "b").shape[0]
        object.__setattr__(self, "D", _square(self.D, "D", n))
        object.__setattr__(self, "b", _sized(self.b, "b", n))
        g = as_matrix(self.G, "G")
        if g.shape != (n, n * n):
            raise ShapeError(f"G has shape {g.shape}, expected ({n}, {n * n})")
        object.__setattr__(self, "G", frozen(g))

    @property
    def n(self) -> int:
        return self.b.shape[0]

    @property
    def tensor(self) -> np.ndarray:
        """G[j, i, k]"""
        return self.G.reshape(self.n, self.n, self.n)

    def residual(self, x):
        return residual_kron(self, x)

    def jacobian(self, x):
        return jacobian_kron(self, x)

    def frozen(self, x, freeze: PicardFreeze):
        x = _state(self.n, x)
        if PicardFreeze(freeze) == PicardFreeze.FREEZE_P:
            return self.D + np.einsum("jik,i->jk", self.tensor, x), self.b
        return self.D + np.einsum("jik,k->ji", self.tensor, x), self.b

    def linear_part(self):
        return self.D, self.b


def residual_kron(system: KroneckerSystem, x) -> np.ndarray:
    """r = D x + G (x⊗x) − b"""
    x = _state(system.n, x)
    return system.D @ x + matvec_kron(system.G, x) - system.b


def jacobian_kron(system: KroneckerSystem, x) -> np.ndarray:
    """J = D + G·(I⊗x + x⊗I), 由已存的 G 直接构造"""
    x = _state(system.n, x)
    g3 = system.tensor
    return system.D + np.einsum("jik,k->ji", g3, x) + np.einsum("jik,i->jk", g3, x)


# ======================== Assembly of systems ========================

def _linear_full(problem: ProblemSpec, basis: BasisSet, quad: QuadratureRule,
                 counter: QuadCounter, warnings: list):
    """全基下的 D 与 b (含边界项)"""
    bc = problem.bc
    d_full = assemble_weighted(problem.L, basis, quad, bc, counter, warnings)
    d_full = d_full + assemble_boundary_operator(basis, bc)
    b_full = assemble_load(problem.source, basis, quad, bc, counter,
                           flux_coeff=problem.L.second_order_coeff)
    return d_full, b_full


def assemble_hadamard_system(problem: ProblemSpec, basis: BasisSet,
                             quad: Optional[QuadratureRule] = None,
                             counter: Optional[QuadCounter] = None) -> HadamardSystem:
    """组装 Hadamard 系统: 所有线性算子只积分这一次"""
    quad = quad or default_rule(basis)
    counter = counter if counter is not None else QuadCounter()
    space = trial_space(basis, problem.bc)
    warnings: list = []

    a_full = assemble_weighted(problem.p, basis, quad, problem.bc, counter, warnings)
    b_mat_full = assemble_weighted(problem.q, basis, quad, problem.bc, counter, warnings)
    d_full, b_full = _linear_full(problem, basis, quad, counter, warnings)

    lift = space.lift
    system = HadamardSystem(
        A=space.reduce_matrix(a_full),
        B=space.reduce_matrix(b_mat_full),
        D=space.reduce_matrix(d_full),
        b=space.reduce_vector(b_full - d_full @ lift),
        a0=space.reduce_vector(a_full @ lift),
        b0=space.reduce_vector(b_mat_full @ lift),
        space=space,
        notes=tuple(warnings),
    )
    logger.info(f"Hadamard 系统组装完成: n={system.n}, 积分求值 {counter.integrand_evals} 次")
    return system


def assemble_kronecker_system(problem: ProblemSpec, basis: BasisSet,
                              quad: Optional[QuadratureRule] = None,
                              counter: Optional[QuadCounter] = None) -> KroneckerSystem:
    """组装经典 Kronecker 系统; 提升向量产生的交叉项并入 D 与 b"""
    quad = quad or default_rule(basis)
    counter = counter if counter is not None else QuadCounter()
    space = trial_space(basis, problem.bc)
    warnings: list = []

    g_full = assemble_kron_G(problem.p, problem.q, basis, quad, counter, warnings)
    d_full, b_full = _linear_full(problem, basis, quad, counter, warnings)

    n, m = space.n, space.m
    g3 = g_full.reshape(n, n, n)
    Z, lift = space.Z, space.lift
    g_red = np.einsum("jr,jik,is,kt->rst", Z, g3, Z, Z, optimize=True).reshape(m, m * m)
    cross = (np.einsum("jr,jik,i,kt->rt", Z, g3, lift, Z, optimize=True)
             + np.einsum("jr,jik,is,k->rs", Z, g3, Z, lift, optimize=True))
    constant = space.reduce_vector(matvec_kron(g_full, lift))

    system = KroneckerSystem(
        D=space.reduce_matrix(d_full) + cross,
        G=g_red,
        b=space.reduce_vector(b_full - d_full @ lift) - constant,
        space=space,
        notes=tuple(warnings),
    )
    logger.info(f"Kronecker 系统组装完成: n={system.n}, 积分求值 {counter.integrand_evals} 次")
    return system


# ======================== Re-integration reference path ========================

def _nonlinear_factors(problem: ProblemSpec, panel, u: np.ndarray):
    """积分点上的 p(û), q(û)"""
    local = u[panel.active]
    uh = (panel.values @ local)[:, None]
    duh = (panel.derivs @ local)[:, None]
    pu = problem.p.apply_local(panel.x, uh, duh)[:, 0]
    qu = problem.q.apply_local(panel.x, uh, duh)[:, 0]
    return pu, qu


def _linear_terms_local(problem: ProblemSpec, panel) -> np.ndarray:
    """L 在单元上的局部矩阵 [j, i]"""
    k = len(panel.active)
    local = np.zeros((k, k))
    for term in problem.L.terms:
        cw = term.values(panel.x) * panel.w
        if term.deriv_order == 2:
            local -= (panel.derivs * cw[:, None]).T @ panel.derivs
        else:
            trial = panel.values if term.deriv_order == 0 else panel.derivs
            local += (panel.values * cw[:, None]).T @ trial
    return local


def _boundary_matrix(problem: ProblemSpec, basis: BasisSet) -> np.ndarray:
    return (ibp_flux_matrix(basis, problem.bc, problem.L.second_order_coeff)
            + assemble_boundary_operator(basis, problem.bc))


def residual_direct(problem: ProblemSpec, basis: BasisSet, quad: QuadratureRule, x,
                    counter: QuadCounter, space: Optional[TrialSpace] = None) -> np.ndarray:
    """r[j] = ∫ [p(û) q(û) + L(û) − f] φ_j dΩ (+ 边界项), 每次调用重新积分"""
    space = space or trial_space(basis, problem.bc)
    x = _state(space.m, x)
    u = space.full(x)
    nonlinear = not problem.is_linear
    terms = int(nonlinear) + len(problem.L.terms) + 1

    r_full = np.zeros(basis.n)
    for panel in basis.panels(quad):
        integrand = np.zeros(len(panel.w))
        if nonlinear:
            pu, qu = _nonlinear_factors(problem, panel, u)
            integrand += pu * qu
        integrand -= problem.source(panel.x)
        contribution = panel.values.T @ (panel.w * integrand)
        contribution += _linear_terms_local(problem, panel) @ u[panel.active]
        r_full[panel.active] += contribution
        counter.tick(len(panel.w) * len(panel.active) * terms)

    r_full += _boundary_matrix(problem, basis) @ u
    r_full -= boundary_load(basis, problem.bc, problem.L.second_order_coeff)
    return space.reduce_vector(r_full)


def jacobian_direct(problem: ProblemSpec, basis: BasisSet, quad: QuadratureRule, x,
                    counter: QuadCounter, space: Optional[TrialSpace] = None) -> np.ndarray:
    """重新积分的切线矩阵 ∫ [p(φ_i) q(û) + p(û) q(φ_i) + L(φ_i)] φ_j dΩ"""
    space = space or trial_space(basis, problem.bc)
    x = _state(space.m, x)
    u = space.full(x)
    nonlinear = not problem.is_linear
    terms = 2 * int(nonlinear) + len(problem.L.terms)

    j_full = np.zeros((basis.n, basis.n))
    for panel in basis.panels(quad):
        local = _linear_terms_local(problem, panel)
        if nonlinear:
            pu, qu = _nonlinear_factors(problem, panel, u)
            pv = problem.p.apply_local(panel.x, panel.values, panel.derivs)
            qv = problem.q.apply_local(panel.x, panel.values, panel.derivs)
            tangent = pv * qu[:, None] + pu[:, None] * qv
            local += (panel.values * panel.w[:, None]).T @ tangent
        j_full[np.ix_(panel.active, panel.active)] += local
        counter.tick(len(panel.w) * len(panel.active) * terms)

    j_full += _boundary_matrix(problem, basis)
    return space.reduce_matrix(j_full)


def frozen_direct(problem: ProblemSpec, basis: BasisSet, quad: QuadratureRule, x,
                  freeze: PicardFreeze, counter: QuadCounter,
                  space: Optional[TrialSpace] = None) -> np.ndarray:
    """重新积分的 Picard 矩阵 (全基): 冻结 p(û) 或 q(û)"""
    space = space or trial_space(basis, problem.bc)
    u = space.full(_state(space.m, x))
    nonlinear = not problem.is_linear
    terms = int(nonlinear) + len(problem.L.terms)

    m_full = np.zeros((basis.n, basis.n))
    for panel in basis.panels(quad):
        local = _linear_terms_local(problem, panel)
        if nonlinear:
            pu, qu = _nonlinear_factors(problem, panel, u)
            if PicardFreeze(freeze) == PicardFreeze.FREEZE_P:
                trial = pu[:, None] * problem.q.apply_local(panel.x, panel.values, panel.derivs)
            else:
                trial = qu[:, None] * problem.p.apply_local(panel.x, panel.values, panel.derivs)
            local += (panel.values * panel.w[:, None]).T @ trial
        m_full[np.ix_(panel.active, panel.active)] += local
        counter.tick(len(panel.w) * len(panel.active) * terms)

    return m_full + _boundary_matrix(problem, basis)


@dataclass(eq=False)
class ReintegratedSystem:
    """经典 (常规有限元) 路径: 每次残差/Jacobian 都重新数值积分"""
    problem: ProblemSpec
    basis: BasisSet
    quad: QuadratureRule
    space: TrialSpace
    D: np.ndarray
    b: np.ndarray
    b_full: np.ndarray
    iteration_counter: QuadCounter = field(default_factory=QuadCounter)
    notes: Tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.space.m

    def residual(self, x):
        return residual_direct(self.problem, self.basis, self.quad, x, self.iteration_counter, self.space)

    def jacobian(self, x):
        return jacobian_direct(self.problem, self.basis, self.quad, x, self.iteration_counter, self.space)

    def frozen(self, x, freeze: PicardFreeze):
        m_full = frozen_direct(self.problem, self.basis, self.quad, x, freeze,
                               self.iteration_counter, self.space)
        # 提升向量经冻结矩阵移到右端
        rhs = self.b_full - m_full @ self.space.lift
        return self.space.reduce_matrix(m_full), self.space.reduce_vector(rhs)

    def linear_part(self):
        return self.D, self.b


def assemble_reintegrated_system(problem: ProblemSpec, basis: BasisSet,
                                 quad: Optional[QuadratureRule] = None,
                                 counter: Optional[QuadCounter] = None) -> ReintegratedSystem:
    """经典路径只预先组装线性部分 (初值用); 非线性项留待每次迭代积分"""
    quad = quad or default_rule(basis)
    counter = counter if counter is not None else QuadCounter()
    space = trial_space(basis, problem.bc)
    warnings: list = []
    d_full, b_full = _linear_full(problem, basis, quad, counter, warnings)
    return ReintegratedSystem(
        problem=problem,
        basis=basis,
        quad=quad,
        space=space,
        D=space.reduce_matrix(d_full),
        b=space.reduce_vector(b_full - d_full @ space.lift),
        b_full=b_full,
        notes=tuple(warnings),
    )


def assemble_system(problem: ProblemSpec, basis: BasisSet, formulation: Formulation,
                    quad: Optional[QuadratureRule] = None,
                    counter: Optional[QuadCounter] = None):
    if Formulation(formulation) == Formulation.HADAMARD:
        return assemble_hadamard_system(problem, basis, quad, counter)
    return assemble_reintegrated_system(problem, basis, quad, counter)


# ======================== Finite differences ========================

def finite_difference_jacobian(residual: Callable[[np.ndarray], np.ndarray], x,
                               step: float = DEFAULT_FD_STEP) -> np.ndarray:
    """中心差分 Jacobian, 步长 step·(1 + |x_j|)"""
    x = as_vector(x, "x")
    columns = []
    for j in range(x.shape[0]):
        h = step * (1.0 + abs(x[j]))
        e = np.zeros_like(x)
        e[j] = h
        columns.append((residual(x + e) - residual(x - e)) / (2.0 * h))
    return np.column_stack(columns)
