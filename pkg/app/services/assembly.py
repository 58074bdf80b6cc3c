"""
组装模块: 线性算子加权积分 (A, B, D)、载荷向量 b、经典格式张量 G,
以及弱形式边界项。积分点求值次数由 QuadCounter 统计。
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.services.discretization import BasisKind, BasisSet, Domain1D, QuadratureRule
from app.utils.errors import ParameterError
from app.utils.hadamard_algebra import frozen

logger = logging.getLogger(__name__)

Coefficient = Union[float, Callable[[np.ndarray], np.ndarray]]


# ======================== Operators ========================

@dataclass(frozen=True)
class OperatorTerm:
    """coeff(x) · d^k/dx^k"""
    coeff: Coefficient
    deriv_order: int

    @property
    def is_constant(self) -> bool:
        return not callable(self.coeff)

    def values(self, x: np.ndarray) -> np.ndarray:
        if self.is_constant:
            return np.full(np.shape(x), float(self.coeff))
        return np.broadcast_to(np.asarray(self.coeff(x), dtype=np.float64), np.shape(x))

    def scaled(self, alpha: float) -> "OperatorTerm":
        if self.is_constant:
            return OperatorTerm(alpha * float(self.coeff), self.deriv_order)
        coeff = self.coeff
        return OperatorTerm(lambda x: alpha * np.asarray(coeff(x)), self.deriv_order)


@dataclass(frozen=True)
class LinearOperatorSpec:
    """线性微分算子 Σ coeff_t(x) · d^{k_t}/dx^{k_t}, k_t ≤ 2"""
    terms: Tuple[OperatorTerm, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        second = [t for t in self.terms if t.deriv_order == 2]
        for t in self.terms:
            if t.deriv_order not in (0, 1, 2):
                raise ParameterError(f"derivative order must be 0, 1 or 2, got {t.deriv_order}")
        if len(second) > 1:
            raise ParameterError("at most one second-derivative term is allowed")
        if second and not second[0].is_constant:
            raise ParameterError("second-derivative term needs a constant coefficient")

    @classmethod
    def zero(cls) -> "LinearOperatorSpec":
        return cls(())

    @classmethod
    def identity(cls, coeff: Coefficient = 1.0) -> "LinearOperatorSpec":
        return cls((OperatorTerm(coeff, 0),))

    @classmethod
    def derivative(cls, order: int = 1, coeff: Coefficient = 1.0) -> "LinearOperatorSpec":
        return cls((OperatorTerm(coeff, order),))

    def __add__(self, other: "LinearOperatorSpec") -> "LinearOperatorSpec":
        return LinearOperatorSpec(self.terms + other.terms)

    def scaled(self, alpha: float) -> "LinearOperatorSpec":
        return LinearOperatorSpec(tuple(t.scaled(alpha) for t in self.terms))

    @property
    def is_zero(self) -> bool:
        return not self.terms

    @property
    def max_order(self) -> int:
        return max((t.deriv_order for t in self.terms), default=0)

    @property
    def second_order_coeff(self) -> float:
        """二阶导项的 (常数) 系数, 没有则为 0"""
        for t in self.terms:
            if t.deriv_order == 2:
                return float(t.coeff)
        return 0.0

    def apply_local(self, x: np.ndarray, values: np.ndarray, derivs: np.ndarray) -> np.ndarray:
        """算子作用于积分点上的局部基函数 (q × k); 只支持 ≤ 1 阶"""
        out = np.zeros_like(values)
        for t in self.terms:
            if t.deriv_order == 2:
                raise ParameterError("second derivatives are only admitted through integration by parts")
            out += t.values(x)[:, None] * (values if t.deriv_order == 0 else derivs)
        return out

    def apply_exact(self, derivatives: Sequence[Callable], x: np.ndarray) -> np.ndarray:
        """作用于解析函数: derivatives = (u, u', u'')"""
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros_like(x)
        for t in self.terms:
            out = out + t.values(x) * derivatives[t.deriv_order](x)
        return out


# ======================== Boundary ========================

class BoundaryKind(str, Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"


class BoundaryMode(str, Enum):
    ELIMINATE = "eliminate"
    WEAK = "weak"


@dataclass(frozen=True)
class BoundaryCondition:
    kind: BoundaryKind
    value: float = 0.0

    @classmethod
    def dirichlet(cls, value: float = 0.0) -> "BoundaryCondition":
        return cls(BoundaryKind.DIRICHLET, float(value))

    @classmethod
    def neumann(cls, value: float = 0.0) -> "BoundaryCondition":
        return cls(BoundaryKind.NEUMANN, float(value))

    @property
    def is_dirichlet(self) -> bool:
        return self.kind == BoundaryKind.DIRICHLET


@dataclass(frozen=True)
class BoundarySpec:
    """左右端边界条件; 外法向在左端为 -1, 右端为 +1"""
    left: BoundaryCondition = field(default_factory=BoundaryCondition.dirichlet)
    right: BoundaryCondition = field(default_factory=BoundaryCondition.dirichlet)
    mode: BoundaryMode = BoundaryMode.ELIMINATE

    def ends(self) -> List[Tuple[bool, float, BoundaryCondition]]:
        """[(at_right, normal, condition), ...]"""
        return [(False, -1.0, self.left), (True, 1.0, self.right)]

    @property
    def has_dirichlet(self) -> bool:
        return self.left.is_dirichlet or self.right.is_dirichlet

    def with_mode(self, mode: Union[BoundaryMode, str]) -> "BoundarySpec":
        return BoundarySpec(self.left, self.right, BoundaryMode(mode))


@dataclass(frozen=True)
class ProblemSpec:
    """p(u)·q(u) + L(u) = f, 区域 domain, 边界 bc"""
    p: LinearOperatorSpec
    q: LinearOperatorSpec
    L: LinearOperatorSpec
    f: Callable[[np.ndarray], np.ndarray]
    domain: Domain1D = field(default_factory=Domain1D)
    bc: BoundarySpec = field(default_factory=BoundarySpec)

    def __post_init__(self):
        if self.p.max_order > 1 or self.q.max_order > 1:
            raise ParameterError("p and q may contain derivatives up to first order only")
        if self.L.max_order == 2 and not self.bc.has_dirichlet:
            raise ParameterError("a second-order L needs at least one Dirichlet condition")

    @property
    def is_linear(self) -> bool:
        return self.p.is_zero or self.q.is_zero

    def source(self, x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.f(x), dtype=np.float64), np.shape(x))

    def with_mode(self, mode: Union[BoundaryMode, str]) -> "ProblemSpec":
        return ProblemSpec(self.p, self.q, self.L, self.f, self.domain, self.bc.with_mode(mode))


# ======================== Counter ========================

class QuadCounter:
    """积分点被积函数求值计数: 每个 (积分点, 权函数 j, 项) 计一次"""

    def __init__(self):
        self._evals = 0

    @property
    def integrand_evals(self) -> int:
        return self._evals

    def tick(self, count: int = 1):
        if count < 0:
            raise ParameterError("counter only moves forward")
        self._evals += int(count)

    def merge(self, other: "QuadCounter"):
        self._evals += other.integrand_evals

    def reset(self):
        """仅在阶段边界 (组装 / 迭代) 调用"""
        self._evals = 0

    def __repr__(self) -> str:
        return f"QuadCounter(integrand_evals={self._evals})"


# ======================== Trial space ========================

@dataclass(frozen=True, eq=False)
class TrialSpace:
    """x_full = lift + Z·y; Galerkin 权函数为 ψ_k = Σ_j Z[j, k] φ_j"""
    Z: np.ndarray
    lift: np.ndarray

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def m(self) -> int:
        return self.Z.shape[1]

    def full(self, y: np.ndarray) -> np.ndarray:
        return self.lift + self.Z @ y

    def reduce_matrix(self, matrix: np.ndarray) -> np.ndarray:
        return self.Z.T @ matrix @ self.Z

    def reduce_vector(self, vector: np.ndarray) -> np.ndarray:
        return self.Z.T @ vector


def trial_space(basis: BasisSet, bc: BoundarySpec) -> TrialSpace:
    """本质边界条件消元: 构造满足齐次 Dirichlet 条件的组合与提升向量"""
    n = basis.n
    if bc.mode == BoundaryMode.WEAK:
        return TrialSpace(frozen(np.eye(n)), frozen(np.zeros(n)))

    left, right = bc.left, bc.right
    lift = np.zeros(n)
    if basis.kind == BasisKind.FE_HAT:
        fixed = []
        if left.is_dirichlet:
            fixed.append(0)
            lift[0] = left.value
        if right.is_dirichlet:
            fixed.append(n - 1)
            lift[n - 1] = right.value
        free = [i for i in range(n) if i not in fixed]
        Z = np.eye(n)[:, free]
    else:
        # Legendre 组合: P_k(±1) = (±1)^k
        columns = []
        if left.is_dirichlet and right.is_dirichlet:
            columns = [(k, k + 2, -1.0) for k in range(n - 2)]
            lift[0] = 0.5 * (left.value + right.value)
            if n > 1:
                lift[1] = 0.5 * (right.value - left.value)
        elif left.is_dirichlet:
            columns = [(k, k + 1, 1.0) for k in range(n - 1)]
            lift[0] = left.value
        elif right.is_dirichlet:
            columns = [(k, k + 1, -1.0) for k in range(n - 1)]
            lift[0] = right.value
        if left.is_dirichlet or right.is_dirichlet:
            Z = np.zeros((n, len(columns)))
            for col, (k, other, sign) in enumerate(columns):
                Z[k, col] = 1.0
                Z[other, col] = sign
        else:
            Z = np.eye(n)

    if Z.shape[1] == 0:
        raise ParameterError(f"no free unknowns left for a {basis.kind.value} basis of size {n}")
    return TrialSpace(frozen(Z), frozen(lift))


# ======================== Quadrature exactness ========================

def _check_exactness(degree: int, quad: QuadratureRule, what: str, warnings: Optional[List[str]]):
    if degree > quad.exact_degree:
        message = (f"{what}: integrand degree {degree} exceeds the exact degree "
                   f"{quad.exact_degree} of a {quad.order}-point rule")
        logger.warning(message)
        if warnings is not None:
            warnings.append(message)


def _weighted_degree(op: LinearOperatorSpec, basis: BasisSet) -> int:
    """常系数假设下 op(φ_i)·φ_j 的多项式次数"""
    deg = basis.polynomial_degree
    degrees = []
    for t in op.terms:
        if t.deriv_order == 2:
            degrees.append(2 * max(deg - 1, 0))
        else:
            degrees.append(max(deg - t.deriv_order, 0) + deg)
    return max(degrees, default=0)


# ======================== Assembly ========================

def assemble_weighted(op: LinearOperatorSpec, basis: BasisSet, quad: QuadratureRule,
                      bc: BoundarySpec, counter: QuadCounter,
                      warnings: Optional[List[str]] = None) -> np.ndarray:
    """M[j, i] = ∫ op(φ_i) φ_j dΩ

    二阶项分部积分一次: −∫ c φ_i' φ_j'; 弱边界模式下再加端点通量 c·n·φ_i'·φ_j。
    """
    n = basis.n
    matrix = np.zeros((n, n))
    if op.is_zero:
        return matrix
    _check_exactness(_weighted_degree(op, basis), quad, "weighted operator", warnings)

    for panel in basis.panels(quad):
        idx = np.ix_(panel.active, panel.active)
        for term in op.terms:
            cw = term.values(panel.x) * panel.w
            if term.deriv_order == 2:
                local = -(panel.derivs * cw[:, None]).T @ panel.derivs
            else:
                trial = panel.values if term.deriv_order == 0 else panel.derivs
                local = (panel.values * cw[:, None]).T @ trial
            matrix[idx] += local
            counter.tick(len(panel.w) * len(panel.active))

    return matrix + ibp_flux_matrix(basis, bc, op.second_order_coeff)


def ibp_flux_matrix(basis: BasisSet, bc: BoundarySpec, c2: float) -> np.ndarray:
    """分部积分端点通量 c2·Σ n·φ_j(e)·φ_i'(e); 仅弱边界模式非零"""
    n = basis.n
    matrix = np.zeros((n, n))
    if bc.mode != BoundaryMode.WEAK or c2 == 0.0:
        return matrix
    for at_right, normal, _ in bc.ends():
        matrix += c2 * normal * np.outer(basis.trace(at_right, 0), basis.trace(at_right, 1))
    return matrix


def boundary_load(basis: BasisSet, bc: BoundarySpec, flux_coeff: float) -> np.ndarray:
    """载荷向量中的边界数据部分

    消元模式: Neumann 端贡献 −flux_coeff·q̄·φ_j (flux_coeff 为 L 的二阶项系数);
    弱边界模式: 按残差边界项加入 −q̄·φ_j (Γ₂) 与 ū·n·φ_j' (Γ₁)。
    """
    load = np.zeros(basis.n)
    for at_right, normal, cond in bc.ends():
        if bc.mode == BoundaryMode.ELIMINATE:
            if not cond.is_dirichlet:
                if flux_coeff == 0.0 and cond.value != 0.0:
                    logger.warning("Neumann 数据被忽略: L 不含二阶导项")
                load += -flux_coeff * cond.value * basis.trace(at_right, 0)
        elif cond.is_dirichlet:
            load += cond.value * normal * basis.trace(at_right, 1)
        else:
            load += -cond.value * basis.trace(at_right, 0)
    return load


def assemble_load(f: Callable, basis: BasisSet, quad: QuadratureRule, bc: BoundarySpec,
                  counter: QuadCounter, flux_coeff: float = -1.0) -> np.ndarray:
    """b[j] = ∫ f φ_j dΩ + 边界数据 (见 boundary_load)"""
    load = np.zeros(basis.n)
    for panel in basis.panels(quad):
        fx = np.broadcast_to(np.asarray(f(panel.x), dtype=np.float64), panel.x.shape)
        load[panel.active] += panel.values.T @ (panel.w * fx)
        counter.tick(len(panel.w) * len(panel.active))
    return load + boundary_load(basis, bc, flux_coeff)


def assemble_boundary_operator(basis: BasisSet, bc: BoundarySpec) -> np.ndarray:
    """弱边界模式的边界残差矩阵: −Σ_Γ₂ n φ_i' φ_j + Σ_Γ₁ φ_i n φ_j'"""
    n = basis.n
    matrix = np.zeros((n, n))
    if bc.mode != BoundaryMode.WEAK:
        return matrix
    for at_right, normal, cond in bc.ends():
        values, derivs = basis.trace(at_right, 0), basis.trace(at_right, 1)
        if cond.is_dirichlet:
            matrix += normal * np.outer(derivs, values)
        else:
            matrix -= normal * np.outer(values, derivs)
    return matrix


def assemble_kron_G(p: LinearOperatorSpec, q: LinearOperatorSpec, basis: BasisSet,
                    quad: QuadratureRule, counter: QuadCounter,
                    warnings: Optional[List[str]] = None) -> np.ndarray:
    """G[j, i*n + k] = ∫ p(φ_i) q(φ_k) φ_j dΩ, 满足 G·(x⊗x) = ∫ p(û) q(û) φ_j"""
    n = basis.n
    g3 = np.zeros((n, n, n))
    if p.is_zero or q.is_zero:
        return g3.reshape(n, n * n)
    deg = basis.polynomial_degree
    degree = (deg - min(t.deriv_order for t in p.terms)) + (deg - min(t.deriv_order for t in q.terms)) + deg
    _check_exactness(degree, quad, "Kronecker tensor", warnings)

    for panel in basis.panels(quad):
        pv = p.apply_local(panel.x, panel.values, panel.derivs)
        qv = q.apply_local(panel.x, panel.values, panel.derivs)
        local = np.einsum("q,qi,qk,qj->jik", panel.w, pv, qv, panel.values)
        g3[np.ix_(panel.active, panel.active, panel.active)] += local
        counter.tick(len(panel.w) * len(panel.active))
    return g3.reshape(n, n * n)
