"""
一维离散化: 区域、基函数族 (有限元 hat 函数 / 全局 Legendre 模态) 与 Gauss-Legendre 积分
"""
import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import List, Optional, Union

import numpy as np
from numpy.polynomial import legendre
from scipy import special

from app.config import FE_QUAD_ORDER, MAX_DENSE_N, MODAL_QUAD_EXTRA, MODAL_QUAD_PANELS
from app.utils.errors import DomainError, ParameterError, ShapeError
from app.utils.hadamard_algebra import as_vector, frozen

logger = logging.getLogger(__name__)

MAX_GAUSS_ORDER = 64


class BasisKind(str, Enum):
    FE_HAT = "fe_hat"
    MODAL_POLY = "modal_poly"


@dataclass(frozen=True)
class Domain1D:
    """区间 Ω = [a, b], 边界 Γ = {a, b}"""
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b) and self.a < self.b):
            raise ParameterError(f"domain needs a < b, got [{self.a}, {self.b}]")

    @property
    def length(self) -> float:
        return self.b - self.a

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all((x >= self.a) & (x <= self.b)))


# ======================== Quadrature ========================

@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """参考区间 [-1, 1] 上的 Gauss-Legendre 规则"""
    points: np.ndarray
    weights: np.ndarray
    order: int

    @property
    def exact_degree(self) -> int:
        return 2 * self.order - 1

    def mapped(self, lo: float, hi: float):
        """映射到 [lo, hi], 返回 (points, weights)"""
        half = 0.5 * (hi - lo)
        return lo + half * (self.points + 1.0), half * self.weights

    def integrate(self, func) -> float:
        return float(np.dot(self.weights, func(self.points)))


@lru_cache(maxsize=None)
def gauss_rule(order: int) -> QuadratureRule:
    """order 点 Gauss-Legendre 规则, 对次数 ≤ 2·order − 1 的多项式精确"""
    if isinstance(order, bool) or not isinstance(order, (int, np.integer)):
        raise ParameterError(f"quadrature order must be an integer, got {order!r}")
    if not 1 <= order <= MAX_GAUSS_ORDER:
        raise ParameterError(f"quadrature order must be in [1, {MAX_GAUSS_ORDER}], got {order}")
    points, weights = special.roots_legendre(int(order))
    return QuadratureRule(points=frozen(points), weights=frozen(weights), order=int(order))


# ======================== Basis ========================

@dataclass(frozen=True, eq=False)
class Panel:
    """一个积分单元: 映射后的积分点/权重, 非零基函数下标, 及其值和导数 (q × k)"""
    x: np.ndarray
    w: np.ndarray
    active: np.ndarray
    values: np.ndarray
    derivs: np.ndarray


@dataclass(frozen=True, eq=False)
class BasisSet:
    """基函数集合 φ_0 … φ_{n-1}

    fe_hat: 网格节点上的分段线性 hat 函数, n = 节点数;
    modal_poly: φ_j(x) = P_j(ξ), ξ 为 [a, b] 到 [-1, 1] 的仿射映射。
    """
    kind: BasisKind
    domain: Domain1D
    n: int
    mesh_nodes: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.n < 1 or self.n > MAX_DENSE_N:
            raise ParameterError(f"basis size must be in [1, {MAX_DENSE_N}], got {self.n}")
        if self.kind == BasisKind.FE_HAT:
            nodes = self.mesh_nodes
            if nodes is None or len(nodes) != self.n or self.n < 2:
                raise ParameterError("fe_hat basis needs n >= 2 mesh nodes")
            if np.any(np.diff(nodes) <= 0):
                raise ParameterError("mesh nodes must be strictly increasing")
            if nodes[0] != self.domain.a or nodes[-1] != self.domain.b:
                raise ParameterError("mesh must start at a and end at b")

    @classmethod
    def fe_hat(cls, domain: Domain1D, n_elements: int) -> "BasisSet":
        """均匀网格, n_elements 个单元"""
        if n_elements < 1:
            raise ParameterError(f"need at least one element, got {n_elements}")
        nodes = np.linspace(domain.a, domain.b, n_elements + 1)
        return cls.from_nodes(domain, nodes)

    @classmethod
    def from_nodes(cls, domain: Domain1D, nodes) -> "BasisSet":
        nodes = np.array(nodes, dtype=np.float64)
        if nodes.ndim != 1 or len(nodes) < 2:
            raise ParameterError("mesh needs at least two nodes")
        return cls(BasisKind.FE_HAT, domain, len(nodes), frozen(nodes))

    @classmethod
    def modal_poly(cls, domain: Domain1D, n_modes: int) -> "BasisSet":
        return cls(BasisKind.MODAL_POLY, domain, int(n_modes))

    @property
    def polynomial_degree(self) -> int:
        return 1 if self.kind == BasisKind.FE_HAT else self.n - 1

    # -------- evaluation --------

    def _to_reference(self, x: np.ndarray) -> np.ndarray:
        a, b = self.domain.a, self.domain.b
        return (2.0 * x - a - b) / (b - a)

    def evaluate(self, x, deriv: int = 0) -> np.ndarray:
        """所有基函数在点集 x 上的值 (deriv=0) 或导数 (deriv=1), 形状 (len(x), n)"""
        if deriv not in (0, 1):
            raise ParameterError(f"deriv must be 0 or 1, got {deriv}")
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        if not self.domain.contains(x):
            raise DomainError(f"points outside [{self.domain.a}, {self.domain.b}]")

        if self.kind == BasisKind.FE_HAT:
            return self._evaluate_hat(x, deriv)
        return self._evaluate_modal(x, deriv)

    def _evaluate_hat(self, x: np.ndarray, deriv: int) -> np.ndarray:
        nodes = self.mesh_nodes
        # 右极限: 节点处取右侧单元, 右端点归入最后一个单元
        elem = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, self.n - 2)
        h = nodes[elem + 1] - nodes[elem]
        rows = np.arange(len(x))
        out = np.zeros((len(x), self.n))
        if deriv == 0:
            t = (x - nodes[elem]) / h
            out[rows, elem] = 1.0 - t
            out[rows, elem + 1] = t
        else:
            out[rows, elem] = -1.0 / h
            out[rows, elem + 1] = 1.0 / h
        return out

    def _evaluate_modal(self, x: np.ndarray, deriv: int) -> np.ndarray:
        xi = self._to_reference(x)
        if deriv == 0:
            return legendre.legvander(xi, self.n - 1)
        if self.n == 1:
            return np.zeros((len(x), 1))
        # 第 j 列为 P_j' 的 Legendre 系数
        coeffs = legendre.legder(np.eye(self.n), axis=0)
        return legendre.legvander(xi, self.n - 2) @ coeffs * (2.0 / self.domain.length)

    def trace(self, at_right: bool, deriv: int = 0) -> np.ndarray:
        """端点处所有基函数的值/导数"""
        end = self.domain.b if at_right else self.domain.a
        return self.evaluate(np.array([end]), deriv)[0]

    # -------- quadrature panels --------

    def panels(self, rule: QuadratureRule) -> List[Panel]:
        """积分单元列表: fe_hat 为网格单元, modal_poly 为均匀复合子区间"""
        if self.kind == BasisKind.FE_HAT:
            return self._hat_panels(rule)
        return self._modal_panels(rule)

    def _hat_panels(self, rule: QuadratureRule) -> List[Panel]:
        nodes = self.mesh_nodes
        t = 0.5 * (rule.points + 1.0)
        local_values = np.column_stack([1.0 - t, t])
        panels = []
        for e in range(self.n - 1):
            lo, hi = nodes[e], nodes[e + 1]
            h = hi - lo
            x, w = rule.mapped(lo, hi)
            derivs = np.tile([-1.0 / h, 1.0 / h], (len(x), 1))
            panels.append(Panel(x, w, np.array([e, e + 1]), local_values, derivs))
        return panels

    def _modal_panels(self, rule: QuadratureRule) -> List[Panel]:
        edges = np.linspace(self.domain.a, self.domain.b, MODAL_QUAD_PANELS + 1)
        active = np.arange(self.n)
        panels = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            x, w = rule.mapped(lo, hi)
            panels.append(Panel(x, w, active, self.evaluate(x, 0), self.evaluate(x, 1)))
        return panels


def default_rule(basis: BasisSet) -> QuadratureRule:
    """默认积分阶: fe_hat 每单元 FE_QUAD_ORDER 点; modal_poly 为 n + MODAL_QUAD_EXTRA"""
    if basis.kind == BasisKind.FE_HAT:
        return gauss_rule(FE_QUAD_ORDER)
    return gauss_rule(min(basis.n + MODAL_QUAD_EXTRA, MAX_GAUSS_ORDER))


def make_basis(kind: Union[BasisKind, str], domain: Domain1D, n: int) -> BasisSet:
    """按 CLI 约定构造: fe_hat 的 n 为单元数, modal_poly 的 n 为模态数"""
    kind = BasisKind(kind)
    if kind == BasisKind.FE_HAT:
        return BasisSet.fe_hat(domain, n)
    return BasisSet.modal_poly(domain, n)


# ======================== Point evaluation ========================

def eval_basis(basis: BasisSet, j: int, x: float, deriv: int = 0) -> float:
    """φ_j(x) 或 φ_j'(x) (j 从 0 开始)"""
    if not 0 <= j < basis.n:
        raise ParameterError(f"basis index {j} outside [0, {basis.n})")
    if not basis.domain.contains(x):
        raise DomainError(f"x = {x} outside [{basis.domain.a}, {basis.domain.b}]")
    return float(basis.evaluate(np.array([x], dtype=np.float64), deriv)[0, j])


def eval_uhat(basis: BasisSet, coeffs, x, deriv: int = 0):
    """û(x) = Σ_j c_j φ_j(x) (或其导数); x 可为标量或数组"""
    coeffs = as_vector(coeffs, "coeffs")
    if coeffs.shape[0] != basis.n:
        raise ShapeError(f"{coeffs.shape[0]} coefficients for a basis of size {basis.n}")
    values = basis.evaluate(x, deriv) @ coeffs
    return float(values[0]) if np.ndim(x) == 0 else values
