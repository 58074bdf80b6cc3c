"""
稠密矩阵乘积与线性求解

Hadamard 积 (逐元素)、Kronecker 积 (经典格式的 x⊗x)、
SJT 对角缩放 diag(v)·A (解析 Jacobian), 以及带行主元的 LU 求解。
所有函数均为纯函数, 不修改输入。
"""
import logging
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.linalg import solve_triangular

from app.config import SINGULAR_PIVOT_RTOL
from app.utils.errors import NonFiniteError, ShapeError, SingularMatrixError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, list, tuple]


# ======================== Validation ========================

def _checked(values: ArrayLike, ndim: int, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != ndim:
        kind = "vector" if ndim == 1 else "matrix"
        raise ShapeError(f"{name} must be a {kind}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains NaN/Inf")
    return arr


def as_vector(values: ArrayLike, name: str = "vector") -> np.ndarray:
    """转换为 float64 向量, 校验维度与有限性"""
    return _checked(values, 1, name)


def as_matrix(values: ArrayLike, name: str = "matrix") -> np.ndarray:
    """转换为 float64 矩阵, 校验维度与有限性"""
    return _checked(values, 2, name)


def frozen(values: ArrayLike) -> np.ndarray:
    """返回只读副本, 用于组装完成后的系统"""
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


# ======================== Products ========================

def hadamard(a: ArrayLike, b: ArrayLike) -> np.ndarray:
    """Hadamard 积: result[i, j] = a[i, j] * b[i, j]"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim not in (1, 2):
        raise ShapeError(f"hadamard operands {a.shape} and {b.shape}")
    return a * b


def kron(x: ArrayLike, y: ArrayLike) -> np.ndarray:
    """向量 Kronecker 积, 行主序: result[i*n + j] = x[i] * y[j]"""
    x = as_vector(x, "x")
    y = as_vector(y, "y")
    if x.shape != y.shape:
        raise ShapeError(f"kron operands {x.shape} and {y.shape}")
    return np.outer(x, y).reshape(-1)


def sjt_scale(a: ArrayLike, v: ArrayLike) -> np.ndarray:
    """SJT 行缩放: result[i, j] = v[i] * a[i, j], 即 diag(v)·A"""
    a = as_matrix(a, "A")
    v = as_vector(v, "v")
    if v.shape[0] != a.shape[0]:
        raise ShapeError(f"sjt_scale: A {a.shape}, v {v.shape}")
    return v[:, None] * a


def matvec_kron(g: ArrayLike, x: ArrayLike) -> np.ndarray:
    """计算 G·(x⊗x), 不显式构造 x⊗x"""
    g = np.asarray(g, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if g.ndim != 2 or g.shape[1] != n * n:
        raise ShapeError(f"G {g.shape} incompatible with x of length {n}")
    g3 = g.reshape(g.shape[0], n, n)
    return np.einsum("jik,i,k->j", g3, x, x)


# ======================== LU ========================

@dataclass(frozen=True)
class LUFactorization:
    """PA = LU 的紧凑存储: 单位下三角 L 在对角线以下, U 在对角线及以上"""
    lu: np.ndarray
    perm: np.ndarray

    @property
    def n(self) -> int:
        return self.lu.shape[0]

    @property
    def pivots(self) -> np.ndarray:
        return np.diag(self.lu).copy()

    def solve(self, rhs: ArrayLike) -> np.ndarray:
        rhs = as_vector(rhs, "rhs")
        if rhs.shape[0] != self.n:
            raise ShapeError(f"rhs length {rhs.shape[0]} for {self.n}x{self.n} system")
        y = solve_triangular(self.lu, rhs[self.perm], lower=True, unit_diagonal=True)
        return solve_triangular(self.lu, y, lower=False)


def lu_factor(m: ArrayLike) -> LUFactorization:
    """带行主元的 LU 分解

    主元绝对值小于 SINGULAR_PIVOT_RTOL × max|M| 时视为奇异。
    """
    a = np.array(as_matrix(m, "M"), dtype=np.float64)
    n, cols = a.shape
    if n != cols:
        raise ShapeError(f"LU needs a square matrix, got {a.shape}")

    scale = float(np.max(np.abs(a))) if a.size else 0.0
    threshold = SINGULAR_PIVOT_RTOL * scale
    perm = np.arange(n)

    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if scale == 0.0 or abs(a[p, k]) < threshold:
            raise SingularMatrixError(k, float(a[p, k]))
        if p != k:
            a[[k, p]] = a[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        a[k + 1:, k] /= a[k, k]
        a[k + 1:, k + 1:] -= np.outer(a[k + 1:, k], a[k, k + 1:])

    return LUFactorization(lu=a, perm=perm)


def lu_solve(m: Union[ArrayLike, LUFactorization], rhs: ArrayLike) -> np.ndarray:
    """求解 M·y = rhs"""
    factorization = m if isinstance(m, LUFactorization) else lu_factor(m)
    return factorization.solve(rhs)
