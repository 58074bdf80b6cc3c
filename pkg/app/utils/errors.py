"""
求解器错误类型

与错误码表一一对应, 便于 CLI 和报告统一输出。
"""
from typing import Optional


class GalerkinError(Exception):
    """求解器错误基类"""
    ERROR_CODES = {
        -41001: "矩阵/向量维度不匹配",
        -41002: "矩阵数值奇异",
        -41003: "出现非有限数值 (NaN/Inf)",
        -41004: "求值点超出区域",
        -41005: "参数非法",
    }
    code = -41000

    def __init__(self, detail: str = "", code: Optional[int] = None):
        if code is not None:
            self.code = code
        self.detail = detail
        self.message = self.ERROR_CODES.get(self.code, f"未知错误: {self.code}")
        super().__init__(f"{self.message}: {detail}" if detail else self.message)


class ShapeError(GalerkinError, ValueError):
    code = -41001


class SingularMatrixError(GalerkinError):
    """LU 分解时主元过小, 携带出错的主元位置"""
    code = -41002

    def __init__(self, pivot_index: int, pivot_value: float = 0.0):
        self.pivot_index = pivot_index
        self.pivot_value = pivot_value
        super().__init__(f"pivot {pivot_index} = {pivot_value:.3e}")


class NonFiniteError(GalerkinError, ValueError):
    code = -41003


class DomainError(GalerkinError, ValueError):
    code = -41004


class ParameterError(GalerkinError, ValueError):
    code = -41005
