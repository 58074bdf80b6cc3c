"""
配置文件 - 通过环境变量或 .env 覆盖默认值
"""
import os

from dotenv import load_dotenv

load_dotenv()

# ========================
# 服务配置
# ========================
LOG_LEVEL = os.getenv("LOG_LEVEL", "WARNING").upper()
REPORT_VERSION = os.getenv("REPORT_VERSION", "1.0")
NO_COLOR = bool(os.getenv("NO_COLOR"))

# ========================
# 求解器默认值
# ========================
DEFAULT_TOL = float(os.getenv("DEFAULT_TOL", "1e-10"))
DEFAULT_MAX_ITER = int(os.getenv("DEFAULT_MAX_ITER", "200"))
DEFAULT_DAMPING = float(os.getenv("DEFAULT_DAMPING", "1.0"))
PICARD_FALLBACK_DAMPING = float(os.getenv("PICARD_FALLBACK_DAMPING", "0.5"))
DEFAULT_FD_STEP = float(os.getenv("DEFAULT_FD_STEP", "1e-6"))

# ========================
# 离散化
# ========================
FE_QUAD_ORDER = int(os.getenv("FE_QUAD_ORDER", "3"))
MODAL_QUAD_PANELS = int(os.getenv("MODAL_QUAD_PANELS", "4"))
MODAL_QUAD_EXTRA = int(os.getenv("MODAL_QUAD_EXTRA", "2"))
ERROR_QUAD_ORDER = int(os.getenv("ERROR_QUAD_ORDER", "8"))

# ========================
# 线性代数 / 规模限制
# ========================
SINGULAR_PIVOT_RTOL = float(os.getenv("SINGULAR_PIVOT_RTOL", "1e-14"))
MAX_DENSE_N = int(os.getenv("MAX_DENSE_N", "512"))
MAX_KRONECKER_N = int(os.getenv("MAX_KRONECKER_N", "64"))

# 收敛性研究 / 对比的并发数
STUDY_WORKERS = int(os.getenv("STUDY_WORKERS", "4"))
