"""
报告输出: JSON (规范格式) 与 CSV (固定列的扁平投影)

浮点数统一保留 12 位有效数字; NaN/Inf 在 JSON 中写为 null, 在 CSV 中留空。
"""
import csv
import io
import json
import logging
import math
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from app.config import REPORT_VERSION
from app.services.benchmarks import JacobianCheck, RunRecord

logger = logging.getLogger(__name__)

SIGNIFICANT_DIGITS = 12

CSV_COLUMNS = [
    "problem", "basis", "n", "formulation", "solver", "converged", "iterates",
    "final_residual", "error_l2", "error_max", "quad_evals_assembly",
    "quad_evals_iteration", "wall_time_s",
]


def round_sig(value: Optional[float]) -> Optional[float]:
    """保留 12 位有效数字; 非有限值返回 None"""
    if value is None:
        return None
    value = float(value)
    if not math.isfinite(value):
        return None
    return float(f"{value:.{SIGNIFICANT_DIGITS}g}")


def _clean(value: Any) -> Any:
    """递归转换为 JSON 可序列化的值"""
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_clean(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return round_sig(value)
    if hasattr(value, "value"):
        return value.value
    return value


def record_row(record: RunRecord) -> Dict[str, Any]:
    """CSV 列对应的字段 (已取整)"""
    report = record.report
    return _clean({
        "problem": record.problem,
        "basis": record.basis,
        "n": record.n,
        "formulation": record.formulation,
        "solver": record.solver,
        "converged": report.converged,
        "iterates": report.iterates,
        "final_residual": report.final_residual,
        "error_l2": record.error_l2,
        "error_max": record.error_max,
        "quad_evals_assembly": report.quad_evals_assembly,
        "quad_evals_iteration": report.quad_evals_iteration,
        "wall_time_s": report.wall_time,
    })


def record_dict(record: RunRecord) -> Dict[str, Any]:
    """JSON 记录: CSV 字段加上残差历史、解向量与备注"""
    data = record_row(record)
    data.update(_clean({
        "observed_order": record.observed_order,
        "failure_reason": record.report.failure_reason,
        "residual_history": record.report.residual_history,
        "solution": record.coefficients,
        "notes": record.notes,
    }))
    return data


def check_dict(check: JacobianCheck) -> Dict[str, Any]:
    return _clean({"system": check.system, "sample": check.sample, "rel_error": check.rel_error})


def build_report(command: str, records: Sequence[Dict[str, Any]],
                 extra_meta: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    meta = {
        "version": REPORT_VERSION,
        "command": command,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    if extra_meta:
        meta.update(_clean(extra_meta))
    return {"meta": meta, "records": list(records)}


def to_json(report: Dict[str, Any]) -> str:
    return json.dumps(report, ensure_ascii=False, indent=2, allow_nan=False)


def to_csv(rows: Sequence[Dict[str, Any]], columns: Optional[List[str]] = None) -> str:
    """None 写为空单元格"""
    columns = columns or CSV_COLUMNS
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in columns})
    return buffer.getvalue()


def render(report: Dict[str, Any], fmt: str, columns: Optional[List[str]] = None) -> str:
    if fmt == "csv":
        return to_csv(report["records"], columns)
    return to_json(report)


def write_output(text: str, path: Optional[str] = None):
    """写入文件; 未指定路径时写到标准输出"""
    if path:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        logger.info(f"报告已写入 {path}")
    else:
        print(text, end="" if text.endswith("\n") else "\n")
