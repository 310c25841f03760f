"""
Key performance indicators of a closed-loop run
"""

from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel

from src.harness.task import goal_distance
from src.utils.errors import ArgumentError
from src.utils.settings import TaskSettings

DEFAULT_VELOCITY_UPPER = (2.5, 3.5, 3.5)


class KpiReport(BaseModel):
    eps: float
    t_eps: Optional[float] = None
    d_eps: Optional[float] = None
    failed: bool = False
    max_qd_violation: float = 0.0  # rad/s
    max_wall_penetration_cm: float = 0.0
    solve_ms_mean: float = 0.0
    solve_ms_std: float = 0.0
    solve_ms_max: float = 0.0


def reach_and_hold_index(distance: np.ndarray, eps: float) -> Optional[int]:
    """第一個之後全程都在 G_eps 內的取樣索引；最後一點不在球內時為 None"""
    inside = distance <= eps
    if inside.size == 0 or not inside[-1]:
        return None
    outside = np.flatnonzero(~inside)
    return 0 if outside.size == 0 else int(outside[-1]) + 1


def compute_kpis(
    log: pd.DataFrame,
    task: TaskSettings,
    eps: float,
    velocity_upper: Sequence[float] = DEFAULT_VELOCITY_UPPER,
    failed: bool = False,
) -> KpiReport:
    """
    計算單次閉迴路的 KPI

    Args:
        log: 軌跡紀錄（t, qd0..qd2, ee_x, ee_y, ee_z, solve_ms）
        task: 任務設定
        eps: 目標球半徑 [m]
        velocity_upper: 真實（未收緊）關節速度上限
        failed: 控制器是否發生硬性失敗

    Returns:
        KpiReport: KPI
    """
    if log.empty:
        raise ArgumentError("trajectory log is empty")
    if eps <= 0:
        raise ArgumentError(f"eps must be positive, got {eps}")

    t = log["t"].to_numpy()
    ee = log[["ee_x", "ee_y", "ee_z"]].to_numpy()
    qd_a = log[["qd0", "qd1", "qd2"]].to_numpy()
    solve_ms = log["solve_ms"].to_numpy()

    segments = np.linalg.norm(np.diff(ee, axis=0), axis=1)
    index = reach_and_hold_index(goal_distance(ee, np.asarray(task.z_goal)), eps)
    reached = index is not None and not failed
    t_eps = float(t[index]) if reached and index is not None else None
    d_eps = float(segments[:index].sum()) if reached and index is not None else None

    qd_violation = np.maximum(np.abs(qd_a) - np.asarray(velocity_upper), 0.0).max()
    penetration = np.maximum(ee[:, 1] - task.wall_y, 0.0).max()

    return KpiReport(
        eps=eps,
        t_eps=t_eps,
        d_eps=d_eps,
        failed=not reached,
        max_qd_violation=float(qd_violation),
        max_wall_penetration_cm=float(100.0 * penetration),
        solve_ms_mean=float(solve_ms.mean()),
        solve_ms_std=float(solve_ms.std()),
        solve_ms_max=float(solve_ms.max()),
    )


def aggregate_kpis(reports: List[KpiReport]) -> Dict[str, Any]:
    """多次執行的彙總（平均、標準差、最大值、失敗率）"""
    if not reports:
        return {"runs": 0}
    frame = pd.DataFrame([r.model_dump() for r in reports])
    ok = frame[~frame["failed"]]
    return {
        "runs": len(frame),
        "eps": float(frame["eps"].iloc[0]),
        "failure_rate": float(frame["failed"].mean()),
        "t_eps_mean": float(ok["t_eps"].mean()) if len(ok) else None,
        "t_eps_std": float(ok["t_eps"].std(ddof=0)) if len(ok) else None,
        "d_eps_mean": float(ok["d_eps"].mean()) if len(ok) else None,
        "d_eps_std": float(ok["d_eps"].std(ddof=0)) if len(ok) else None,
        "max_qd_violation": float(frame["max_qd_violation"].max()),
        "max_wall_penetration_cm": float(frame["max_wall_penetration_cm"].max()),
        "solve_ms_mean": float(frame["solve_ms_mean"].mean()),
        "solve_ms_std": float(frame["solve_ms_std"].mean()),
        "solve_ms_max": float(frame["solve_ms_max"].max()),
    }
