"""
Database models for the experiment run registry
"""

from datetime import datetime
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field


class ExperimentRun(BaseModel):
    model_config = ConfigDict(from_attributes=True, protected_namespaces=())

    id: Optional[int] = None
    command: str = Field(..., description="CLI 子命令")
    controller: str = Field(..., description="expert, nn, nn_sf")
    seed: int
    run_index: int = 0
    n_seg: int = Field(2, description="控制模型分段數")
    horizon: Optional[int] = None
    eps: float = Field(..., description="目標球半徑 [m]")
    status: str = Field("ok", description="ok 或 failed")
    t_eps: Optional[float] = None
    d_eps: Optional[float] = None
    failed: bool = False
    max_qd_violation: float = 0.0
    max_wall_penetration_cm: float = 0.0
    solve_ms_mean: float = 0.0
    solve_ms_std: float = 0.0
    solve_ms_max: float = 0.0
    created_at: Optional[datetime] = Field(default_factory=datetime.now, description="記錄建立時間")


class StudyLog(BaseModel):
    model_config = ConfigDict(from_attributes=True)

    id: Optional[int] = None
    timestamp: datetime = Field(default_factory=datetime.now, description="執行時間")
    command: str
    status: str = Field(..., description="執行狀態: success, error")
    duration_seconds: Optional[float] = None
    error_message: Optional[str] = None
    out_dir: Optional[str] = None
