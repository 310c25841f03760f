"""
Flexible-arm NMPC - FastAPI REST API
可撓機械臂 NMPC 實驗紀錄 - REST API 介面（唯讀）
"""

from typing import Any, Dict, List, Optional

from fastapi import FastAPI, HTTPException, Query

from src.database.database import Database
from src.database.models import ExperimentRun
from src.dynamics.mrfem import build_model_from_settings, describe
from src.utils.errors import FlexArmError
from src.utils.logger import app_logger
from src.utils.settings import settings

# 常數定義
API_TITLE = "Flexible Arm NMPC API"

# 建立 FastAPI 應用
app = FastAPI(
    title=API_TITLE,
    description="可撓機械臂 NMPC 實驗查詢 API - 實驗由命令列執行",
    version="1.0.0",
)


async def _database() -> Database:
    database = Database(db_path=settings.harness.db_path)
    await database.init_database()
    return database


@app.get("/api/v1/health")
async def health_check() -> Dict[str, str]:
    """
    健康檢查端點

    Returns:
        Dict[str, str]: 健康狀態
    """
    return {"status": "ok", "service": API_TITLE}


@app.get("/api/v1/runs")
async def list_runs(
    command: Optional[str] = None, limit: int = Query(100, ge=1, le=10_000)
) -> List[Dict[str, Any]]:
    """
    查詢閉迴路執行紀錄

    Args:
        command: 只列出指定子命令（mpc-run, evaluate, filter-demo）
        limit: 最多筆數

    Returns:
        List[Dict[str, Any]]: 由新到舊的執行紀錄
    """
    database = await _database()
    runs: List[ExperimentRun] = await database.get_runs(command, limit)
    return [run.model_dump(mode="json") for run in runs]


@app.get("/api/v1/runs/{run_id}")
async def get_run(run_id: int) -> Dict[str, Any]:
    database = await _database()
    run = await database.get_run(run_id)
    if run is None:
        raise HTTPException(status_code=404, detail=f"run {run_id} not found")
    return run.model_dump(mode="json")


@app.get("/api/v1/summary")
async def get_summary() -> Dict[str, Any]:
    """
    各控制器彙總：執行次數、失敗率、平均 t_eps、最大違規量

    Example Response:
        {
            "controllers": [
                {"controller": "expert", "eps": 0.05, "runs": 20, "failure_rate": 0.0,
                 "t_eps_mean": 0.41, "max_qd_violation": 0.0, "max_wall_penetration_cm": 0.0}
            ],
            "recent_studies": [...]
        }
    """
    database = await _database()
    return {
        "controllers": await database.get_summary(),
        "recent_studies": [log.model_dump(mode="json") for log in await database.get_study_logs()],
    }


@app.get("/api/v1/model-info")
async def model_info(n_seg: int = Query(2, ge=0, le=50)) -> Dict[str, Any]:
    """模型維度與集中參數"""
    try:
        return describe(build_model_from_settings(settings.model, n_seg))
    except FlexArmError as e:
        app_logger.error(f"建立模型失敗: {e}")
        raise HTTPException(status_code=400, detail=str(e))


# 啟動提示
if __name__ == "__main__":
    import uvicorn

    app_logger.info("啟動可撓機械臂 NMPC API 服務")
    app_logger.info("API 文件：http://localhost:8000/docs")
    uvicorn.run(app, host="0.0.0.0", port=8000)
