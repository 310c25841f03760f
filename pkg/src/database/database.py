"""
Database operations using aiosqlite
"""

from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

import aiosqlite

from src.database.models import ExperimentRun, StudyLog
from src.utils.logger import app_logger

RUN_COLUMNS = (
    "command",
    "controller",
    "seed",
    "run_index",
    "n_seg",
    "horizon",
    "eps",
    "status",
    "t_eps",
    "d_eps",
    "failed",
    "max_qd_violation",
    "max_wall_penetration_cm",
    "solve_ms_mean",
    "solve_ms_std",
    "solve_ms_max",
    "created_at",
)


class Database:
    def __init__(self, db_path: str = "data/experiments.db"):
        self.db_path = Path(db_path)
        self.db_path.parent.mkdir(parents=True, exist_ok=True)

    async def init_database(self) -> None:
        async with aiosqlite.connect(self.db_path) as db:
            await db.execute(
                """
                CREATE TABLE IF NOT EXISTS experiment_runs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    command TEXT NOT NULL,
                    controller TEXT NOT NULL,
                    seed INTEGER NOT NULL,
                    run_index INTEGER DEFAULT 0,
                    n_seg INTEGER,
                    horizon INTEGER,
                    eps REAL NOT NULL,
                    status TEXT NOT NULL,
                    t_eps REAL,
                    d_eps REAL,
                    failed INTEGER DEFAULT 0,
                    max_qd_violation REAL DEFAULT 0,
                    max_wall_penetration_cm REAL DEFAULT 0,
                    solve_ms_mean REAL,
                    solve_ms_std REAL,
                    solve_ms_max REAL,
                    created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
                )
            """
            )

            await db.execute(
                """
                CREATE TABLE IF NOT EXISTS study_logs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    timestamp TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
                    command TEXT NOT NULL,
                    status TEXT NOT NULL,
                    duration_seconds REAL,
                    error_message TEXT,
                    out_dir TEXT
                )
            """
            )

            await db.execute(
                """
                CREATE INDEX IF NOT EXISTS idx_runs_command
                ON experiment_runs(command, controller)
            """
            )

            await db.commit()
            app_logger.info("資料庫初始化完成")

    async def insert_runs(self, runs: List[ExperimentRun]) -> int:
        """批次寫入執行紀錄，回傳寫入筆數"""
        if not runs:
            return 0
        placeholders = ", ".join("?" for _ in RUN_COLUMNS)
        try:
            async with aiosqlite.connect(self.db_path) as db:
                await db.executemany(
                    f"INSERT INTO experiment_runs ({', '.join(RUN_COLUMNS)}) VALUES ({placeholders})",
                    [
                        tuple(
                            (run.created_at or datetime.now()) if name == "created_at" else getattr(run, name)
                            for name in RUN_COLUMNS
                        )
                        for run in runs
                    ],
                )
                await db.commit()
                return len(runs)
        except Exception as e:
            app_logger.error(f"寫入執行紀錄失敗: {e}")
            return 0

    async def insert_study_log(self, log: StudyLog) -> bool:
        try:
            async with aiosqlite.connect(self.db_path) as db:
                await db.execute(
                    """
                    INSERT INTO study_logs
                    (timestamp, command, status, duration_seconds, error_message, out_dir)
                    VALUES (?, ?, ?, ?, ?, ?)
                """,
                    (
                        log.timestamp,
                        log.command,
                        log.status,
                        log.duration_seconds,
                        log.error_message,
                        log.out_dir,
                    ),
                )
                await db.commit()
                return True
        except Exception as e:
            app_logger.error(f"寫入研究日誌失敗: {e}")
            return False

    async def get_runs(self, command: Optional[str] = None, limit: int = 100) -> List[ExperimentRun]:
        try:
            async with aiosqlite.connect(self.db_path) as db:
                db.row_factory = aiosqlite.Row
                if command:
                    query = "SELECT * FROM experiment_runs WHERE command = ? ORDER BY id DESC LIMIT ?"
                    params: tuple = (command, limit)
                else:
                    query = "SELECT * FROM experiment_runs ORDER BY id DESC LIMIT ?"
                    params = (limit,)
                async with db.execute(query, params) as cursor:
                    rows = await cursor.fetchall()
                    return [ExperimentRun(**dict(row)) for row in rows]
        except Exception as e:
            app_logger.error(f"查詢執行紀錄失敗: {e}")
            return []

    async def get_run(self, run_id: int) -> Optional[ExperimentRun]:
        try:
            async with aiosqlite.connect(self.db_path) as db:
                db.row_factory = aiosqlite.Row
                async with db.execute("SELECT * FROM experiment_runs WHERE id = ?", (run_id,)) as cursor:
                    row = await cursor.fetchone()
                    return ExperimentRun(**dict(row)) if row else None
        except Exception as e:
            app_logger.error(f"查詢執行紀錄 {run_id} 失敗: {e}")
            return None

    async def get_study_logs(self, limit: int = 20) -> List[StudyLog]:
        try:
            async with aiosqlite.connect(self.db_path) as db:
                db.row_factory = aiosqlite.Row
                async with db.execute(
                    "SELECT * FROM study_logs ORDER BY id DESC LIMIT ?", (limit,)
                ) as cursor:
                    rows = await cursor.fetchall()
                    return [StudyLog(**dict(row)) for row in rows]
        except Exception as e:
            app_logger.error(f"查詢研究日誌失敗: {e}")
            return []

    async def get_summary(self) -> List[Dict[str, Any]]:
        """各控制器的彙總：執行次數、失敗率、平均 t_eps、最大違規量"""
        try:
            async with aiosqlite.connect(self.db_path) as db:
                db.row_factory = aiosqlite.Row
                async with db.execute(
                    """
                    SELECT controller,
                           eps,
                           COUNT(*) AS runs,
                           AVG(failed) AS failure_rate,
                           AVG(CASE WHEN failed = 0 THEN t_eps END) AS t_eps_mean,
                           MAX(max_qd_violation) AS max_qd_violation,
                           MAX(max_wall_penetration_cm) AS max_wall_penetration_cm
                    FROM experiment_runs
                    GROUP BY controller, eps
                    ORDER BY controller, eps DESC
                """
                ) as cursor:
                    rows = await cursor.fetchall()
                    return [dict(row) for row in rows]
        except Exception as e:
            app_logger.error(f"查詢彙總失敗: {e}")
            return []
