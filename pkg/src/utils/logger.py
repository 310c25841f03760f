"""
Logger configuration using loguru
"""

import os
import sys
from pathlib import Path
from typing import Any, Optional

from loguru import logger

CONSOLE_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>"
)
FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <8} | {name}:{function}:{line} - {message}"


class Logger:
    """
    全域日誌設定：終端、每日日誌檔、錯誤日誌檔

    另外可以為單一實驗掛上輸出目錄內的 run.log，讓結果與日誌放在一起
    """

    def __init__(self, log_dir: Optional[str] = None) -> None:
        self.log_dir = Path(log_dir or os.environ.get("FLEXARM_LOG_DIR", "logs"))
        self.console_level = "INFO"
        self._console_id: Optional[int] = None
        self._setup_logger()

    def _setup_logger(self) -> None:
        logger.remove()
        self.log_dir.mkdir(parents=True, exist_ok=True)

        self._console_id = logger.add(sys.stdout, format=CONSOLE_FORMAT, level=self.console_level, colorize=True)

        logger.add(
            self.log_dir / "app_{time:YYYY-MM-DD}.log",
            rotation="1 day",
            retention="7 days",
            format=FILE_FORMAT,
            level="DEBUG",
            encoding="utf-8",
        )

        logger.add(
            self.log_dir / "error_{time:YYYY-MM-DD}.log",
            rotation="1 day",
            retention="30 days",
            format=FILE_FORMAT,
            level="ERROR",
            encoding="utf-8",
        )

    def set_console_level(self, level: str) -> None:
        """只替換終端 sink（CLI --verbose / --quiet），檔案 sink 不受影響"""
        self.console_level = level.upper()
        if self._console_id is not None:
            logger.remove(self._console_id)
        self._console_id = logger.add(sys.stdout, format=CONSOLE_FORMAT, level=self.console_level, colorize=True)

    def add_run_log(self, out_dir: Path) -> int:
        """在實驗輸出目錄加上 run.log（DEBUG），回傳 sink id"""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        return logger.add(out_dir / "run.log", format=FILE_FORMAT, level="DEBUG", encoding="utf-8", enqueue=True)

    def remove_run_log(self, sink_id: int) -> None:
        # enqueue 的 sink 移除時會先清空佇列
        logger.remove(sink_id)

    def get_logger(self, name: Optional[str] = None) -> Any:
        if name:
            return logger.bind(name=name)
        return logger


log_manager = Logger()
app_logger = log_manager.get_logger("flexarm")
