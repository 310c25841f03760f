"""
Result emission: tables and trajectory logs as CSV or JSON
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Literal

import pandas as pd

from src.harness.closed_loop import RunResult
from src.harness.kpi import aggregate_kpis
from src.utils.logger import app_logger

OutputFormat = Literal["csv", "json"]


def write_table(table: pd.DataFrame, out_dir: Path, name: str, fmt: OutputFormat = "csv") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{name}.{fmt}"
    if fmt == "csv":
        table.to_csv(path, index=False)
    else:
        table.to_json(path, orient="records", indent=2)
    app_logger.info(f"已輸出: {path}")
    return path


def write_log(result: RunResult, out_dir: Path, fmt: OutputFormat = "csv") -> Path:
    return write_table(result.log, out_dir, f"trajectory_{result.controller}_{result.seed}", fmt)


def kpi_document(results: List[RunResult]) -> Dict[str, Any]:
    """每次執行一個物件，另加每個 eps 的彙總區塊"""
    eps_list = sorted({eps for r in results for eps in r.kpis})
    return {
        "runs": [
            {
                "controller": r.controller,
                "seed": r.seed,
                "failed": r.failed,
                "error": r.error,
                "kpis": [r.kpis[eps].model_dump() for eps in sorted(r.kpis)],
            }
            for r in results
        ],
        "aggregate": [aggregate_kpis([r.kpis[eps] for r in results if eps in r.kpis]) for eps in eps_list],
    }


def write_kpis(results: List[RunResult], out_dir: Path, name: str) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{name}.json"
    path.write_text(json.dumps(kpi_document(results), indent=2), encoding="utf-8")
    app_logger.info(f"已輸出: {path}")
    return path
