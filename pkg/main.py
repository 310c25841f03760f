"""
Flexible-arm NMPC - command-line entry point
可撓機械臂 NMPC 實驗 - 命令列進入點
"""

import argparse
import asyncio
import json
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.database.database import Database
from src.database.models import ExperimentRun, StudyLog
from src.dynamics.mrfem import build_model_from_settings, describe
from src.harness import (
    ClosedLoop,
    RunResult,
    check_goal,
    discretization_study,
    evaluate,
    filter_demo,
    horizon_study,
    model_complexity_study,
    run_batch,
    simulate_protocol,
    train_policy,
    write_kpis,
    write_log,
    write_table,
)
from src.learning.policy import PolicyNet
from src.learning.trainer import TrainConfig
from src.utils.chart_generator import ChartGenerator
from src.utils.errors import FlexArmError
from src.utils.logger import app_logger, log_manager
from src.utils.settings import ArmSettings, load_settings


class ExperimentRunner:
    def __init__(self, settings: ArmSettings):
        self.settings = settings
        self.out_dir = Path(settings.harness.out_dir)
        self.fmt = settings.harness.format
        self.database = Database(settings.harness.db_path)
        self.charts = ChartGenerator(str(self.out_dir))

    @property
    def seed(self) -> int:
        return self.settings.harness.seed

    @property
    def workers(self) -> int:
        return self.settings.harness.workers

    async def record_runs(
        self, command: str, results: List[RunResult], n_seg: int, horizon: Optional[int] = None
    ) -> None:
        records = [
            ExperimentRun(
                command=command,
                controller=r.controller,
                seed=r.seed,
                run_index=index,
                n_seg=n_seg,
                horizon=horizon,
                status="failed" if r.failed else "ok",
                **report.model_dump(),
            )
            for index, r in enumerate(results)
            for report in r.kpis.values()
        ]
        count = await self.database.insert_runs(records)
        app_logger.debug(f"已寫入 {count} 筆執行紀錄")

    def _plot_runs(self, results: Dict[str, RunResult], name: str) -> None:
        if self.settings.harness.plot:
            self.charts.trajectory_chart(
                {label: r.log for label, r in results.items()},
                name,
                np.asarray(self.settings.task.z_goal),
                self.settings.task.wall_y,
            )

    async def model_info(self, n_seg: Optional[int]) -> Dict[str, Any]:
        n_segs = [n_seg] if n_seg is not None else sorted(
            {self.settings.model.n_seg_control, self.settings.model.n_seg_plant}
        )
        info = {str(n): describe(build_model_from_settings(self.settings.model, n)) for n in n_segs}
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / "model_info.json").write_text(json.dumps(info, indent=2), encoding="utf-8")
        print(json.dumps(info, indent=2))
        return info

    async def simulate(self, n_seg: int, t_final: float) -> None:
        traj = simulate_protocol(self.settings, n_seg, t_final)
        frame = pd.DataFrame(
            np.column_stack([traj.t, traj.ee]), columns=["t", "ee_x", "ee_y", "ee_z"]
        )
        write_table(frame, self.out_dir, f"simulate_nseg{n_seg}", self.fmt)
        if self.settings.harness.plot:
            self.charts.discretization_chart({n_seg: traj.ee}, traj.t, f"simulate_nseg{n_seg}")

    async def discretization(self, n_segs: Sequence[int], t_final: float) -> None:
        table, trajectories = discretization_study(self.settings, n_segs, t_final=t_final)
        write_table(table, self.out_dir, "discretization_study", self.fmt)
        if self.settings.harness.plot:
            t = next(iter(trajectories.values())).t
            self.charts.discretization_chart({n: tr.ee for n, tr in trajectories.items()}, t, "discretization_study")

    async def mpc_run(self, horizon: Optional[int], runs: int) -> None:
        loop = ClosedLoop(self.settings)
        check_goal(self.settings.task, self.settings.expert_mpc.delta_z)
        results = await run_batch(loop, lambda: loop.expert(horizon), runs, self.seed, self.workers)
        write_kpis(results, self.out_dir, "mpc_run_kpis")
        for r in results:
            write_log(r, self.out_dir / "trajectories", self.fmt)
        await self.record_runs("mpc-run", results, loop.control_model.n_seg, horizon or self.settings.expert_mpc.horizon)
        self._plot_runs({"expert": results[0]}, "mpc_run")

    async def horizon(self, horizons: Sequence[int], runs: int) -> None:
        loop = ClosedLoop(self.settings)
        table = await horizon_study(loop, horizons, runs, self.seed, self.workers)
        write_table(table, self.out_dir, "horizon_study", self.fmt)

    async def complexity(self, n_segs: Sequence[int], runs: int) -> None:
        table = await model_complexity_study(self.settings, n_segs, runs, self.seed, self.workers)
        write_table(table, self.out_dir, "complexity_study", self.fmt)

    async def dagger(self, episodes: Optional[int], n0: Optional[int], n1: Optional[int]) -> None:
        loop = ClosedLoop(self.settings)
        config = TrainConfig.from_settings(self.settings.imitation, self.seed)
        update = {k: v for k, v in (("episodes", episodes), ("initial_samples", n0), ("update_samples", n1)) if v}
        result = train_policy(loop, self.seed, config.model_copy(update=update))
        result.net.save(self.out_dir / "policy.json")
        result.dataset.save_csv(self.out_dir / "dataset.csv")
        write_table(result.metrics_frame(), self.out_dir, "dagger_metrics", self.fmt)
        if self.settings.harness.plot:
            self.charts.training_chart(result.metrics_frame())

    async def evaluate(self, policy_path: Path, runs: int) -> None:
        loop = ClosedLoop(self.settings)
        net = PolicyNet.load(policy_path)
        table, results = await evaluate(loop, net, runs, self.seed, self.workers)
        write_table(table, self.out_dir, "evaluation", self.fmt)
        for name, batch in results.items():
            write_kpis(batch, self.out_dir, f"evaluation_{name}")
            await self.record_runs("evaluate", batch, loop.control_model.n_seg)
        self._plot_runs({name: batch[0] for name, batch in results.items()}, "evaluation")

    async def filter_demo(self, policy_path: Path, run_seed: Optional[int]) -> None:
        loop = ClosedLoop(self.settings)
        net = PolicyNet.load(policy_path)
        results = filter_demo(loop, net, self.seed if run_seed is None else run_seed)
        for r in results.values():
            write_log(r, self.out_dir, self.fmt)
        write_kpis(list(results.values()), self.out_dir, "filter_demo_kpis")
        await self.record_runs("filter-demo", list(results.values()), loop.control_model.n_seg)
        self._plot_runs(results, "filter_demo")

    async def dispatch(self, args: argparse.Namespace) -> None:
        command = args.command
        if command == "model-info":
            await self.model_info(args.n_seg)
        elif command == "simulate":
            await self.simulate(args.n_seg if args.n_seg is not None else self.settings.model.n_seg_plant, args.t_final)
        elif command == "discretization-study":
            await self.discretization(args.n_segs, args.t_final)
        elif command == "mpc-run":
            await self.mpc_run(args.horizon, args.runs or self.settings.task.runs)
        elif command == "horizon-study":
            await self.horizon(args.horizons, args.runs or self.settings.task.runs)
        elif command == "complexity-study":
            await self.complexity(args.n_segs, args.runs or self.settings.task.runs)
        elif command == "dagger-train":
            await self.dagger(args.episodes, args.initial_samples, args.update_samples)
        elif command == "evaluate":
            await self.evaluate(args.policy, args.runs or self.settings.task.runs)
        elif command == "filter-demo":
            await self.filter_demo(args.policy, args.run_seed)

    async def run(self, args: argparse.Namespace) -> int:
        """執行子命令並寫入研究日誌"""
        await self.database.init_database()
        sink_id = log_manager.add_run_log(self.out_dir)
        start = time.perf_counter()
        log = StudyLog(command=args.command, status="success", out_dir=str(self.out_dir))
        app_logger.info(f"開始執行 {args.command}，輸出目錄 {self.out_dir}")
        try:
            await self.dispatch(args)
            return 0
        except (FlexArmError, ValueError, FileNotFoundError) as e:
            log.status = "error"
            log.error_message = f"{type(e).__name__}: {e}"
            app_logger.error(f"{args.command} 執行失敗: {log.error_message}")
            return 1
        finally:
            log.duration_seconds = time.perf_counter() - start
            await self.database.insert_study_log(log)
            app_logger.info(f"{args.command} 結束，耗時 {log.duration_seconds:.1f} 秒")
            log_manager.remove_run_log(sink_id)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flexarm", description="Flexible-arm NMPC experiments")
    parser.add_argument("--config", type=Path, default=None, help="TOML 設定檔")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", type=str, default=None, help="輸出目錄")
    parser.add_argument("--format", choices=("csv", "json"), default=None)
    parser.add_argument("--plot", action="store_true", help="輸出 SVG 圖表")
    parser.add_argument("--workers", type=int, default=None, help="同時執行的閉迴路數")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true", help="終端輸出 DEBUG 日誌")
    verbosity.add_argument("--quiet", action="store_true", help="終端只輸出警告與錯誤")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("model-info")
    p.add_argument("--n-seg", type=int, default=None)

    p = sub.add_parser("simulate")
    p.add_argument("--n-seg", type=int, default=None)
    p.add_argument("--t-final", type=float, default=1.0)

    p = sub.add_parser("discretization-study")
    p.add_argument("--n-segs", type=int, nargs="+", default=[0, 1, 2, 3, 5])
    p.add_argument("--t-final", type=float, default=1.0)

    p = sub.add_parser("mpc-run")
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--runs", type=int, default=None)

    p = sub.add_parser("horizon-study")
    p.add_argument("--horizons", type=int, nargs="+", default=[10, 20, 40, 50, 80])
    p.add_argument("--runs", type=int, default=None)

    p = sub.add_parser("complexity-study")
    p.add_argument("--n-segs", type=int, nargs="+", default=[2, 3, 5])
    p.add_argument("--runs", type=int, default=None)

    p = sub.add_parser("dagger-train")
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--initial-samples", type=int, default=None)
    p.add_argument("--update-samples", type=int, default=None)

    for name in ("evaluate", "filter-demo"):
        p = sub.add_parser(name)
        p.add_argument("--policy", type=Path, default=Path("results/policy.json"))
        if name == "evaluate":
            p.add_argument("--runs", type=int, default=None)
        else:
            p.add_argument("--run-seed", type=int, default=None)

    return parser


def settings_from_args(args: argparse.Namespace) -> ArmSettings:
    """設定檔 < 命令列旗標"""
    settings = load_settings(args.config)
    overrides = {
        key: value
        for key, value in (
            ("seed", args.seed),
            ("out_dir", args.out),
            ("format", args.format),
            ("workers", args.workers),
            ("plot", True if args.plot else None),
        )
        if value is not None
    }
    if overrides:
        settings.harness = settings.harness.model_validate({**settings.harness.model_dump(), **overrides})
    return settings


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        log_manager.set_console_level("DEBUG")
    elif args.quiet:
        log_manager.set_console_level("WARNING")
    try:
        settings = settings_from_args(args)
    except (ValueError, FileNotFoundError) as e:
        app_logger.error(f"設定錯誤: {e}")
        return 2
    return asyncio.run(ExperimentRunner(settings).run(args))


if __name__ == "__main__":
    sys.exit(main())
