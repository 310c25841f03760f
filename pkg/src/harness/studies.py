"""
Experiment drivers: discretization, horizon and model-complexity studies,
DAgger training, evaluation of expert / NN / NN + filter, filter demo
"""

import asyncio
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.dynamics.mrfem import FlexModel, build_model_from_settings, equilibrium_state, hold_torque
from src.harness.closed_loop import ClosedLoop, Controller, RunResult
from src.harness.kpi import aggregate_kpis
from src.integrators.simulation import GroundTruthSimulator, Trajectory
from src.integrators.steppers import NewtonSettings
from src.learning.dagger import DaggerResult, dagger_train
from src.learning.policy import PolicyNet
from src.learning.trainer import TrainConfig
from src.utils.logger import app_logger
from src.utils.settings import ArmSettings

# 方波激勵：關節 3 於 [0, 0.03) 施加 5 N·m，結束 0.42 s 後關節 2 施加 10 N·m 0.04 s
PULSE_JOINT3 = (2, 5.0, 0.0, 0.03)
PULSE_JOINT2 = (1, 10.0, 0.45, 0.04)


def square_wave(model: FlexModel, q_a0: Sequence[float]) -> Callable[[float], np.ndarray]:
    """Hold torque of the equilibrium plus the two square pulses"""
    x0 = equilibrium_state(model, q_a0)
    base = hold_torque(model, x0[: model.n_q])

    def control(t: float) -> np.ndarray:
        u = base.copy()
        for joint, amplitude, start, width in (PULSE_JOINT3, PULSE_JOINT2):
            if start <= t + 1e-12 < start + width:
                u[joint] += amplitude
        return u

    return control


def simulate_protocol(
    settings: ArmSettings, n_seg: int, t_final: float = 1.0, q_a0: Sequence[float] = (0.0, 0.0, 0.0)
) -> Trajectory:
    model = build_model_from_settings(settings.model, n_seg)
    sim = settings.simulator
    simulator = GroundTruthSimulator(
        model, sim.sampling_time, sim.substeps, NewtonSettings(tol=sim.newton_tol, max_iters=sim.newton_max_iters)
    )
    return simulator.run(equilibrium_state(model, q_a0), square_wave(model, q_a0), t_final)


def discretization_study(
    settings: ArmSettings,
    n_segs: Sequence[int] = (0, 1, 2, 3, 5),
    reference_n_seg: int = 10,
    t_final: float = 1.0,
    q_a0: Sequence[float] = (0.0, 0.0, 0.0),
) -> Tuple[pd.DataFrame, Dict[int, Trajectory]]:
    """
    各分段數對參考模型（n_seg = 10）的 EE 偏差

    Returns:
        Tuple[pd.DataFrame, Dict[int, Trajectory]]: 偏差表（n_seg, max_dev, rms_dev）與各軌跡
    """
    app_logger.info(f"離散化研究: n_seg={list(n_segs)}, 參考 n_seg={reference_n_seg}")
    trajectories = {reference_n_seg: simulate_protocol(settings, reference_n_seg, t_final, q_a0)}
    for n_seg in n_segs:
        if n_seg not in trajectories:
            trajectories[n_seg] = simulate_protocol(settings, n_seg, t_final, q_a0)

    reference = trajectories[reference_n_seg].ee
    rows = []
    for n_seg in n_segs:
        deviation = np.linalg.norm(trajectories[n_seg].ee - reference, axis=1)
        rows.append(
            {
                "n_seg": n_seg,
                "max_dev": float(deviation.max()),
                "rms_dev": float(np.sqrt(np.mean(deviation**2))),
            }
        )
    table = pd.DataFrame(rows)
    app_logger.info(f"離散化研究完成:\n{table.to_string(index=False)}")
    return table, trajectories


def _warm_up(loop: ClosedLoop, controller: Controller) -> None:
    # 觸發 JIT 編譯，避免第一步的編譯時間進入求解時間統計
    q_a = 0.5 * (np.asarray(loop.task.q_a_lower) + np.asarray(loop.task.q_a_upper))
    controller.reset()
    controller.act(equilibrium_state(loop.control_model, q_a))
    controller.reset()


async def run_batch(
    loop: ClosedLoop,
    factory: Callable[[], Controller],
    runs: int,
    base_seed: int,
    workers: int = 1,
) -> List[RunResult]:
    """
    批次執行，第 i 次使用種子 base_seed + i

    Args:
        loop: 閉迴路環境
        factory: 每次執行建立新的控制器
        runs: 執行次數
        base_seed: 基礎種子
        workers: 同時執行的執行緒數

    Returns:
        List[RunResult]: 依執行順序排列的結果
    """
    semaphore = asyncio.Semaphore(workers)
    _warm_up(loop, factory())

    async def one(index: int) -> RunResult:
        async with semaphore:
            return await asyncio.to_thread(loop.run, factory(), base_seed + index)

    results = await asyncio.gather(*(one(i) for i in range(runs)))
    failed = sum(r.failed for r in results)
    if failed:
        app_logger.warning(f"{failed}/{runs} 次執行發生控制器硬性失敗")
    return list(results)


def summarize(results: List[RunResult], eps_list: Sequence[float]) -> Dict[float, Dict]:
    return {eps: aggregate_kpis([r.kpis[eps] for r in results if eps in r.kpis]) for eps in eps_list}


def _rows(label: Dict, summary: Dict[float, Dict]) -> List[Dict]:
    return [{**label, **aggregate} for aggregate in summary.values()]


async def horizon_study(
    loop: ClosedLoop,
    horizons: Sequence[int] = (10, 20, 40, 50, 80),
    runs: int = 20,
    base_seed: int = 0,
    workers: int = 1,
) -> pd.DataFrame:
    rows: List[Dict] = []
    for horizon in horizons:
        app_logger.info(f"預測時域研究: N={horizon}")
        results = await run_batch(loop, lambda: loop.expert(horizon), runs, base_seed, workers)
        rows += _rows({"horizon": horizon}, summarize(results, loop.task.goal_radii))
    return pd.DataFrame(rows)


def _with_ratios(table: pd.DataFrame, key: str, baseline: object) -> pd.DataFrame:
    base = table[table[key] == baseline].set_index("eps")
    table = table.copy()
    for column, ratio in (("t_eps_mean", "t_ratio"), ("d_eps_mean", "d_ratio"), ("solve_ms_mean", "solve_ratio")):
        reference = table["eps"].map(base[column])
        table[ratio] = table[column].astype(float) / reference.astype(float)
    return table


async def model_complexity_study(
    settings: ArmSettings,
    n_segs: Sequence[int] = (2, 3, 5),
    runs: int = 20,
    base_seed: int = 0,
    workers: int = 1,
    baseline: int = 2,
) -> pd.DataFrame:
    """控制模型分段數對 KPI 與求解時間的影響（相對 n_seg = 2）"""
    rows: List[Dict] = []
    for n_seg in n_segs:
        app_logger.info(f"模型複雜度研究: 控制模型 n_seg={n_seg}")
        loop = ClosedLoop(settings, control_n_seg=n_seg)
        results = await run_batch(loop, loop.expert, runs, base_seed, workers)
        rows += _rows({"n_seg": n_seg}, summarize(results, settings.task.goal_radii))
    table = pd.DataFrame(rows)
    return _with_ratios(table, "n_seg", baseline) if baseline in n_segs else table


def new_policy(loop: ClosedLoop, seed: int) -> PolicyNet:
    cfg = loop.settings.imitation
    n_in = loop.control_model.n_x + (3 if cfg.goal_conditioned else 0)
    return PolicyNet(n_in, cfg.hidden_layers, loop.control_model.torque_upper, cfg.clamp_output, seed)


def train_policy(loop: ClosedLoop, seed: int = 0, config: Optional[TrainConfig] = None) -> DaggerResult:
    cfg = loop.settings.imitation
    config = config or TrainConfig.from_settings(cfg, seed)
    app_logger.info(
        f"DAgger 訓練: {config.episodes} 回合, n0={config.initial_samples}, n1={config.update_samples}"
    )
    return dagger_train(
        loop.expert(),
        loop,
        new_policy(loop, seed),
        np.asarray(loop.task.z_goal),
        config,
        goal_conditioned=cfg.goal_conditioned,
    )


async def evaluate(
    loop: ClosedLoop,
    net: PolicyNet,
    runs: int = 20,
    base_seed: int = 0,
    workers: int = 1,
) -> Tuple[pd.DataFrame, Dict[str, List[RunResult]]]:
    """
    比較專家、NN 與 NN + 安全濾波器

    Returns:
        Tuple[pd.DataFrame, Dict[str, List[RunResult]]]: 每個控制器與 eps 的彙總（含相對專家比值）及原始結果
    """
    factories: Dict[str, Callable[[], Controller]] = {
        "expert": loop.expert,
        "nn": lambda: loop.policy(net),
        "nn_sf": lambda: loop.filtered_policy(net),
    }
    results: Dict[str, List[RunResult]] = {}
    rows: List[Dict] = []
    for name, factory in factories.items():
        app_logger.info(f"評估控制器: {name}")
        results[name] = await run_batch(loop, factory, runs, base_seed, workers)
        rows += _rows({"controller": name}, summarize(results[name], loop.task.goal_radii))
    table = _with_ratios(pd.DataFrame(rows), "controller", "expert")
    expert_ms = table.loc[table["controller"] == "expert", "solve_ms_mean"].mean()
    table["speedup"] = expert_ms / table["solve_ms_mean"]
    return table, results


def filter_demo(loop: ClosedLoop, net: PolicyNet, seed: int = 0) -> Dict[str, RunResult]:
    """同一初始狀態下 NN 與 NN + 安全濾波器的比較"""
    nn = loop.policy(net)
    nn_sf = loop.filtered_policy(net)
    return {"nn": loop.run(nn, seed), "nn_sf": loop.run(nn_sf, seed)}
