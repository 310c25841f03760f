#!/usr/bin/env python3
"""
測試實驗框架：任務取樣、KPI 計算、方波激勵、閉迴路執行與結果輸出
"""

import asyncio
import json
import sys
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import torch

# 添加專案根目錄到 Python 路徑
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from src.dynamics.mrfem import MaterialGeometry, build_model, equilibrium_state, hold_torque, output_map  # noqa: E402
from src.harness import (  # noqa: E402
    ClosedLoop,
    KpiReport,
    RunResult,
    aggregate_kpis,
    check_goal,
    compute_kpis,
    discretization_study,
    filter_demo,
    initial_state,
    kpi_document,
    log_columns,
    reach_and_hold_index,
    run_batch,
    run_closed_loop,
    square_wave,
    write_kpis,
    write_table,
)
from src.harness.studies import new_policy  # noqa: E402
from src.utils.chart_generator import ChartGenerator  # noqa: E402
from src.utils.errors import ArgumentError  # noqa: E402
from src.utils.settings import ArmSettings, ModelSettings, MpcSettings, SimulatorSettings, TaskSettings  # noqa: E402

TASK = TaskSettings()
GOAL = np.asarray(TASK.z_goal)


def _small_settings() -> ArmSettings:
    """控制模型 n_seg = 0、受控體 n_seg = 1、5 個取樣時間"""
    return ArmSettings(
        model=ModelSettings(n_seg_control=0, n_seg_plant=1),
        simulator=SimulatorSettings(substeps=4),
        expert_mpc=MpcSettings(horizon=5),
        safety_filter=ArmSettings().safety_filter.model_copy(update={"horizon": 5}),
        task=TaskSettings(t_sim=0.05),
    )


def _log(t: np.ndarray, ee: np.ndarray, qd: np.ndarray = None) -> pd.DataFrame:  # type: ignore[assignment]
    qd = np.zeros((t.size, 3)) if qd is None else qd
    frame = pd.DataFrame({"t": t, "solve_ms": np.full(t.size, 2.0)})
    for i in range(3):
        frame[f"qd{i}"] = qd[:, i]
    for i, axis in enumerate(("ee_x", "ee_y", "ee_z")):
        frame[axis] = ee[:, i]
    return frame


def test_reach_and_hold_index() -> None:
    assert reach_and_hold_index(np.array([0.2, 0.04, 0.06, 0.03, 0.02]), 0.05) == 3
    assert reach_and_hold_index(np.array([0.01, 0.02]), 0.05) == 0
    assert reach_and_hold_index(np.array([0.01, 0.2]), 0.05) is None
    assert reach_and_hold_index(np.array([]), 0.05) is None


def test_straight_line_kpis() -> None:
    # 以 0.5 m/s 直線接近目標，0.6 s 後停在目標
    t = 0.01 * np.arange(101)
    distance = np.maximum(0.3 - 0.5 * t, 0.0)
    ee = GOAL + np.outer(distance, [1.0, 0.0, 0.0])
    report = compute_kpis(_log(t, ee), TASK, 0.05)
    assert not report.failed
    assert report.t_eps == pytest.approx(0.5, abs=0.0101)
    assert report.d_eps == pytest.approx(0.5 * report.t_eps, rel=1e-9)
    assert report.max_qd_violation == 0.0
    assert report.max_wall_penetration_cm == 0.0
    assert report.solve_ms_mean == pytest.approx(2.0)

    never = compute_kpis(_log(t, ee + [1.0, 0.0, 0.0]), TASK, 0.05)
    assert never.failed and never.t_eps is None and never.d_eps is None

    hard_failure = compute_kpis(_log(t, ee), TASK, 0.05, failed=True)
    assert hard_failure.failed and hard_failure.t_eps is None


def test_violations_use_true_bounds() -> None:
    t = 0.01 * np.arange(3)
    ee = np.tile(GOAL, (3, 1))
    ee[1, 1] = 0.01
    qd = np.zeros((3, 3))
    qd[2, 0] = 3.0
    qd[1, 2] = -3.6
    report = compute_kpis(_log(t, ee, qd), TASK, 0.1)
    assert report.max_qd_violation == pytest.approx(0.5)
    assert report.max_wall_penetration_cm == pytest.approx(1.0)


def test_kpi_arguments() -> None:
    with pytest.raises(ArgumentError):
        compute_kpis(pd.DataFrame(columns=["t"]), TASK, 0.05)
    t = np.zeros(1)
    with pytest.raises(ArgumentError):
        compute_kpis(_log(t, GOAL[None, :]), TASK, 0.0)


def test_aggregate_kpis() -> None:
    reports = [
        KpiReport(eps=0.05, t_eps=0.4, d_eps=0.3, solve_ms_mean=3.0, solve_ms_max=5.0),
        KpiReport(eps=0.05, failed=True, max_qd_violation=0.2, solve_ms_mean=5.0, solve_ms_max=9.0),
    ]
    summary = aggregate_kpis(reports)
    assert summary["runs"] == 2
    assert summary["failure_rate"] == pytest.approx(0.5)
    assert summary["t_eps_mean"] == pytest.approx(0.4)
    assert summary["max_qd_violation"] == pytest.approx(0.2)
    assert summary["solve_ms_mean"] == pytest.approx(4.0)
    assert summary["solve_ms_max"] == pytest.approx(9.0)
    assert aggregate_kpis([]) == {"runs": 0}


def test_initial_state_and_goal() -> None:
    model = build_model(MaterialGeometry(), 2)
    x = initial_state(model, TASK, 11)
    np.testing.assert_array_equal(x, initial_state(model, TASK, 11))
    assert np.all(x[:3] >= TASK.q_a_lower) and np.all(x[:3] <= TASK.q_a_upper)
    np.testing.assert_allclose(x[model.n_q :], 0.0)

    check_goal(TASK, 0.02)
    with pytest.raises(ArgumentError):
        check_goal(TaskSettings(z_goal=(0.5, 0.0, 0.2)), 0.02)


def test_square_wave_protocol() -> None:
    model = build_model(MaterialGeometry(), 1)
    q_a0 = np.zeros(3)
    control = square_wave(model, q_a0)
    base = hold_torque(model, equilibrium_state(model, q_a0)[: model.n_q])
    np.testing.assert_allclose(control(0.0) - base, [0.0, 0.0, 5.0])
    np.testing.assert_allclose(control(0.03), base)
    np.testing.assert_allclose(control(0.2), base)
    np.testing.assert_allclose(control(0.46) - base, [0.0, 10.0, 0.0])
    np.testing.assert_allclose(control(0.49), base)


def test_discretization_study_table() -> None:
    settings = _small_settings()
    table, trajectories = discretization_study(settings, n_segs=(0, 2), reference_n_seg=2, t_final=0.05)
    assert list(table["n_seg"]) == [0, 2]
    assert set(trajectories) == {0, 2}
    assert table.loc[table["n_seg"] == 2, "max_dev"].iloc[0] == 0.0
    assert (table["rms_dev"] <= table["max_dev"] + 1e-15).all()


def test_expert_closed_loop() -> None:
    loop = ClosedLoop(_small_settings())
    assert loop.n_steps == 5
    result = loop.run(loop.expert(), seed=3)
    assert result.controller == "expert"
    assert not result.failed
    assert len(result.log) == 5
    assert list(result.log.columns) == log_columns(loop.plant_model.n_q)
    assert set(result.kpis) == set(loop.task.goal_radii)
    np.testing.assert_allclose(result.log["t"], 0.01 * np.arange(5))
    assert (result.log[["u0", "u1", "u2"]].abs().to_numpy() <= loop.control_model.torque_upper + 1e-9).all()


def test_policy_batch_seeds_and_rollout() -> None:
    loop = ClosedLoop(_small_settings())
    net = new_policy(loop, seed=0)
    results = asyncio.run(run_batch(loop, lambda: loop.policy(net), runs=2, base_seed=7, workers=2))
    assert [r.seed for r in results] == [7, 8]
    assert all(len(r.log) == 5 for r in results)

    # 同一種子重跑得到相同軌跡（求解時間除外）
    log, kpis = run_closed_loop(loop, loop.policy(net), seed=7)
    columns = [c for c in log.columns if c != "solve_ms"]
    np.testing.assert_allclose(log[columns].to_numpy(), results[0].log[columns].to_numpy())
    assert set(kpis) == set(results[0].kpis)

    record = loop.rollout(lambda x_hat: np.zeros(3), seed=1)
    assert record.ee.shape == (5, 3)
    assert record.dt == pytest.approx(0.01)
    assert not record.failed


def test_filter_demo_same_initial_state() -> None:
    loop = ClosedLoop(_small_settings())
    results = filter_demo(loop, new_policy(loop, seed=0), seed=4)
    assert set(results) == {"nn", "nn_sf"}
    first = results["nn"].log.iloc[0]
    second = results["nn_sf"].log.iloc[0]
    np.testing.assert_allclose(first[["q0", "q1", "q2"]], second[["q0", "q1", "q2"]])


def test_expert_reaches_goal_without_violations() -> None:
    plant = build_model(MaterialGeometry(), 2)
    x_goal = equilibrium_state(plant, [-0.8, 0.3, -0.2])
    task = TaskSettings(z_goal=tuple(float(v) for v in output_map(plant, x_goal)[6:]), t_sim=1.0)
    check_goal(task, MpcSettings().delta_z)
    settings = ArmSettings(
        model=ModelSettings(n_seg_control=1, n_seg_plant=2),
        simulator=SimulatorSettings(substeps=10),
        expert_mpc=MpcSettings(horizon=20),
        task=task,
    )
    loop = ClosedLoop(settings)
    x0 = equilibrium_state(plant, [-0.95, 0.3, -0.2])

    reports = [loop.run(loop.expert(), seed=seed, x0=x0).kpis[0.05] for seed in (0, 1)]
    clean = [
        r for r in reports
        if not r.failed and r.max_qd_violation == 0.0 and r.max_wall_penetration_cm == 0.0
    ]
    assert clean, reports
    assert all(r.t_eps is not None and r.t_eps > 0.0 for r in clean)


def test_solve_time_grows_with_horizon() -> None:
    settings = _small_settings().model_copy(update={"model": ModelSettings(n_seg_control=1, n_seg_plant=1)})
    loop = ClosedLoop(settings)
    mean_ms = {}
    for horizon in (10, 40):
        # 第一次執行包含 JIT 編譯
        loop.run(loop.expert(horizon), seed=0)
        result = loop.run(loop.expert(horizon), seed=0)
        assert not result.failed
        mean_ms[horizon] = result.log["solve_ms"].mean()
    assert mean_ms[10] < mean_ms[40]


def test_safety_filter_reduces_violations() -> None:
    settings = ArmSettings(
        model=ModelSettings(n_seg_control=1, n_seg_plant=1),
        simulator=SimulatorSettings(substeps=4),
        safety_filter=ArmSettings().safety_filter.model_copy(update={"horizon": 10}),
        task=TaskSettings(t_sim=0.2),
    )
    loop = ClosedLoop(settings)
    # 未訓練策略：第一關節持續施加最大負力矩
    net = new_policy(loop, seed=0)
    with torch.no_grad():
        for layer in net.linear_layers():
            layer.weight.zero_()
            layer.bias.zero_()
        net.linear_layers()[-1].bias.copy_(torch.tensor([-1.0, 0.0, 0.0], dtype=torch.float64))

    results = filter_demo(loop, net, seed=2)
    raw = results["nn"].kpis[0.05]
    filtered = results["nn_sf"].kpis[0.05]
    assert raw.max_qd_violation > 0.0
    assert filtered.max_qd_violation < raw.max_qd_violation


def test_result_files() -> None:
    t = 0.01 * np.arange(3)
    log = _log(t, np.tile(GOAL, (3, 1)))
    results = [
        RunResult("expert", seed, log, {0.05: compute_kpis(log, TASK, 0.05), 0.1: compute_kpis(log, TASK, 0.1)})
        for seed in (0, 1)
    ]
    document = kpi_document(results)
    assert len(document["runs"]) == 2
    assert [block["eps"] for block in document["aggregate"]] == [0.05, 0.1]

    with tempfile.TemporaryDirectory() as tmp:
        path = write_kpis(results, Path(tmp), "kpis")
        assert json.loads(path.read_text(encoding="utf-8"))["aggregate"][0]["runs"] == 2
        csv_path = write_table(log, Path(tmp), "log", "csv")
        assert list(pd.read_csv(csv_path).columns) == list(log.columns)
        json_path = write_table(log, Path(tmp), "log", "json")
        assert len(json.loads(json_path.read_text(encoding="utf-8"))) == 3


def test_charts_written_as_svg() -> None:
    t = 0.01 * np.arange(4)
    log = _log(t, np.tile(GOAL, (4, 1)))
    for column in ("u0", "u1", "u2"):
        log[column] = 0.5
    metrics = pd.DataFrame(
        {"episode": [0, 1], "train_loss": [1.0, 0.1], "val_loss": [1.2, 0.2], "eval_return": [-3.0, -1.0]}
    )
    with tempfile.TemporaryDirectory() as tmp:
        charts = ChartGenerator(tmp)
        assert Path(charts.trajectory_chart({"expert": log}, "run", GOAL, TASK.wall_y)).suffix == ".svg"
        assert charts.discretization_chart({0: log[["ee_x", "ee_y", "ee_z"]].to_numpy()}, t, "disc") is not None
        assert charts.training_chart(metrics) is not None
        assert charts.trajectory_chart({}, "empty") is None
        assert sorted(p.name for p in Path(tmp).iterdir()) == ["dagger_training.svg", "disc.svg", "run.svg"]


if __name__ == "__main__":
    print("\n🚀 開始測試實驗框架\n")
    for name, func in list(globals().items()):
        if name.startswith("test_") and callable(func):
            print(f"[測試] {name}")
            func()
    print("\n✅ 所有測試執行完畢！\n")
