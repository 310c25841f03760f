#!/usr/bin/env python3
"""
測試多重射擊最佳控制問題、SQP 求解器、NMPC 與安全濾波器
"""

import sys
from pathlib import Path

import numpy as np
import pytest
from scipy.linalg import solve_discrete_are

# 添加專案根目錄到 Python 路徑
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from src.dynamics.mrfem import MaterialGeometry, build_model, equilibrium_state, hold_torque, output_map  # noqa: E402
from src.harness.task import initial_state  # noqa: E402
from src.ocp.controller import NmpcController, SafetyFilter, shift_guess  # noqa: E402
from src.ocp.problem import LinearDynamics, OcpBounds, OcpProblem, SolveStatus, transcribe  # noqa: E402
from src.ocp.sqp import InitialGuess, SqpOptions, cold_start, solve  # noqa: E402
from src.utils.errors import ArgumentError  # noqa: E402
from src.utils.settings import ArmSettings, MpcSettings, TaskSettings  # noqa: E402

# 雙積分器，dt = 0.1
A = np.array([[1.0, 0.1], [0.0, 1.0]])
B = np.array([[0.005], [0.1]])
Q_DIAG = np.array([1.0, 1.0])
R_DIAG = np.array([1.0])
OPTIONS = SqpOptions(qp_tol=1e-8, kkt_tol=1e-7, qp_max_iters=200)

MODEL = build_model(MaterialGeometry(), 1)
REST = equilibrium_state(MODEL, [-0.8, 0.3, -0.2])
MODEL_2 = build_model(MaterialGeometry(), 2)


def _linear_problem(
    horizon: int,
    terminal: str = "none",
    u_bound: float = 1e3,
    velocity_bound: float = np.inf,
    selector=None,  # type: ignore[no-untyped-def]
) -> OcpProblem:
    n = horizon
    lb_x = np.full((n + 1, 2), -np.inf)
    ub_x = np.full((n + 1, 2), np.inf)
    lb_x[:, 1] = -velocity_bound
    ub_x[:, 1] = velocity_bound
    return OcpProblem(
        dynamics=LinearDynamics(A, B, velocity_selector=selector),
        horizon=n,
        dt=0.1,
        q_diag=np.tile(Q_DIAG, (n + 1, 1)),
        r_diag=np.tile(R_DIAG, (n, 1)),
        p_diag=np.zeros((n + 1, 1)),
        slack_l2=np.array([1e3, 1e3]),
        slack_l1=np.array([1e2, 1e2]),
        lb_x=lb_x,
        ub_x=ub_x,
        lb_z=np.array([-np.inf]),
        ub_z=np.array([np.inf]),
        lb_u=np.array([-u_bound]),
        ub_u=np.array([u_bound]),
        x_ref=np.zeros((n + 1, 2)),
        u_ref=np.zeros((n, 1)),
        z_ref=np.zeros((n + 1, 1)),
        terminal=terminal,  # type: ignore[arg-type]
    )


def test_long_horizon_matches_lqr() -> None:
    P = solve_discrete_are(A, B, np.diag(Q_DIAG), np.diag(R_DIAG))
    K = np.linalg.solve(np.diag(R_DIAG) + B.T @ P @ B, B.T @ P @ A)
    x0 = np.array([1.0, 0.0])

    solution = solve(_linear_problem(100), x0, options=OPTIONS)
    assert solution.stats.status is SolveStatus.CONVERGED
    np.testing.assert_allclose(solution.U[0], -K @ x0, atol=1e-5)
    assert solution.max_defect < 1e-8


def test_already_optimal_guess_needs_no_iteration() -> None:
    problem = _linear_problem(10, terminal="hard")
    solution = solve(problem, np.zeros(2), options=OPTIONS)
    assert solution.stats.status is SolveStatus.CONVERGED
    assert solution.stats.iterations == 0
    np.testing.assert_allclose(solution.U, 0.0)


def test_input_bounds_respected() -> None:
    solution = solve(_linear_problem(30, u_bound=0.1), np.array([1.0, 0.0]), options=OPTIONS)
    assert solution.stats.ok
    assert solution.U.min() >= -0.1 - 1e-7
    assert solution.U.max() <= 0.1 + 1e-7
    # 約束起作用
    assert solution.U.min() < -0.09


def test_hard_terminal_velocity() -> None:
    selector = np.array([[0.0, 1.0]])
    solution = solve(_linear_problem(30, terminal="hard", selector=selector), np.array([1.0, 0.0]), options=OPTIONS)
    assert solution.stats.ok
    assert abs(solution.X[-1, 1]) < 1e-6


def test_soft_state_bounds_use_slack() -> None:
    solution = solve(_linear_problem(30, velocity_bound=0.05), np.array([1.0, 0.0]), options=OPTIONS)
    assert solution.stats.ok
    assert (solution.sigma >= 0).all()
    slack = solution.sigma[:, 0]
    assert np.all(solution.X[:, 1] >= -0.05 - slack - 1e-6)
    assert np.all(solution.X[:, 1] <= 0.05 + slack + 1e-6)


def test_kkt_residual_includes_bound_multipliers() -> None:
    solution = solve(_linear_problem(30, u_bound=0.1), np.array([1.0, 0.0]), options=OPTIONS)
    assert solution.stats.status is SolveStatus.CONVERGED
    # 輸入邊界起作用時目標函數梯度不為零，殘差仍需收斂
    assert np.abs(solution.U).max() == pytest.approx(0.1, abs=1e-6)
    assert 0.0 <= solution.stats.kkt <= 1e-6
    assert solution.stats.kkt == solution.kkt_history[-1]


def test_problem_validation() -> None:
    with pytest.raises(ArgumentError):
        _linear_problem(1)
    with pytest.raises(ArgumentError):
        _linear_problem(10, u_bound=np.inf)
    with pytest.raises(ArgumentError):
        solve(_linear_problem(10), np.zeros(3))
    with pytest.raises(ArgumentError):
        OcpBounds.tightened(MODEL, delta_qd=3.0)


def test_shift_guess() -> None:
    problem = _linear_problem(5)
    guess = cold_start(problem, np.array([1.0, 2.0]))
    guess = guess._replace(U=np.arange(5.0)[:, None])
    shifted = shift_guess(guess)
    assert shifted.X.shape == guess.X.shape
    np.testing.assert_allclose(shifted.U[:, 0], [1.0, 2.0, 3.0, 4.0, 4.0])
    np.testing.assert_allclose(shifted.sigma[-1], 0.0)


def test_transcribe_flexible_arm() -> None:
    config = ArmSettings().safety_filter.model_copy(update={"horizon": 10})
    problem = transcribe(MODEL, config, TaskSettings())
    assert problem.q_diag.shape == (11, MODEL.n_x)
    np.testing.assert_allclose(problem.r_diag[0], [1.0, 1.0, 1.0])
    np.testing.assert_allclose(problem.r_diag[1:], 1e-5)
    assert problem.ub_z[1] == pytest.approx(-0.02)
    # 主動關節速度上限減去裕度
    np.testing.assert_allclose(problem.ub_x[0, MODEL.n_q : MODEL.n_q + 3], [1.5, 2.5, 2.5])
    assert problem.terminal == "hard"


def test_expert_controller_step() -> None:
    controller = NmpcController(MODEL, MpcSettings(horizon=10), TaskSettings())
    u, stats = controller.step(REST)
    assert stats.ok
    assert u.shape == (3,)
    assert np.all(u <= MODEL.torque_upper) and np.all(u >= MODEL.torque_lower)
    assert controller.last_solution is not None

    # warm start 後再解一次
    u_next, stats_next = controller.step(REST)
    assert stats_next.ok and np.isfinite(u_next).all()

    with pytest.raises(ArgumentError):
        controller.step(np.zeros(MODEL.n_x + 1))


def test_safety_filter_passes_safe_candidate() -> None:
    config = ArmSettings().safety_filter.model_copy(update={"horizon": 10})
    safety_filter = SafetyFilter(MODEL, config, TaskSettings())
    u_candidate = hold_torque(MODEL, REST[: MODEL.n_q])
    u_safe, stats = safety_filter.step_filter(REST, u_candidate)
    assert stats.ok
    assert np.linalg.norm(u_safe - u_candidate) <= 1e-3 * (1.0 + np.linalg.norm(u_candidate))

    with pytest.raises(ArgumentError):
        safety_filter.step_filter(REST, np.array([np.nan, 0.0, 0.0]))


def test_steady_state_needs_at_most_two_iterations() -> None:
    config = ArmSettings().expert_mpc
    x_eq = equilibrium_state(MODEL_2, [-0.8, 0.3, -0.2])
    u_hold = hold_torque(MODEL_2, x_eq[: MODEL_2.n_q])
    n = config.horizon
    problem = transcribe(MODEL_2, config, TaskSettings(), x_ref=x_eq, z_goal=output_map(MODEL_2, x_eq)[6:])
    problem = problem.with_references(u_ref=np.tile(u_hold, (n, 1)))
    guess = InitialGuess(np.tile(x_eq, (n + 1, 1)), np.tile(u_hold, (n, 1)), np.zeros((n + 1, 2)))

    solution = solve(problem, x_eq, guess, SqpOptions.from_settings(config))
    assert solution.stats.status is SolveStatus.CONVERGED
    assert solution.stats.iterations <= 2
    np.testing.assert_allclose(solution.U[0], u_hold, atol=1e-6)


def test_default_expert_solves_and_filter_passes_it() -> None:
    settings = ArmSettings()
    x0 = initial_state(MODEL_2, settings.task, 0)
    expert = NmpcController(MODEL_2, settings.expert_mpc, settings.task)
    u_expert, stats = expert.step(x0)
    assert stats.ok
    assert np.isfinite(expert.last_solution.X).all()
    assert np.all(u_expert <= MODEL_2.torque_upper) and np.all(u_expert >= MODEL_2.torque_lower)

    # 專家輸出本身可行，濾波器不應修改
    safety_filter = SafetyFilter(MODEL_2, settings.safety_filter, settings.task)
    u_safe, filter_stats = safety_filter.step_filter(x0, u_expert)
    assert filter_stats.ok
    assert np.linalg.norm(u_safe - u_expert) <= 1e-3 * (1.0 + np.linalg.norm(u_expert))


def test_warm_start_needs_fewer_iterations() -> None:
    settings = ArmSettings()
    warm_total = cold_total = 0
    for seed in (0, 1):
        controller = NmpcController(MODEL_2, settings.expert_mpc, settings.task)
        x0 = initial_state(MODEL_2, settings.task, seed)
        _, first = controller.step(x0)
        assert first.ok
        x_next = controller.last_solution.X[1]

        cold_problem = controller._problem_for(x_next, None)
        cold = solve(cold_problem, x_next, cold_start(cold_problem, x_next), controller.options)
        _, warm = controller.step(x_next)
        assert warm.ok and cold.stats.ok
        assert warm.iterations <= cold.stats.iterations
        warm_total += warm.iterations
        cold_total += cold.stats.iterations
    assert warm_total < cold_total


def test_safety_filter_saturates_at_torque_bound() -> None:
    settings = ArmSettings()
    rest = equilibrium_state(MODEL_2, [-0.8, 0.3, -0.2])
    safety_filter = SafetyFilter(MODEL_2, settings.safety_filter, settings.task)
    # 第一關節往遠離牆面方向，超出力矩下限
    u_candidate = hold_torque(MODEL_2, rest[: MODEL_2.n_q]) + np.array([-50.0, 0.0, 0.0])
    u_safe, stats = safety_filter.step_filter(rest, u_candidate)
    assert stats.ok
    assert u_safe[0] == pytest.approx(MODEL_2.torque_lower[0], abs=1e-4)


def test_active_velocity_bound_uses_slack() -> None:
    x0 = REST.copy()
    x0[MODEL.n_q] = 2.0  # 收緊後上限為 1.5
    controller = NmpcController(MODEL, MpcSettings(horizon=20, terminal="soft"), TaskSettings())
    _, stats = controller.step(x0)
    assert stats.ok
    assert controller.last_solution.sigma[0, 0] >= 0.5 - 1e-6
    assert stats.max_sigma_qd > 0.0


if __name__ == "__main__":
    print("\n🚀 開始測試最佳控制模組\n")
    for name, func in list(globals().items()):
        if name.startswith("test_") and callable(func):
            print(f"[測試] {name}")
            func()
    print("\n✅ 所有測試執行完畢！\n")
