"""
Closed-loop simulation: fine plant, noisy measurements, EKF on the
control model, and one of the controllers (expert, NN, NN + filter)
"""

import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional, Protocol, Sequence, Tuple

import numpy as np
import pandas as pd

from src.dynamics.mrfem import FlexModel, build_model_from_settings, output_map
from src.estimator.ekf import Ekf, EkfBelief
from src.harness.kpi import KpiReport, compute_kpis
from src.harness.task import initial_state
from src.integrators.simulation import GroundTruthSimulator
from src.integrators.steppers import NewtonSettings
from src.learning.dagger import RolloutRecord
from src.learning.policy import PolicyNet, policy_forward, policy_input
from src.ocp.controller import NmpcController, SafetyFilter
from src.ocp.problem import SolveStats
from src.utils.errors import FlexArmError
from src.utils.logger import app_logger
from src.utils.settings import ArmSettings


class ControlOutput(NamedTuple):
    u: np.ndarray
    solve_ms: float
    sigma_qd: float = 0.0
    sigma_obs: float = 0.0


class Controller(Protocol):
    name: str

    def reset(self) -> None: ...

    def act(self, x_hat: np.ndarray) -> ControlOutput: ...


class ExpertController:
    name = "expert"

    def __init__(self, nmpc: NmpcController) -> None:
        self.nmpc = nmpc

    def reset(self) -> None:
        self.nmpc.reset()

    def step(self, x_hat: np.ndarray) -> Tuple[np.ndarray, SolveStats]:
        return self.nmpc.step(x_hat)

    def act(self, x_hat: np.ndarray) -> ControlOutput:
        start = time.perf_counter()
        u, stats = self.nmpc.step(x_hat)
        elapsed = 1e3 * (time.perf_counter() - start)
        return ControlOutput(u, elapsed, stats.max_sigma_qd, stats.max_sigma_obs)


class PolicyController:
    name = "nn"

    def __init__(self, net: PolicyNet, z_goal: Optional[Sequence[float]] = None) -> None:
        self.net = net
        self.z_goal = None if z_goal is None else np.asarray(z_goal, dtype=float)

    def reset(self) -> None:
        pass

    def act(self, x_hat: np.ndarray) -> ControlOutput:
        start = time.perf_counter()
        u = policy_forward(self.net, policy_input(x_hat, self.z_goal))
        return ControlOutput(u, 1e3 * (time.perf_counter() - start))


class FilteredPolicyController:
    name = "nn_sf"

    def __init__(self, policy: PolicyController, safety_filter: SafetyFilter) -> None:
        self.policy = policy
        self.safety_filter = safety_filter

    def reset(self) -> None:
        self.policy.reset()
        self.safety_filter.reset()

    def act(self, x_hat: np.ndarray) -> ControlOutput:
        start = time.perf_counter()
        candidate = self.policy.act(x_hat)
        u, stats = self.safety_filter.step_filter(x_hat, candidate.u)
        elapsed = 1e3 * (time.perf_counter() - start)
        return ControlOutput(u, elapsed, stats.max_sigma_qd, stats.max_sigma_obs)


@dataclass
class RunResult:
    controller: str
    seed: int
    log: pd.DataFrame
    kpis: Dict[float, KpiReport] = field(default_factory=dict)
    failed: bool = False
    error: Optional[str] = None


def log_columns(n_q: int) -> List[str]:
    return (
        ["t"]
        + [f"q{i}" for i in range(n_q)]
        + [f"qd{i}" for i in range(n_q)]
        + ["u0", "u1", "u2", "ee_x", "ee_y", "ee_z", "solve_ms", "sigma_qd", "sigma_obs"]
    )


class ClosedLoop:
    """
    閉迴路環境：每個取樣時間 量測 -> EKF -> 控制器 -> 受控體前進

    Args:
        settings: 全部設定
        plant_n_seg: 受控體分段數，預設 model.n_seg_plant
        control_n_seg: 控制/估測模型分段數，預設 model.n_seg_control
    """

    def __init__(
        self,
        settings: ArmSettings,
        plant_n_seg: Optional[int] = None,
        control_n_seg: Optional[int] = None,
    ) -> None:
        self.settings = settings
        self.task = settings.task
        self.dt = settings.simulator.sampling_time
        self.plant_model: FlexModel = build_model_from_settings(
            settings.model, settings.model.n_seg_plant if plant_n_seg is None else plant_n_seg
        )
        self.control_model: FlexModel = build_model_from_settings(
            settings.model, settings.model.n_seg_control if control_n_seg is None else control_n_seg
        )
        sim = settings.simulator
        self.simulator = GroundTruthSimulator(
            self.plant_model,
            self.dt,
            sim.substeps,
            NewtonSettings(tol=sim.newton_tol, max_iters=sim.newton_max_iters),
        )
        # 量測雜訊以變異數給定
        self.meas_std = np.sqrt(
            np.concatenate(
                [np.full(3, sim.noise_q_a), np.full(3, sim.noise_qd_a), np.full(3, sim.noise_p_ee)]
            )
        )
        self.n_steps = int(round(self.task.t_sim / self.dt))

    def expert(self, horizon: Optional[int] = None) -> ExpertController:
        config = self.settings.expert_mpc
        if horizon is not None:
            config = config.model_copy(update={"horizon": horizon})
        return ExpertController(NmpcController(self.control_model, config, self.task))

    def policy(self, net: PolicyNet) -> PolicyController:
        goal = self.task.z_goal if self.settings.imitation.goal_conditioned else None
        return PolicyController(net, goal)

    def filtered_policy(self, net: PolicyNet) -> FilteredPolicyController:
        safety_filter = SafetyFilter(self.control_model, self.settings.safety_filter, self.task)
        return FilteredPolicyController(self.policy(net), safety_filter)

    def estimator(self) -> Ekf:
        return Ekf.from_settings(self.control_model, self.settings.estimator, self.dt)

    def measure(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return output_map(self.plant_model, x) + self.meas_std * rng.standard_normal(9)

    def simulate(
        self, act: Callable[[np.ndarray], ControlOutput], seed: int, x0: Optional[np.ndarray] = None
    ) -> Tuple[pd.DataFrame, Optional[str]]:
        """
        執行一次閉迴路，失敗時保留部分紀錄

        Returns:
            Tuple[pd.DataFrame, Optional[str]]: 軌跡紀錄與錯誤訊息
        """
        x = initial_state(self.plant_model, self.task, seed) if x0 is None else np.asarray(x0, dtype=float)
        noise = np.random.default_rng([seed, 1])
        ekf = self.estimator()
        n_q = self.plant_model.n_q
        belief: Optional[EkfBelief] = None
        u_prev = np.zeros(3)
        rows: List[np.ndarray] = []
        error: Optional[str] = None

        for k in range(self.n_steps):
            t = k * self.dt
            try:
                y = self.measure(x, noise)
                belief = ekf.initial_belief(y) if belief is None else ekf.step(belief, u_prev, y)
                out = act(belief.x_hat)
                ee = self.simulator.ee_position(x)
                rows.append(
                    np.concatenate(
                        [[t], x[:n_q], x[n_q:], out.u, ee, [out.solve_ms, out.sigma_qd, out.sigma_obs]]
                    )
                )
                x = self.simulator.advance(x, out.u, t)
                u_prev = np.asarray(out.u, dtype=float)
            except FlexArmError as e:
                error = f"{type(e).__name__}: {e}"
                app_logger.error(f"閉迴路在 t={t:.2f}s 失敗 (seed={seed}): {error}")
                break

        if not rows:
            return pd.DataFrame(columns=log_columns(n_q), dtype=float), error
        return pd.DataFrame(np.vstack(rows), columns=log_columns(n_q)), error

    def run(self, controller: Controller, seed: int, x0: Optional[np.ndarray] = None) -> RunResult:
        controller.reset()
        log, error = self.simulate(controller.act, seed, x0)
        result = RunResult(controller=controller.name, seed=seed, log=log, failed=error is not None, error=error)
        if not log.empty:
            for eps in self.task.goal_radii:
                result.kpis[eps] = compute_kpis(
                    log, self.task, eps, self.plant_model.velocity_upper, failed=result.failed
                )
        app_logger.debug(f"{controller.name} seed={seed}: {len(log)} 步, failed={result.failed}")
        return result

    def rollout(self, actor: Callable[[np.ndarray], np.ndarray], seed: int) -> RolloutRecord:
        """DAgger 使用的環境介面"""
        log, error = self.simulate(lambda x_hat: ControlOutput(np.asarray(actor(x_hat)), 0.0), seed)
        ee = log[["ee_x", "ee_y", "ee_z"]].to_numpy() if not log.empty else np.zeros((0, 3))
        return RolloutRecord(ee=ee, dt=self.dt, failed=error is not None)


def run_closed_loop(
    loop: ClosedLoop, controller: Controller, seed: int, x0: Optional[np.ndarray] = None
) -> Tuple[pd.DataFrame, Dict[float, KpiReport]]:
    """單次閉迴路：回傳軌跡紀錄與每個目標半徑的 KPI；失敗時紀錄只保留到失敗前"""
    result = loop.run(controller, seed, x0)
    return result.log, result.kpis
