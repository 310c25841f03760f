"""
High-accuracy reference simulation

Fixed-step Radau IIA on a fine grid, control held constant over each
reporting interval.
"""

from typing import Callable, NamedTuple, Optional, Union

import jax
import jax.numpy as jnp
import numpy as np

from src.dynamics.mrfem import FlexModel, ee_position_traced
from src.integrators.steppers import NewtonSettings, model_stepper
from src.utils.errors import ArgumentError, NewtonConvergenceError, SimulationError
from src.utils.logger import app_logger

ControlSignal = Union[Callable[[float], np.ndarray], np.ndarray]


class Trajectory(NamedTuple):
    t: np.ndarray  # (K + 1,)
    x: np.ndarray  # (K + 1, n_x)
    u: np.ndarray  # (K, 3)
    ee: np.ndarray  # (K + 1, 3)


class GroundTruthSimulator:
    """
    Plant integrator: ``substeps`` Radau IIA steps per reporting interval

    Args:
        model: 模型（通常 n_seg = 10）
        dt: 取樣時間
        substeps: 每個取樣區間的細分步數 (dt_fine = dt / substeps)
        newton: Newton 設定
        tableau: 隱式 tableau 名稱
    """

    def __init__(
        self,
        model: FlexModel,
        dt: float,
        substeps: int = 20,
        newton: Optional[NewtonSettings] = None,
        tableau: str = "radau3",
    ) -> None:
        if dt <= 0 or substeps < 1:
            raise ArgumentError("dt must be positive and substeps >= 1")
        self.model = model
        self.dt = dt
        self.substeps = substeps
        self.stepper = model_stepper(model, tableau, newton or NewtonSettings(tol=1e-12, max_iters=20))
        dt_fine = dt / substeps

        def interval(x: jnp.ndarray, u: jnp.ndarray):  # type: ignore[no-untyped-def]
            def one(carry, _):  # type: ignore[no-untyped-def]
                x_k, ok, worst = carry
                result = self.stepper.traced(x_k, u, dt_fine)
                return (result.x_next, ok & result.converged, jnp.maximum(worst, result.residual)), None

            (x_end, ok, worst), _ = jax.lax.scan(
                one, (x, jnp.asarray(True), jnp.asarray(0.0)), None, length=substeps
            )
            return x_end, ok, worst

        self._interval = jax.jit(interval)
        self._ee = jax.jit(lambda x: ee_position_traced(model, x[: model.n_q]))

    def advance(self, x: np.ndarray, u: np.ndarray, t: float = 0.0) -> np.ndarray:
        """Integrate one reporting interval; raises SimulationError stamped with t"""
        x_end, ok, worst = self._interval(jnp.asarray(x, dtype=float), jnp.asarray(u, dtype=float))
        if not bool(ok):
            cause = NewtonConvergenceError(float(worst), self.stepper.newton.max_iters, "Radau stages")
            raise SimulationError(t, cause)
        return np.asarray(x_end)

    def ee_position(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self._ee(jnp.asarray(x, dtype=float)))

    def run(self, x0: np.ndarray, control: ControlSignal, t_final: float) -> Trajectory:
        n_steps = int(round(t_final / self.dt))
        if n_steps < 1:
            raise ArgumentError(f"t_final={t_final} shorter than one sampling interval")
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (self.model.n_x,):
            raise ArgumentError(f"x0 must have shape ({self.model.n_x},), got {x0.shape}")

        times = self.dt * np.arange(n_steps + 1)
        states = np.empty((n_steps + 1, self.model.n_x))
        inputs = np.empty((n_steps, self.model.n_u))
        ee = np.empty((n_steps + 1, 3))
        states[0] = x0
        ee[0] = self.ee_position(x0)
        for k in range(n_steps):
            if callable(control):
                u_k = np.asarray(control(times[k]), dtype=float)
            else:
                u_k = np.asarray(control[k], dtype=float)
            inputs[k] = u_k
            states[k + 1] = self.advance(states[k], u_k, float(times[k]))
            ee[k + 1] = self.ee_position(states[k + 1])
        return Trajectory(times, states, inputs, ee)


def simulate_ground_truth(
    model: FlexModel,
    x0: np.ndarray,
    control: ControlSignal,
    t_final: float,
    dt: float = 0.01,
    dt_fine: Optional[float] = None,
    newton_tol: float = 1e-12,
) -> Trajectory:
    """
    模擬參考軌跡

    Args:
        model: 模型
        x0: 初始狀態
        control: u(t) 函數或 (K, 3) 陣列，在每個取樣區間內保持不變
        t_final: 模擬時間
        dt: 回報網格間距
        dt_fine: 積分步長，預設 dt / 20

    Returns:
        Trajectory: 回報網格上的軌跡
    """
    substeps = 20 if dt_fine is None else max(1, int(round(dt / dt_fine)))
    simulator = GroundTruthSimulator(model, dt, substeps, NewtonSettings(tol=newton_tol, max_iters=20))
    app_logger.debug(f"參考模擬: n_seg={model.n_seg}, T={t_final}, dt_fine={dt / substeps:.2e}")
    return simulator.run(x0, control, t_final)
