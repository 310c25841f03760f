"""
Receding-horizon wrappers: expert NMPC and the predictive safety filter
"""

from typing import Optional, Sequence, Tuple

import numpy as np

from src.dynamics.mrfem import FlexModel, hold_torque
from src.ocp.problem import N_SLACK, OcpProblem, SolveStats, SolveStatus, transcribe
from src.ocp.sqp import InitialGuess, SqpOptions, cold_start, solve
from src.utils.errors import ArgumentError
from src.utils.logger import app_logger
from src.utils.settings import MpcSettings, TaskSettings


def shift_guess(guess: InitialGuess) -> InitialGuess:
    """Drop the first stage and repeat the last one"""
    return InitialGuess(
        X=np.vstack([guess.X[1:], guess.X[-1:]]),
        U=np.vstack([guess.U[1:], guess.U[-1:]]),
        sigma=np.vstack([guess.sigma[1:], np.zeros((1, N_SLACK))]),
        penalty=guess.penalty,
    )


class NmpcController:
    """
    Expert NMPC on the control model

    One instance owns its warm start; do not share an instance between
    threads.
    """

    def __init__(
        self,
        model: FlexModel,
        config: Optional[MpcSettings] = None,
        task: Optional[TaskSettings] = None,
        z_goal: Optional[Sequence[float]] = None,
    ) -> None:
        self.model = model
        self.config = config or MpcSettings()
        self.task = task or TaskSettings()
        self.options = SqpOptions.from_settings(self.config)
        self.problem: OcpProblem = transcribe(model, self.config, self.task, z_goal=z_goal)
        self._warm: Optional[InitialGuess] = None
        self._u_prev: Optional[np.ndarray] = None
        self._x_ref: Optional[np.ndarray] = None
        self.last_solution = None

    @property
    def horizon(self) -> int:
        return self.problem.horizon

    def reset(self) -> None:
        self._warm = None
        self._u_prev = None
        self._x_ref = None
        self.last_solution = None

    def clamp(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, self.problem.lb_u, self.problem.ub_u)

    def _state_reference(self, x_hat: np.ndarray) -> np.ndarray:
        # 位置參考 = 第一次估測的位置，速度參考 = 0
        if self._x_ref is None:
            n_q = self.model.n_q
            self._x_ref = np.concatenate([x_hat[:n_q], np.zeros(n_q)])
        return self._x_ref

    def _problem_for(self, x_hat: np.ndarray, z_goal: Optional[Sequence[float]]) -> OcpProblem:
        n = self.problem.horizon
        z_ref = None if z_goal is None else np.tile(np.asarray(z_goal, dtype=float), (n + 1, 1))
        return self.problem.with_references(
            x_ref=np.tile(self._state_reference(x_hat), (n + 1, 1)), z_ref=z_ref
        )

    def _solve(self, problem: OcpProblem, x_hat: np.ndarray) -> Tuple[np.ndarray, SolveStats]:
        guess = shift_guess(self._warm) if self._warm is not None else cold_start(problem, x_hat)
        solution = solve(problem, x_hat, guess, self.options)
        self.last_solution = solution
        if not solution.stats.ok:
            app_logger.warning(f"求解失敗 ({solution.stats.status.value})，沿用上一個控制量")
            self._warm = None
            # 尚無上一個控制量時以靜態保持力矩代替
            fallback = self._u_prev
            if fallback is None:
                fallback = hold_torque(self.model, x_hat[: self.model.n_q])
            return self.clamp(fallback), solution.stats
        self._warm = InitialGuess(solution.X, solution.U, solution.sigma, solution.penalty)
        u0 = self.clamp(solution.U[0])
        self._u_prev = u0
        return u0, solution.stats

    def step(self, x_hat: np.ndarray, z_goal: Optional[Sequence[float]] = None) -> Tuple[np.ndarray, SolveStats]:
        x_hat = np.asarray(x_hat, dtype=float)
        if x_hat.shape != (self.model.n_x,) or not np.isfinite(x_hat).all():
            raise ArgumentError("state estimate must be finite and match the control model")
        return self._solve(self._problem_for(x_hat, z_goal), x_hat)


class SafetyFilter(NmpcController):
    """
    Predictive safety filter: min ||u_0 - u_candidate||^2_R0 plus small
    regularization, subject to the same constraints as the expert
    """

    def step_filter(self, x_hat: np.ndarray, u_candidate: np.ndarray) -> Tuple[np.ndarray, SolveStats]:
        x_hat = np.asarray(x_hat, dtype=float)
        u_candidate = np.asarray(u_candidate, dtype=float)
        if u_candidate.shape != (self.model.n_u,) or not np.isfinite(u_candidate).all():
            raise ArgumentError("candidate control must be a finite 3-vector")
        if x_hat.shape != (self.model.n_x,) or not np.isfinite(x_hat).all():
            raise ArgumentError("state estimate must be finite and match the control model")
        u_ref = np.zeros((self.problem.horizon, self.model.n_u))
        u_ref[0] = u_candidate
        problem = self.problem.with_references(u_ref=u_ref)
        u_safe, stats = self._solve(problem, x_hat)
        if stats.status is not SolveStatus.CONVERGED:
            app_logger.debug(f"安全濾波器未收斂: {stats.status.value}")
        return u_safe, stats


def nmpc_step(
    controller: NmpcController, x_hat: np.ndarray, z_goal: Optional[Sequence[float]] = None
) -> Tuple[np.ndarray, SolveStats]:
    return controller.step(x_hat, z_goal)


def safety_filter_step(
    safety_filter: SafetyFilter, x_hat: np.ndarray, u_candidate: np.ndarray
) -> Tuple[np.ndarray, SolveStats]:
    return safety_filter.step_filter(x_hat, u_candidate)
