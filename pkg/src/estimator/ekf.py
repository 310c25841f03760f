"""
Discrete-time extended Kalman filter on the control model

Prediction uses one implicit Radau step and its implicit-function
Jacobian; the update uses the Joseph form. The covariance is symmetrized
after every predict and update.
"""

from typing import NamedTuple, Optional

import jax.numpy as jnp
import numpy as np
from pydantic import BaseModel, Field

from src.dynamics.mrfem import FlexModel, output_map, passive_equilibrium
from src.integrators.steppers import NewtonSettings, model_stepper
from src.sensitivity.jacobians import jac_output_map
from src.utils.errors import ArgumentError, NewtonConvergenceError, NumericError
from src.utils.settings import EstimatorSettings

N_OUTPUT = 9


class NoiseConfig(BaseModel):
    init_cov_q: float = Field(1e-2, gt=0)
    init_cov_qd: float = Field(1e-3, gt=0)
    process_q: tuple[float, float] = (1e-4, 1e-3)
    process_qd: tuple[float, float] = (0.1, 0.5)
    meas_q_a: float = Field(3e-4, gt=0)
    meas_qd_a: float = Field(5e-1, gt=0)
    meas_p_ee: float = Field(1e-2, gt=0)

    @classmethod
    def from_settings(cls, cfg: EstimatorSettings) -> "NoiseConfig":
        return cls(**{name: getattr(cfg, name) for name in cls.model_fields})

    def initial_covariance(self, n_q: int) -> np.ndarray:
        return np.diag(np.concatenate([np.full(n_q, self.init_cov_q), np.full(n_q, self.init_cov_qd)]))

    def process_covariance(self, n_q: int) -> np.ndarray:
        # 第一個關節取較小值，其餘取較大值
        q_block = np.full(n_q, self.process_q[1])
        q_block[0] = self.process_q[0]
        qd_block = np.full(n_q, self.process_qd[1])
        qd_block[0] = self.process_qd[0]
        return np.diag(np.concatenate([q_block, qd_block]))

    def measurement_covariance(self) -> np.ndarray:
        return np.diag(
            np.concatenate([np.full(3, self.meas_q_a), np.full(3, self.meas_qd_a), np.full(3, self.meas_p_ee)])
        )


class EkfBelief(NamedTuple):
    x_hat: np.ndarray
    P: np.ndarray


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


class Ekf:
    """
    EKF 估測器

    Args:
        model: 控制模型（n_seg = 2）
        noise: 雜訊設定
        dt: 取樣時間
        tableau: 預測用隱式 tableau
        newton_tol: 預測步 Newton 容許值
    """

    def __init__(
        self,
        model: FlexModel,
        noise: Optional[NoiseConfig] = None,
        dt: float = 0.01,
        tableau: str = "radau3",
        newton_tol: float = 1e-10,
    ) -> None:
        if dt <= 0:
            raise ArgumentError(f"dt must be positive, got {dt}")
        self.model = model
        self.noise = noise or NoiseConfig()
        self.dt = dt
        self.stepper = model_stepper(model, tableau, NewtonSettings(tol=newton_tol, max_iters=20))
        self.Q = self.noise.process_covariance(model.n_q)
        self.R = self.noise.measurement_covariance()

    @classmethod
    def from_settings(cls, model: FlexModel, cfg: EstimatorSettings, dt: float) -> "Ekf":
        return cls(model, NoiseConfig.from_settings(cfg), dt, cfg.tableau, cfg.newton_tol)

    def initial_belief(self, y: np.ndarray) -> EkfBelief:
        """Seed from a measurement: active joints measured, passive joints at equilibrium"""
        return initial_belief(self.model, y, self.noise)

    def predict(self, belief: EkfBelief, u: np.ndarray, Q: Optional[np.ndarray] = None) -> EkfBelief:
        result, jac_x, _ = self.stepper.step_with_jacobian(
            jnp.asarray(belief.x_hat, dtype=float), jnp.asarray(u, dtype=float), self.dt
        )
        if not bool(result.converged):
            raise NewtonConvergenceError(float(result.residual), int(result.iterations), "EKF prediction")
        A = np.asarray(jac_x)
        process = self.Q if Q is None else Q
        P = _symmetrize(A @ belief.P @ A.T + process)
        return EkfBelief(np.asarray(result.x_next), P)

    def update(self, belief: EkfBelief, y_meas: np.ndarray, R: Optional[np.ndarray] = None) -> EkfBelief:
        y_meas = np.asarray(y_meas, dtype=float)
        if y_meas.shape != (N_OUTPUT,):
            raise ArgumentError(f"measurement must have shape ({N_OUTPUT},), got {y_meas.shape}")
        meas = self.R if R is None else R
        H = jac_output_map(self.model, belief.x_hat)
        innovation = y_meas - output_map(self.model, belief.x_hat)
        S = _symmetrize(H @ belief.P @ H.T + meas)
        try:
            chol = np.linalg.cholesky(S)
        except np.linalg.LinAlgError as exc:
            raise NumericError("innovation covariance is not positive definite") from exc
        # K = P H' S^-1
        K = np.linalg.solve(chol.T, np.linalg.solve(chol, H @ belief.P)).T
        x_hat = belief.x_hat + K @ innovation
        I_KH = np.eye(self.model.n_x) - K @ H
        P = _symmetrize(I_KH @ belief.P @ I_KH.T + K @ meas @ K.T)
        return EkfBelief(x_hat, P)

    def step(self, belief: EkfBelief, u: np.ndarray, y_meas: np.ndarray) -> EkfBelief:
        return self.update(self.predict(belief, u), y_meas)


def initial_belief(model: FlexModel, y: np.ndarray, noise: Optional[NoiseConfig] = None) -> EkfBelief:
    y = np.asarray(y, dtype=float)
    if y.shape != (N_OUTPUT,):
        raise ArgumentError(f"measurement must have shape ({N_OUTPUT},), got {y.shape}")
    noise = noise or NoiseConfig()
    q_a, qd_a = y[:3], y[3:6]
    x_hat = np.concatenate(
        [q_a, passive_equilibrium(model, q_a), qd_a, np.zeros(2 * model.n_seg)]
    )
    return EkfBelief(x_hat, noise.initial_covariance(model.n_q))


def ekf_predict(ekf: Ekf, belief: EkfBelief, u: np.ndarray) -> EkfBelief:
    return ekf.predict(belief, u)


def ekf_update(ekf: Ekf, belief: EkfBelief, y_meas: np.ndarray) -> EkfBelief:
    return ekf.update(belief, y_meas)
