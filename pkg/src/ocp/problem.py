"""
Multiple-shooting optimal control problem

Decision variables per stage k = 0..N are the state x_k and v_k = (u_k,
sigma_k) with sigma_k = (sigma_qd, sigma_obs) >= 0. The end-effector
position z_k = fk(x_k) is substituted, so its bounds act on x through the
forward kinematics. u_N is a placeholder without cost or bounds.
"""

from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Literal, NamedTuple, Optional, Protocol, Sequence, Tuple

import jax.numpy as jnp
import numpy as np
from pydantic import BaseModel, Field, model_validator

from src.dynamics.mrfem import FlexModel, ee_position_traced
from src.integrators.steppers import NewtonSettings, model_stepper
from src.utils.errors import ArgumentError
from src.utils.settings import MpcSettings, TaskSettings

TerminalMode = Literal["hard", "soft", "none"]
N_SLACK = 2


class ShootingDynamics(Protocol):
    """Discrete dynamics seen by the solver; all methods are jax-traceable"""

    n_x: int
    n_u: int
    n_z: int
    velocity_selector: np.ndarray

    def step(self, x: jnp.ndarray, u: jnp.ndarray) -> Tuple[jnp.ndarray, jnp.ndarray]: ...

    def step_with_jacobian(
        self, x: jnp.ndarray, u: jnp.ndarray
    ) -> Tuple[jnp.ndarray, jnp.ndarray, jnp.ndarray, jnp.ndarray]: ...

    def output(self, x: jnp.ndarray) -> jnp.ndarray: ...


class FlexDynamics:
    """Implicit Runge-Kutta step of the flexible arm plus the EE output"""

    def __init__(
        self, model: FlexModel, dt: float, tableau: str = "gauss4", newton: Optional[NewtonSettings] = None
    ) -> None:
        self.model = model
        self.dt = dt
        self.n_x = model.n_x
        self.n_u = model.n_u
        self.n_z = 3
        self.velocity_selector = np.hstack([np.zeros((model.n_q, model.n_q)), np.eye(model.n_q)])
        self.stepper = model_stepper(model, tableau, newton or NewtonSettings(tol=1e-10, max_iters=20))

    # 相同模型與 stepper 的實例共用已編譯的 SQP kernel
    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FlexDynamics):
            return NotImplemented
        return (self.model, self.dt, self.stepper) == (other.model, other.dt, other.stepper)

    def __hash__(self) -> int:
        return hash((self.model, self.dt, self.stepper))

    def step(self, x: jnp.ndarray, u: jnp.ndarray) -> Tuple[jnp.ndarray, jnp.ndarray]:
        result = self.stepper.traced(x, u, self.dt)
        return result.x_next, result.converged

    def step_with_jacobian(
        self, x: jnp.ndarray, u: jnp.ndarray
    ) -> Tuple[jnp.ndarray, jnp.ndarray, jnp.ndarray, jnp.ndarray]:
        result, jac_x, jac_u = self.stepper.traced_with_jacobian(x, u, self.dt)
        return result.x_next, jac_x, jac_u, result.converged

    def output(self, x: jnp.ndarray) -> jnp.ndarray:
        return ee_position_traced(self.model, x[: self.model.n_q])


class LinearDynamics:
    """x+ = A x + B u with output z = C x"""

    def __init__(
        self,
        A: np.ndarray,
        B: np.ndarray,
        C: Optional[np.ndarray] = None,
        velocity_selector: Optional[np.ndarray] = None,
    ) -> None:
        self.A = np.asarray(A, dtype=float)
        self.B = np.asarray(B, dtype=float)
        self.n_x, self.n_u = self.B.shape
        if self.A.shape != (self.n_x, self.n_x):
            raise ArgumentError("A must be square and match B")
        self.C = np.zeros((1, self.n_x)) if C is None else np.asarray(C, dtype=float)
        self.n_z = self.C.shape[0]
        self.velocity_selector = (
            np.eye(self.n_x) if velocity_selector is None else np.asarray(velocity_selector, dtype=float)
        )

    def step(self, x: jnp.ndarray, u: jnp.ndarray) -> Tuple[jnp.ndarray, jnp.ndarray]:
        return jnp.asarray(self.A) @ x + jnp.asarray(self.B) @ u, jnp.asarray(True)

    def step_with_jacobian(
        self, x: jnp.ndarray, u: jnp.ndarray
    ) -> Tuple[jnp.ndarray, jnp.ndarray, jnp.ndarray, jnp.ndarray]:
        x_next, ok = self.step(x, u)
        return x_next, jnp.asarray(self.A), jnp.asarray(self.B), ok

    def output(self, x: jnp.ndarray) -> jnp.ndarray:
        return jnp.asarray(self.C) @ x


class OcpWeights(BaseModel):
    w_q_a: float = Field(0.01, ge=0)
    w_q_a_terminal: float = Field(0.1, ge=0)
    w_qd_a: float = Field(0.1, ge=0)
    w_qd_a_terminal: float = Field(1.0, ge=0)
    w_q_p: float = Field(1e-3, ge=0)
    w_q_p_terminal: float = Field(1e-3, ge=0)
    w_qd_p: float = Field(10.0, ge=0)
    w_qd_p_terminal: float = Field(10.0, ge=0)
    r: Tuple[float, float, float] = (0.1, 1.0, 1.0)
    r_rest: Optional[Tuple[float, float, float]] = None
    p: Tuple[float, float, float] = (3e3, 3e3, 3e3)
    p_terminal: Tuple[float, float, float] = (3e4, 3e4, 3e4)
    slack_l2: Tuple[float, float] = (1e3, 3e5)
    slack_l1: Tuple[float, float] = (1e1, 1e6)

    @model_validator(mode="after")
    def _non_negative(self) -> "OcpWeights":
        vectors = [self.r, self.p, self.p_terminal, *([self.r_rest] if self.r_rest else [])]
        if any(value < 0 for vector in vectors for value in vector):
            raise ValueError("weights must be non-negative")
        if any(value <= 0 for value in (*self.slack_l2, *self.slack_l1)):
            raise ValueError("slack weights must be strictly positive")
        return self

    @classmethod
    def from_settings(cls, cfg: MpcSettings) -> "OcpWeights":
        return cls(**{name: getattr(cfg, name) for name in cls.model_fields})

    def state_diagonal(self, n_seg: int, terminal: bool) -> np.ndarray:
        suffix = "_terminal" if terminal else ""
        n_p = 2 * n_seg
        return np.concatenate(
            [
                np.full(3, getattr(self, "w_q_a" + suffix)),
                np.full(n_p, getattr(self, "w_q_p" + suffix)),
                np.full(3, getattr(self, "w_qd_a" + suffix)),
                np.full(n_p, getattr(self, "w_qd_p" + suffix)),
            ]
        )


class OcpBounds(BaseModel):
    """Tightened bounds; lb/ub already include the margins"""

    lb_u: List[float]
    ub_u: List[float]
    lb_x: List[float]
    ub_x: List[float]
    lb_z: List[float]
    ub_z: List[float]
    delta_q: float = Field(0.0, ge=0)
    delta_qd: float = Field(1.0, ge=0)
    delta_z: float = Field(0.02, ge=0)

    @model_validator(mode="after")
    def _ordered(self) -> "OcpBounds":
        for name in ("u", "x", "z"):
            lower = np.asarray(getattr(self, f"lb_{name}"))
            upper = np.asarray(getattr(self, f"ub_{name}"))
            if lower.shape != upper.shape:
                raise ValueError(f"lb_{name} and ub_{name} differ in length")
            if (lower > upper).any():
                raise ValueError(f"tightened {name} bounds are empty (lb > ub)")
        return self

    @classmethod
    def tightened(
        cls,
        model: FlexModel,
        wall_y: float = 0.0,
        delta_q: float = 0.0,
        delta_qd: float = 1.0,
        delta_z: float = 0.02,
        q_a_lower: Optional[Sequence[float]] = None,
        q_a_upper: Optional[Sequence[float]] = None,
    ) -> "OcpBounds":
        """
        由真實限制減去安全裕度

        Args:
            model: 模型
            wall_y: 牆面位置，EE 須滿足 p_y <= wall_y
            delta_q / delta_qd / delta_z: 裕度
            q_a_lower / q_a_upper: 主動關節位置限制（預設無）

        Returns:
            OcpBounds: 收緊後的邊界
        """
        n_q = model.n_q
        lb_x = np.full(model.n_x, -np.inf)
        ub_x = np.full(model.n_x, np.inf)
        if q_a_lower is not None:
            lb_x[:3] = np.asarray(q_a_lower) + delta_q
        if q_a_upper is not None:
            ub_x[:3] = np.asarray(q_a_upper) - delta_q
        lb_x[n_q : n_q + 3] = model.velocity_lower + delta_qd
        ub_x[n_q : n_q + 3] = model.velocity_upper - delta_qd
        try:
            return cls(
                lb_u=model.torque_lower.tolist(),
                ub_u=model.torque_upper.tolist(),
                lb_x=lb_x.tolist(),
                ub_x=ub_x.tolist(),
                lb_z=[-np.inf, -np.inf, -np.inf],
                ub_z=[np.inf, wall_y - delta_z, np.inf],
                delta_q=delta_q,
                delta_qd=delta_qd,
                delta_z=delta_z,
            )
        except ValueError as exc:
            raise ArgumentError(f"inconsistent bounds: {exc}") from exc


class OcpData(NamedTuple):
    """Array view of a problem passed into compiled kernels"""

    q_diag: jnp.ndarray  # (N+1, n_x)
    r_diag: jnp.ndarray  # (N, n_u)
    p_diag: jnp.ndarray  # (N+1, n_z)
    slack_l2: jnp.ndarray  # (2,)
    slack_l1: jnp.ndarray  # (2,)
    lb_x: jnp.ndarray  # (N+1, n_x)
    ub_x: jnp.ndarray
    lb_z: jnp.ndarray  # (n_z,)
    ub_z: jnp.ndarray
    lb_u: jnp.ndarray  # (n_u,)
    ub_u: jnp.ndarray
    x_ref: jnp.ndarray  # (N+1, n_x)
    u_ref: jnp.ndarray  # (N, n_u)
    z_ref: jnp.ndarray  # (N+1, n_z)
    selector: jnp.ndarray  # (n_c, n_x)


@dataclass(frozen=True, eq=False)
class OcpProblem:
    dynamics: ShootingDynamics
    horizon: int
    dt: float
    q_diag: np.ndarray
    r_diag: np.ndarray
    p_diag: np.ndarray
    slack_l2: np.ndarray
    slack_l1: np.ndarray
    lb_x: np.ndarray
    ub_x: np.ndarray
    lb_z: np.ndarray
    ub_z: np.ndarray
    lb_u: np.ndarray
    ub_u: np.ndarray
    x_ref: np.ndarray
    u_ref: np.ndarray
    z_ref: np.ndarray
    terminal: TerminalMode = "hard"

    def __post_init__(self) -> None:
        n = self.horizon
        if n < 2:
            raise ArgumentError(f"horizon must be >= 2, got {n}")
        d = self.dynamics
        expected = {
            "q_diag": (n + 1, d.n_x),
            "r_diag": (n, d.n_u),
            "p_diag": (n + 1, d.n_z),
            "lb_x": (n + 1, d.n_x),
            "ub_x": (n + 1, d.n_x),
            "x_ref": (n + 1, d.n_x),
            "u_ref": (n, d.n_u),
            "z_ref": (n + 1, d.n_z),
            "lb_z": (d.n_z,),
            "ub_z": (d.n_z,),
            "lb_u": (d.n_u,),
            "ub_u": (d.n_u,),
        }
        for name, shape in expected.items():
            value = np.asarray(getattr(self, name), dtype=float)
            if value.shape != shape:
                raise ArgumentError(f"{name} must have shape {shape}, got {value.shape}")
            object.__setattr__(self, name, value)
        for lower, upper in ((self.lb_x, self.ub_x), (self.lb_z, self.ub_z), (self.lb_u, self.ub_u)):
            if (lower > upper).any():
                raise ArgumentError("inconsistent bounds (lb > ub)")
        if not (np.isfinite(self.lb_u).all() and np.isfinite(self.ub_u).all()):
            raise ArgumentError("input bounds must be finite")

    @property
    def n_variables(self) -> int:
        d = self.dynamics
        return (self.horizon + 1) * d.n_x + self.horizon * d.n_u + (self.horizon + 1) * N_SLACK

    def with_references(
        self,
        x_ref: Optional[np.ndarray] = None,
        u_ref: Optional[np.ndarray] = None,
        z_ref: Optional[np.ndarray] = None,
    ) -> "OcpProblem":
        return replace(
            self,
            x_ref=self.x_ref if x_ref is None else x_ref,
            u_ref=self.u_ref if u_ref is None else u_ref,
            z_ref=self.z_ref if z_ref is None else z_ref,
        )

    def with_terminal(self, mode: TerminalMode) -> "OcpProblem":
        lb_x = self.lb_x.copy()
        ub_x = self.ub_x.copy()
        if mode == "soft":
            # 終端速度 = 0 以 sigma_qd 鬆弛
            velocities = np.asarray(self.dynamics.velocity_selector).any(axis=0)
            lb_x[-1, velocities] = 0.0
            ub_x[-1, velocities] = 0.0
        return replace(self, lb_x=lb_x, ub_x=ub_x, terminal=mode)

    def data(self) -> OcpData:
        return OcpData(
            *(jnp.asarray(getattr(self, name)) for name in OcpData._fields[:-1]),
            selector=jnp.asarray(self.dynamics.velocity_selector),
        )


class SolveStatus(str, Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    QP_FAILED = "qp_failed"
    INTEGRATOR_FAILED = "integrator_failed"


class SolveStats(NamedTuple):
    status: SolveStatus
    iterations: int
    qp_iterations: int
    kkt: float  # max(scaled Lagrangian gradient, L1 infeasibility)
    wall_ms: float
    max_sigma_qd: float
    max_sigma_obs: float
    terminal: str
    softened: bool = False

    @property
    def ok(self) -> bool:
        return self.status in (SolveStatus.CONVERGED, SolveStatus.MAX_ITERATIONS)


class OcpSolution(NamedTuple):
    X: np.ndarray  # (N+1, n_x)
    U: np.ndarray  # (N, n_u)
    Z: np.ndarray  # (N+1, n_z)
    sigma: np.ndarray  # (N+1, 2)
    kkt_history: List[float]
    stats: SolveStats
    max_defect: float
    penalty: float  # L1 merit weight, carried into the next warm start


def transcribe(
    model: FlexModel,
    config: MpcSettings,
    task: Optional[TaskSettings] = None,
    x_ref: Optional[np.ndarray] = None,
    z_goal: Optional[Sequence[float]] = None,
) -> OcpProblem:
    """
    建立 NMPC 問題

    Args:
        model: 控制模型
        config: 預測控制參數（expert_mpc 或 safety_filter 區段）
        task: 任務設定（牆面、目標點）
        x_ref: 狀態參考，預設為零
        z_goal: EE 目標，預設 task.z_goal

    Returns:
        OcpProblem: 轉錄後的問題
    """
    task = task or TaskSettings()
    n = config.horizon
    weights = OcpWeights.from_settings(config)
    bounds = OcpBounds.tightened(
        model,
        wall_y=task.wall_y,
        delta_q=config.delta_q,
        delta_qd=config.delta_qd,
        delta_z=config.delta_z,
    )
    dynamics = FlexDynamics(
        model, config.dt, config.tableau, NewtonSettings(tol=config.newton_tol, max_iters=20)
    )

    q_diag = np.vstack(
        [np.tile(weights.state_diagonal(model.n_seg, terminal=False), (n, 1)),
         weights.state_diagonal(model.n_seg, terminal=True)]
    )
    r_rest = weights.r_rest if weights.r_rest is not None else weights.r
    r_diag = np.vstack([np.asarray(weights.r)[None, :], np.tile(r_rest, (n - 1, 1))])
    p_diag = np.vstack([np.tile(weights.p, (n, 1)), np.asarray(weights.p_terminal)[None, :]])
    goal = np.asarray(task.z_goal if z_goal is None else z_goal, dtype=float)

    problem = OcpProblem(
        dynamics=dynamics,
        horizon=n,
        dt=config.dt,
        q_diag=q_diag,
        r_diag=r_diag,
        p_diag=p_diag,
        slack_l2=np.asarray(weights.slack_l2),
        slack_l1=np.asarray(weights.slack_l1),
        lb_x=np.tile(bounds.lb_x, (n + 1, 1)),
        ub_x=np.tile(bounds.ub_x, (n + 1, 1)),
        lb_z=np.asarray(bounds.lb_z),
        ub_z=np.asarray(bounds.ub_z),
        lb_u=np.asarray(bounds.lb_u),
        ub_u=np.asarray(bounds.ub_u),
        x_ref=np.zeros((n + 1, model.n_x)) if x_ref is None else np.tile(x_ref, (n + 1, 1)),
        u_ref=np.zeros((n, model.n_u)),
        z_ref=np.tile(goal, (n + 1, 1)),
    )
    return problem.with_terminal(config.terminal)
