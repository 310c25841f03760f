"""
Lumped-parameter (rigid finite element) model of the three-joint flexible arm

Kinematic convention
--------------------
* joint 1 rotates about the world z axis at the base; link 1 is a rigid
  column of height ``link1_length`` along z
* joint 2 sits on top of the column; joint 2, joint 3 and every passive
  joint rotate about their local y axis, so each flexible link bends in one
  plane only
* at q = 0 both flexible links point along world x, so the end effector is
  at (L2 + L3, 0, link1_length); a positive rotation about y lowers the tip
* a flexible link with n_seg segments is split into n_seg + 1 cuboid
  elements of lengths [dl/2, dl, ..., dl, dl/2] with dl = L / n_seg,
  joined by n_seg passive spring-damper joints

The state is ordered x = (q_a, q_p, qd_a, qd_p) while the chain stores
bodies root to tip; ``FlexModel.order`` maps state slots to chain slots.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import jax
import jax.numpy as jnp
import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.dynamics.rbd import (
    GRAVITY,
    ChainModel,
    Joint,
    JointKind,
    SpatialInertia,
    aba,
    fk_frames,
    forward_dynamics,
    gravity_potential_traced,
    mass_matrix_traced,
    rnea,
)
from src.utils.errors import ArgumentError, NewtonConvergenceError
from src.utils.logger import app_logger
from src.utils.settings import ModelSettings

N_ACTIVE = 3
Y_AXIS = np.array([0.0, 1.0, 0.0])
Z_AXIS = np.array([0.0, 0.0, 1.0])


class MaterialGeometry(BaseModel):
    """Flexible link material and cross-section (links 2 and 3 are identical)"""

    model_config = ConfigDict(frozen=True)

    length: float = Field(0.5, gt=0)
    width: float = Field(0.05, gt=0)
    height: float = Field(0.002, gt=0)
    density: float = Field(7870.0, gt=0)
    young_modulus: float = Field(1.9e11, gt=0)
    shear_modulus: float = Field(7.4e10, gt=0)
    damping_ratio: float = Field(5e-3, gt=0, lt=1)

    @classmethod
    def from_settings(cls, cfg: ModelSettings) -> "MaterialGeometry":
        return cls(
            length=cfg.length,
            width=cfg.width,
            height=cfg.height,
            density=cfg.density,
            young_modulus=cfg.young_modulus,
            shear_modulus=cfg.shear_modulus,
            damping_ratio=cfg.damping_ratio,
        )

    @property
    def area_moment(self) -> float:
        """I = a h^3 / 12，對彎曲軸"""
        return self.width * self.height**3 / 12.0

    @property
    def link_mass(self) -> float:
        return self.density * self.length * self.width * self.height


@dataclass(frozen=True, eq=False)
class FlexModel:
    chain: ChainModel
    k_diag: np.ndarray
    d_diag: np.ndarray
    B: np.ndarray
    n_seg: int
    torque_lower: np.ndarray
    torque_upper: np.ndarray
    velocity_lower: np.ndarray
    velocity_upper: np.ndarray
    order: np.ndarray  # state slot -> chain slot
    material: MaterialGeometry = field(default_factory=MaterialGeometry)
    link1_length: float = 0.3

    @property
    def n_q(self) -> int:
        return N_ACTIVE + 2 * self.n_seg

    @property
    def n_x(self) -> int:
        return 2 * self.n_q

    @property
    def n_u(self) -> int:
        return N_ACTIVE

    @property
    def inverse_order(self) -> np.ndarray:
        inverse = np.empty_like(self.order)
        inverse[self.order] = np.arange(self.order.size)
        return inverse

    def to_chain(self, v: Any) -> Any:
        return v[self.inverse_order]

    def to_state(self, v: Any) -> Any:
        return v[self.order]


def _element_lengths(length: float, n_seg: int) -> List[float]:
    if n_seg == 0:
        return [length]
    dl = length / n_seg
    return [dl / 2.0] + [dl] * (n_seg - 1) + [dl / 2.0]


def _beam_element(mass: float, length: float, width: float, height: float) -> SpatialInertia:
    # 長度沿 x、寬度沿 y、厚度沿 z
    inertia = (mass / 12.0) * np.diag(
        [width**2 + height**2, length**2 + height**2, length**2 + width**2]
    )
    return SpatialInertia.from_com_inertia(mass, [length / 2.0, 0.0, 0.0], inertia)


def _column(mass: float, length: float, width: float, height: float) -> SpatialInertia:
    inertia = (mass / 12.0) * np.diag(
        [width**2 + length**2, height**2 + length**2, width**2 + height**2]
    )
    return SpatialInertia.from_com_inertia(mass, [0.0, 0.0, length / 2.0], inertia)


def build_model(
    mat: MaterialGeometry,
    n_seg: int,
    link1_length: float = 0.3,
    torque_upper: Sequence[float] = (20.0, 10.0, 10.0),
    velocity_upper: Sequence[float] = (2.5, 3.5, 3.5),
    gravity: Optional[Sequence[float]] = None,
) -> FlexModel:
    """
    建立 MRFEM 離散化模型

    Args:
        mat: 可撓連桿材料與幾何
        n_seg: 每根可撓連桿的彈簧阻尼關節數
        link1_length: 剛性立柱高度
        torque_upper: 力矩上限（下限取負值）
        velocity_upper: 主動關節速度上限（下限取負值）
        gravity: 重力向量，預設 [0, 0, -9.81]

    Returns:
        FlexModel: 模型
    """
    if n_seg < 0:
        raise ArgumentError(f"n_seg must be non-negative, got {n_seg}")
    if link1_length <= 0:
        raise ArgumentError(f"link1_length must be positive, got {link1_length}")
    tau_ub = np.asarray(torque_upper, dtype=float)
    vel_ub = np.asarray(velocity_upper, dtype=float)
    if tau_ub.shape != (3,) or vel_ub.shape != (3,) or (tau_ub <= 0).any() or (vel_ub <= 0).any():
        raise ArgumentError("torque and velocity bounds must be positive 3-vectors")

    a, h, rho = mat.width, mat.height, mat.density
    lengths = _element_lengths(mat.length, n_seg)
    k_joint = mat.young_modulus * mat.area_moment / (mat.length / n_seg) if n_seg else 0.0

    bodies: List[SpatialInertia] = [_column(rho * a * h * link1_length, link1_length, a, h)]
    joints: List[Joint] = [Joint(parent=-1, translation=np.zeros(3), axis=Z_AXIS)]
    stiffness: List[float] = [0.0]
    damping: List[float] = [0.0]
    active_slots: List[int] = [0]
    passive_slots: List[int] = []

    offset = np.array([0.0, 0.0, link1_length])  # 下一個關節在前一個 body 的位置
    for _link in range(2):
        for element, ell in enumerate(lengths):
            mass = rho * a * h * ell
            slot = len(bodies)
            kind = JointKind.ACTIVE if element == 0 else JointKind.PASSIVE
            joints.append(Joint(parent=slot - 1, translation=offset, axis=Y_AXIS, kind=kind))
            bodies.append(_beam_element(mass, ell, a, h))
            if kind is JointKind.ACTIVE:
                active_slots.append(slot)
                stiffness.append(0.0)
                damping.append(0.0)
            else:
                passive_slots.append(slot)
                j_eff = mass * (ell**2 / 3.0 + h**2 / 12.0)
                stiffness.append(k_joint)
                damping.append(2.0 * mat.damping_ratio * np.sqrt(k_joint * j_eff))
            offset = np.array([ell, 0.0, 0.0])

    chain = ChainModel(
        bodies=tuple(bodies),
        joints=tuple(joints),
        gravity=GRAVITY.copy() if gravity is None else np.asarray(gravity, dtype=float),
        tip=offset,
    )
    order = np.array(active_slots + passive_slots)
    n_q = len(order)
    selection = np.zeros((n_q, N_ACTIVE))
    selection[:N_ACTIVE, :] = np.eye(N_ACTIVE)

    model = FlexModel(
        chain=chain,
        k_diag=np.asarray(stiffness)[order],
        d_diag=np.asarray(damping)[order],
        B=selection,
        n_seg=n_seg,
        torque_lower=-tau_ub,
        torque_upper=tau_ub,
        velocity_lower=-vel_ub,
        velocity_upper=vel_ub,
        order=order,
        material=mat,
        link1_length=link1_length,
    )
    app_logger.debug(f"MRFEM 模型建立完成: n_seg={n_seg}, n_q={n_q}, k={k_joint:.4g}")
    return model


def build_model_from_settings(cfg: ModelSettings, n_seg: int) -> FlexModel:
    return build_model(
        MaterialGeometry.from_settings(cfg),
        n_seg,
        link1_length=cfg.link1_length,
        torque_upper=cfg.torque_upper,
        velocity_upper=cfg.velocity_upper,
    )


# ---------------------------------------------------------------------------
# traceable kernels (state ordering)
# ---------------------------------------------------------------------------


def vector_field_traced(model: FlexModel, x: jnp.ndarray, u: jnp.ndarray) -> jnp.ndarray:
    n_q = model.n_q
    q, qd = x[:n_q], x[n_q:]
    tau = jnp.asarray(model.B) @ u - jnp.asarray(model.k_diag) * q - jnp.asarray(model.d_diag) * qd
    inverse = model.inverse_order
    qdd_chain, _ = aba(model.chain, q[inverse], qd[inverse], tau[inverse])
    return jnp.concatenate([qd, qdd_chain[model.order]])


def ee_position_traced(model: FlexModel, q: jnp.ndarray) -> jnp.ndarray:
    ee, _, _ = fk_frames(model.chain, q[model.inverse_order])
    return ee


def output_map_traced(model: FlexModel, x: jnp.ndarray) -> jnp.ndarray:
    n_q = model.n_q
    return jnp.concatenate([x[:N_ACTIVE], x[n_q : n_q + N_ACTIVE], ee_position_traced(model, x[:n_q])])


def static_torque_traced(model: FlexModel, q: jnp.ndarray) -> jnp.ndarray:
    """K q + g(q)"""
    inverse = model.inverse_order
    zeros = jnp.zeros(model.n_q)
    gravity = rnea(model.chain, q[inverse], zeros, zeros)[model.order]
    return jnp.asarray(model.k_diag) * q + gravity


def total_energy_traced(model: FlexModel, x: jnp.ndarray) -> jnp.ndarray:
    n_q = model.n_q
    inverse = model.inverse_order
    q, qd = x[:n_q][inverse], x[n_q:][inverse]
    kinetic = 0.5 * qd @ mass_matrix_traced(model.chain, q) @ qd
    spring = 0.5 * jnp.sum(jnp.asarray(model.k_diag) * x[:n_q] ** 2)
    return kinetic + spring + gravity_potential_traced(model.chain, q)


class _FlexKernels(NamedTuple):
    vector_field: Callable
    output_map: Callable
    static_torque: Callable
    passive_jacobian: Callable
    energy: Callable


@lru_cache(maxsize=64)
def kernels(model: FlexModel) -> _FlexKernels:
    def passive_residual(q_p: jnp.ndarray, q_a: jnp.ndarray) -> jnp.ndarray:
        return static_torque_traced(model, jnp.concatenate([q_a, q_p]))[N_ACTIVE:]

    return _FlexKernels(
        vector_field=jax.jit(lambda x, u: vector_field_traced(model, x, u)),
        output_map=jax.jit(lambda x: output_map_traced(model, x)),
        static_torque=jax.jit(lambda q: static_torque_traced(model, q)),
        passive_jacobian=jax.jit(jax.jacfwd(passive_residual)),
        energy=jax.jit(lambda x: total_energy_traced(model, x)),
    )


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def _check(value: Sequence[float], size: int, name: str) -> np.ndarray:
    array = np.asarray(value, dtype=float)
    if array.shape != (size,):
        raise ArgumentError(f"{name} must have shape ({size},), got {array.shape}")
    return array


def vector_field(model: FlexModel, x: Sequence[float], u: Sequence[float]) -> np.ndarray:
    x_arr = _check(x, model.n_x, "x")
    u_arr = _check(u, model.n_u, "u")
    n_q = model.n_q
    q, qd = x_arr[:n_q], x_arr[n_q:]
    tau = model.B @ u_arr - model.k_diag * q - model.d_diag * qd
    qdd_chain = forward_dynamics(model.chain, model.to_chain(q), model.to_chain(qd), model.to_chain(tau))
    return np.concatenate([qd, model.to_state(qdd_chain)])


def passive_equilibrium(
    model: FlexModel, q_a: Sequence[float], tol: float = 1e-10, max_iters: int = 50
) -> np.ndarray:
    """Newton solve of the passive rows of K q + g(q) = 0 with q_a fixed

    After reaching ``tol`` one more Newton step is taken, so the residual
    normally ends at round-off level.
    """
    q_a_arr = _check(q_a, N_ACTIVE, "q_a")
    if not np.isfinite(q_a_arr).all():
        raise ArgumentError("q_a must be finite")
    if model.n_seg == 0:
        return np.zeros(0)

    kern = kernels(model)

    def passive_residual(q_p: np.ndarray) -> np.ndarray:
        return np.asarray(kern.static_torque(np.concatenate([q_a_arr, q_p])))[N_ACTIVE:]

    def newton_step(q_p: np.ndarray, r: np.ndarray) -> np.ndarray:
        return q_p - np.linalg.solve(np.asarray(kern.passive_jacobian(q_p, q_a_arr)), r)

    q_p = np.zeros(2 * model.n_seg)
    for _ in range(max_iters + 1):
        r = passive_residual(q_p)
        residual = float(np.abs(r).max())
        if residual <= tol:
            polished = newton_step(q_p, r)
            if float(np.abs(passive_residual(polished)).max()) <= residual:
                return polished
            return q_p
        q_p = newton_step(q_p, r)
    raise NewtonConvergenceError(residual, max_iters, context="passive equilibrium")


def output_map(model: FlexModel, x: Sequence[float]) -> np.ndarray:
    return np.asarray(kernels(model).output_map(_check(x, model.n_x, "x")))


def hold_torque(model: FlexModel, q: Sequence[float]) -> np.ndarray:
    """Active components of K q + g(q): the torque that keeps (q, 0) at rest"""
    static = np.asarray(kernels(model).static_torque(_check(q, model.n_q, "q")))
    return static[:N_ACTIVE]


def total_energy(model: FlexModel, x: Sequence[float]) -> float:
    return float(kernels(model).energy(_check(x, model.n_x, "x")))


def equilibrium_state(model: FlexModel, q_a: Sequence[float]) -> np.ndarray:
    q_a_arr = _check(q_a, N_ACTIVE, "q_a")
    q = np.concatenate([q_a_arr, passive_equilibrium(model, q_a_arr)])
    return np.concatenate([q, np.zeros(model.n_q)])


def map_state(source: FlexModel, target: FlexModel, x: Sequence[float]) -> np.ndarray:
    """Transfer a state between discretizations

    Active joints carry over; passive joints of the target are placed at
    their static equilibrium with zero velocity.
    """
    x_arr = _check(x, source.n_x, "x")
    q_a = x_arr[:N_ACTIVE]
    qd_a = x_arr[source.n_q : source.n_q + N_ACTIVE]
    q = np.concatenate([q_a, passive_equilibrium(target, q_a)])
    qd = np.concatenate([qd_a, np.zeros(2 * target.n_seg)])
    return np.concatenate([q, qd])


def describe(model: FlexModel) -> Dict[str, Any]:
    element_masses = [body.mass for body in model.chain.bodies[1:]]
    passive = model.k_diag[N_ACTIVE:]
    return {
        "n_seg": model.n_seg,
        "n_q": model.n_q,
        "n_x": model.n_x,
        "n_bodies": len(model.chain.bodies),
        "link1_mass": model.chain.bodies[0].mass,
        "flex_link_mass": float(sum(element_masses) / 2.0),
        "element_lengths": _element_lengths(model.material.length, model.n_seg),
        "stiffness": float(passive[0]) if passive.size else 0.0,
        "damping": [float(d) for d in model.d_diag[N_ACTIVE:]],
        "torque_upper": model.torque_upper.tolist(),
        "velocity_upper": model.velocity_upper.tolist(),
        "home_ee": np.asarray(
            kernels(model).output_map(np.zeros(model.n_x))
        )[2 * N_ACTIVE :].tolist(),
    }


def split_state(model: FlexModel, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    n_q = model.n_q
    return x[:N_ACTIVE], x[N_ACTIVE:n_q], x[n_q : n_q + N_ACTIVE], x[n_q + N_ACTIVE :]
