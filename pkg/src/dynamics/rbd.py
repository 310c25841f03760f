"""
Rigid-body algorithms for serial chains of revolute joints

Forward kinematics, recursive Newton-Euler inverse dynamics and the
articulated-body forward dynamics. Traceable implementations (``fk_frames``,
``rnea``, ``aba``) are used inside larger jitted kernels; the public
functions validate dimensions and return numpy arrays.
"""

from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Callable, NamedTuple, Optional, Sequence, Tuple

import jax
import jax.numpy as jnp
import numpy as np

from src.dynamics.spatial import axis_rotation, crf, crm, spatial_inertia, xrot, xtrans
from src.utils.errors import ArgumentError, SingularInertiaError

GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass(frozen=True, eq=False)
class SpatialInertia:
    mass: float
    com: np.ndarray
    rot_inertia: np.ndarray  # 對 body 原點

    def __post_init__(self) -> None:
        com = np.asarray(self.com, dtype=float).reshape(3)
        inertia = np.asarray(self.rot_inertia, dtype=float).reshape(3, 3)
        object.__setattr__(self, "com", com)
        object.__setattr__(self, "rot_inertia", inertia)

        if not np.isfinite(self.mass) or self.mass <= 0:
            raise ArgumentError(f"body mass must be positive, got {self.mass}")
        scale = max(np.abs(inertia).max(), 1e-300)
        if np.abs(inertia - inertia.T).max() > 1e-12 * scale:
            raise ArgumentError("rotational inertia must be symmetric")
        if np.linalg.eigvalsh(inertia).min() < -1e-12 * scale:
            raise ArgumentError("rotational inertia must be positive semidefinite")

        # 主慣量三角不等式（對質心）
        cx = np.array([[0.0, -com[2], com[1]], [com[2], 0.0, -com[0]], [-com[1], com[0], 0.0]])
        principal = np.sort(np.linalg.eigvalsh(inertia - self.mass * cx @ cx.T))
        if principal[0] + principal[1] < principal[2] - 1e-9 * scale:
            raise ArgumentError(f"principal moments violate triangle inequality: {principal}")

    @classmethod
    def from_com_inertia(
        cls, mass: float, com: Sequence[float], inertia_com: np.ndarray
    ) -> "SpatialInertia":
        c = np.asarray(com, dtype=float)
        shift = mass * (np.dot(c, c) * np.eye(3) - np.outer(c, c))
        return cls(mass=mass, com=c, rot_inertia=np.asarray(inertia_com) + shift)

    def matrix(self) -> np.ndarray:
        return spatial_inertia(self.mass, self.com, self.rot_inertia)


class JointKind(str, Enum):
    ACTIVE = "active"
    PASSIVE = "passive"


@dataclass(frozen=True, eq=False)
class Joint:
    parent: int
    translation: np.ndarray  # 關節原點在父 body 座標
    axis: np.ndarray
    kind: JointKind = JointKind.ACTIVE
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self) -> None:
        axis = np.asarray(self.axis, dtype=float).reshape(3)
        norm = np.linalg.norm(axis)
        if abs(norm - 1.0) > 1e-9:
            raise ArgumentError(f"joint axis must be unit norm, got |a|={norm}")
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))


@dataclass(frozen=True, eq=False)
class ChainModel:
    bodies: Tuple[SpatialInertia, ...]
    joints: Tuple[Joint, ...]
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())
    tip: np.ndarray = field(default_factory=lambda: np.zeros(3))  # EE 點在最後一個 body 座標

    def __post_init__(self) -> None:
        if len(self.bodies) != len(self.joints) or not self.bodies:
            raise ArgumentError("serial chain needs exactly one joint per body")
        for index, joint in enumerate(self.joints):
            if joint.parent != index - 1:
                raise ArgumentError(f"joint {index} must have parent {index - 1}, got {joint.parent}")
        object.__setattr__(self, "gravity", np.asarray(self.gravity, dtype=float).reshape(3))
        object.__setattr__(self, "tip", np.asarray(self.tip, dtype=float).reshape(3))

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def inertia_matrices(self) -> np.ndarray:
        return np.stack([body.matrix() for body in self.bodies])

    def with_gravity(self, gravity: Sequence[float]) -> "ChainModel":
        return ChainModel(self.bodies, self.joints, np.asarray(gravity, dtype=float), self.tip)


class KinematicsResult(NamedTuple):
    ee_position: np.ndarray
    rotations: np.ndarray  # (n, 3, 3) body -> world
    positions: np.ndarray  # (n, 3) body 原點


# ---------------------------------------------------------------------------
# traceable kernels
# ---------------------------------------------------------------------------


def _motion_subspace(joint: Joint) -> jnp.ndarray:
    return jnp.concatenate([jnp.asarray(joint.axis), jnp.zeros(3)])


def _xup(joint: Joint, angle: jnp.ndarray) -> jnp.ndarray:
    orientation = jnp.asarray(joint.rotation) @ axis_rotation(joint.axis, angle)
    return xrot(orientation.T) @ xtrans(jnp.asarray(joint.translation))


def fk_frames(model: ChainModel, q: jnp.ndarray) -> Tuple[jnp.ndarray, jnp.ndarray, jnp.ndarray]:
    """回傳 (ee_position, rotations, positions)"""
    rot = jnp.eye(3)
    pos = jnp.zeros(3)
    rotations = []
    positions = []
    for i, joint in enumerate(model.joints):
        pos = pos + rot @ jnp.asarray(joint.translation)
        rot = rot @ jnp.asarray(joint.rotation) @ axis_rotation(joint.axis, q[i])
        rotations.append(rot)
        positions.append(pos)
    ee = pos + rot @ jnp.asarray(model.tip)
    return ee, jnp.stack(rotations), jnp.stack(positions)


def rnea(
    model: ChainModel,
    q: jnp.ndarray,
    qd: jnp.ndarray,
    qdd: jnp.ndarray,
    include_gravity: bool = True,
) -> jnp.ndarray:
    inertias = model.inertia_matrices
    a_root = jnp.zeros(6)
    if include_gravity:
        a_root = -jnp.concatenate([jnp.zeros(3), jnp.asarray(model.gravity)])

    xup = []
    forces = []
    v_parent = jnp.zeros(6)
    a_parent = a_root
    for i, joint in enumerate(model.joints):
        s = _motion_subspace(joint)
        x = _xup(joint, q[i])
        vj = s * qd[i]
        v = x @ v_parent + vj
        a = x @ a_parent + s * qdd[i] + crm(v) @ vj
        inertia = jnp.asarray(inertias[i])
        forces.append(inertia @ a + crf(v) @ inertia @ v)
        xup.append(x)
        v_parent, a_parent = v, a

    tau = [jnp.zeros(())] * model.n_joints
    for i in range(model.n_joints - 1, -1, -1):
        tau[i] = _motion_subspace(model.joints[i]) @ forces[i]
        if i > 0:
            forces[i - 1] = forces[i - 1] + xup[i].T @ forces[i]
    return jnp.stack(tau)


def aba(
    model: ChainModel, q: jnp.ndarray, qd: jnp.ndarray, tau: jnp.ndarray
) -> Tuple[jnp.ndarray, jnp.ndarray]:
    """Articulated-body algorithm; also returns the articulated pivots d_i"""
    n = model.n_joints
    inertias = model.inertia_matrices
    subspaces = [_motion_subspace(joint) for joint in model.joints]

    xup = []
    c = []
    ia = []
    pa = []
    v_parent = jnp.zeros(6)
    for i, joint in enumerate(model.joints):
        x = _xup(joint, q[i])
        vj = subspaces[i] * qd[i]
        v = x @ v_parent + vj
        xup.append(x)
        c.append(crm(v) @ vj if i > 0 else jnp.zeros(6))
        inertia = jnp.asarray(inertias[i])
        ia.append(inertia)
        pa.append(crf(v) @ inertia @ v)
        v_parent = v

    u_vec = [jnp.zeros(6)] * n
    d = [jnp.zeros(())] * n
    u = [jnp.zeros(())] * n
    for i in range(n - 1, -1, -1):
        s = subspaces[i]
        u_vec[i] = ia[i] @ s
        d[i] = s @ u_vec[i]
        u[i] = tau[i] - s @ pa[i]
        if i > 0:
            articulated = ia[i] - jnp.outer(u_vec[i], u_vec[i]) / d[i]
            bias = pa[i] + articulated @ c[i] + u_vec[i] * (u[i] / d[i])
            ia[i - 1] = ia[i - 1] + xup[i].T @ articulated @ xup[i]
            pa[i - 1] = pa[i - 1] + xup[i].T @ bias

    a_root = -jnp.concatenate([jnp.zeros(3), jnp.asarray(model.gravity)])
    qdd = []
    a_parent = a_root
    for i in range(n):
        a = xup[i] @ a_parent + c[i]
        qdd_i = (u[i] - u_vec[i] @ a) / d[i]
        qdd.append(qdd_i)
        a_parent = a + subspaces[i] * qdd_i
    return jnp.stack(qdd), jnp.stack(d)


def mass_matrix_traced(model: ChainModel, q: jnp.ndarray) -> jnp.ndarray:
    n = model.n_joints
    zeros = jnp.zeros(n)

    def column(unit: jnp.ndarray) -> jnp.ndarray:
        return rnea(model, q, zeros, unit, include_gravity=False)

    return jax.vmap(column, out_axes=1)(jnp.eye(n))


def gravity_potential_traced(model: ChainModel, q: jnp.ndarray) -> jnp.ndarray:
    _, rotations, positions = fk_frames(model, q)
    total = jnp.zeros(())
    for i, body in enumerate(model.bodies):
        com_world = positions[i] + rotations[i] @ jnp.asarray(body.com)
        total = total - body.mass * jnp.dot(jnp.asarray(model.gravity), com_world)
    return total


# ---------------------------------------------------------------------------
# jitted kernels per model
# ---------------------------------------------------------------------------


class _RbdKernels(NamedTuple):
    fk: Callable
    rnea: Callable
    aba: Callable
    mass_matrix: Callable
    potential: Callable


@lru_cache(maxsize=64)
def _kernels(model: ChainModel) -> _RbdKernels:
    return _RbdKernels(
        fk=jax.jit(lambda q: fk_frames(model, q)),
        rnea=jax.jit(lambda q, qd, qdd: rnea(model, q, qd, qdd)),
        aba=jax.jit(lambda q, qd, tau: aba(model, q, qd, tau)),
        mass_matrix=jax.jit(lambda q: mass_matrix_traced(model, q)),
        potential=jax.jit(lambda q: gravity_potential_traced(model, q)),
    )


def _as_vector(value: Sequence[float], size: int, name: str) -> np.ndarray:
    array = np.asarray(value, dtype=float)
    if array.shape != (size,):
        raise ArgumentError(f"{name} must have shape ({size},), got {array.shape}")
    return array


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def forward_kinematics(model: ChainModel, q: Sequence[float]) -> KinematicsResult:
    q_arr = _as_vector(q, model.n_joints, "q")
    ee, rotations, positions = _kernels(model).fk(q_arr)
    return KinematicsResult(np.asarray(ee), np.asarray(rotations), np.asarray(positions))


def inverse_dynamics(
    model: ChainModel,
    q: Sequence[float],
    qd: Sequence[float],
    qdd: Sequence[float],
    external_joint_torques: Optional[Sequence[float]] = None,
) -> np.ndarray:
    n = model.n_joints
    q_arr = _as_vector(q, n, "q")
    qd_arr = _as_vector(qd, n, "qd")
    qdd_arr = _as_vector(qdd, n, "qdd")
    tau = np.asarray(_kernels(model).rnea(q_arr, qd_arr, qdd_arr))
    if external_joint_torques is not None:
        tau = tau - _as_vector(external_joint_torques, n, "external_joint_torques")
    return tau


def forward_dynamics(
    model: ChainModel, q: Sequence[float], qd: Sequence[float], tau_generalized: Sequence[float]
) -> np.ndarray:
    n = model.n_joints
    q_arr = _as_vector(q, n, "q")
    qd_arr = _as_vector(qd, n, "qd")
    tau_arr = _as_vector(tau_generalized, n, "tau_generalized")
    qdd, pivots = _kernels(model).aba(q_arr, qd_arr, tau_arr)
    pivots = np.asarray(pivots)
    bad = np.flatnonzero(~np.isfinite(pivots) | (pivots <= 1e-14))
    if bad.size:
        raise SingularInertiaError(int(bad[0]), float(pivots[bad[0]]))
    return np.asarray(qdd)


def mass_matrix(model: ChainModel, q: Sequence[float]) -> np.ndarray:
    return np.asarray(_kernels(model).mass_matrix(_as_vector(q, model.n_joints, "q")))


def bias_forces(model: ChainModel, q: Sequence[float], qd: Sequence[float]) -> np.ndarray:
    """C(q, qd) qd + g(q)"""
    n = model.n_joints
    return inverse_dynamics(model, q, qd, np.zeros(n))


def kinetic_energy(model: ChainModel, q: Sequence[float], qd: Sequence[float]) -> float:
    qd_arr = _as_vector(qd, model.n_joints, "qd")
    return float(0.5 * qd_arr @ mass_matrix(model, q) @ qd_arr)


def gravity_potential(model: ChainModel, q: Sequence[float]) -> float:
    return float(_kernels(model).potential(_as_vector(q, model.n_joints, "q")))
