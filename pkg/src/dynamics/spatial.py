"""
Spatial (6D) vector algebra, Featherstone conventions

Motion vectors are ordered [angular; linear]. All helpers are jax-traceable.
"""

import jax.numpy as jnp
import numpy as np


def skew(v: jnp.ndarray) -> jnp.ndarray:
    return jnp.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def axis_rotation(axis: np.ndarray, angle: jnp.ndarray) -> jnp.ndarray:
    """Rodrigues: rotation matrix (child -> parent) about a unit axis"""
    k = skew(jnp.asarray(axis))
    return jnp.eye(3) + jnp.sin(angle) * k + (1.0 - jnp.cos(angle)) * (k @ k)


def xrot(e: jnp.ndarray) -> jnp.ndarray:
    """Motion transform for a pure rotation; e maps parent to child coordinates"""
    zero = jnp.zeros((3, 3))
    return jnp.block([[e, zero], [zero, e]])


def xtrans(r: jnp.ndarray) -> jnp.ndarray:
    """Motion transform for a translation r expressed in parent coordinates"""
    eye = jnp.eye(3)
    zero = jnp.zeros((3, 3))
    return jnp.block([[eye, zero], [-skew(r), eye]])


def crm(v: jnp.ndarray) -> jnp.ndarray:
    """Spatial cross product for motion vectors"""
    w = skew(v[:3])
    zero = jnp.zeros((3, 3))
    return jnp.block([[w, zero], [skew(v[3:]), w]])


def crf(v: jnp.ndarray) -> jnp.ndarray:
    """Spatial cross product for force vectors"""
    return -crm(v).T


def spatial_inertia(mass: float, com: np.ndarray, inertia_origin: np.ndarray) -> np.ndarray:
    """6x6 rigid-body inertia with the rotational part taken about the body origin"""
    c = np.asarray(com, dtype=float)
    cx = np.array([[0.0, -c[2], c[1]], [c[2], 0.0, -c[0]], [-c[1], c[0], 0.0]])
    return np.block(
        [
            [np.asarray(inertia_origin, dtype=float), mass * cx],
            [mass * cx.T, mass * np.eye(3)],
        ]
    )
