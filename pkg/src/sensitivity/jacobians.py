"""
Forward-mode Jacobians of the vector field, the implicit step map, forward
kinematics and the output map
"""

from functools import lru_cache
from typing import Callable, NamedTuple, Tuple, Union

import jax
import jax.numpy as jnp
import numpy as np

from src.dynamics.mrfem import FlexModel, ee_position_traced, output_map_traced, vector_field_traced
from src.integrators.steppers import ImplicitStepper, NewtonSettings, model_stepper
from src.utils.errors import ArgumentError, NewtonConvergenceError

VectorField = Callable[[jnp.ndarray, jnp.ndarray], jnp.ndarray]


class _JacobianKernels(NamedTuple):
    vector_field: Callable
    forward_kinematics: Callable
    output_map: Callable


@lru_cache(maxsize=64)
def _model_kernels(model: FlexModel) -> _JacobianKernels:
    def f(x: jnp.ndarray, u: jnp.ndarray) -> jnp.ndarray:
        return vector_field_traced(model, x, u)

    return _JacobianKernels(
        vector_field=jax.jit(jax.jacfwd(f, argnums=(0, 1))),
        forward_kinematics=jax.jit(jax.jacfwd(lambda q: ee_position_traced(model, q))),
        output_map=jax.jit(jax.jacfwd(lambda x: output_map_traced(model, x))),
    )


@lru_cache(maxsize=32)
def _callable_kernel(f: VectorField) -> Callable:
    return jax.jit(jax.jacfwd(f, argnums=(0, 1)))


def jac_vector_field(
    model: Union[FlexModel, VectorField], x: np.ndarray, u: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """(df/dx, df/du); accepts a FlexModel or any traceable f(x, u)"""
    x_arr = jnp.asarray(x, dtype=float)
    u_arr = jnp.asarray(u, dtype=float)
    if isinstance(model, FlexModel):
        if x_arr.shape != (model.n_x,) or u_arr.shape != (model.n_u,):
            raise ArgumentError("state or input dimension does not match the model")
        jac_x, jac_u = _model_kernels(model).vector_field(x_arr, u_arr)
    else:
        jac_x, jac_u = _callable_kernel(model)(x_arr, u_arr)
    return np.asarray(jac_x), np.asarray(jac_u)


def jac_step(
    integrator: Union[ImplicitStepper, str],
    model: FlexModel,
    x: np.ndarray,
    u: np.ndarray,
    dt: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    步進映射的 Jacobian

    Args:
        integrator: ImplicitStepper 或 tableau 名稱（例如 "radau3"）
        model: 模型（integrator 為名稱時使用）
        x: 狀態
        u: 輸入
        dt: 步長

    Returns:
        (dx_next/dx, dx_next/du)
    """
    stepper = (
        integrator
        if isinstance(integrator, ImplicitStepper)
        else model_stepper(model, integrator, NewtonSettings(tol=1e-12))
    )
    result, jac_x, jac_u = stepper.step_with_jacobian(
        jnp.asarray(x, dtype=float), jnp.asarray(u, dtype=float), dt
    )
    if not bool(result.converged):
        raise NewtonConvergenceError(float(result.residual), int(result.iterations), "step sensitivity")
    return np.asarray(jac_x), np.asarray(jac_u)


def jac_forward_kinematics(model: FlexModel, q: np.ndarray) -> np.ndarray:
    q_arr = jnp.asarray(q, dtype=float)
    if q_arr.shape != (model.n_q,):
        raise ArgumentError(f"q must have shape ({model.n_q},), got {q_arr.shape}")
    return np.asarray(_model_kernels(model).forward_kinematics(q_arr))


def jac_output_map(model: FlexModel, x: np.ndarray) -> np.ndarray:
    x_arr = jnp.asarray(x, dtype=float)
    if x_arr.shape != (model.n_x,):
        raise ArgumentError(f"x must have shape ({model.n_x},), got {x_arr.shape}")
    return np.asarray(_model_kernels(model).output_map(x_arr))


def central_difference(fun: Callable[[np.ndarray], np.ndarray], x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central finite differences with steps scaled by max(1, |x_i|)"""
    x = np.asarray(x, dtype=float)
    columns = []
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        columns.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2.0 * h))
    return np.stack(columns, axis=-1)
