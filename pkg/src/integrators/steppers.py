"""
Fixed-step explicit and implicit Runge-Kutta steppers

Vector fields are jax-traceable callables ``f(x, u) -> xdot``. The implicit
step solves the stage equations K_i = f(x + dt * sum_j A_ij K_j, u) with a
Newton iteration inside ``lax.while_loop`` so that one step is a single
compiled call.
"""

from functools import lru_cache
from typing import Callable, Literal, NamedTuple, Optional, Tuple

import jax
import jax.numpy as jnp
import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.dynamics.mrfem import FlexModel, vector_field_traced
from src.integrators.tableau import ButcherTableau, by_name
from src.utils.errors import ArgumentError, DivergenceError, NewtonConvergenceError

VectorField = Callable[[jnp.ndarray, jnp.ndarray], jnp.ndarray]
JacobianFn = Callable[[jnp.ndarray, jnp.ndarray], jnp.ndarray]


class NewtonSettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    tol: float = Field(1e-10, gt=0)
    max_iters: int = Field(20, ge=1)
    jacobian: Literal["full", "frozen"] = "full"


class StepResult(NamedTuple):
    x_next: jnp.ndarray
    stages: jnp.ndarray
    residual: jnp.ndarray
    iterations: jnp.ndarray
    converged: jnp.ndarray


def erk4_traced(f: VectorField, x: jnp.ndarray, u: jnp.ndarray, dt: jnp.ndarray) -> jnp.ndarray:
    k1 = f(x, u)
    k2 = f(x + 0.5 * dt * k1, u)
    k3 = f(x + 0.5 * dt * k2, u)
    k4 = f(x + dt * k3, u)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def erk4_step(f: VectorField, x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    if dt <= 0:
        raise ArgumentError(f"dt must be positive, got {dt}")
    x_next = np.asarray(erk4_traced(f, jnp.asarray(x, dtype=float), jnp.asarray(u, dtype=float), dt))
    if not np.isfinite(x_next).all():
        raise DivergenceError(f"explicit RK4 produced a non-finite state (dt={dt})")
    return x_next


def newton_matrix(A: jnp.ndarray, jacobians: jnp.ndarray, dt: jnp.ndarray) -> jnp.ndarray:
    """I - dt * [A_ij J_i] as an (s n) x (s n) matrix"""
    s, n, _ = jacobians.shape
    blocks = A[:, None, :, None] * jacobians[:, :, None, :]
    return jnp.eye(s * n) - dt * blocks.reshape(s * n, s * n)


def irk_traced(
    tableau: ButcherTableau,
    newton: NewtonSettings,
    f: VectorField,
    dfdx: JacobianFn,
    x: jnp.ndarray,
    u: jnp.ndarray,
    dt: jnp.ndarray,
) -> StepResult:
    A = jnp.asarray(tableau.A)
    b = jnp.asarray(tableau.b)
    s = tableau.stages
    n = x.shape[0]

    def stage_states(k: jnp.ndarray) -> jnp.ndarray:
        return x[None, :] + dt * (A @ k)

    def residual(k: jnp.ndarray) -> jnp.ndarray:
        return k - jax.vmap(lambda xi: f(xi, u))(stage_states(k))

    def scaled_norm(g: jnp.ndarray, k: jnp.ndarray) -> jnp.ndarray:
        return jnp.max(jnp.abs(g)) / (1.0 + jnp.max(jnp.abs(k)))

    k0 = jnp.tile(f(x, u), (s, 1))
    frozen = jnp.tile(dfdx(x, u), (s, 1, 1))

    def cond(carry: Tuple[jnp.ndarray, jnp.ndarray, jnp.ndarray]) -> jnp.ndarray:
        k, g, it = carry
        return (scaled_norm(g, k) > newton.tol) & (it < newton.max_iters) & jnp.all(jnp.isfinite(g))

    def body(
        carry: Tuple[jnp.ndarray, jnp.ndarray, jnp.ndarray]
    ) -> Tuple[jnp.ndarray, jnp.ndarray, jnp.ndarray]:
        k, g, it = carry
        if newton.jacobian == "full":
            jac = jax.vmap(lambda xi: dfdx(xi, u))(stage_states(k))
        else:
            jac = frozen
        delta = jnp.linalg.solve(newton_matrix(A, jac, dt), -g.reshape(s * n))
        k_new = k + delta.reshape(s, n)
        return k_new, residual(k_new), it + 1

    k, g, iterations = jax.lax.while_loop(cond, body, (k0, residual(k0), jnp.asarray(0)))
    res = scaled_norm(g, k)
    x_next = x + dt * (b @ k)
    converged = (res <= newton.tol) & jnp.all(jnp.isfinite(x_next))
    return StepResult(x_next, k, res, iterations, converged)


def irk_jacobians_traced(
    tableau: ButcherTableau,
    f: VectorField,
    x: jnp.ndarray,
    u: jnp.ndarray,
    dt: jnp.ndarray,
    stages: jnp.ndarray,
) -> Tuple[jnp.ndarray, jnp.ndarray]:
    """Implicit-function derivatives of the step map at converged stages"""
    A = jnp.asarray(tableau.A)
    b = jnp.asarray(tableau.b)
    s, n = stages.shape
    points = x[None, :] + dt * (A @ stages)
    jx = jax.vmap(lambda xi: jax.jacfwd(f, argnums=0)(xi, u))(points)
    ju = jax.vmap(lambda xi: jax.jacfwd(f, argnums=1)(xi, u))(points)
    m = u.shape[0]
    lhs = newton_matrix(A, jx, dt)
    dk = jnp.linalg.solve(lhs, jnp.concatenate([jx.reshape(s * n, n), ju.reshape(s * n, m)], axis=1))
    dk = dk.reshape(s, n, n + m)
    weighted = jnp.einsum("i,ijk->jk", b, dk)
    return jnp.eye(n) + dt * weighted[:, :n], dt * weighted[:, n:]


class ImplicitStepper:
    """
    Compiled implicit Runge-Kutta step for one vector field

    ``step`` returns the raw StepResult (used inside other jitted code);
    ``advance`` checks convergence and raises.
    """

    def __init__(
        self,
        tableau: ButcherTableau,
        f: VectorField,
        newton: Optional[NewtonSettings] = None,
        dfdx: Optional[JacobianFn] = None,
    ) -> None:
        if not tableau.implicit:
            raise ArgumentError(f"tableau {tableau.name} is explicit")
        self.tableau = tableau
        self.newton = newton or NewtonSettings()
        self.f = f
        self.dfdx = dfdx or jax.jacfwd(f, argnums=0)
        self.step = jax.jit(self.traced)
        self.step_with_jacobian = jax.jit(self.traced_with_jacobian)

    def traced(self, x: jnp.ndarray, u: jnp.ndarray, dt: jnp.ndarray) -> StepResult:
        return irk_traced(self.tableau, self.newton, self.f, self.dfdx, x, u, dt)

    def traced_with_jacobian(
        self, x: jnp.ndarray, u: jnp.ndarray, dt: jnp.ndarray
    ) -> Tuple[StepResult, jnp.ndarray, jnp.ndarray]:
        result = self.traced(x, u, dt)
        jac_x, jac_u = irk_jacobians_traced(self.tableau, self.f, x, u, dt, result.stages)
        return result, jac_x, jac_u

    def advance(self, x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
        if dt <= 0:
            raise ArgumentError(f"dt must be positive, got {dt}")
        result = self.step(jnp.asarray(x, dtype=float), jnp.asarray(u, dtype=float), dt)
        if not bool(result.converged):
            raise NewtonConvergenceError(
                float(result.residual), int(result.iterations), context=f"{self.tableau.name} stages"
            )
        return np.asarray(result.x_next)


@lru_cache(maxsize=32)
def _cached_stepper(
    tableau: ButcherTableau,
    newton: NewtonSettings,
    f: VectorField,
    dfdx: Optional[JacobianFn],
) -> ImplicitStepper:
    return ImplicitStepper(tableau, f, newton, dfdx)


def irk_step(
    tableau: ButcherTableau,
    newton: NewtonSettings,
    f: VectorField,
    dfdx: Optional[JacobianFn],
    x: np.ndarray,
    u: np.ndarray,
    dt: float,
) -> np.ndarray:
    """One implicit Runge-Kutta step; dfdx=None differentiates f automatically"""
    return _cached_stepper(tableau, newton, f, dfdx).advance(x, u, dt)


@lru_cache(maxsize=64)
def model_stepper(model: FlexModel, tableau_name: str, newton: NewtonSettings) -> ImplicitStepper:
    """Stepper over a FlexModel vector field, cached per model instance"""
    return ImplicitStepper(
        by_name(tableau_name), lambda x, u: vector_field_traced(model, x, u), newton
    )
