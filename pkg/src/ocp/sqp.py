"""
Gauss-Newton SQP for the multiple-shooting problem

Each iteration linearizes the shooting defects and the end-effector map,
builds the stage-structured QP in absolute variables, solves it with the
interior-point back end and globalizes with an L1 merit line search.
"""

import time
from functools import lru_cache
from typing import Callable, NamedTuple, Optional, Tuple

import jax
import jax.numpy as jnp
import numpy as np
from pydantic import BaseModel, Field

from src.ocp.problem import (
    N_SLACK,
    OcpData,
    OcpProblem,
    OcpSolution,
    ShootingDynamics,
    SolveStats,
    SolveStatus,
)
from src.ocp.qp import StageQp, solve_qp
from src.utils.errors import ArgumentError
from src.utils.logger import app_logger
from src.utils.settings import MpcSettings

ARMIJO = 1e-4
MAX_BACKTRACKS = 12


class SqpOptions(BaseModel):
    max_iters: int = Field(50, ge=1)
    kkt_tol: float = Field(1e-6, gt=0)
    step_tol: float = Field(1e-8, gt=0)
    qp_tol: float = Field(1e-6, gt=0)
    qp_max_iters: int = Field(100, ge=1)
    soften_on_infeasible: bool = True

    @classmethod
    def from_settings(cls, cfg: MpcSettings) -> "SqpOptions":
        return cls(**{name: getattr(cfg, name) for name in cls.model_fields})


class InitialGuess(NamedTuple):
    X: np.ndarray
    U: np.ndarray
    sigma: np.ndarray
    penalty: float = 1.0


class Linearization(NamedTuple):
    F: jnp.ndarray  # (N, nx) 下一步狀態
    A: jnp.ndarray
    B: jnp.ndarray
    ok: jnp.ndarray
    Z: jnp.ndarray  # (N+1, nz)
    Jz: jnp.ndarray  # (N+1, nz, nx)


class _Kernels(NamedTuple):
    linearize: Callable
    outputs: Callable
    merit: Callable
    gradient: Callable
    build_qp: Callable
    kkt: Callable


def _objective(dyn: ShootingDynamics, X: jnp.ndarray, U: jnp.ndarray, S: jnp.ndarray, data: OcpData) -> jnp.ndarray:
    Z = jax.vmap(dyn.output)(X)
    return (
        jnp.sum(data.q_diag * (X - data.x_ref) ** 2)
        + jnp.sum(data.r_diag * (U - data.u_ref) ** 2)
        + jnp.sum(data.p_diag * (Z - data.z_ref) ** 2)
        + jnp.sum(data.slack_l2 * S**2)
        + jnp.sum(data.slack_l1 * S)
    )


def _violation(value: jnp.ndarray, bound_finite: jnp.ndarray) -> jnp.ndarray:
    return jnp.sum(jnp.where(bound_finite, jnp.maximum(value, 0.0), 0.0))


def _merit_terms(
    dyn: ShootingDynamics, X: jnp.ndarray, U: jnp.ndarray, S: jnp.ndarray, data: OcpData, hard: bool
) -> Tuple[jnp.ndarray, jnp.ndarray, jnp.ndarray, jnp.ndarray]:
    """(cost, L1 infeasibility, max defect, integrator ok)"""
    F, ok = jax.vmap(dyn.step)(X[:-1], U)
    defects = F - X[1:]
    Z = jax.vmap(dyn.output)(X)
    s_qd, s_obs = S[:, :1], S[:, 1:]
    theta = (
        jnp.sum(jnp.abs(defects))
        + _violation(X - s_qd - data.ub_x, jnp.isfinite(data.ub_x))
        + _violation(data.lb_x - X - s_qd, jnp.isfinite(data.lb_x))
        + _violation(Z - s_obs - data.ub_z, jnp.isfinite(data.ub_z))
        + _violation(data.lb_z - Z - s_obs, jnp.isfinite(data.lb_z))
        + jnp.sum(jnp.maximum(U - data.ub_u, 0.0) + jnp.maximum(data.lb_u - U, 0.0))
        + jnp.sum(jnp.maximum(-S, 0.0))
    )
    if hard:
        theta = theta + jnp.sum(jnp.abs(data.selector @ X[-1]))
    cost = _objective(dyn, X, U, S, data)
    return cost, theta, jnp.max(jnp.abs(defects)), jnp.all(ok)


def _build_qp(
    dyn: ShootingDynamics,
    lin: Linearization,
    X: jnp.ndarray,
    U: jnp.ndarray,
    S: jnp.ndarray,
    data: OcpData,
    x_init: jnp.ndarray,
) -> Tuple[StageQp, jnp.ndarray]:
    n_stage, n_x = X.shape
    n_u = U.shape[1]
    n_z = lin.Z.shape[1]
    n_v = n_u + N_SLACK
    eye_x = jnp.eye(n_x)
    eye_u = jnp.eye(n_u)

    # Gauss-Newton Hessian，z 以 z + Jz (x - x_bar) 線性化
    Jz = lin.Jz
    PJ = data.p_diag[:, :, None] * Jz
    Hxx = 2.0 * (jax.vmap(jnp.diag)(data.q_diag) + jnp.einsum("kzi,kzj->kij", Jz, PJ))
    z_offset = lin.Z - data.z_ref - jnp.einsum("kzi,ki->kz", Jz, X)
    gx = -2.0 * data.q_diag * data.x_ref + 2.0 * jnp.einsum("kzi,kz->ki", PJ, z_offset)

    r_pad = jnp.concatenate([data.r_diag, jnp.full((1, n_u), 0.5)], axis=0)
    u_ref_pad = jnp.concatenate([data.u_ref, jnp.zeros((1, n_u))], axis=0)
    hvv_diag = jnp.concatenate([2.0 * r_pad, jnp.tile(2.0 * data.slack_l2, (n_stage, 1))], axis=1)
    Hvv = jax.vmap(jnp.diag)(hvv_diag)
    gv = jnp.concatenate([-2.0 * r_pad * u_ref_pad, jnp.tile(data.slack_l1, (n_stage, 1))], axis=1)

    # 不等式列：x（共用 sigma_qd）、z（共用 sigma_obs）、u、sigma >= 0
    col_qd = jnp.zeros((n_v,)).at[n_u].set(-1.0)
    col_obs = jnp.zeros((n_v,)).at[n_u + 1].set(-1.0)
    Gx = jnp.concatenate(
        [
            jnp.tile(jnp.concatenate([eye_x, -eye_x]), (n_stage, 1, 1)),
            jnp.concatenate([Jz, -Jz], axis=1),
            jnp.zeros((n_stage, 2 * n_u + N_SLACK, n_x)),
        ],
        axis=1,
    )
    Gv = jnp.concatenate(
        [
            jnp.tile(col_qd, (n_stage, 2 * n_x, 1)),
            jnp.tile(col_obs, (n_stage, 2 * n_z, 1)),
            jnp.tile(
                jnp.concatenate([jnp.concatenate([eye_u, -eye_u]), jnp.zeros((2 * n_u, N_SLACK))], axis=1),
                (n_stage, 1, 1),
            ),
            jnp.tile(jnp.concatenate([jnp.zeros((N_SLACK, n_u)), -jnp.eye(N_SLACK)], axis=1), (n_stage, 1, 1)),
        ],
        axis=1,
    )
    z_shift = lin.Z - jnp.einsum("kzi,ki->kz", Jz, X)
    h = jnp.concatenate(
        [
            data.ub_x,
            -data.lb_x,
            data.ub_z[None, :] - z_shift,
            -data.lb_z[None, :] + z_shift,
            jnp.tile(jnp.concatenate([data.ub_u, -data.lb_u]), (n_stage, 1)),
            jnp.zeros((n_stage, N_SLACK)),
        ],
        axis=1,
    )
    stage_has_u = (jnp.arange(n_stage) < n_stage - 1)[:, None]
    mask = jnp.concatenate(
        [
            jnp.isfinite(data.ub_x),
            jnp.isfinite(data.lb_x),
            jnp.tile(jnp.isfinite(data.ub_z), (n_stage, 1)),
            jnp.tile(jnp.isfinite(data.lb_z), (n_stage, 1)),
            jnp.tile(stage_has_u, (1, 2 * n_u)),
            jnp.ones((n_stage, N_SLACK), dtype=bool),
        ],
        axis=1,
    )
    weight = mask.astype(X.dtype)[:, :, None]
    Gx = Gx * weight
    Gv = Gv * weight
    h = jnp.where(mask, h, 1.0)

    B_full = jnp.concatenate([lin.B, jnp.zeros((lin.B.shape[0], n_x, N_SLACK))], axis=2)
    c = lin.F - jnp.einsum("kij,kj->ki", lin.A, X[:-1]) - jnp.einsum("kij,kj->ki", lin.B, U)
    V = jnp.concatenate([jnp.concatenate([U, jnp.zeros((1, n_u))]), S], axis=1)
    qp = StageQp(Hxx, gx, Hvv, gv, Gx, Gv, h, lin.A, B_full, c, data.selector, x_init)
    return qp, V


def _kkt_residual(
    dyn: ShootingDynamics,
    X: jnp.ndarray,
    U: jnp.ndarray,
    S: jnp.ndarray,
    data: OcpData,
    qp: StageQp,
    lam: jnp.ndarray,
    pi: jnp.ndarray,
    nu: jnp.ndarray,
    hard: bool,
) -> jnp.ndarray:
    """
    Lagrangian gradient at (X, U, S) with the QP multipliers

    Constraint Jacobians come from the last linearization. The value is
    divided by max(100, mean |multiplier|) / 100 so the large L1 slack
    multipliers do not dominate.
    """
    n_u = U.shape[1]
    gX, gU, gS = jax.grad(lambda *w: _objective(dyn, *w, data), argnums=(0, 1, 2))(X, U, S)
    gV = jnp.concatenate([jnp.concatenate([gU, jnp.zeros((1, n_u))]), gS], axis=1)

    r_x = gX + jnp.einsum("kji,kj->ki", qp.Gx, lam)
    r_x = r_x.at[:-1].add(jnp.einsum("kji,kj->ki", qp.A, pi)).at[1:].add(-pi)
    if hard:
        r_x = r_x.at[-1].add(qp.E.T @ nu)
    r_x = r_x.at[0].set(0.0)
    r_v = gV + jnp.einsum("kji,kj->ki", qp.Gv, lam)
    r_v = r_v.at[:-1].add(jnp.einsum("kji,kj->ki", qp.B, pi))
    r_v = r_v.at[-1, :n_u].set(0.0)  # u_N 不是決策變數

    multipliers = jnp.concatenate([lam.ravel(), pi.ravel(), nu.ravel()])
    scale = jnp.maximum(100.0, jnp.mean(jnp.abs(multipliers))) / 100.0
    return jnp.maximum(jnp.max(jnp.abs(r_x)), jnp.max(jnp.abs(r_v))) / scale


@lru_cache(maxsize=32)
def _kernels(dyn: ShootingDynamics, horizon: int) -> _Kernels:
    def linearize(X: jnp.ndarray, U: jnp.ndarray) -> Linearization:
        F, A, B, ok = jax.vmap(dyn.step_with_jacobian)(X[:-1], U)
        Z = jax.vmap(dyn.output)(X)
        Jz = jax.vmap(jax.jacfwd(dyn.output))(X)
        return Linearization(F, A, B, ok, Z, Jz)

    def gradient(X, U, S, data):  # type: ignore[no-untyped-def]
        return jax.grad(lambda *w: _objective(dyn, *w, data), argnums=(0, 1, 2))(X, U, S)

    return _Kernels(
        linearize=jax.jit(linearize),
        outputs=jax.jit(jax.vmap(dyn.output)),
        merit=jax.jit(lambda X, U, S, data, hard: _merit_terms(dyn, X, U, S, data, hard), static_argnums=4),
        gradient=jax.jit(gradient),
        build_qp=jax.jit(lambda lin, X, U, S, data, x0: _build_qp(dyn, lin, X, U, S, data, x0)),
        kkt=jax.jit(
            lambda X, U, S, data, qp, lam, pi, nu, hard: _kkt_residual(dyn, X, U, S, data, qp, lam, pi, nu, hard),
            static_argnums=8,
        ),
    )


def cold_start(problem: OcpProblem, x0: np.ndarray) -> InitialGuess:
    n = problem.horizon
    u0 = np.clip(np.zeros(problem.dynamics.n_u), problem.lb_u, problem.ub_u)
    return InitialGuess(
        X=np.tile(x0, (n + 1, 1)),
        U=np.tile(u0, (n, 1)),
        sigma=np.zeros((n + 1, N_SLACK)),
    )


def _already_optimal(
    kern: _Kernels, data: OcpData, guess: InitialGuess, theta: float, tol: float
) -> bool:
    if np.any(guess.sigma != 0.0) or theta > tol:
        return False
    gX, gU, _ = kern.gradient(guess.X, guess.U, guess.sigma, data)
    return max(float(jnp.max(jnp.abs(gX[1:]))), float(jnp.max(jnp.abs(gU)))) <= tol


def solve(
    problem: OcpProblem,
    x0: np.ndarray,
    guess: Optional[InitialGuess] = None,
    options: Optional[SqpOptions] = None,
) -> OcpSolution:
    """
    求解 NMPC 問題

    Args:
        problem: 轉錄後的問題
        x0: 初始狀態估測 x_hat
        guess: 初始猜測（warm start），預設為冷啟動
        options: SQP 參數

    Returns:
        OcpSolution: 解與統計資料
    """
    options = options or SqpOptions()
    dyn = problem.dynamics
    n = problem.horizon
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (dyn.n_x,) or not np.isfinite(x0).all():
        raise ArgumentError(f"x0 must be a finite vector of length {dyn.n_x}")
    guess = guess or cold_start(problem, x0)
    if guess.X.shape != (n + 1, dyn.n_x) or guess.U.shape != (n, dyn.n_u) or guess.sigma.shape != (n + 1, N_SLACK):
        raise ArgumentError("initial guess does not match the problem dimensions")

    started = time.perf_counter()
    kern = _kernels(dyn, n)
    data = problem.data()
    hard = problem.terminal == "hard"

    X = np.array(guess.X, dtype=float)
    X[0] = x0
    U = np.array(guess.U, dtype=float)
    S = np.maximum(np.array(guess.sigma, dtype=float), 0.0)
    penalty = float(guess.penalty)
    kkt_history = []
    qp_iterations = 0
    iterations = 0
    status = SolveStatus.MAX_ITERATIONS

    cost, theta, _, ok = kern.merit(X, U, S, data, hard)
    if not bool(ok):
        status = SolveStatus.INTEGRATOR_FAILED
    elif _already_optimal(kern, data, InitialGuess(X, U, S), float(theta), options.kkt_tol):
        status = SolveStatus.CONVERGED
        kkt_history.append(float(theta))

    while status is SolveStatus.MAX_ITERATIONS and iterations < options.max_iters:
        lin = kern.linearize(X, U)
        if not bool(jnp.all(lin.ok)):
            status = SolveStatus.INTEGRATOR_FAILED
            break
        qp, V = kern.build_qp(lin, X, U, S, data, x0)
        result = solve_qp(qp, X, V, tol=options.qp_tol, max_iters=options.qp_max_iters, hard=hard)
        qp_iterations += int(result.iterations)
        if not bool(result.converged):
            status = SolveStatus.QP_FAILED
            break

        dX = np.asarray(result.X) - X
        dV = np.asarray(result.V) - np.asarray(V)
        dU = dV[:n, : dyn.n_u]
        dS = dV[:, dyn.n_u :]
        multipliers = [np.abs(np.asarray(result.lam)).max(), np.abs(np.asarray(result.pi)).max()]
        if hard:
            multipliers.append(np.abs(np.asarray(result.nu)).max(initial=0.0))
        penalty = max(penalty, 1.1 * float(max(multipliers)))

        gX, gU, gS = kern.gradient(X, U, S, data)
        slope = float(jnp.sum(gX * dX) + jnp.sum(gU * dU) + jnp.sum(gS * dS)) - penalty * float(theta)
        phi0 = float(cost) + penalty * float(theta)
        alpha = 1.0
        for _ in range(MAX_BACKTRACKS):
            trial = kern.merit(X + alpha * dX, U + alpha * dU, S + alpha * dS, data, hard)
            if bool(trial[3]) and float(trial[0]) + penalty * float(trial[1]) <= phi0 + ARMIJO * alpha * min(slope, 0.0):
                break
            alpha *= 0.5
        else:
            trial = kern.merit(X + alpha * dX, U + alpha * dU, S + alpha * dS, data, hard)

        X = X + alpha * dX
        U = U + alpha * dU
        S = np.maximum(S + alpha * dS, 0.0)
        cost, theta = trial[0], trial[1]
        iterations += 1

        stationarity = float(kern.kkt(X, U, S, data, qp, result.lam, result.pi, result.nu, hard))
        kkt = max(stationarity, float(theta))
        kkt_history.append(kkt)
        step = alpha * max(np.abs(dX).max(), np.abs(dV).max())
        if kkt <= options.kkt_tol or step <= options.step_tol:
            status = SolveStatus.CONVERGED

    if status is SolveStatus.QP_FAILED and hard and options.soften_on_infeasible:
        app_logger.warning("終端等式 QP 無解，改用軟性終端條件")
        softened = solve(problem.with_terminal("soft"), x0, guess, options)
        return softened._replace(stats=softened.stats._replace(softened=True))

    _, _, max_defect, _ = kern.merit(X, U, S, data, hard)
    wall_ms = 1e3 * (time.perf_counter() - started)
    stats = SolveStats(
        status=status,
        iterations=iterations,
        qp_iterations=qp_iterations,
        kkt=kkt_history[-1] if kkt_history else float("nan"),
        wall_ms=wall_ms,
        max_sigma_qd=float(S[:, 0].max()),
        max_sigma_obs=float(S[:, 1].max()),
        terminal=problem.terminal,
    )
    if status not in (SolveStatus.CONVERGED,):
        app_logger.debug(f"SQP 結束狀態 {status.value}: iters={iterations}, kkt={stats.kkt:.2e}")
    return OcpSolution(
        X=X,
        U=U,
        Z=np.asarray(kern.outputs(X)),
        sigma=S,
        kkt_history=kkt_history,
        stats=stats,
        max_defect=float(max_defect),
        penalty=penalty,
    )
