"""
Primal-dual interior-point method for the stage-structured QP

    min  sum_k 1/2 w_k' H_k w_k + g_k' w_k,        w_k = (x_k, v_k)
    s.t. x_0 = x_init
         x_{k+1} = A_k x_k + B_k v_k + c_k          k < N
         E x_N = 0                                  (hard terminal only)
         Gx_k x_k + Gv_k v_k <= h_k

H_k is block diagonal (Hxx_k, Hvv_k). Each Newton system is an equality
constrained stage QP solved by a Riccati recursion; the terminal equality
enters through a value function that is affine in its multiplier.
Mehrotra predictor-corrector, the whole loop runs inside one compiled
``lax.while_loop``.

Near mu -> 0 the barrier Hessian is badly conditioned and the iterates can
lose accuracy again after reaching the tolerance. The loop keeps the best
finite iterate and returns that one; it counts as converged when its
residual is within ACCEPT_FACTOR of the tolerance.
"""

from functools import partial
from typing import NamedTuple, Tuple

import jax
import jax.numpy as jnp
from jax.scipy.linalg import cho_factor, cho_solve

STEP_FRACTION = 0.995
ACCEPT_FACTOR = 10.0
# 相對正則化：hvv + REG * (1 + max|diag|) I
REG = 1e-12


class StageQp(NamedTuple):
    Hxx: jnp.ndarray  # (N+1, nx, nx)
    gx: jnp.ndarray  # (N+1, nx)
    Hvv: jnp.ndarray  # (N+1, nv, nv)
    gv: jnp.ndarray  # (N+1, nv)
    Gx: jnp.ndarray  # (N+1, m, nx)
    Gv: jnp.ndarray  # (N+1, m, nv)
    h: jnp.ndarray  # (N+1, m)
    A: jnp.ndarray  # (N, nx, nx)
    B: jnp.ndarray  # (N, nx, nv)
    c: jnp.ndarray  # (N, nx)
    E: jnp.ndarray  # (nc, nx)
    x_init: jnp.ndarray  # (nx,)


class QpResult(NamedTuple):
    X: jnp.ndarray
    V: jnp.ndarray
    lam: jnp.ndarray
    pi: jnp.ndarray  # (N, nx) dynamics multipliers for x_1..x_N
    nu: jnp.ndarray
    iterations: jnp.ndarray
    converged: jnp.ndarray
    residual: jnp.ndarray


class _Factor(NamedTuple):
    chol: jnp.ndarray  # (N, nv, nv)
    K: jnp.ndarray  # (N, nv, nx)
    K_nu: jnp.ndarray  # (N, nv, nc)
    Hvx: jnp.ndarray  # (N, nv, nx)
    P_next: jnp.ndarray  # (N, nx, nx)
    Gamma_next: jnp.ndarray  # (N, nx, nc)
    chol_N: jnp.ndarray
    S_N: jnp.ndarray
    coupling: jnp.ndarray  # E Xi_N


def _sym(M: jnp.ndarray) -> jnp.ndarray:
    return 0.5 * (M + M.T)


def _mv(M: jnp.ndarray, v: jnp.ndarray) -> jnp.ndarray:
    """Batched matrix-vector product over the stage axis"""
    return jnp.einsum("kij,kj->ki", M, v)


def _mtv(M: jnp.ndarray, v: jnp.ndarray) -> jnp.ndarray:
    return jnp.einsum("kji,kj->ki", M, v)


def _regularized(M: jnp.ndarray) -> jnp.ndarray:
    M = _sym(M)
    shift = REG * (1.0 + jnp.max(jnp.abs(jnp.diag(M))))
    return M + shift * jnp.eye(M.shape[0])


def _factor(Q: jnp.ndarray, S: jnp.ndarray, R: jnp.ndarray, qp: StageQp) -> _Factor:
    chol_N = cho_factor(_regularized(R[-1]), lower=True)[0]
    P_N = _sym(Q[-1] - S[-1].T @ cho_solve((chol_N, True), S[-1]))
    Gamma_N = qp.E.T

    def backward(carry, stage):  # type: ignore[no-untyped-def]
        P, Gamma = carry
        Qk, Sk, Rk, Ak, Bk = stage
        hvv = _regularized(Rk + Bk.T @ P @ Bk)
        hvx = Sk + Bk.T @ P @ Ak
        L = cho_factor(hvv, lower=True)[0]
        K = -cho_solve((L, True), hvx)
        K_nu = -cho_solve((L, True), Bk.T @ Gamma)
        P_new = _sym(Qk + Ak.T @ P @ Ak + hvx.T @ K)
        Gamma_new = Ak.T @ Gamma + hvx.T @ K_nu
        return (P_new, Gamma_new), (L, K, K_nu, hvx, P, Gamma)

    _, (chol, K, K_nu, Hvx, P_next, Gamma_next) = jax.lax.scan(
        backward, (P_N, Gamma_N), (Q[:-1], S[:-1], R[:-1], qp.A, qp.B), reverse=True
    )

    def forward(Xi, stage):  # type: ignore[no-untyped-def]
        Ak, Bk, Kk, Knk = stage
        return Ak @ Xi + Bk @ (Kk @ Xi + Knk), None

    Xi_N, _ = jax.lax.scan(forward, jnp.zeros_like(Gamma_N), (qp.A, qp.B, K, K_nu))
    return _Factor(chol, K, K_nu, Hvx, P_next, Gamma_next, chol_N, S[-1], qp.E @ Xi_N)


def _riccati_solve(
    fac: _Factor,
    qp: StageQp,
    qx: jnp.ndarray,
    qv: jnp.ndarray,
    d: jnp.ndarray,
    f: jnp.ndarray,
    hard: bool,
) -> Tuple[jnp.ndarray, jnp.ndarray, jnp.ndarray, jnp.ndarray]:
    """Equality QP with dx_0 = 0, dx_{k+1} = A dx + B dv + d_k, E dx_N = f"""
    p_N = qx[-1] - fac.S_N.T @ cho_solve((fac.chol_N, True), qv[-1])

    def backward(p, stage):  # type: ignore[no-untyped-def]
        qk, rk, Ak, Bk, dk, L, hvx, P = stage
        p_shift = p + P @ dk
        k_ff = -cho_solve((L, True), rk + Bk.T @ p_shift)
        return qk + Ak.T @ p_shift + hvx.T @ k_ff, (k_ff, p)

    _, (k_ff, p_next) = jax.lax.scan(
        backward,
        p_N,
        (qx[:-1], qv[:-1], qp.A, qp.B, d, fac.chol, fac.Hvx, fac.P_next),
        reverse=True,
    )

    if hard:

        def affine(a, stage):  # type: ignore[no-untyped-def]
            Ak, Bk, Kk, kk, dk = stage
            return Ak @ a + Bk @ (Kk @ a + kk) + dk, None

        a_N, _ = jax.lax.scan(affine, jnp.zeros(qx.shape[1]), (qp.A, qp.B, fac.K, k_ff, d))
        # 被動速度可控性弱時 coupling 接近奇異，用截斷 SVD 的最小平方解
        nu = jnp.linalg.lstsq(fac.coupling, f - qp.E @ a_N, rcond=1e-12)[0]
    else:
        nu = jnp.zeros(qp.E.shape[0])

    def rollout(dx, stage):  # type: ignore[no-untyped-def]
        Ak, Bk, Kk, Knk, kk, dk, P, p, Gamma = stage
        dv = Kk @ dx + kk + Knk @ nu
        dx_next = Ak @ dx + Bk @ dv + dk
        return dx_next, (dx, dv, P @ dx_next + p + Gamma @ nu)

    dx_N, (dX, dV, pi) = jax.lax.scan(
        rollout,
        jnp.zeros(qx.shape[1]),
        (qp.A, qp.B, fac.K, fac.K_nu, k_ff, d, fac.P_next, p_next, fac.Gamma_next),
    )
    dv_N = -cho_solve((fac.chol_N, True), fac.S_N @ dx_N + qv[-1])
    dX = jnp.concatenate([dX, dx_N[None]], axis=0)
    dV = jnp.concatenate([dV, dv_N[None]], axis=0)
    return dX, dV, pi, nu


def _max_step(value: jnp.ndarray, delta: jnp.ndarray) -> jnp.ndarray:
    """Largest alpha with value + alpha * delta >= 0 (uncapped)"""
    ratios = jnp.where(delta < 0, -value / jnp.where(delta < 0, delta, -1.0), jnp.inf)
    return jnp.min(ratios)


class _Iterate(NamedTuple):
    X: jnp.ndarray
    V: jnp.ndarray
    lam: jnp.ndarray
    t: jnp.ndarray
    pi: jnp.ndarray
    nu: jnp.ndarray


class _Residuals(NamedTuple):
    r_in: jnp.ndarray
    r_e: jnp.ndarray
    r_t: jnp.ndarray
    norm: jnp.ndarray
    mu: jnp.ndarray


def _residuals(
    qp: StageQp,
    X: jnp.ndarray,
    V: jnp.ndarray,
    lam: jnp.ndarray,
    t: jnp.ndarray,
    pi: jnp.ndarray,
    nu: jnp.ndarray,
    hard: bool,
) -> _Residuals:
    r_in = _mv(qp.Gx, X) + _mv(qp.Gv, V) + t - qp.h
    r_e = X[1:] - _mv(qp.A, X[:-1]) - _mv(qp.B, V[:-1]) - qp.c
    r_t = qp.E @ X[-1] if hard else jnp.zeros(qp.E.shape[0])

    r_dx = _mv(qp.Hxx, X) + qp.gx + _mtv(qp.Gx, lam)
    r_dx = r_dx.at[:-1].add(_mtv(qp.A, pi)).at[1:].add(-pi)
    if hard:
        r_dx = r_dx.at[-1].add(qp.E.T @ nu)
    r_dx = r_dx.at[0].set(0.0)  # x_0 固定
    r_dv = _mv(qp.Hvv, V) + qp.gv + _mtv(qp.Gv, lam)
    r_dv = r_dv.at[:-1].add(_mtv(qp.B, pi))

    norm = jnp.max(
        jnp.stack(
            [
                jnp.max(jnp.abs(r_dx)),
                jnp.max(jnp.abs(r_dv)),
                jnp.max(jnp.abs(r_e)),
                jnp.max(jnp.abs(r_in)),
                jnp.max(jnp.abs(r_t), initial=0.0),
            ]
        )
    )
    return _Residuals(r_in, r_e, r_t, norm, jnp.mean(t * lam))


@partial(jax.jit, static_argnames=("hard",))
def solve_qp(
    qp: StageQp,
    X0: jnp.ndarray,
    V0: jnp.ndarray,
    tol: float = 1e-6,
    max_iters: int = 100,
    hard: bool = True,
) -> QpResult:
    """
    以內點法求解分段結構 QP

    Args:
        qp: 分段 QP 資料
        X0: 初始狀態猜測 (N+1, nx)，X0[0] 會被替換成 x_init
        V0: 初始 (u, sigma) 猜測 (N+1, nv)
        tol: KKT 殘差與互補性容許值
        max_iters: 最大迭代次數
        hard: 是否含終端等式

    Returns:
        QpResult: 解與乘子
    """
    X = X0.at[0].set(qp.x_init)
    V = V0
    t = jnp.maximum(qp.h - _mv(qp.Gx, X) - _mv(qp.Gv, V), 1.0)
    lam = jnp.ones_like(t)
    pi = jnp.zeros_like(X[1:])
    nu = jnp.zeros(qp.E.shape[0])

    def newton_direction(X, V, fac, res, lam, t, corr):  # type: ignore[no-untyped-def]
        D = lam / t
        w_in = D * res.r_in + corr
        qx = _mv(qp.Hxx, X) + qp.gx + _mtv(qp.Gx, w_in)
        qv = _mv(qp.Hvv, V) + qp.gv + _mtv(qp.Gv, w_in)
        dX, dV, pi_new, nu_new = _riccati_solve(fac, qp, qx, qv, -res.r_e, -res.r_t, hard)
        g_dw = _mv(qp.Gx, dX) + _mv(qp.Gv, dV)
        d_lam = D * (g_dw + res.r_in) - lam + corr
        d_t = -res.r_in - g_dw
        return dX, dV, d_lam, d_t, pi_new, nu_new

    def cond(state):  # type: ignore[no-untyped-def]
        _, it, res_norm, mu, finite, _, best_score = state
        done = (res_norm <= tol) & (mu <= tol)
        # 已接近容許值後殘差又變大，不再迭代
        stalled = (best_score <= ACCEPT_FACTOR * tol) & (jnp.maximum(res_norm, mu) > best_score)
        return (~done) & (~stalled) & (it < max_iters) & finite

    def body(state):  # type: ignore[no-untyped-def]
        cur, it, _, _, _, best, best_score = state
        X, V, lam, t, pi, nu = cur
        res = _residuals(qp, X, V, lam, t, pi, nu, hard)
        D = lam / t
        Q = qp.Hxx + jnp.einsum("kmi,km,kmj->kij", qp.Gx, D, qp.Gx)
        S = jnp.einsum("kmi,km,kmj->kij", qp.Gv, D, qp.Gx)
        R = qp.Hvv + jnp.einsum("kmi,km,kmj->kij", qp.Gv, D, qp.Gv)
        fac = _factor(Q, S, R, qp)

        # predictor
        _, _, dl_aff, dt_aff, _, _ = newton_direction(X, V, fac, res, lam, t, jnp.zeros_like(t))
        alpha_aff = jnp.minimum(1.0, jnp.minimum(_max_step(t, dt_aff), _max_step(lam, dl_aff)))
        mu_aff = jnp.mean((t + alpha_aff * dt_aff) * (lam + alpha_aff * dl_aff))
        sigma = (mu_aff / jnp.maximum(res.mu, 1e-300)) ** 3

        # corrector
        corr = (sigma * res.mu - dt_aff * dl_aff) / t
        dX, dV, d_lam, d_t, pi_new, nu_new = newton_direction(X, V, fac, res, lam, t, corr)
        alpha = jnp.minimum(
            1.0, STEP_FRACTION * jnp.minimum(_max_step(t, d_t), _max_step(lam, d_lam))
        )

        new = _Iterate(
            X + alpha * dX,
            V + alpha * dV,
            lam + alpha * d_lam,
            t + alpha * d_t,
            pi + alpha * (pi_new - pi),
            nu + alpha * (nu_new - nu),
        )
        res_new = _residuals(qp, *new, hard)
        finite = jnp.isfinite(res_new.norm) & jnp.isfinite(res_new.mu)
        score = jnp.maximum(res_new.norm, res_new.mu)
        better = finite & (score < best_score)
        best = jax.tree_util.tree_map(lambda a, b: jnp.where(better, a, b), new, best)
        best_score = jnp.where(better, score, best_score)
        return new, it + 1, res_new.norm, res_new.mu, finite, best, best_score

    first = _Iterate(X, V, lam, t, pi, nu)
    start = _residuals(qp, *first, hard)
    start_score = jnp.maximum(start.norm, start.mu)
    state = (first, jnp.asarray(0), start.norm, start.mu, jnp.asarray(True), first, start_score)
    _, it, _, _, _, best, best_score = jax.lax.while_loop(cond, body, state)
    converged = best_score <= ACCEPT_FACTOR * tol
    return QpResult(best.X, best.V, best.lam, best.pi, best.nu, it, converged, best_score)
