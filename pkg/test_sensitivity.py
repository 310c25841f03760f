#!/usr/bin/env python3
"""
測試自動微分 Jacobian 與中央差分的一致性
"""

import sys
from pathlib import Path

import jax.numpy as jnp
import numpy as np
import pytest

# 添加專案根目錄到 Python 路徑
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from src.dynamics.mrfem import (  # noqa: E402
    N_ACTIVE,
    MaterialGeometry,
    build_model,
    equilibrium_state,
    output_map,
    vector_field,
)
from src.dynamics.rbd import forward_kinematics  # noqa: E402
from src.integrators.steppers import NewtonSettings, model_stepper  # noqa: E402
from src.sensitivity.jacobians import (  # noqa: E402
    central_difference,
    jac_forward_kinematics,
    jac_output_map,
    jac_step,
    jac_vector_field,
)
from src.utils.errors import ArgumentError  # noqa: E402

MODEL = build_model(MaterialGeometry(), 2)
U = np.array([0.5, -1.0, 0.3])


def _state() -> np.ndarray:
    x = equilibrium_state(MODEL, [-0.6, 0.3, -0.2])
    x[MODEL.n_q :] = np.linspace(-0.5, 0.5, MODEL.n_q)
    return x


def _assert_close(analytic: np.ndarray, numeric: np.ndarray, rel: float = 1e-5) -> None:
    scale = max(1.0, float(np.abs(analytic).max()))
    np.testing.assert_allclose(analytic, numeric, atol=rel * scale)


def test_vector_field_jacobian() -> None:
    x = _state()
    jac_x, jac_u = jac_vector_field(MODEL, x, U)
    assert jac_x.shape == (MODEL.n_x, MODEL.n_x)
    assert jac_u.shape == (MODEL.n_x, 3)
    _assert_close(jac_x, central_difference(lambda xi: vector_field(MODEL, xi, U), x))
    _assert_close(jac_u, central_difference(lambda ui: vector_field(MODEL, x, ui), U))

    # 上半部為 [0 I]
    n_q = MODEL.n_q
    np.testing.assert_allclose(jac_x[:n_q, n_q:], np.eye(n_q))
    np.testing.assert_allclose(jac_x[:n_q, :n_q], 0.0)


def test_step_jacobian() -> None:
    x = _state()
    dt = 0.01
    stepper = model_stepper(MODEL, "radau3", NewtonSettings(tol=1e-13, max_iters=30))
    jac_x, jac_u = jac_step(stepper, MODEL, x, U, dt)
    _assert_close(jac_x, central_difference(lambda xi: stepper.advance(xi, U, dt), x, step=1e-5))
    _assert_close(jac_u, central_difference(lambda ui: stepper.advance(x, ui, dt), U, step=1e-5))

    by_name_x, _ = jac_step("radau3", MODEL, x, U, dt)
    _assert_close(by_name_x, jac_x, rel=1e-8)


def test_kinematic_jacobians() -> None:
    x = _state()
    q = x[: MODEL.n_q]
    jac_fk = jac_forward_kinematics(MODEL, q)
    assert jac_fk.shape == (3, MODEL.n_q)
    numeric = central_difference(
        lambda qi: forward_kinematics(MODEL.chain, MODEL.to_chain(qi)).ee_position, q
    )
    _assert_close(jac_fk, numeric)

    jac_y = jac_output_map(MODEL, x)
    assert jac_y.shape == (9, MODEL.n_x)
    _assert_close(jac_y, central_difference(lambda xi: output_map(MODEL, xi), x))
    # 前六列為主動關節位置與速度的選擇矩陣
    np.testing.assert_allclose(jac_y[:N_ACTIVE, :N_ACTIVE], np.eye(N_ACTIVE))
    np.testing.assert_allclose(jac_y[N_ACTIVE : 2 * N_ACTIVE, MODEL.n_q : MODEL.n_q + N_ACTIVE], np.eye(N_ACTIVE))


def test_callable_vector_field() -> None:
    A = np.array([[0.0, 1.0], [-4.0, -0.2]])
    B = np.array([[0.0], [1.0]])

    def linear(x: jnp.ndarray, u: jnp.ndarray) -> jnp.ndarray:
        return jnp.asarray(A) @ x + jnp.asarray(B) @ u

    jac_x, jac_u = jac_vector_field(linear, np.array([0.3, -0.1]), np.array([2.0]))
    np.testing.assert_allclose(jac_x, A)
    np.testing.assert_allclose(jac_u, B)


def test_dimension_mismatch() -> None:
    with pytest.raises(ArgumentError):
        jac_vector_field(MODEL, np.zeros(MODEL.n_x - 1), U)
    with pytest.raises(ArgumentError):
        jac_forward_kinematics(MODEL, np.zeros(MODEL.n_x))
    with pytest.raises(ArgumentError):
        jac_output_map(MODEL, np.zeros(3))


if __name__ == "__main__":
    print("\n🚀 開始測試靈敏度模組\n")
    for name, func in list(globals().items()):
        if name.startswith("test_") and callable(func):
            print(f"[測試] {name}")
            func()
    print("\n✅ 所有測試執行完畢！\n")
