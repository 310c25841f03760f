#!/usr/bin/env python3
"""
測試剛體動力學核心與 MRFEM 可撓機械臂模型
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# 添加專案根目錄到 Python 路徑
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from src.dynamics.mrfem import (  # noqa: E402
    N_ACTIVE,
    MaterialGeometry,
    build_model,
    describe,
    equilibrium_state,
    hold_torque,
    map_state,
    passive_equilibrium,
    total_energy,
    vector_field,
)
from src.dynamics.rbd import (  # noqa: E402
    SpatialInertia,
    bias_forces,
    forward_dynamics,
    forward_kinematics,
    gravity_potential,
    inverse_dynamics,
    kinetic_energy,
    mass_matrix,
)
from src.utils.errors import ArgumentError  # noqa: E402

RNG = np.random.default_rng(7)


def _model(n_seg: int = 2, gravity=None):  # type: ignore[no-untyped-def]
    return build_model(MaterialGeometry(), n_seg, gravity=gravity)


def _random_state(model):  # type: ignore[no-untyped-def]
    q = RNG.uniform(-0.6, 0.6, model.n_q)
    q[N_ACTIVE:] *= 0.05
    qd = RNG.uniform(-1.0, 1.0, model.n_q)
    return np.concatenate([q, qd])


def test_lumped_parameters() -> None:
    info = describe(_model(2))
    assert info["n_q"] == 7
    assert info["n_x"] == 14
    assert info["element_lengths"] == pytest.approx([0.125, 0.25, 0.125])
    # k = E a h^3 / (12 dl)
    assert info["stiffness"] == pytest.approx(1.9e11 * 0.05 * 0.002**3 / 12.0 / 0.25)
    assert info["flex_link_mass"] == pytest.approx(7870.0 * 0.05 * 0.002 * 0.5)
    assert all(d > 0 for d in info["damping"])


def test_home_end_effector() -> None:
    for n_seg in (0, 1, 3):
        model = _model(n_seg)
        np.testing.assert_allclose(describe(model)["home_ee"], [1.0, 0.0, 0.3], atol=1e-12)
        ee = forward_kinematics(model.chain, np.zeros(model.n_q)).ee_position
        np.testing.assert_allclose(ee, [1.0, 0.0, 0.3], atol=1e-12)


def test_forward_and_inverse_dynamics_agree() -> None:
    for n_seg in (0, 1, 3):
        chain = _model(n_seg).chain
        n = chain.n_joints
        for _ in range(3):
            q = RNG.uniform(-1.0, 1.0, n)
            qd = RNG.uniform(-2.0, 2.0, n)
            tau = RNG.uniform(-1.0, 1.0, n)
            qdd = forward_dynamics(chain, q, qd, tau)
            np.testing.assert_allclose(inverse_dynamics(chain, q, qd, qdd), tau, rtol=1e-8, atol=1e-9)


def test_mass_matrix_symmetric_positive_definite() -> None:
    chain = _model(2).chain
    q = RNG.uniform(-1.0, 1.0, chain.n_joints)
    M = mass_matrix(chain, q)
    np.testing.assert_allclose(M, M.T, atol=1e-12)
    assert np.linalg.eigvalsh(M).min() > 0


def test_vector_field_matches_mass_matrix_form() -> None:
    # M qdd + h = B u - K q - D qd
    model = _model(2)
    x = _random_state(model)
    u = np.array([1.0, -2.0, 0.5])
    n_q = model.n_q
    q, qd = x[:n_q], x[n_q:]
    qdd = vector_field(model, x, u)[n_q:]

    M = mass_matrix(model.chain, model.to_chain(q))
    h = bias_forces(model.chain, model.to_chain(q), model.to_chain(qd))
    lhs = M @ model.to_chain(qdd) + h
    rhs = model.to_chain(model.B @ u - model.k_diag * q - model.d_diag * qd)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-8, atol=1e-8)


def test_energy_matches_rigid_body_terms() -> None:
    model = _model(1)
    x = _random_state(model)
    n_q = model.n_q
    q_chain, qd_chain = model.to_chain(x[:n_q]), model.to_chain(x[n_q:])
    expected = (
        kinetic_energy(model.chain, q_chain, qd_chain)
        + gravity_potential(model.chain, q_chain)
        + 0.5 * float(np.sum(model.k_diag * x[:n_q] ** 2))
    )
    assert total_energy(model, x) == pytest.approx(expected, rel=1e-10)


def test_rest_without_gravity() -> None:
    model = _model(2, gravity=[0.0, 0.0, 0.0])
    np.testing.assert_allclose(vector_field(model, np.zeros(model.n_x), np.zeros(3)), 0.0, atol=1e-12)


def test_passive_equilibrium_holds_still() -> None:
    model = _model(2)
    q_a = np.array([-0.8, 0.3, -0.2])
    x = equilibrium_state(model, q_a)
    np.testing.assert_allclose(x[:N_ACTIVE], q_a)
    np.testing.assert_allclose(x[N_ACTIVE : model.n_q], passive_equilibrium(model, q_a))
    u = hold_torque(model, x[: model.n_q])
    np.testing.assert_allclose(vector_field(model, x, u), 0.0, atol=1e-10)

    # 重力使可撓連桿下垂
    assert np.abs(x[N_ACTIVE : model.n_q]).max() > 0
    assert passive_equilibrium(_model(0), q_a).size == 0


def test_map_state_between_discretizations() -> None:
    fine = _model(3)
    coarse = _model(0)
    x = equilibrium_state(fine, [-0.5, 0.2, 0.1])
    x[fine.n_q : fine.n_q + N_ACTIVE] = [0.1, -0.2, 0.3]

    mapped = map_state(fine, coarse, x)
    assert mapped.shape == (coarse.n_x,)
    np.testing.assert_allclose(mapped[:N_ACTIVE], x[:N_ACTIVE])
    np.testing.assert_allclose(mapped[coarse.n_q :], [0.1, -0.2, 0.3])

    back = map_state(coarse, fine, mapped)
    np.testing.assert_allclose(back[fine.n_q + N_ACTIVE :], 0.0)


def test_invalid_arguments() -> None:
    with pytest.raises(ArgumentError):
        _model(-1)
    with pytest.raises(ArgumentError):
        build_model(MaterialGeometry(), 2, torque_upper=(20.0, -1.0, 10.0))
    with pytest.raises(ArgumentError):
        SpatialInertia.from_com_inertia(-1.0, [0.0, 0.0, 0.0], np.eye(3))

    model = _model(1)
    with pytest.raises(ArgumentError):
        vector_field(model, np.zeros(model.n_x + 1), np.zeros(3))
    with pytest.raises(ArgumentError):
        passive_equilibrium(model, [np.nan, 0.0, 0.0])
    with pytest.raises(ArgumentError):
        forward_kinematics(model.chain, np.zeros(2))


if __name__ == "__main__":
    print("\n🚀 開始測試動力學模組\n")
    for name, func in list(globals().items()):
        if name.startswith("test_") and callable(func):
            print(f"[測試] {name}")
            func()
    print("\n✅ 所有測試執行完畢！\n")
