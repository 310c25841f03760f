#!/usr/bin/env python3
"""
測試擴展卡爾曼濾波器（EKF）
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# 添加專案根目錄到 Python 路徑
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from src.dynamics.mrfem import MaterialGeometry, build_model, equilibrium_state, hold_torque, output_map  # noqa: E402
from src.estimator.ekf import N_OUTPUT, Ekf, EkfBelief, NoiseConfig, initial_belief  # noqa: E402
from src.integrators.simulation import GroundTruthSimulator  # noqa: E402
from src.utils.errors import ArgumentError, NumericError  # noqa: E402
from src.utils.settings import EstimatorSettings, SimulatorSettings  # noqa: E402

MODEL = build_model(MaterialGeometry(), 1)
Q_A = np.array([-0.8, 0.3, -0.2])
TRUTH = equilibrium_state(MODEL, Q_A)
U_HOLD = hold_torque(MODEL, TRUTH[: MODEL.n_q])


def _assert_covariance(P: np.ndarray) -> None:
    np.testing.assert_allclose(P, P.T, atol=1e-14)
    assert np.linalg.eigvalsh(P).min() > 0


def test_noise_covariances() -> None:
    noise = NoiseConfig.from_settings(EstimatorSettings())
    n_q = MODEL.n_q
    Q = np.diag(noise.process_covariance(n_q))
    assert Q[0] == pytest.approx(1e-4)
    np.testing.assert_allclose(Q[1:n_q], 1e-3)
    assert Q[n_q] == pytest.approx(0.1)
    np.testing.assert_allclose(Q[n_q + 1 :], 0.5)

    R = np.diag(noise.measurement_covariance())
    assert R.shape == (N_OUTPUT,)
    np.testing.assert_allclose(R, [3e-4] * 3 + [0.5] * 3 + [1e-2] * 3)
    np.testing.assert_allclose(np.diag(noise.initial_covariance(n_q)), [1e-2] * n_q + [1e-3] * n_q)


def test_initial_belief_from_measurement() -> None:
    belief = initial_belief(MODEL, output_map(MODEL, TRUTH))
    np.testing.assert_allclose(belief.x_hat, TRUTH, atol=1e-9)
    _assert_covariance(belief.P)

    with pytest.raises(ArgumentError):
        initial_belief(MODEL, np.zeros(6))


def test_predict_and_update_keep_covariance_valid() -> None:
    ekf = Ekf(MODEL)
    belief = ekf.initial_belief(output_map(MODEL, TRUTH))
    predicted = ekf.predict(belief, U_HOLD)
    _assert_covariance(predicted.P)
    # 靜止平衡點以保持力矩預測仍為靜止
    np.testing.assert_allclose(predicted.x_hat, TRUTH, atol=1e-6)

    updated = ekf.update(predicted, output_map(MODEL, TRUTH))
    _assert_covariance(updated.P)
    assert np.trace(updated.P) < np.trace(predicted.P)


def test_estimate_converges_from_biased_start() -> None:
    model = build_model(MaterialGeometry(), 2)
    truth = equilibrium_state(model, Q_A)
    u_hold = hold_torque(model, truth[: model.n_q])
    ekf = Ekf.from_settings(model, EstimatorSettings(), 0.01)

    y0 = output_map(model, truth)
    y0[:3] += 0.01
    belief = ekf.initial_belief(y0)
    x = truth.copy()
    initial_error = np.linalg.norm(belief.x_hat - x)

    # 模型一致、量測無雜訊
    for _ in range(50):
        x = ekf.stepper.advance(x, u_hold, ekf.dt)
        belief = ekf.step(belief, u_hold, output_map(model, x))
    assert np.linalg.norm(belief.x_hat - x) < 1e-3 < initial_error
    _assert_covariance(belief.P)


def test_estimate_rms_against_fine_plant() -> None:
    sim_cfg = SimulatorSettings()
    plant = build_model(MaterialGeometry(), 10)
    truth = equilibrium_state(plant, Q_A)
    u_hold = hold_torque(plant, truth[: plant.n_q])
    trajectory = GroundTruthSimulator(plant, sim_cfg.sampling_time, sim_cfg.substeps).run(
        truth, lambda t: u_hold, 3.0
    )

    meas_std = np.sqrt([sim_cfg.noise_q_a] * 3 + [sim_cfg.noise_qd_a] * 3 + [sim_cfg.noise_p_ee] * 3)
    rng = np.random.default_rng(0)

    def measure(x: np.ndarray) -> np.ndarray:
        return output_map(plant, x) + meas_std * rng.standard_normal(N_OUTPUT)

    ekf = Ekf.from_settings(build_model(MaterialGeometry(), 2), EstimatorSettings(), sim_cfg.sampling_time)
    belief = ekf.initial_belief(measure(trajectory.x[0]))
    errors = []
    for k, u_k in enumerate(trajectory.u):
        belief = ekf.step(belief, u_k, measure(trajectory.x[k + 1]))
        errors.append(belief.x_hat[:3] - trajectory.x[k + 1, :3])

    rms = np.sqrt(np.mean(np.square(errors)))
    assert rms < 3.0 * np.sqrt(sim_cfg.noise_q_a)


def test_invalid_update() -> None:
    ekf = Ekf(MODEL)
    belief = EkfBelief(TRUTH.copy(), np.eye(MODEL.n_x) * 1e-3)
    with pytest.raises(ArgumentError):
        ekf.update(belief, np.zeros(N_OUTPUT + 1))
    with pytest.raises(NumericError):
        ekf.update(belief, output_map(MODEL, TRUTH), R=-1e3 * np.eye(N_OUTPUT))
    with pytest.raises(ArgumentError):
        Ekf(MODEL, dt=0.0)


if __name__ == "__main__":
    print("\n🚀 開始測試狀態估測模組\n")
    for name, func in list(globals().items()):
        if name.startswith("test_") and callable(func):
            print(f"[測試] {name}")
            func()
    print("\n✅ 所有測試執行完畢！\n")
