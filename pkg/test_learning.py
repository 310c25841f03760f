#!/usr/bin/env python3
"""
測試策略網路、監督式訓練、專家資料集與 DAgger 迴圈
"""

import json
import sys
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import torch

# 添加專案根目錄到 Python 路徑
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from src.learning.dagger import DaggerResult, RolloutRecord, dagger_train, evaluation_return  # noqa: E402
from src.learning.dataset import ExpertDataset  # noqa: E402
from src.learning.policy import PolicyNet, policy_forward, policy_input  # noqa: E402
from src.learning.trainer import TrainConfig, l2_loss, split_indices, train_supervised  # noqa: E402
from src.ocp.problem import SolveStats, SolveStatus  # noqa: E402
from src.utils.errors import ArgumentError, TrainingError  # noqa: E402


class ToyEnv:
    """四維線性系統，EE 取前三個狀態"""

    def __init__(self, steps: int = 10) -> None:
        self.steps = steps

    def rollout(self, actor, seed: int) -> RolloutRecord:  # type: ignore[no-untyped-def]
        x = np.random.default_rng(seed).uniform(-1.0, 1.0, 4)
        ee = []
        for _ in range(self.steps):
            u = np.asarray(actor(x))
            x = 0.9 * x + 0.05 * np.concatenate([u, [0.0]])
            ee.append(x[:3].copy())
        return RolloutRecord(np.array(ee), 0.01)


class ToyExpert:
    def __init__(self, fail_every: int = 0, failure: SolveStatus = SolveStatus.QP_FAILED) -> None:
        self.fail_every = fail_every
        self.failure = failure
        self.calls = 0

    def reset(self) -> None:
        pass

    def step(self, x_hat: np.ndarray):  # type: ignore[no-untyped-def]
        self.calls += 1
        failed = self.fail_every and self.calls % self.fail_every == 0
        status = self.failure if failed else SolveStatus.CONVERGED
        return np.clip(-x_hat[:3], -1.0, 1.0), SolveStats(status, 1, 1, 0.0, 0.1, 0.0, 0.0, "hard")


def _zero_net(bias) -> PolicyNet:  # type: ignore[no-untyped-def]
    net = PolicyNet(4, (5,), torque_upper=(20.0, 10.0, 10.0))
    with torch.no_grad():
        for layer in net.linear_layers():
            layer.weight.zero_()
            layer.bias.zero_()
        net.linear_layers()[-1].bias.copy_(torch.as_tensor(bias, dtype=torch.float64))
    return net


def test_zero_weights_output_scaled_bias() -> None:
    net = _zero_net([0.5, -2.0, 0.1])
    u = policy_forward(net, np.random.default_rng(0).normal(size=4))
    np.testing.assert_allclose(u, [10.0, -10.0, 1.0])

    net.clamp = False
    np.testing.assert_allclose(policy_forward(net, np.zeros(4)), [10.0, -20.0, 1.0])

    with pytest.raises(ArgumentError):
        policy_forward(net, np.zeros(5))


def test_policy_input_with_goal() -> None:
    x = np.arange(4.0)
    np.testing.assert_allclose(policy_input(x), x)
    np.testing.assert_allclose(policy_input(x, np.array([7.0, 8.0, 9.0])), [0, 1, 2, 3, 7, 8, 9])


def test_gradients() -> None:
    net = PolicyNet(3, (6, 6), torque_upper=(1.0, 1.0, 1.0), seed=1)
    x = torch.randn(5, 3, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda inp: net.raw(inp), (x,))

    # L2 損失對第一層權重的梯度
    inputs = torch.randn(8, 3, dtype=torch.float64)
    targets = torch.randn(8, 3, dtype=torch.float64)
    weight = net.linear_layers()[0].weight
    net.zero_grad()
    l2_loss(net, inputs, targets).backward()
    analytic = weight.grad.clone()
    h = 1e-6
    with torch.no_grad():
        for i, j in ((0, 0), (2, 1), (5, 2)):
            weight[i, j] += h
            plus = l2_loss(net, inputs, targets).item()
            weight[i, j] -= 2 * h
            minus = l2_loss(net, inputs, targets).item()
            weight[i, j] += h
            assert analytic[i, j].item() == pytest.approx((plus - minus) / (2 * h), rel=1e-5, abs=1e-8)


def test_overfits_small_dataset() -> None:
    rng = np.random.default_rng(2)
    dataset = ExpertDataset(3)
    dataset.append(rng.normal(size=(10, 3)), rng.uniform(-0.5, 0.5, (10, 3)), episode=0)
    net = PolicyNet(3, (32, 32), torque_upper=(1.0, 1.0, 1.0))
    config = TrainConfig(epochs=1500, batch_size=10, learning_rate=1e-2, validation_fraction=0.0)
    net, curve = train_supervised(net, dataset, config)
    assert len(curve.train) == 1500
    assert curve.validation == []
    assert curve.final_train < 1e-3
    assert curve.final_validation == curve.final_train
    assert curve.train[-1] < curve.train[0]


def test_training_errors() -> None:
    net = PolicyNet(3, (4,), torque_upper=(1.0, 1.0, 1.0))
    with pytest.raises(ArgumentError):
        train_supervised(net, ExpertDataset(3))

    dataset = ExpertDataset(4)
    dataset.append(np.zeros((4, 4)), np.zeros((4, 3)), episode=0)
    with pytest.raises(ArgumentError):
        train_supervised(net, dataset)

    dataset = ExpertDataset(3)
    dataset.append(np.ones((4, 3)), np.zeros((4, 3)), episode=0)
    with torch.no_grad():
        net.linear_layers()[0].weight[0, 0] = float("nan")
    with pytest.raises(TrainingError):
        train_supervised(net, dataset, TrainConfig(epochs=1, batch_size=4))


def test_policy_file_round_trip() -> None:
    net = PolicyNet(4, (8, 8), torque_upper=(20.0, 10.0, 10.0), seed=5)
    net.set_normalization(np.array([0.1, 0.2, 0.3, 0.4]), np.array([1.0, 2.0, 0.5, 1.5]))
    x = np.array([0.3, -0.4, 1.2, 0.0])
    with tempfile.TemporaryDirectory() as tmp:
        path = net.save(Path(tmp) / "policy.json")
        payload = json.loads(path.read_text(encoding="utf-8"))
        assert payload["layers"] == [4, 8, 8, 3]
        assert payload["torque_upper"] == [20.0, 10.0, 10.0]
        loaded = PolicyNet.load(path)
        np.testing.assert_allclose(policy_forward(loaded, x), policy_forward(net, x), rtol=1e-12)

        payload["format"] = "other"
        path.write_text(json.dumps(payload), encoding="utf-8")
        with pytest.raises(ArgumentError):
            PolicyNet.load(path)


def test_dataset_csv() -> None:
    dataset = ExpertDataset(4)
    dataset.append(np.arange(8.0).reshape(2, 4), np.ones((2, 3)), episode=0)
    dataset.append(np.full((1, 4), -1.0), np.zeros((1, 3)), episode=1)
    assert len(dataset) == 3
    assert dataset.check_bounds(-np.ones(3), np.ones(3))

    with tempfile.TemporaryDirectory() as tmp:
        path = dataset.save_csv(Path(tmp) / "dataset.csv")
        assert list(pd.read_csv(path).columns) == ["ep", "x0", "x1", "x2", "x3", "u0", "u1", "u2"]
        loaded = ExpertDataset.load_csv(path)
    np.testing.assert_allclose(loaded.states, dataset.states)
    np.testing.assert_allclose(loaded.controls, dataset.controls)
    np.testing.assert_array_equal(loaded.episodes, [0, 0, 1])

    with pytest.raises(ArgumentError):
        dataset.append(np.full((1, 4), np.nan), np.zeros((1, 3)), episode=2)
    with pytest.raises(ArgumentError):
        dataset.append(np.zeros((1, 4)), np.zeros((2, 3)), episode=2)


def test_goal_conditioned_dataset() -> None:
    dataset = ExpertDataset(2, goal_conditioned=True)
    dataset.append(np.zeros((2, 2)), np.zeros((2, 3)), episode=0, goals=np.array([0.5, -0.1, 0.2]))
    assert dataset.inputs.shape == (2, 5)
    assert list(dataset.to_frame().columns)[-3:] == ["g0", "g1", "g2"]


def test_evaluation_return() -> None:
    ee = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    assert evaluation_return(ee, np.zeros(3), 0.01) == pytest.approx(0.01)


def test_dagger_aggregates_exact_budget() -> None:
    config = TrainConfig(
        episodes=3, initial_samples=25, update_samples=15, epochs=2, batch_size=8, learning_rate=1e-2, seed=3
    )
    net = PolicyNet(4, (8,), torque_upper=(1.0, 1.0, 1.0))
    result = dagger_train(ToyExpert(), ToyEnv(), net, np.zeros(3), config)

    assert len(result.dataset) == 55
    assert [m.dataset_size for m in result.metrics] == [25, 40, 55]
    np.testing.assert_array_equal(np.bincount(result.dataset.episodes), [25, 15, 15])
    assert all(np.isfinite(m.eval_return) for m in result.metrics)
    frame = result.metrics_frame()
    assert list(frame["episode"]) == [0, 1, 2]
    # 專家標籤在力矩邊界內
    assert result.dataset.check_bounds(-np.ones(3), np.ones(3))


def test_dagger_skips_failed_labels() -> None:
    config = TrainConfig(episodes=2, initial_samples=20, update_samples=10, epochs=1, batch_size=8, seed=0)
    net = PolicyNet(4, (8,), torque_upper=(1.0, 1.0, 1.0))
    result = dagger_train(ToyExpert(fail_every=4), ToyEnv(), net, np.zeros(3), config)
    assert len(result.dataset) == 30
    assert result.metrics[0].skipped > 0


def test_dagger_rejects_unconverged_labels() -> None:
    config = TrainConfig(episodes=2, initial_samples=20, update_samples=10, epochs=1, batch_size=8, seed=0)
    net = PolicyNet(4, (8,), torque_upper=(1.0, 1.0, 1.0))
    expert = ToyExpert(fail_every=4, failure=SolveStatus.MAX_ITERATIONS)
    result = dagger_train(expert, ToyEnv(), net, np.zeros(3), config)
    assert len(result.dataset) == 30
    assert result.metrics[0].skipped > 0
    assert result.metrics[1].skipped > 0


def test_dagger_stops_querying_expert_when_full() -> None:
    config = TrainConfig(episodes=2, initial_samples=20, update_samples=5, epochs=1, batch_size=8, seed=0)
    net = PolicyNet(4, (8,), torque_upper=(1.0, 1.0, 1.0))
    expert = ToyExpert()
    dagger_train(expert, ToyEnv(steps=10), net, np.zeros(3), config)
    # episode 0：兩個完整回合由專家操作；episode 1：只標記前 5 步
    assert expert.calls == 25


def test_dagger_freezes_normalization_after_first_episode() -> None:
    config = TrainConfig(episodes=3, initial_samples=20, update_samples=10, epochs=2, batch_size=8, seed=4)
    net = PolicyNet(4, (8,), torque_upper=(1.0, 1.0, 1.0), seed=4)
    result = dagger_train(ToyExpert(), ToyEnv(), net, np.zeros(3), config)

    first = result.dataset.states[result.dataset.episodes == 0]
    train_idx, _ = split_indices(len(first), config.validation_fraction, config.seed)
    np.testing.assert_allclose(result.net.input_mean.numpy(), first[train_idx].mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(result.net.input_std.numpy(), first[train_idx].std(axis=0), rtol=1e-12)

    mean_before = result.net.input_mean.clone()
    train_supervised(result.net, result.dataset, TrainConfig(epochs=1, batch_size=8), fit_normalization=False)
    assert torch.equal(result.net.input_mean, mean_before)


def test_dagger_is_reproducible() -> None:
    config = TrainConfig(episodes=2, initial_samples=20, update_samples=10, epochs=2, batch_size=8, seed=7)

    def run() -> DaggerResult:
        net = PolicyNet(4, (8,), torque_upper=(1.0, 1.0, 1.0), seed=7)
        return dagger_train(ToyExpert(), ToyEnv(), net, np.zeros(3), config)

    first, second = run(), run()
    np.testing.assert_array_equal(first.dataset.states, second.dataset.states)
    for a, b in zip(first.net.linear_layers(), second.net.linear_layers()):
        assert torch.equal(a.weight, b.weight)


if __name__ == "__main__":
    print("\n🚀 開始測試模仿學習模組\n")
    for name, func in list(globals().items()):
        if name.startswith("test_") and callable(func):
            print(f"[測試] {name}")
            func()
    print("\n✅ 所有測試執行完畢！\n")
