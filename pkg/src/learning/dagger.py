"""
DAgger: roll out the learner, label the visited estimates with the expert,
aggregate, retrain
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Protocol, Tuple

import numpy as np
import pandas as pd
import torch

from src.learning.dataset import ExpertDataset
from src.learning.policy import PolicyNet, policy_forward, policy_input
from src.learning.trainer import LossCurve, TrainConfig, train_supervised
from src.ocp.problem import SolveStats, SolveStatus
from src.utils.logger import app_logger

Actor = Callable[[np.ndarray], np.ndarray]


class Expert(Protocol):
    def reset(self) -> None: ...

    def step(self, x_hat: np.ndarray) -> Tuple[np.ndarray, SolveStats]: ...


@dataclass
class RolloutRecord:
    ee: np.ndarray
    dt: float
    failed: bool = False


class RolloutEnv(Protocol):
    """Closed loop with estimator: the actor receives x_hat every step"""

    def rollout(self, actor: Actor, seed: int) -> RolloutRecord: ...


@dataclass
class EpisodeMetrics:
    episode: int
    dataset_size: int
    train_loss: float
    val_loss: float
    eval_return: float
    skipped: int


@dataclass
class DaggerResult:
    net: PolicyNet
    dataset: ExpertDataset
    metrics: List[EpisodeMetrics] = field(default_factory=list)
    curves: List[LossCurve] = field(default_factory=list)

    def metrics_frame(self) -> pd.DataFrame:
        return pd.DataFrame([m.__dict__ for m in self.metrics])


def evaluation_return(ee: np.ndarray, z_goal: np.ndarray, dt: float) -> float:
    """sum_i dt * ||z_goal - z_i||_2 over one roll-out"""
    return float(dt * np.linalg.norm(np.asarray(ee) - np.asarray(z_goal), axis=1).sum())


class _LabelingActor:
    """
    episode 0 施加專家控制量，之後施加策略輸出；只有收斂的專家解才成為標籤
    """

    def __init__(
        self,
        expert: Expert,
        net: Optional[PolicyNet],
        z_goal: Optional[np.ndarray],
        budget: int,
    ) -> None:
        self.expert = expert
        self.net = net
        self.z_goal = z_goal
        self.budget = budget
        self.states: List[np.ndarray] = []
        self.labels: List[np.ndarray] = []
        self.skipped = 0

    def __call__(self, x_hat: np.ndarray) -> np.ndarray:
        if self.net is not None and self.full:
            # 資料已滿，只施加策略輸出
            return policy_forward(self.net, policy_input(x_hat, self.z_goal))
        u_expert, stats = self.expert.step(x_hat)
        if not self.full:
            if stats.status is SolveStatus.CONVERGED:
                self.states.append(np.array(x_hat, dtype=float))
                self.labels.append(np.array(u_expert, dtype=float))
            else:
                self.skipped += 1
        if self.net is None:
            return u_expert
        return policy_forward(self.net, policy_input(x_hat, self.z_goal))

    @property
    def full(self) -> bool:
        return len(self.states) >= self.budget


def _collect(
    env: RolloutEnv,
    expert: Expert,
    net: Optional[PolicyNet],
    budget: int,
    seeds: np.random.Generator,
    z_goal: Optional[np.ndarray],
) -> _LabelingActor:
    actor = _LabelingActor(expert, net, z_goal, budget)
    while not actor.full:
        expert.reset()
        before = len(actor.states) + actor.skipped
        env.rollout(actor, int(seeds.integers(0, 2**31 - 1)))
        if len(actor.states) + actor.skipped == before:
            # 回合沒有任何步驟時避免無窮迴圈
            break
    return actor


def dagger_train(
    expert: Expert,
    env: RolloutEnv,
    net: PolicyNet,
    z_goal: np.ndarray,
    config: Optional[TrainConfig] = None,
    goal_conditioned: bool = False,
    eval_seed: Optional[int] = None,
) -> DaggerResult:
    """
    DAgger 主迴圈

    Args:
        expert: 專家控制器（每步 step(x_hat) -> (u, stats)）
        env: 含估測器的閉迴路環境
        net: 初始策略網路
        z_goal: 目標點
        config: 訓練設定（episodes, n0, n1, ...）
        goal_conditioned: 策略輸入是否包含目標點
        eval_seed: 評估回合的初始狀態種子

    Returns:
        DaggerResult: 最終網路、資料集與每回合指標
    """
    config = config or TrainConfig()
    z_goal = np.asarray(z_goal, dtype=float)
    goal_input = z_goal if goal_conditioned else None
    seeds = np.random.default_rng(config.seed)
    eval_seed = config.seed + 10_000 if eval_seed is None else eval_seed
    torch.manual_seed(config.seed)

    dataset = ExpertDataset(net.n_in - (3 if goal_conditioned else 0), net.n_out, goal_conditioned)
    optimizer = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    result = DaggerResult(net=net, dataset=dataset)

    for episode in range(config.episodes):
        budget = config.initial_samples if episode == 0 else config.update_samples
        actor = _collect(env, expert, None if episode == 0 else net, budget, seeds, goal_input)
        if actor.states:
            dataset.append(np.vstack(actor.states), np.vstack(actor.labels), episode, z_goal)

        net, curve = train_supervised(
            net,
            dataset,
            config.model_copy(update={"seed": config.seed + episode}),
            optimizer,
            # 正規化只在第一回合估計，之後權重與 Adam 狀態沿用同一個輸入映射
            fit_normalization=episode == 0,
        )
        expert.reset()
        record = env.rollout(lambda x: policy_forward(net, policy_input(x, goal_input)), eval_seed)
        metrics = EpisodeMetrics(
            episode=episode,
            dataset_size=len(dataset),
            train_loss=curve.final_train,
            val_loss=curve.final_validation,
            eval_return=evaluation_return(record.ee, z_goal, record.dt),
            skipped=actor.skipped,
        )
        result.metrics.append(metrics)
        result.curves.append(curve)
        app_logger.info(
            f"DAgger 回合 {episode}: 資料 {metrics.dataset_size} 筆, val={metrics.val_loss:.3e}, "
            f"return={metrics.eval_return:.3f}, 略過 {metrics.skipped}"
        )

    result.net = net
    return result
