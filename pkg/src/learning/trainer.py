"""
Supervised training of the policy with an L2 loss on the torques
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import torch
from pydantic import BaseModel, Field

from src.learning.dataset import ExpertDataset
from src.learning.policy import PolicyNet
from src.utils.errors import ArgumentError, TrainingError
from src.utils.logger import app_logger
from src.utils.settings import ImitationSettings


class TrainConfig(BaseModel):
    episodes: int = Field(30, ge=1)
    initial_samples: int = Field(7000, ge=1)
    update_samples: int = Field(5000, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    batch_size: int = Field(256, ge=1)
    epochs: int = Field(20, ge=1)
    validation_fraction: float = Field(0.1, ge=0, lt=1)
    seed: int = Field(0, ge=0)

    @classmethod
    def from_settings(cls, cfg: ImitationSettings, seed: int = 0) -> "TrainConfig":
        return cls(
            episodes=cfg.episodes,
            initial_samples=cfg.initial_samples,
            update_samples=cfg.update_samples,
            learning_rate=cfg.learning_rate,
            batch_size=cfg.batch_size,
            epochs=cfg.epochs_per_episode,
            validation_fraction=cfg.validation_fraction,
            seed=seed,
        )


@dataclass
class LossCurve:
    train: List[float] = field(default_factory=list)
    validation: List[float] = field(default_factory=list)

    @property
    def final_train(self) -> float:
        return self.train[-1] if self.train else float("nan")

    @property
    def final_validation(self) -> float:
        # 沒有驗證集時以訓練損失代替
        if self.validation:
            return self.validation[-1]
        return self.final_train


def l2_loss(net: PolicyNet, inputs: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    return torch.mean(torch.sum((net.raw(inputs) - targets) ** 2, dim=1))


def split_indices(n: int, fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(round(fraction * n)) if n > 1 else 0
    return perm[n_val:], perm[:n_val]


def train_supervised(
    net: PolicyNet,
    dataset: ExpertDataset,
    config: Optional[TrainConfig] = None,
    optimizer: Optional[torch.optim.Optimizer] = None,
    fit_normalization: bool = True,
) -> Tuple[PolicyNet, LossCurve]:
    """
    以 Adam 小批次訓練策略

    Args:
        net: 策略網路（就地更新）
        dataset: 專家資料集
        config: 訓練設定
        optimizer: 沿用的優化器（DAgger 各回合共用）
        fit_normalization: 是否以訓練集重新估計輸入正規化；沿用優化器狀態時應為 False

    Returns:
        Tuple[PolicyNet, LossCurve]: 訓練後網路與每個 epoch 的損失
    """
    config = config or TrainConfig()
    if len(dataset) == 0:
        raise ArgumentError("dataset is empty")
    inputs_np = dataset.inputs
    if inputs_np.shape[1] != net.n_in:
        raise ArgumentError(f"dataset inputs have {inputs_np.shape[1]} columns, policy expects {net.n_in}")

    train_idx, val_idx = split_indices(len(dataset), config.validation_fraction, config.seed)
    if fit_normalization:
        net.set_normalization(inputs_np[train_idx].mean(axis=0), inputs_np[train_idx].std(axis=0))

    inputs = torch.as_tensor(inputs_np, dtype=torch.float64)
    targets = torch.as_tensor(dataset.controls, dtype=torch.float64)
    x_train, y_train = inputs[train_idx], targets[train_idx]
    x_val, y_val = inputs[val_idx], targets[val_idx]

    optimizer = optimizer or torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    generator = torch.Generator().manual_seed(config.seed)
    curve = LossCurve()

    for epoch in range(config.epochs):
        net.train()
        order = torch.randperm(x_train.shape[0], generator=generator)
        total = 0.0
        for start in range(0, x_train.shape[0], config.batch_size):
            batch = order[start : start + config.batch_size]
            optimizer.zero_grad()
            loss = l2_loss(net, x_train[batch], y_train[batch])
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch starting {start}: {loss.item()}"
                )
            loss.backward()
            optimizer.step()
            total += loss.item() * batch.shape[0]
        curve.train.append(total / x_train.shape[0])

        net.eval()
        if x_val.shape[0]:
            with torch.no_grad():
                curve.validation.append(l2_loss(net, x_val, y_val).item())

    app_logger.debug(
        f"訓練完成: {len(dataset)} 筆, train={curve.final_train:.3e}, val={curve.final_validation:.3e}"
    )
    return net, curve
