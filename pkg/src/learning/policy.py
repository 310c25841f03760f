"""
MLP policy that imitates the expert NMPC

Inputs are standardized with the statistics of the training set, the
linear output layer is scaled to the torque bounds.
"""

import json
import subprocess
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import torch

from src.utils.errors import ArgumentError
from src.utils.logger import app_logger

POLICY_FORMAT = "flexarm-policy/1"


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"], capture_output=True, text=True, timeout=5, check=False
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


class PolicyNet(torch.nn.Module):
    """
    n_in -> hidden (tanh) -> ... -> 3，輸出乘上力矩上限

    Args:
        n_in: 輸入維度（n_x，或 n_x + 3 當輸入含目標點）
        hidden: 隱藏層寬度
        torque_upper: 力矩上限（對稱邊界）
        clamp: 是否將輸出截斷到力矩邊界
        seed: 權重初始化種子
    """

    def __init__(
        self,
        n_in: int,
        hidden: Sequence[int] = (64, 64),
        torque_upper: Sequence[float] = (20.0, 10.0, 10.0),
        clamp: bool = True,
        seed: int = 0,
    ) -> None:
        super().__init__()
        if n_in <= 0 or any(h <= 0 for h in hidden):
            raise ArgumentError("layer sizes must be positive")
        self.n_in = n_in
        self.hidden = list(hidden)
        self.clamp = clamp
        self.seed = seed

        torch.manual_seed(seed)
        layers: List[torch.nn.Module] = []
        width = n_in
        for h in self.hidden:
            layers += [torch.nn.Linear(width, h), torch.nn.Tanh()]
            width = h
        layers.append(torch.nn.Linear(width, len(torque_upper)))
        self.body = torch.nn.Sequential(*layers).double()

        self.register_buffer("input_mean", torch.zeros(n_in, dtype=torch.float64))
        self.register_buffer("input_std", torch.ones(n_in, dtype=torch.float64))
        self.register_buffer("u_scale", torch.as_tensor(torque_upper, dtype=torch.float64))

    @property
    def n_out(self) -> int:
        return int(self.u_scale.shape[0])

    def set_normalization(self, mean: np.ndarray, std: np.ndarray) -> None:
        std = np.where(np.asarray(std) > 1e-8, std, 1.0)
        self.input_mean.copy_(torch.as_tensor(mean, dtype=torch.float64))
        self.input_std.copy_(torch.as_tensor(std, dtype=torch.float64))

    def raw(self, x: torch.Tensor) -> torch.Tensor:
        """未截斷的輸出（訓練用）"""
        return self.u_scale * self.body((x - self.input_mean) / self.input_std)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        u = self.raw(x)
        if self.clamp:
            u = torch.maximum(torch.minimum(u, self.u_scale), -self.u_scale)
        return u

    def linear_layers(self) -> List[torch.nn.Linear]:
        return [m for m in self.body if isinstance(m, torch.nn.Linear)]

    def save(self, path: Path) -> Path:
        """Write a self-describing JSON policy file"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "format": POLICY_FORMAT,
            "layers": [self.n_in, *self.hidden, self.n_out],
            "activation": "tanh",
            "weights": [layer.weight.detach().cpu().numpy().tolist() for layer in self.linear_layers()],
            "biases": [layer.bias.detach().cpu().numpy().tolist() for layer in self.linear_layers()],
            "input_mean": self.input_mean.cpu().numpy().tolist(),
            "input_std": self.input_std.cpu().numpy().tolist(),
            "torque_upper": self.u_scale.cpu().numpy().tolist(),
            "clamp": self.clamp,
            "seed": self.seed,
            "version": _git_describe(),
        }
        path.write_text(json.dumps(payload), encoding="utf-8")
        app_logger.info(f"策略已儲存: {path}")
        return path

    @classmethod
    def load(cls, path: Path) -> "PolicyNet":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != POLICY_FORMAT:
            raise ArgumentError(f"unsupported policy file format: {payload.get('format')}")
        layers = payload["layers"]
        net = cls(
            layers[0],
            layers[1:-1],
            torque_upper=payload["torque_upper"],
            clamp=payload["clamp"],
            seed=payload["seed"],
        )
        with torch.no_grad():
            for layer, w, b in zip(net.linear_layers(), payload["weights"], payload["biases"]):
                layer.weight.copy_(torch.as_tensor(w, dtype=torch.float64))
                layer.bias.copy_(torch.as_tensor(b, dtype=torch.float64))
        net.set_normalization(np.asarray(payload["input_mean"]), np.asarray(payload["input_std"]))
        return net


def policy_input(x_hat: np.ndarray, z_goal: Optional[np.ndarray] = None) -> np.ndarray:
    x_hat = np.asarray(x_hat, dtype=float)
    if z_goal is None:
        return x_hat
    return np.concatenate([x_hat, np.asarray(z_goal, dtype=float)], axis=-1)


def policy_forward(net: PolicyNet, x_hat: np.ndarray) -> np.ndarray:
    """
    單筆推論

    Args:
        net: 策略網路
        x_hat: 網路輸入向量

    Returns:
        np.ndarray: 3 維力矩
    """
    x_hat = np.asarray(x_hat, dtype=float)
    if x_hat.shape != (net.n_in,):
        raise ArgumentError(f"policy expects input of shape ({net.n_in},), got {x_hat.shape}")
    with torch.no_grad():
        u = net(torch.as_tensor(x_hat, dtype=torch.float64))
    return u.numpy()
