"""
圖表生成工具（SVG）
"""

from pathlib import Path
from typing import Dict, Mapping, Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from src.utils.logger import app_logger  # noqa: E402

EE_AXES = ("ee_x", "ee_y", "ee_z")
TORQUES = ("u0", "u1", "u2")


class ChartGenerator:
    def __init__(self, out_dir: str = "results") -> None:
        self.out_dir = Path(out_dir)
        plt.rcParams["font.sans-serif"] = [
            "Noto Sans CJK TC",
            "WenQuanYi Zen Hei",
            "DejaVu Sans",
        ]
        plt.rcParams["axes.unicode_minus"] = False
        plt.rcParams["svg.fonttype"] = "none"

    def _save(self, fig: "plt.Figure", name: str) -> str:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / f"{name}.svg"
        fig.tight_layout()
        fig.savefig(path, format="svg")
        plt.close(fig)
        app_logger.info(f"圖表已生成: {path}")
        return str(path)

    def trajectory_chart(
        self,
        logs: Mapping[str, pd.DataFrame],
        name: str,
        z_goal: Optional[np.ndarray] = None,
        wall_y: Optional[float] = None,
    ) -> Optional[str]:
        """
        EE 位置與力矩時間序列，每個紀錄一條曲線

        Args:
            logs: 名稱 -> 軌跡紀錄（t, ee_x.., u0..）
            name: 檔名（不含副檔名）
            z_goal: 目標點，畫成水平虛線
            wall_y: 牆面位置

        Returns:
            str: 圖表檔案路徑，失敗時返回 None
        """
        try:
            if not logs or all(log.empty for log in logs.values()):
                app_logger.warning("沒有軌跡資料，無法生成圖表")
                return None

            fig, axes = plt.subplots(2, 3, figsize=(14, 7), sharex=True)
            for label, log in logs.items():
                for j, column in enumerate(EE_AXES):
                    axes[0, j].plot(log["t"], log[column], label=label)
                for j, column in enumerate(TORQUES):
                    axes[1, j].step(log["t"], log[column], where="post", label=label)

            for j, column in enumerate(EE_AXES):
                axes[0, j].set_ylabel(f"{column} [m]")
                if z_goal is not None:
                    axes[0, j].axhline(z_goal[j], color="gray", linestyle="--", linewidth=1)
            if wall_y is not None:
                axes[0, 1].axhline(wall_y, color="red", linestyle=":", linewidth=1)
            for j, column in enumerate(TORQUES):
                axes[1, j].set_ylabel(f"{column} [N·m]")
                axes[1, j].set_xlabel("t [s]")
            for ax in axes.flat:
                ax.grid(True, alpha=0.3)
            axes[0, 0].legend()
            return self._save(fig, name)

        except Exception as e:
            app_logger.error(f"生成軌跡圖表失敗: {e}")
            plt.close("all")
            return None

    def discretization_chart(self, ee_by_n_seg: Dict[int, np.ndarray], t: np.ndarray, name: str) -> Optional[str]:
        """各分段數的 EE 位置比較"""
        try:
            fig, axes = plt.subplots(3, 1, figsize=(10, 9), sharex=True)
            for n_seg, ee in sorted(ee_by_n_seg.items()):
                for j, ax in enumerate(axes):
                    ax.plot(t, ee[:, j], label=f"n_seg = {n_seg}")
            for j, ax in enumerate(axes):
                ax.set_ylabel(f"{EE_AXES[j]} [m]")
                ax.grid(True, alpha=0.3)
            axes[-1].set_xlabel("t [s]")
            axes[0].legend()
            return self._save(fig, name)

        except Exception as e:
            app_logger.error(f"生成離散化圖表失敗: {e}")
            plt.close("all")
            return None

    def training_chart(self, metrics: pd.DataFrame, name: str = "dagger_training") -> Optional[str]:
        """DAgger 每回合的 L2 損失（對數座標）與評估回報"""
        try:
            if metrics.empty:
                app_logger.warning("沒有訓練指標，無法生成圖表")
                return None

            fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(10, 7), sharex=True)
            ax1.semilogy(metrics["episode"], metrics["train_loss"], "b-o", label="train")
            ax1.semilogy(metrics["episode"], metrics["val_loss"], "r-s", label="validation")
            ax1.set_ylabel("L2 loss")
            ax1.legend()
            ax2.plot(metrics["episode"], metrics["eval_return"], "g-o")
            ax2.set_ylabel("evaluation return")
            ax2.set_xlabel("episode")
            for ax in (ax1, ax2):
                ax.grid(True, alpha=0.3)
            return self._save(fig, name)

        except Exception as e:
            app_logger.error(f"生成訓練圖表失敗: {e}")
            plt.close("all")
            return None
