"""
Aggregated expert dataset (estimated state, expert torque, episode tag)
"""

from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from src.utils.errors import ArgumentError


class ExpertDataset:
    def __init__(self, n_x: int, n_u: int = 3, goal_conditioned: bool = False) -> None:
        self.n_x = n_x
        self.n_u = n_u
        self.goal_conditioned = goal_conditioned
        self.states = np.zeros((0, n_x))
        self.controls = np.zeros((0, n_u))
        self.goals = np.zeros((0, 3))
        self.episodes = np.zeros(0, dtype=int)

    def __len__(self) -> int:
        return int(self.states.shape[0])

    @property
    def inputs(self) -> np.ndarray:
        if self.goal_conditioned:
            return np.hstack([self.states, self.goals])
        return self.states

    def append(
        self,
        states: np.ndarray,
        controls: np.ndarray,
        episode: int,
        goals: Optional[np.ndarray] = None,
    ) -> None:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        controls = np.atleast_2d(np.asarray(controls, dtype=float))
        if states.shape[1] != self.n_x or controls.shape != (states.shape[0], self.n_u):
            raise ArgumentError("state/control records do not match the dataset dimensions")
        if not (np.isfinite(states).all() and np.isfinite(controls).all()):
            raise ArgumentError("dataset records must be finite")
        if goals is None:
            goals = np.zeros((states.shape[0], 3))
        self.states = np.vstack([self.states, states])
        self.controls = np.vstack([self.controls, controls])
        self.goals = np.vstack([self.goals, np.broadcast_to(goals, (states.shape[0], 3))])
        self.episodes = np.concatenate([self.episodes, np.full(states.shape[0], episode, dtype=int)])

    def check_bounds(self, lower: np.ndarray, upper: np.ndarray, tol: float = 1e-9) -> bool:
        return bool(np.all(self.controls >= lower - tol) and np.all(self.controls <= upper + tol))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"ep": self.episodes})
        for i in range(self.n_x):
            frame[f"x{i}"] = self.states[:, i]
        for i in range(self.n_u):
            frame[f"u{i}"] = self.controls[:, i]
        if self.goal_conditioned:
            for i in range(3):
                frame[f"g{i}"] = self.goals[:, i]
        return frame

    def save_csv(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path

    @classmethod
    def load_csv(cls, path: Path) -> "ExpertDataset":
        frame = pd.read_csv(path)
        x_cols = [c for c in frame.columns if c.startswith("x")]
        u_cols = [c for c in frame.columns if c.startswith("u")]
        g_cols = [c for c in frame.columns if c.startswith("g")]
        dataset = cls(len(x_cols), len(u_cols), goal_conditioned=bool(g_cols))
        if len(frame):
            goals = frame[g_cols].to_numpy() if g_cols else None
            for ep, part in frame.groupby("ep", sort=False):
                idx = part.index
                dataset.append(
                    part[x_cols].to_numpy(),
                    part[u_cols].to_numpy(),
                    int(ep),
                    None if goals is None else goals[idx],
                )
        return dataset
