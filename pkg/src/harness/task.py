"""
Reaching task: initial set, wall constraint, goal ball
"""

import numpy as np

from src.dynamics.mrfem import FlexModel, equilibrium_state
from src.utils.errors import ArgumentError
from src.utils.settings import TaskSettings


def sample_active_joints(task: TaskSettings, rng: np.random.Generator) -> np.ndarray:
    """均勻取樣初始集合內的主動關節角"""
    return rng.uniform(np.asarray(task.q_a_lower), np.asarray(task.q_a_upper))


def initial_state(model: FlexModel, task: TaskSettings, seed: int) -> np.ndarray:
    """Rest state with q_a from the initial box and passive joints at equilibrium"""
    rng = np.random.default_rng(seed)
    return equilibrium_state(model, sample_active_joints(task, rng))


def check_goal(task: TaskSettings, delta_z: float) -> None:
    """目標點必須滿足收緊後的牆面限制"""
    if task.z_goal[1] > task.wall_y - delta_z:
        raise ArgumentError(
            f"z_goal y = {task.z_goal[1]} violates the tightened wall bound {task.wall_y - delta_z}"
        )


def goal_distance(ee: np.ndarray, z_goal: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.atleast_2d(ee) - np.asarray(z_goal), axis=1)
