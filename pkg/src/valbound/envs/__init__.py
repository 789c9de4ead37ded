"""Environment builders: gridworld mazes, MountainCar, identity-action augmentation."""

from valbound.envs.identity import add_identity_action
from valbound.envs.maze import (
    DEFAULT_MAZE_PATH,
    MazeLayout,
    MazeSpec,
    default_maze_spec,
    load_maze,
    maze_layout,
    maze_to_mdp,
    random_maze_rows,
)
from valbound.envs.random_mdp import random_chain_tasks, random_mdp
from valbound.envs.mountaincar import (
    NUM_ACTIONS,
    MountainCar,
    MountainCarParams,
    mountaincar_step,
    scale_observation,
)

__all__ = [
    "DEFAULT_MAZE_PATH",
    "MazeLayout",
    "MazeSpec",
    "MountainCar",
    "MountainCarParams",
    "NUM_ACTIONS",
    "add_identity_action",
    "default_maze_spec",
    "load_maze",
    "maze_layout",
    "maze_to_mdp",
    "mountaincar_step",
    "random_chain_tasks",
    "random_maze_rows",
    "random_mdp",
    "scale_observation",
]
