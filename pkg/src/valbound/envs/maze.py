"""Slippery gridworld mazes described by ASCII rows.

Characters: ``#`` wall, ``.`` open, ``S`` start, ``G`` goal. States are the
open cells in row-major order. Actions are up, right, down, left. With
probabilities ``slip = (p_intended, p_left, p_right)`` the agent moves in the
intended direction or one of the two perpendicular ones; moving into a wall
or off the grid leaves it in place.
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from valbound.mdp import TabularMdp

MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))  # up, right, down, left
ACTION_NAMES = ("up", "right", "down", "left")
GOAL_MODES = ("absorbing", "continuing")

DEFAULT_MAZE_PATH = Path(str(resources.files("valbound") / "data" / "maze_default.txt"))


@dataclass(frozen=True)
class MazeSpec:
    """Maze layout and reward/dynamics parameters.

    ``goal_mode="absorbing"`` makes ``G`` terminal: its action values equal
    ``goal_reward`` and nothing follows. ``"continuing"`` keeps ``G`` an
    ordinary cell that pays ``goal_reward`` on every step taken from it.
    """

    rows: tuple
    slip: tuple = (0.5, 0.25, 0.25)
    step_penalty: float = -0.1
    goal_reward: float = 1.0
    gamma: float = 0.98
    beta: float = 0.1
    goal_mode: str = "absorbing"

    def __post_init__(self):
        rows = tuple(str(r) for r in self.rows)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "slip", tuple(float(p) for p in self.slip))
        if not rows or not rows[0]:
            raise ValueError("maze has no cells")
        if any(len(r) != len(rows[0]) for r in rows):
            raise ValueError("maze rows must all have the same length")
        bad = set("".join(rows)) - set("#.SG")
        if bad:
            raise ValueError(f"unknown maze characters {sorted(bad)}")
        text = "".join(rows)
        if text.count("S") != 1 or text.count("G") != 1:
            raise ValueError("maze needs exactly one 'S' and one 'G'")
        if len(self.slip) != 3 or min(self.slip) < 0 or abs(sum(self.slip) - 1.0) > 1e-12:
            raise ValueError("slip must be three nonnegative probabilities summing to 1")
        if self.goal_mode not in GOAL_MODES:
            raise ValueError(f"goal_mode must be one of {GOAL_MODES}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if not self.beta > 0:
            raise ValueError("beta must be positive")


@dataclass(frozen=True)
class MazeLayout:
    cells: tuple  # (row, col) of each state
    start: int
    goal: int
    height: int
    width: int

    def index(self, row, col):
        return self.cells.index((row, col))


def maze_layout(spec):
    cells, start, goal = [], None, None
    for i, row in enumerate(spec.rows):
        for j, ch in enumerate(row):
            if ch == "#":
                continue
            if ch == "S":
                start = len(cells)
            elif ch == "G":
                goal = len(cells)
            cells.append((i, j))
    return MazeLayout(tuple(cells), start, goal, len(spec.rows), len(spec.rows[0]))


def _reachable(layout, succ):
    seen = {layout.start}
    todo = deque([layout.start])
    while todo:
        s = todo.popleft()
        for t in succ[s]:
            if t not in seen:
                seen.add(t)
                todo.append(t)
    return seen


def maze_to_mdp(spec):
    """Build the TabularMdp of a maze. Warns if the goal cannot be reached from the start."""
    layout = maze_layout(spec)
    where = {c: k for k, c in enumerate(layout.cells)}
    S, A = len(layout.cells), len(MOVES)

    def target(s, d):
        i, j = layout.cells[s]
        di, dj = MOVES[d]
        return where.get((i + di, j + dj), s)

    P = np.zeros((S, A, S))
    p_int, p_left, p_right = spec.slip
    for s in range(S):
        for a in range(A):
            P[s, a, target(s, a)] += p_int
            P[s, a, target(s, (a - 1) % 4)] += p_left
            P[s, a, target(s, (a + 1) % 4)] += p_right
    r = np.full((S, A), float(spec.step_penalty))
    r[layout.goal] = spec.goal_reward
    absorbing = frozenset()
    if spec.goal_mode == "absorbing":
        P[layout.goal] = 0.0
        P[layout.goal, :, layout.goal] = 1.0
        absorbing = frozenset({layout.goal})

    succ = [set(np.nonzero(P[s].sum(axis=0))[0].tolist()) for s in range(S)]
    if layout.goal not in _reachable(layout, succ):
        warnings.warn("goal is unreachable from the start cell", stacklevel=2)
    return TabularMdp(P, r, spec.gamma, absorbing)


def load_maze(path, **params):
    """Read ASCII rows from ``path`` (blank lines ignored) into a MazeSpec."""
    rows = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    return MazeSpec(rows=tuple(rows), **params)


def default_maze_spec(**params):
    """The bundled 8x8 maze with the default slip and rewards."""
    return load_maze(DEFAULT_MAZE_PATH, **params)


def random_maze_rows(rng, height=8, width=8, wall_fraction=0.25):
    """Random maze with ``S`` top-left, ``G`` bottom-right, and a guaranteed open path."""
    if height * width < 2:
        raise ValueError("maze needs at least two cells")
    while True:
        grid = np.where(rng.random((height, width)) < wall_fraction, "#", ".")
        grid[0, 0], grid[-1, -1] = "S", "G"
        rows = tuple("".join(r) for r in grid)
        spec = MazeSpec(rows=rows, slip=(1.0, 0.0, 0.0))
        layout = maze_layout(spec)
        where = {c: k for k, c in enumerate(layout.cells)}
        succ = []
        for i, j in layout.cells:
            succ.append({where[(i + di, j + dj)] for di, dj in MOVES if (i + di, j + dj) in where})
        if layout.goal in _reachable(layout, succ):
            return rows
