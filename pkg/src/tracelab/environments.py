"""Benchmark MDPs: the chain random walk, ASCII grid mazes and random MDPs."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .mdp import MDPError, TabularMDP

# Action 0 is "right" so that lowest-index tie-breaking on a zero-initialised
# table heads for the rewarding end of the chain.
RIGHT, LEFT = 0, 1
RANDOM_WALK_ACTIONS = ("right", "left")

UP, DOWN, MAZE_LEFT, MAZE_RIGHT = 0, 1, 2, 3
MAZE_ACTIONS = ("up", "down", "left", "right")
_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))

MAZE_STEP_REWARD = -0.0001
MAZE_GOAL_REWARD = 1.0


def build_random_walk(n: int = 19, gamma: float = 0.9) -> TabularMDP:
    """Chain of ``n`` nonterminal states between two terminals.

    State 0 is the left terminal, ``n + 1`` the right terminal and the start is
    the centre state ``(n + 1) // 2``. Entering the right terminal pays 1.
    """
    if n < 3 or n % 2 == 0:
        raise MDPError(f"random walk needs an odd number of states >= 3, got {n}")
    S = n + 2
    P = np.zeros((S, 2, S))
    R = np.zeros((S, 2))
    for s in range(1, n + 1):
        P[s, RIGHT, s + 1] = 1.0
        P[s, LEFT, s - 1] = 1.0
        if s + 1 == S - 1:
            R[s, RIGHT] = 1.0
    return TabularMDP(P, R, frozenset({0, S - 1}), gamma, start=(n + 1) // 2)


@dataclass(frozen=True)
class MazeLayout:
    height: int
    width: int
    walls: frozenset[tuple[int, int]]
    start: tuple[int, int]
    goal: tuple[int, int]
    step_reward: float = MAZE_STEP_REWARD
    goal_reward: float = MAZE_GOAL_REWARD
    step_cap: int = 2000

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise MDPError("maze dimensions must be positive")
        if self.start == self.goal:
            raise MDPError("start and goal must differ")
        for name in ("start", "goal"):
            cell = getattr(self, name)
            if not self.inside(cell) or cell in self.walls:
                raise MDPError(f"{name} cell {cell} is blocked or outside the grid")
        if self.shortest_path_length() is None:
            raise MDPError("goal is unreachable from start")

    def inside(self, cell: tuple[int, int]) -> bool:
        return 0 <= cell[0] < self.height and 0 <= cell[1] < self.width

    def free_cells(self) -> list[tuple[int, int]]:
        return [
            (r, c)
            for r in range(self.height)
            for c in range(self.width)
            if (r, c) not in self.walls
        ]

    def move(self, cell: tuple[int, int], action: int) -> tuple[int, int]:
        dr, dc = _MOVES[action]
        target = (cell[0] + dr, cell[1] + dc)
        if not self.inside(target) or target in self.walls:
            return cell
        return target

    def shortest_path_length(self) -> int | None:
        """Breadth-first search distance from start to goal."""
        dist = {self.start: 0}
        queue = deque([self.start])
        while queue:
            cell = queue.popleft()
            if cell == self.goal:
                return dist[cell]
            for a in range(4):
                nxt = self.move(cell, a)
                if nxt not in dist:
                    dist[nxt] = dist[cell] + 1
                    queue.append(nxt)
        return None


def parse_maze(text: str, step_cap: int = 2000) -> MazeLayout:
    """Rows of '#' (wall), '.' (free), 'S' (start) and 'G' (goal)."""
    rows = [line.strip() for line in text.replace("\r\n", "\n").replace("\r", "\n").split("\n")]
    rows = [row for row in rows if row]
    if not rows:
        raise MDPError("empty maze layout")
    width = len(rows[0])
    if any(len(row) != width for row in rows):
        raise MDPError("maze layout must be rectangular")
    walls = set()
    starts, goals = [], []
    for r, row in enumerate(rows):
        for c, ch in enumerate(row):
            if ch == "#":
                walls.add((r, c))
            elif ch == "S":
                starts.append((r, c))
            elif ch == "G":
                goals.append((r, c))
            elif ch != ".":
                raise MDPError(f"unexpected character {ch!r} at row {r}, column {c}")
    if len(starts) != 1 or len(goals) != 1:
        raise MDPError("maze needs exactly one 'S' and one 'G'")
    return MazeLayout(len(rows), width, frozenset(walls), starts[0], goals[0], step_cap=step_cap)


def load_maze(path: str | Path, step_cap: int = 2000) -> MazeLayout:
    return parse_maze(Path(path).read_text(), step_cap=step_cap)


BUILTIN_MAZES = ("maze5x5", "maze10x10", "corridor2x1")


def builtin_maze(name: str, step_cap: int = 2000) -> MazeLayout:
    if name not in BUILTIN_MAZES:
        raise MDPError(f"unknown builtin maze {name!r}; choose from {BUILTIN_MAZES}")
    text = resources.files("tracelab.data").joinpath(f"{name}.txt").read_text()
    return parse_maze(text, step_cap=step_cap)


def maze_state_index(layout: MazeLayout) -> dict[tuple[int, int], int]:
    return {cell: i for i, cell in enumerate(layout.free_cells())}


def build_maze(layout: MazeLayout, gamma: float = 0.99) -> TabularMDP:
    """Grid MDP over free cells; blocked moves are self-transitions."""
    index = maze_state_index(layout)
    S = len(index)
    P = np.zeros((S, 4, S))
    R = np.zeros((S, 4))
    goal = index[layout.goal]
    for cell, s in index.items():
        if s == goal:
            continue
        for a in range(4):
            nxt = index[layout.move(cell, a)]
            P[s, a, nxt] = 1.0
            R[s, a] = layout.goal_reward if nxt == goal else layout.step_reward
    return TabularMDP(P, R, frozenset({goal}), gamma, start=index[layout.start])


def greedy_path_length(mdp: TabularMDP, Q: np.ndarray, cap: int) -> int | None:
    """Steps the greedy policy of ``Q`` needs to reach a terminal from the start.

    Only meaningful for deterministic MDPs; ``None`` when the cap is hit.
    """
    greedy = np.argmax(Q, axis=1)
    succ = np.argmax(mdp.transition, axis=2)
    s = mdp.start
    for steps in range(cap + 1):
        if mdp.is_terminal(s):
            return steps
        s = int(succ[s, greedy[s]])
    return None


def random_mdp(
    seed: int,
    num_states: int,
    num_actions: int,
    gamma: float,
    branching: int,
) -> TabularMDP:
    """Garnet-style random MDP whose last state is terminal.

    Each nonterminal (s, a) gets ``branching`` distinct successors with
    Dirichlet(1, ..., 1) probabilities and a reward drawn from U[0, 1]. When a
    state cannot reach the terminal, its first action's largest-probability
    successor is redirected to the terminal.
    """
    if num_states < 2 or num_actions < 1:
        raise MDPError("need at least 2 states and 1 action")
    if not 1 <= branching <= num_states:
        raise MDPError("branching must lie in [1, num_states]")
    rng = np.random.default_rng(seed)
    S, A = num_states, num_actions
    term = S - 1
    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    for s in range(S - 1):
        for a in range(A):
            succ = rng.choice(S, size=branching, replace=False)
            P[s, a, succ] = rng.dirichlet(np.ones(branching))
            R[s, a] = rng.uniform(0.0, 1.0)
    P[:, :, :] /= np.where(P.sum(axis=2, keepdims=True) > 0, P.sum(axis=2, keepdims=True), 1.0)

    while True:
        reach = {term}
        changed = True
        while changed:
            changed = False
            for s in range(S - 1):
                if s not in reach and np.any(P[s][:, sorted(reach)] > 0):
                    reach.add(s)
                    changed = True
        stuck = [s for s in range(S - 1) if s not in reach]
        if not stuck:
            break
        s = stuck[0]
        j = int(np.argmax(P[s, 0]))
        P[s, 0, term] += P[s, 0, j]
        P[s, 0, j] = 0.0
    return TabularMDP(P, R, frozenset({term}), gamma, start=0)
