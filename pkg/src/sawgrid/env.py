"""Deterministic gridworld mazes.

States are indexed by their position in the sorted list of free cells, so a
maze with ``n`` free cells has states ``0..n-1``. Tables elsewhere in the
package are indexed by these state ids, never by raw cell coordinates.
"""
from __future__ import annotations

import hashlib
from collections import deque
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

UP, DOWN, LEFT, RIGHT, STAY = range(5)
ACTIONS = ("up", "down", "left", "right", "stay")
N_ACTIONS = len(ACTIONS)
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))

UNREACHABLE = -1

BUNDLED_MAZES = ("grid-medium", "grid-large", "grid-corridor")


class MazeFormatError(ValueError):
    pass


class InvalidStateError(ValueError):
    pass


class GridWorld:
    """Immutable maze MDP with 5 actions; blocked moves are self-transitions."""

    def __init__(self, width: int, height: int, walls, name: str = "maze"):
        if width <= 0 or height <= 0:
            raise MazeFormatError("maze dimensions must be positive")
        self.width = int(width)
        self.height = int(height)
        self.name = name
        self.walls = frozenset((int(r), int(c)) for r, c in walls)
        free = [
            r * self.width + c
            for r in range(self.height)
            for c in range(self.width)
            if (r, c) not in self.walls
        ]
        if not free:
            raise MazeFormatError("maze has no free cells")
        self.free_cells = np.asarray(free, dtype=np.int64)
        self._state_of = {int(f): i for i, f in enumerate(free)}
        self.n_states = len(free)

        nxt = np.empty((self.n_states, N_ACTIONS), dtype=np.int64)
        for s, flat in enumerate(free):
            r, c = divmod(flat, self.width)
            for a, (dr, dc) in enumerate(MOVES):
                rr, cc = r + dr, c + dc
                if 0 <= rr < self.height and 0 <= cc < self.width and (rr, cc) not in self.walls:
                    nxt[s, a] = self._state_of[rr * self.width + cc]
                else:
                    nxt[s, a] = s
        nxt.flags.writeable = False
        self.next_state = nxt

    def __repr__(self) -> str:
        return f"GridWorld({self.name!r}, {self.height}x{self.width}, {self.n_states} free)"

    # -- cell/state conversions -------------------------------------------

    def state(self, cell) -> int:
        """State id of a ``(row, col)`` cell."""
        r, c = cell
        if not (0 <= r < self.height and 0 <= c < self.width) or (r, c) in self.walls:
            raise InvalidStateError(f"cell {cell} is not a free cell")
        return self._state_of[r * self.width + c]

    def state_from_flat(self, flat: int) -> int:
        try:
            return self._state_of[int(flat)]
        except KeyError:
            raise InvalidStateError(f"flat index {flat} is not a free cell") from None

    def cell(self, s: int) -> tuple[int, int]:
        self._check(s)
        return divmod(int(self.free_cells[s]), self.width)

    def flat(self, s: int) -> int:
        self._check(s)
        return int(self.free_cells[s])

    def _check(self, s) -> None:
        if not (0 <= int(s) < self.n_states):
            raise InvalidStateError(f"state {s} out of range [0, {self.n_states})")

    # -- dynamics ---------------------------------------------------------

    def step(self, s: int, a: int) -> int:
        self._check(s)
        if not (0 <= int(a) < N_ACTIONS):
            raise ValueError(f"invalid action {a}")
        return int(self.next_state[s, a])

    @cached_property
    def distances(self) -> np.ndarray:
        """All-pairs shortest path lengths, ``UNREACHABLE`` where disconnected."""
        n = self.n_states
        dist = np.full((n, n), UNREACHABLE, dtype=np.int64)
        for src in range(n):
            row = dist[src]
            row[src] = 0
            queue = deque([src])
            while queue:
                u = queue.popleft()
                for v in self.next_state[u, :STAY]:
                    if row[v] == UNREACHABLE:
                        row[v] = row[u] + 1
                        queue.append(v)
        dist.flags.writeable = False
        return dist

    def shortest_path_distance(self, s: int, g: int) -> int:
        """Number of moves from ``s`` to ``g``; ``UNREACHABLE`` if disconnected."""
        self._check(s)
        self._check(g)
        return int(self.distances[s, g])

    @property
    def connected(self) -> bool:
        return bool((self.distances[0] != UNREACHABLE).all())

    @property
    def diameter(self) -> int:
        return int(self.distances.max())

    def greedy_actions(self, g: int) -> np.ndarray:
        """Per-state BFS-greedy action toward ``g``; lowest action index wins ties."""
        d = self.distances[:, g]
        nd = d[self.next_state]
        nd = np.where(nd == UNREACHABLE, np.iinfo(np.int64).max, nd)
        return np.argmin(nd, axis=1)

    # -- identity -----------------------------------------------------------

    def to_text(self) -> str:
        rows = []
        for r in range(self.height):
            rows.append("".join("#" if (r, c) in self.walls else "." for c in range(self.width)))
        return "\n".join(rows) + "\n"

    @cached_property
    def maze_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def parse_maze(text: str, name: str = "maze") -> GridWorld:
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise MazeFormatError("empty maze text")
    width = len(lines[0])
    walls = []
    for r, line in enumerate(lines):
        if len(line) != width:
            raise MazeFormatError(f"row {r} has length {len(line)}, expected {width}")
        for c, ch in enumerate(line):
            if ch == "#":
                walls.append((r, c))
            elif ch != ".":
                raise MazeFormatError(f"unexpected character {ch!r} at row {r}, col {c}")
    return GridWorld(width, len(lines), walls, name=name)


def maze_text(name: str) -> str:
    return resources.files("sawgrid").joinpath("mazes").joinpath(f"{name}.txt").read_text()


def load_maze(name_or_path: str) -> GridWorld:
    """Load a bundled maze by name, or a maze text file by path."""
    if name_or_path in BUNDLED_MAZES:
        return parse_maze(maze_text(name_or_path), name=name_or_path)
    path = Path(name_or_path)
    if not path.exists():
        raise FileNotFoundError(f"no bundled maze or file named {name_or_path!r}")
    return parse_maze(path.read_text(), name=path.stem)
